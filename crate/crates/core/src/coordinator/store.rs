//! Append-only JSON-lines journal and the on-disk artifact tree
//! (`jobs/{id}/...`).

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ArtifactBundle, JobRecord, VantagePointRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum JournalEntry {
    VantagePoint { record: VantagePointRecord },
    Job { record: JobRecord },
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    journal: File,
}

pub const JOURNAL_FILE: &str = "journal.jsonl";
const BUNDLE_INDEX: &str = "bundle.json";

#[derive(Serialize, Deserialize)]
struct BundleIndex {
    files: Vec<String>,
    retention_deadline: Option<f64>,
}

impl Store {
    /// Opens (creating if needed) the store under `root` and returns it with
    /// every journal entry in order. A torn final line is ignored.
    pub fn open(root: &Path) -> io::Result<(Self, Vec<JournalEntry>)> {
        fs::create_dir_all(root.join("jobs"))?;
        let path = root.join(JOURNAL_FILE);
        let mut entries = Vec::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path)?)
                .lines()
                .collect::<Result<_, _>>()?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(line) {
                    Ok(e) => entries.push(e),
                    Err(e) if i == last => {
                        tracing::warn!("ignoring torn journal tail: {e}");
                    }
                    Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
                }
            }
        }
        let journal = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((
            Self {
                root: root.to_path_buf(),
                journal,
            },
            entries,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn append(&mut self, entry: &JournalEntry) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        self.journal.write_all(&line)?;
        self.journal.flush()
    }

    pub fn job_dir(&self, job_id: u64) -> PathBuf {
        self.root.join("jobs").join(job_id.to_string())
    }

    pub fn write_bundle(&self, job_id: u64, bundle: &ArtifactBundle) -> io::Result<()> {
        let dir = self.job_dir(job_id);
        fs::create_dir_all(&dir)?;
        let mut names = Vec::new();
        for f in &bundle.files {
            let rel = safe_relative(&f.name)?;
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, &f.bytes)?;
            names.push(f.name.clone());
        }
        let index = BundleIndex {
            files: names,
            retention_deadline: bundle.retention_deadline,
        };
        fs::write(
            dir.join(BUNDLE_INDEX),
            serde_json::to_vec_pretty(&index).map_err(io::Error::other)?,
        )
    }

    pub fn read_bundle(&self, job_id: u64) -> io::Result<ArtifactBundle> {
        let dir = self.job_dir(job_id);
        let index: BundleIndex = serde_json::from_slice(&fs::read(dir.join(BUNDLE_INDEX))?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let mut bundle = ArtifactBundle {
            files: Vec::new(),
            retention_deadline: index.retention_deadline,
        };
        for name in index.files {
            let bytes = fs::read(dir.join(safe_relative(&name)?))?;
            bundle.push(name, bytes);
        }
        Ok(bundle)
    }
}

/// Rejects artifact names that would escape the job directory.
fn safe_relative(name: &str) -> io::Result<&Path> {
    let p = Path::new(name);
    let ok = !name.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_)))
        && name != BUNDLE_INDEX;
    if ok {
        Ok(p)
    } else {
        Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("bad artifact name {name:?}"),
        ))
    }
}
