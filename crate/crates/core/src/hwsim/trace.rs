//! Trace files: `t_s,current_ma,voltage_v` CSV plus a JSON sidecar.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Gap;

pub const CSV_HEADER: &str = "t_s,current_ma,voltage_v";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Seconds since stream start.
    pub t: f64,
    pub current_ma: f64,
    pub voltage_v: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub device_id: String,
    pub job_id: Option<u64>,
    pub repetition: u32,
    pub rate_hz: u32,
    pub voltage_v: f64,
    pub seed: u64,
    pub delivered: u64,
    pub lost: u64,
    pub gaps: Vec<Gap>,
    pub clamped: bool,
}

impl TraceMetadata {
    pub fn loss_fraction(&self) -> f64 {
        let total = self.delivered + self.lost;
        if total == 0 {
            0.0
        } else {
            self.lost as f64 / total as f64
        }
    }
}

pub fn write_csv<W: Write>(out: W, samples: &[PowerSample]) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(out, "{:.6},{:.6},{:.6}", s.t, s.current_ma, s.voltage_v)?;
    }
    out.flush()
}

pub fn read_csv<R: io::Read>(input: R) -> io::Result<Vec<PowerSample>> {
    let mut lines = BufReader::new(input).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == CSV_HEADER => {}
        Some(Err(e)) => return Err(e),
        _ => return Err(invalid("missing trace header")),
    }
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',').map(str::parse::<f64>);
        let mut next = || {
            cols.next()
                .and_then(Result::ok)
                .ok_or_else(|| invalid(&format!("bad trace row {}", n + 2)))
        };
        samples.push(PowerSample {
            t: next()?,
            current_ma: next()?,
            voltage_v: next()?,
        });
    }
    Ok(samples)
}

/// Sidecar path for a trace CSV: `x.csv` → `x.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn write_trace_files(
    csv: &Path,
    meta: &TraceMetadata,
    samples: &[PowerSample],
) -> io::Result<()> {
    write_csv(File::create(csv)?, samples)?;
    let json = serde_json::to_vec_pretty(meta).map_err(io::Error::other)?;
    std::fs::write(sidecar_path(csv), json)
}

pub fn read_trace_files(csv: &Path) -> io::Result<(TraceMetadata, Vec<PowerSample>)> {
    let samples = read_csv(File::open(csv)?)?;
    let meta =
        serde_json::from_slice(&std::fs::read(sidecar_path(csv))?).map_err(io::Error::other)?;
    Ok((meta, samples))
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}
