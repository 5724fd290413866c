//! CSV and gnuplot-friendly `.dat` exports.

use std::io::{self, Write};

use super::{CdfPoint, GroupReport};

pub fn write_cdf_csv<W: Write>(mut out: W, points: &[CdfPoint]) -> io::Result<()> {
    writeln!(out, "value,fraction")?;
    for p in points {
        writeln!(out, "{:.6},{:.6}", p.value, p.fraction)?;
    }
    Ok(())
}

/// Whitespace-separated CDF columns, one block per series separated by two
/// blank lines (gnuplot `index`).
pub fn write_cdf_dat<W: Write>(mut out: W, series: &[(&str, &[CdfPoint])]) -> io::Result<()> {
    for (i, (name, points)) in series.iter().enumerate() {
        if i > 0 {
            writeln!(out, "\n")?;
        }
        writeln!(out, "# {name}")?;
        writeln!(out, "# value fraction")?;
        for p in *points {
            writeln!(out, "{:.6} {:.6}", p.value, p.fraction)?;
        }
    }
    Ok(())
}

/// Bar-chart table: `group mean std n`, in report order.
pub fn write_bars_dat<W: Write>(mut out: W, title: &str, report: &GroupReport) -> io::Result<()> {
    writeln!(out, "# {title}")?;
    writeln!(out, "# group mean_mah std_mah n")?;
    for g in &report.ordered {
        writeln!(
            out,
            "{} {:.6} {:.6} {}",
            g.name.replace(char::is_whitespace, "_"),
            g.stats.mean,
            g.stats.std,
            g.stats.n
        )?;
    }
    Ok(())
}
