use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::run::ERRORS_FILE;

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ErrorRecord {
    pub adapt_iter: usize,
    pub t: f64,
    pub rel_err: f64,
    pub kl: f64,
    pub mean_abs_rlog: f64,
}

/// One labelled curve over time, e.g. the errors after one adaptivity iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub rows: Vec<ErrorRecord>,
}

impl Series {
    pub fn mean_kl(&self) -> f64 {
        self.rows.iter().map(|r| r.kl).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).sum::<f64>() / self.rows.len() as f64
    }

    pub fn max_kl(&self) -> f64 {
        self.rows.iter().map(|r| r.kl).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn errors_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(ERRORS_FILE)
    } else {
        input.to_path_buf()
    }
}

pub fn read_errors(path: &Path) -> Result<Vec<ErrorRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("malformed {}", path.display()))
}

/// Splits every input into one series per adaptivity iteration. With more
/// than one input the labels are prefixed by the input path.
pub fn collect_series(inputs: &[PathBuf]) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    for input in inputs {
        let rows = read_errors(&errors_path(input))?;
        let mut iters: Vec<usize> = rows.iter().map(|r| r.adapt_iter).collect();
        iters.sort_unstable();
        iters.dedup();
        for k in iters {
            let mut series: Vec<ErrorRecord> = rows.iter().filter(|r| r.adapt_iter == k).cloned().collect();
            series.sort_by(|a, b| a.t.total_cmp(&b.t));
            let label = if inputs.len() > 1 {
                format!("{}:iter{k}", input.display())
            } else {
                format!("iter{k}")
            };
            out.push(Series { label, rows: series });
        }
    }
    Ok(out)
}

pub fn write_report_csv<W: Write>(mut w: W, series: &[Series]) -> std::io::Result<()> {
    writeln!(w, "series,t,rel_err,kl,mean_abs_rlog")?;
    for s in series {
        for r in &s.rows {
            writeln!(w, "{},{},{},{},{}", s.label, r.t, r.rel_err, r.kl, r.mean_abs_rlog)?;
        }
    }
    Ok(())
}

pub fn write_table<W: Write>(mut w: W, series: &[Series]) -> std::io::Result<()> {
    writeln!(w, "{:<24} {:>14} {:>14} {:>14}", "series", "mean rel err", "mean KL", "max KL")?;
    for s in series {
        writeln!(
            w,
            "{:<24} {:>14.6e} {:>14.6e} {:>14.6e}",
            s.label,
            s.mean_rel_err(),
            s.mean_kl(),
            s.max_kl()
        )?;
    }
    Ok(())
}
