//! Training metrics, their CSV form, and atomic file output.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! parsed CSV reproduces the in-memory values exactly and identical runs
//! produce identical bytes. Missing values are empty fields.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 13] = [
    "step",
    "eval_mean",
    "eval_std",
    "j_q1",
    "j_q2",
    "j_pi",
    "mean_q",
    "entropy",
    "l_cp",
    "kl",
    "mi_lower_bound",
    "train_return",
    "encoder_skips",
];

/// One row per environment step at which something was logged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub j_q1: Option<f64>,
    pub j_q2: Option<f64>,
    pub j_pi: Option<f64>,
    pub mean_q: Option<f64>,
    pub entropy: Option<f64>,
    pub l_cp: Option<f64>,
    pub kl: Option<f64>,
    pub mi_lower_bound: Option<f64>,
    /// Mean return of episodes finished since the previous row.
    pub train_return: Option<f64>,
    /// Cumulative skipped encoder triggers.
    pub encoder_skips: u64,
}

impl MetricsRow {
    fn optionals(&self) -> [Option<f64>; 11] {
        [
            self.eval_mean,
            self.eval_std,
            self.j_q1,
            self.j_q2,
            self.j_pi,
            self.mean_q,
            self.entropy,
            self.l_cp,
            self.kl,
            self.mi_lower_bound,
            self.train_return,
        ]
    }

    fn optionals_mut(&mut self) -> [&mut Option<f64>; 11] {
        [
            &mut self.eval_mean,
            &mut self.eval_std,
            &mut self.j_q1,
            &mut self.j_q2,
            &mut self.j_pi,
            &mut self.mean_q,
            &mut self.entropy,
            &mut self.l_cp,
            &mut self.kl,
            &mut self.mi_lower_bound,
            &mut self.train_return,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    /// Row for `step`, appended if `step` is past the last row.
    pub fn row_mut(&mut self, step: u64) -> Result<&mut MetricsRow> {
        match self.rows.last() {
            Some(last) if last.step == step => {}
            Some(last) if last.step > step => {
                return Err(Error::contract(format!("metrics step {step} after {}", last.step)));
            }
            _ => self.rows.push(MetricsRow {
                step,
                ..MetricsRow::default()
            }),
        }
        Ok(self.rows.last_mut().unwrap())
    }

    /// Rows that carry an evaluation.
    pub fn evals(&self) -> impl Iterator<Item = (u64, f64, f64)> + '_ {
        self.rows
            .iter()
            .filter_map(|r| Some((r.step, r.eval_mean?, r.eval_std?)))
    }

    pub fn final_eval(&self) -> Option<(f64, f64)> {
        self.evals().last().map(|(_, m, s)| (m, s))
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.step);
            for v in r.optionals() {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            let _ = writeln!(out, ",{}", r.encoder_skips);
        }
        out
    }

    /// Parses the output of [`RunMetrics::to_csv`]. Errors name the
    /// offending line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, h)| h.trim_end_matches('\r'))
            .ok_or_else(|| Error::Decode("empty metrics csv".into()))?;
        if header.split(',').ne(CSV_COLUMNS.iter().copied()) {
            return Err(Error::Decode(format!("line 1: unexpected header {header:?}")));
        }
        let mut out = RunMetrics::default();
        for (i, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != CSV_COLUMNS.len() {
                return Err(Error::Decode(format!(
                    "line {n}: expected {} fields, found {}",
                    CSV_COLUMNS.len(),
                    fields.len()
                )));
            }
            let int = |s: &str, col: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::Decode(format!("line {n}: bad {col} {s:?}")))
            };
            let mut row = MetricsRow {
                step: int(fields[0], "step")?,
                encoder_skips: int(fields[12], "encoder_skips")?,
                ..MetricsRow::default()
            };
            for (k, slot) in row.optionals_mut().into_iter().enumerate() {
                let raw = fields[k + 1];
                if raw.is_empty() {
                    continue;
                }
                let v: f64 = raw
                    .parse()
                    .map_err(|_| Error::Decode(format!("line {n}: bad {} {raw:?}", CSV_COLUMNS[k + 1])))?;
                if !v.is_finite() {
                    return Err(Error::Decode(format!("line {n}: non-finite {}", CSV_COLUMNS[k + 1])));
                }
                *slot = Some(v);
            }
            if out.rows.last().is_some_and(|l| l.step >= row.step) {
                return Err(Error::Decode(format!("line {n}: step {} is not increasing", row.step)));
            }
            out.rows.push(row);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub env: String,
    pub seed: u64,
    pub steps: u64,
    pub final_mean: Option<f64>,
    pub final_std: Option<f64>,
    pub rl_updates: u64,
    pub encoder_updates: u64,
    pub encoder_skips: u64,
    pub episodes: u64,
    pub wall_time_secs: f64,
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}
