//! CSV artifacts. Every file opens with `#` comment lines carrying the
//! resolved configuration and seed, followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dual::DualResult;
use crate::error::Result;
use crate::simulate::{EnsembleStats, Trajectory};

/// Comment lines written ahead of the header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preamble {
    pub lines: Vec<(String, String)>,
}

impl Preamble {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Write a table of numbers with a preamble.
pub fn write_table(path: &Path, preamble: &Preamble, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in &preamble.lines {
        // keep each comment on one line
        writeln!(out, "# {k}: {}", v.replace('\n', " "))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `k, weighted_variance, ci_low, ci_high`.
pub fn write_variance_profile(path: &Path, preamble: &Preamble, stats: &EnsembleStats) -> Result<()> {
    let header = ["k", "weighted_variance", "ci_low", "ci_high"].map(String::from);
    let rows: Vec<Vec<String>> = stats
        .weighted_variance
        .iter()
        .enumerate()
        .map(|(k, e)| vec![k.to_string(), num(e.value), num(e.ci_low), num(e.ci_high)])
        .collect();
    write_table(path, preamble, &header, &rows)
}

/// Per-step ensemble statistics: mean state, weighted variance with interval,
/// and error-covariance traces.
pub fn write_ensemble_stats(path: &Path, preamble: &Preamble, stats: &EnsembleStats) -> Result<()> {
    let n = stats.mean.first().map_or(0, |m| m.len());
    let mut header = vec!["k".to_string()];
    header.extend((0..n).map(|i| format!("mean_x{i}")));
    header.extend(
        ["weighted_variance", "ci_low", "ci_high", "remote_error_trace", "local_error_trace"].map(String::from),
    );
    let rows: Vec<Vec<String>> = (0..stats.mean.len())
        .map(|k| {
            let mut r = vec![k.to_string()];
            r.extend(stats.mean[k].iter().map(|v| num(*v)));
            let e = &stats.weighted_variance[k];
            r.extend([
                num(e.value),
                num(e.ci_low),
                num(e.ci_high),
                num(stats.remote_error_trace[k]),
                num(stats.local_error_trace[k]),
            ]);
            r
        })
        .collect();
    write_table(path, preamble, &header, &rows)
}

/// Long format: one row per (trajectory, step). Inputs are blank at `N + 1`.
pub fn write_trajectories(path: &Path, preamble: &Preamble, trajs: &[Trajectory]) -> Result<()> {
    let Some(first) = trajs.first() else {
        return write_table(path, preamble, &["stream".to_string()], &[]);
    };
    let n = first.x[0].len();
    let m1 = first.u_local.first().map_or(0, |u| u.len());
    let m2 = first.u_remote.first().map_or(0, |u| u.len());
    let mut header = vec!["stream".to_string(), "k".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..n).map(|i| format!("xhat_local{i}")));
    header.extend((0..n).map(|i| format!("xhat_remote{i}")));
    header.push("eta".into());
    header.extend((0..m1).map(|i| format!("u_local{i}")));
    header.extend((0..m2).map(|i| format!("u_remote{i}")));
    let mut rows = Vec::new();
    for t in trajs {
        for k in 0..t.x.len() {
            let mut r = vec![t.stream.to_string(), k.to_string()];
            r.extend(t.x[k].iter().map(|v| num(*v)));
            r.extend(t.xhat_local[k].iter().map(|v| num(*v)));
            r.extend(t.xhat_remote[k].iter().map(|v| num(*v)));
            r.push(u8::from(t.eta[k]).to_string());
            match (t.u_local.get(k), t.u_remote.get(k)) {
                (Some(ul), Some(ur)) => {
                    r.extend(ul.iter().map(|v| num(*v)));
                    r.extend(ur.iter().map(|v| num(*v)));
                }
                _ => r.extend(std::iter::repeat_n(String::new(), m1 + m2)),
            }
            rows.push(r);
        }
    }
    write_table(path, preamble, &header, &rows)
}

/// Named numeric columns of equal length, indexed by `k`.
pub fn write_series(path: &Path, preamble: &Preamble, columns: &[(&str, &[f64])]) -> Result<()> {
    let len = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut header = vec!["k".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    let rows: Vec<Vec<String>> = (0..len)
        .map(|k| {
            let mut r = vec![k.to_string()];
            r.extend(columns.iter().map(|(_, c)| c.get(k).map_or(String::new(), |v| num(*v))));
            r
        })
        .collect();
    write_table(path, preamble, &header, &rows)
}

/// Every risk evaluation made during the search, in call order.
pub fn write_bisection_trail(path: &Path, preamble: &Preamble, result: &DualResult) -> Result<()> {
    let header = ["mu", "risk", "stderr", "risk_analytic", "feasible"].map(String::from);
    let rows: Vec<Vec<String>> = result
        .trail
        .iter()
        .map(|s| vec![num(s.mu), num(s.risk), num(s.stderr), num(s.analytic), s.feasible.to_string()])
        .collect();
    write_table(path, preamble, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preamble_precedes_header() {
        let dir = std::env::temp_dir().join(format!("risklq-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.csv");
        let pre = Preamble::new().with("seed", 7).with("config", "{\n\"a\": 1}");
        write_series(&path, &pre, &[("a", &[1.0, 2.5]), ("b", &[3.0])]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# seed: 7\n# config: { \"a\": 1}\nk,a,b\n0,1,3\n1,2.5,\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
