//! CSV writers for run artifacts.
//!
//! Numeric columns use fixed 6-decimal formatting and `\n` line endings so
//! identical runs produce byte-identical files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use fedalu_core::{RoundMetrics, RunOutput};

pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "round,mean_accuracy_pct,cum_comm_c0,wall_seconds")?;
    for m in metrics {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            m.round, m.mean_accuracy_pct, m.cum_comm_c0, m.wall_seconds
        )?;
    }
    out.flush()
}

pub fn write_summary_csv(path: &Path, output: &RunOutput) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "client,final_accuracy_pct,train_samples,test_samples")?;
    for (client, acc) in output.final_client_accuracy_pct.iter().enumerate() {
        writeln!(
            out,
            "{client},{acc:.6},{},{}",
            output.train_sizes[client], output.test_sizes[client]
        )?;
    }
    out.flush()
}

pub struct SweepRow {
    pub s: usize,
    pub converged_accuracy_pct: f64,
    pub total_comm_c0: f64,
    pub exchanges: usize,
}

pub fn write_sweep_summary_csv(path: &Path, rows: &[SweepRow]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "s,converged_accuracy_pct,total_comm_c0,exchanges")?;
    for row in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{}",
            row.s, row.converged_accuracy_pct, row.total_comm_c0, row.exchanges
        )?;
    }
    out.flush()
}

/// Mean accuracy over the final tenth (rounded up) of evaluated rounds.
/// Averaging a tail instead of taking the last point keeps the figure from
/// riding single-round noise.
pub fn converged_accuracy(metrics: &[RoundMetrics]) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    let tail = metrics.len().div_ceil(10);
    let window = &metrics[metrics.len() - tail..];
    window.iter().map(|m| m.mean_accuracy_pct).sum::<f64>() / window.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, acc: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            mean_accuracy_pct: acc,
            cum_comm_c0: round as f64,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn metrics_csv_has_exact_header_and_fixed_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &[row(0, 12.5)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "round,mean_accuracy_pct,cum_comm_c0,wall_seconds\n0,12.500000,0.000000,0.000000\n"
        );
    }

    #[test]
    fn converged_accuracy_averages_the_final_tenth() {
        let metrics: Vec<RoundMetrics> = (0..20).map(|t| row(t, t as f64)).collect();
        // 20 evaluated rounds -> last 2 (18 and 19)
        assert_eq!(converged_accuracy(&metrics), 18.5);

        let single = [row(0, 42.0)];
        assert_eq!(converged_accuracy(&single), 42.0);
        assert_eq!(converged_accuracy(&[]), 0.0);
    }

    #[test]
    fn sweep_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep_summary.csv");
        write_sweep_summary_csv(
            &path,
            &[SweepRow {
                s: 5,
                converged_accuracy_pct: 90.125,
                total_comm_c0: 6.0,
                exchanges: 6,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "s,converged_accuracy_pct,total_comm_c0,exchanges\n5,90.125000,6.000000,6\n"
        );
    }
}
