//! The run, sweep, and validate commands behind the binary.
//!
//! Failures split into two kinds so the binary can map them to exit codes:
//! setup problems (bad config, unreadable data) and mid-run aborts
//! (divergence, ledger drift).

use std::fs;
use std::path::Path;

use fedalu_core::{run, Error as CoreError, RunConfig, RunOutput};

use crate::config::{effective_config_lines, parse_config_file};
use crate::output::{
    converged_accuracy, write_metrics_csv, write_summary_csv, write_sweep_summary_csv, SweepRow,
};

#[derive(Debug)]
pub enum CmdFailure {
    /// Problems found before training started; exit code 1.
    Setup(Vec<String>),
    /// The run itself broke down; exit code 2.
    Abort(String),
}

impl CmdFailure {
    pub fn exit_code(&self) -> u8 {
        match self {
            CmdFailure::Setup(_) => 1,
            CmdFailure::Abort(_) => 2,
        }
    }

    pub fn messages(&self) -> Vec<String> {
        match self {
            CmdFailure::Setup(msgs) => msgs.clone(),
            CmdFailure::Abort(msg) => vec![msg.clone()],
        }
    }
}

fn classify(e: CoreError) -> CmdFailure {
    match e {
        CoreError::NonFiniteLoss { .. }
        | CoreError::NonFinite { .. }
        | CoreError::CommCostDrift { .. } => CmdFailure::Abort(e.to_string()),
        other => CmdFailure::Setup(vec![other.to_string()]),
    }
}

fn io_setup(context: &str, e: std::io::Error) -> CmdFailure {
    CmdFailure::Setup(vec![format!("{context}: {e}")])
}

fn load_config(config_path: &Path, seed: Option<u64>) -> Result<RunConfig, CmdFailure> {
    let mut config = parse_config_file(config_path).map_err(CmdFailure::Setup)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(config: &RunConfig) -> Result<RunOutput, CmdFailure> {
    run(config).map_err(classify)
}

/// One experiment; writes metrics.csv and summary.csv into `out_dir`.
pub fn cmd_run(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<(), CmdFailure> {
    let config = load_config(config_path, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| io_setup("cannot create output dir", e))?;
    let output = execute(&config)?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &output.metrics)
        .map_err(|e| io_setup("cannot write metrics.csv", e))?;
    write_summary_csv(&out_dir.join("summary.csv"), &output)
        .map_err(|e| io_setup("cannot write summary.csv", e))?;

    let last = output.metrics.last().expect("at least round 0 is evaluated");
    eprintln!(
        "run done: {} rounds, final mean accuracy {:.2}%, {:.1} exchange units, {:.1}s",
        config.rounds, last.mean_accuracy_pct, last.cum_comm_c0, output.elapsed_seconds
    );
    Ok(())
}

fn parse_s_list(s_list: &str) -> Result<Vec<usize>, CmdFailure> {
    let mut errors = Vec::new();
    let mut values = Vec::new();
    for part in s_list.split(',') {
        let part = part.trim();
        match part.parse::<usize>() {
            Ok(0) => errors.push(format!("--s-list entry `{part}`: must be >= 1")),
            Ok(v) if values.contains(&v) => {
                errors.push(format!("--s-list entry `{v}` repeats"));
            }
            Ok(v) => values.push(v),
            Err(e) => errors.push(format!("--s-list entry `{part}`: {e}")),
        }
    }
    if values.is_empty() && errors.is_empty() {
        errors.push("--s-list is empty".into());
    }
    if errors.is_empty() {
        Ok(values)
    } else {
        Err(CmdFailure::Setup(errors))
    }
}

/// The same experiment once per accumulation period in `s_list`; writes
/// metrics_s{N}.csv per period plus sweep_summary.csv.
pub fn cmd_sweep(
    config_path: &Path,
    s_list: &str,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(), CmdFailure> {
    let base = load_config(config_path, seed)?;
    let periods = parse_s_list(s_list)?;
    fs::create_dir_all(out_dir).map_err(|e| io_setup("cannot create output dir", e))?;

    let mut rows = Vec::with_capacity(periods.len());
    for &s in &periods {
        let mut config = base.clone();
        config.s = s;
        let output = execute(&config)?;
        let name = format!("metrics_s{s}.csv");
        write_metrics_csv(&out_dir.join(&name), &output.metrics)
            .map_err(|e| io_setup(&format!("cannot write {name}"), e))?;
        rows.push(SweepRow {
            s,
            converged_accuracy_pct: converged_accuracy(&output.metrics),
            total_comm_c0: output.ledger.cumulative_c0_units(),
            exchanges: output.ledger.charged_rounds().len(),
        });
        eprintln!(
            "sweep s={s}: converged accuracy {:.2}%, {:.1} exchange units",
            rows.last().unwrap().converged_accuracy_pct,
            rows.last().unwrap().total_comm_c0
        );
    }
    write_sweep_summary_csv(&out_dir.join("sweep_summary.csv"), &rows)
        .map_err(|e| io_setup("cannot write sweep_summary.csv", e))?;
    Ok(())
}

/// Check a config and return the fully defaulted effective settings, one
/// key=value per line. Feeding those lines back in reproduces the run
/// exactly.
pub fn cmd_validate(config_path: &Path) -> Result<Vec<String>, CmdFailure> {
    let config = parse_config_file(config_path).map_err(CmdFailure::Setup)?;
    Ok(effective_config_lines(&config))
}
