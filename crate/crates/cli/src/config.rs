//! Flat key=value config files.
//!
//! One `key=value` per line, `#` starts a comment, unknown keys are
//! rejected. Parsing collects every problem instead of stopping at the
//! first so `validate` can report them all at once.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedalu_core::{DatasetSpec, RunConfig, Strategy};

const KNOWN_KEYS: &[&str] = &[
    "clients",
    "rounds",
    "s",
    "beta",
    "tau",
    "lr",
    "local_epochs",
    "batch_size",
    "hidden_dims",
    "client_hidden_dims",
    "strategy",
    "dataset",
    "mnist_images",
    "mnist_labels",
    "synthetic_classes",
    "synthetic_dim",
    "synthetic_per_class",
    "synthetic_spread",
    "alpha",
    "test_fraction",
    "shared_test",
    "seed",
    "warmup_ce_rounds",
    "eval_every",
    "workers",
];

pub fn parse_config_file(path: &Path) -> Result<RunConfig, Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, Vec<String>> {
    let mut errors = Vec::new();
    let pairs = collect_pairs(text, &mut errors);
    let config = assemble(&pairs, &mut errors);
    match config {
        Some(config) if errors.is_empty() => Ok(config),
        _ => Err(errors),
    }
}

fn collect_pairs(text: &str, errors: &mut Vec<String>) -> BTreeMap<String, String> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected key=value, got `{line}`", lineno + 1));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key `{key}`"));
            continue;
        }
        if pairs.insert(key.clone(), value).is_some() {
            errors.push(format!("duplicate key `{key}`"));
        }
    }
    pairs
}

fn parse_as<T>(pairs: &BTreeMap<String, String>, key: &str, errors: &mut Vec<String>) -> Option<T>
where
    T: FromStr,
    T::Err: Display,
{
    let value = pairs.get(key)?;
    match value.parse::<T>() {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("key `{key}`: cannot parse `{value}`: {e}"));
            None
        }
    }
}

/// Parse with a domain check; the check failing is reported with the
/// constraint spelled out.
fn parse_checked<T>(
    pairs: &BTreeMap<String, String>,
    key: &str,
    errors: &mut Vec<String>,
    constraint: &str,
    ok: impl Fn(&T) -> bool,
) -> Option<T>
where
    T: FromStr + Display,
    T::Err: Display,
{
    let v: T = parse_as(pairs, key, errors)?;
    if ok(&v) {
        Some(v)
    } else {
        errors.push(format!("key `{key}`: must be {constraint}, got {v}"));
        None
    }
}

fn parse_dim_list(value: &str) -> Result<Vec<usize>, String> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            let part = part.trim();
            match part.parse::<usize>() {
                Ok(0) => Err(format!("width `{part}` must be >= 1")),
                Ok(d) => Ok(d),
                Err(e) => Err(format!("bad width `{part}`: {e}")),
            }
        })
        .collect()
}

fn assemble(pairs: &BTreeMap<String, String>, errors: &mut Vec<String>) -> Option<RunConfig> {
    let clients = parse_checked(pairs, "clients", errors, ">= 2", |&v: &usize| v >= 2);
    let rounds = parse_checked(pairs, "rounds", errors, ">= 1", |&v: &usize| v >= 1);
    if !pairs.contains_key("clients") {
        errors.push("missing required key `clients`".into());
    }
    if !pairs.contains_key("rounds") {
        errors.push("missing required key `rounds`".into());
    }

    let s = parse_checked(pairs, "s", errors, ">= 1", |&v: &usize| v >= 1).unwrap_or(1);
    let beta = parse_checked(pairs, "beta", errors, ">= 0 and finite", |v: &f64| {
        *v >= 0.0 && v.is_finite()
    })
    .unwrap_or(1.0);
    let tau = parse_checked(pairs, "tau", errors, "> 0 and finite", |v: &f64| {
        *v > 0.0 && v.is_finite()
    })
    .unwrap_or(1.0);
    let lr = parse_checked(pairs, "lr", errors, "> 0 and finite", |v: &f64| {
        *v > 0.0 && v.is_finite()
    })
    .unwrap_or(0.05);
    let local_epochs =
        parse_checked(pairs, "local_epochs", errors, ">= 1", |&v: &usize| v >= 1).unwrap_or(1);
    let batch_size =
        parse_checked(pairs, "batch_size", errors, ">= 1", |&v: &usize| v >= 1).unwrap_or(32);
    let alpha = parse_checked(pairs, "alpha", errors, "> 0 and finite", |v: &f64| {
        *v > 0.0 && v.is_finite()
    })
    .unwrap_or(0.5);
    let test_fraction = parse_checked(
        pairs,
        "test_fraction",
        errors,
        "strictly between 0 and 1",
        |v: &f64| *v > 0.0 && *v < 1.0,
    )
    .unwrap_or(0.2);
    let shared_test = parse_as::<bool>(pairs, "shared_test", errors).unwrap_or(false);
    let seed = parse_as::<u64>(pairs, "seed", errors).unwrap_or(17);
    let warmup_ce_rounds = parse_as::<usize>(pairs, "warmup_ce_rounds", errors).unwrap_or(0);
    let eval_every =
        parse_checked(pairs, "eval_every", errors, ">= 1", |&v: &usize| v >= 1).unwrap_or(1);
    let workers = parse_checked(pairs, "workers", errors, ">= 1", |&v: &usize| v >= 1).unwrap_or(1);

    let strategy = match pairs.get("strategy").map(String::as_str) {
        None => Strategy::PeerLabelAvg,
        Some("peer_label_avg") => Strategy::PeerLabelAvg,
        Some("sample_cache") => Strategy::SampleCache,
        Some(other) => {
            errors.push(format!(
                "key `strategy`: `{other}` is not one of peer_label_avg, sample_cache"
            ));
            Strategy::PeerLabelAvg
        }
    };

    let dataset = match pairs.get("dataset").map(String::as_str) {
        Some("mnist") => {
            let images = pairs.get("mnist_images").map(PathBuf::from);
            let labels = pairs.get("mnist_labels").map(PathBuf::from);
            if images.is_none() {
                errors.push("dataset=mnist requires `mnist_images`".into());
            }
            if labels.is_none() {
                errors.push("dataset=mnist requires `mnist_labels`".into());
            }
            match (images, labels) {
                (Some(images), Some(labels)) => Some(DatasetSpec::Mnist { images, labels }),
                _ => None,
            }
        }
        Some("synthetic") => {
            let classes =
                parse_checked(pairs, "synthetic_classes", errors, ">= 2", |&v: &usize| v >= 2)
                    .unwrap_or(5);
            let dim = parse_checked(pairs, "synthetic_dim", errors, ">= 1", |&v: &usize| v >= 1)
                .unwrap_or(16);
            let per_class =
                parse_checked(pairs, "synthetic_per_class", errors, ">= 1", |&v: &usize| v >= 1)
                    .unwrap_or(100);
            let spread = parse_checked(
                pairs,
                "synthetic_spread",
                errors,
                "> 0 and finite",
                |v: &f64| *v > 0.0 && v.is_finite(),
            )
            .unwrap_or(0.5);
            Some(DatasetSpec::Synthetic {
                classes,
                dim,
                per_class,
                spread,
            })
        }
        Some(other) => {
            errors.push(format!(
                "key `dataset`: `{other}` is not one of mnist, synthetic"
            ));
            None
        }
        None => {
            errors.push("missing required key `dataset`".into());
            None
        }
    };

    // per-client widths: explicit list wins over the shared default
    let client_hidden_dims = match (pairs.get("client_hidden_dims"), clients) {
        (Some(value), clients_opt) => {
            let mut lists = Vec::new();
            let mut ok = true;
            for part in value.split(';') {
                match parse_dim_list(part) {
                    Ok(dims) => lists.push(dims),
                    Err(e) => {
                        errors.push(format!("key `client_hidden_dims`: {e}"));
                        ok = false;
                    }
                }
            }
            if let Some(k) = clients_opt {
                if ok && lists.len() != k {
                    errors.push(format!(
                        "key `client_hidden_dims`: {} entries for {k} clients",
                        lists.len()
                    ));
                }
            }
            lists
        }
        (None, clients_opt) => {
            let shared = match pairs.get("hidden_dims") {
                Some(value) => match parse_dim_list(value) {
                    Ok(dims) => dims,
                    Err(e) => {
                        errors.push(format!("key `hidden_dims`: {e}"));
                        vec![64]
                    }
                },
                None => vec![64],
            };
            vec![shared; clients_opt.unwrap_or(0)]
        }
    };

    let config = RunConfig {
        clients: clients?,
        rounds: rounds?,
        s,
        beta,
        tau,
        lr,
        local_epochs,
        batch_size,
        client_hidden_dims,
        strategy,
        dataset: dataset?,
        alpha,
        test_fraction,
        shared_test,
        seed,
        warmup_ce_rounds,
        eval_every,
        workers,
    };
    if let Err(e) = config.validate() {
        errors.push(e.to_string());
        return None;
    }
    Some(config)
}

fn dims_to_str(dims: &[usize]) -> String {
    dims.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// The fully defaulted config as key=value lines; parsing them back yields
/// an identical RunConfig.
pub fn effective_config_lines(config: &RunConfig) -> Vec<String> {
    let mut lines = vec![
        format!("clients={}", config.clients),
        format!("rounds={}", config.rounds),
        format!("s={}", config.s),
        format!("beta={}", config.beta),
        format!("tau={}", config.tau),
        format!("lr={}", config.lr),
        format!("local_epochs={}", config.local_epochs),
        format!("batch_size={}", config.batch_size),
        format!(
            "client_hidden_dims={}",
            config
                .client_hidden_dims
                .iter()
                .map(|dims| dims_to_str(dims))
                .collect::<Vec<_>>()
                .join(";")
        ),
        format!("strategy={}", config.strategy.name()),
    ];
    match &config.dataset {
        DatasetSpec::Mnist { images, labels } => {
            lines.push("dataset=mnist".into());
            lines.push(format!("mnist_images={}", images.display()));
            lines.push(format!("mnist_labels={}", labels.display()));
        }
        DatasetSpec::Synthetic {
            classes,
            dim,
            per_class,
            spread,
        } => {
            lines.push("dataset=synthetic".into());
            lines.push(format!("synthetic_classes={classes}"));
            lines.push(format!("synthetic_dim={dim}"));
            lines.push(format!("synthetic_per_class={per_class}"));
            lines.push(format!("synthetic_spread={spread}"));
        }
    }
    lines.extend([
        format!("alpha={}", config.alpha),
        format!("test_fraction={}", config.test_fraction),
        format!("shared_test={}", config.shared_test),
        format!("seed={}", config.seed),
        format!("warmup_ce_rounds={}", config.warmup_ce_rounds),
        format!("eval_every={}", config.eval_every),
        format!("workers={}", config.workers),
    ]);
    lines
}
