//! Plain-text `key = value` experiment configuration files.
//!
//! Lines starting with `#` and blank lines are ignored. Byte sizes accept
//! `KB`/`MB`/`GB` suffixes (powers of ten). Unknown keys are errors, with
//! the offending line number in the message.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::harness::{
    AlphabetMode, CategorySource, ExperimentConfig, ExperimentKind, Method, ShiftSource,
    SweepAxis,
};
use crate::pretokenize::{PretokenRules, SpaceAttachment};

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Controlled);
    let mut synth_mode = AlphabetMode::Disjoint;
    let mut synth_bytes: u64 = 4_000_000;
    let mut synth_vocab: usize = 2500;
    let mut manifest: Option<PathBuf> = None;
    let mut sweep_axis: Option<SweepAxis> = None;
    let mut sweep_values: Option<Vec<u64>> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let at = |msg: String| Error::Config {
            line: Some(line_no),
            msg,
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(at(format!("expected `key = value`, found {line:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "mode" => {
                cfg.kind = match value {
                    "controlled" => ExperimentKind::Controlled,
                    "withheld" => ExperimentKind::Withheld,
                    "shift" => ExperimentKind::Shift,
                    "scaling" => ExperimentKind::Scaling,
                    other => return Err(at(format!("unknown mode {other:?}"))),
                };
            }
            "categories" => {
                if let Some(path) = value.strip_prefix("manifest:") {
                    manifest = Some(PathBuf::from(path.trim()));
                } else {
                    synth_mode = match value {
                        "synthetic-disjoint" => AlphabetMode::Disjoint,
                        "synthetic-shared" => AlphabetMode::Shared,
                        other => return Err(at(format!("unknown categories {other:?}"))),
                    };
                }
            }
            "pool" => cfg.pool = parse_num(value).map_err(at)? as usize,
            "n" => cfg.n = parse_num(value).map_err(at)? as usize,
            "trials" => cfg.trials = parse_num(value).map_err(at)? as usize,
            "train_bytes" => cfg.train_bytes = parse_num(value).map_err(at)?,
            "estimate_bytes" => cfg.estimate_bytes = parse_num(value).map_err(at)?,
            "source_bytes" => synth_bytes = parse_num(value).map_err(at)?,
            "vocab_words" => synth_vocab = parse_num(value).map_err(at)? as usize,
            "num_merges" => cfg.num_merges = parse_num(value).map_err(at)? as usize,
            "T" => cfg.t_horizon = parse_num(value).map_err(at)? as usize,
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(|m| m.parse::<Method>().map_err(|e| at(e.to_string())))
                    .collect::<Result<_>>()?;
            }
            "withheld_k" => cfg.withheld_k = parse_num(value).map_err(at)? as usize,
            "shift" => {
                cfg.shift = if value == "none" {
                    ShiftSource::None
                } else if let Some(s) = value.strip_prefix("perturbed:") {
                    let strength: f64 = s
                        .trim()
                        .parse()
                        .map_err(|_| at(format!("bad shift strength {s:?}")))?;
                    ShiftSource::Perturbed(strength)
                } else if let Some(path) = value.strip_prefix("manifest:") {
                    ShiftSource::Manifest(PathBuf::from(path.trim()))
                } else {
                    return Err(at(format!("unknown shift {value:?}")));
                };
            }
            "sweep_axis" => {
                sweep_axis = Some(match value {
                    "estimate_bytes" => SweepAxis::EstimateBytes,
                    "T" => SweepAxis::MergeHorizon,
                    other => return Err(at(format!("unknown sweep axis {other:?}"))),
                });
            }
            "sweep_values" => {
                let values = value
                    .split(',')
                    .map(|v| parse_num(v.trim()).map_err(|e| at(e)))
                    .collect::<Result<Vec<u64>>>()?;
                sweep_values = Some(values);
            }
            "seed" => cfg.seed = parse_num(value).map_err(at)?,
            "batch_limit" => cfg.batch_limit = parse_num(value).map_err(at)? as usize,
            "max_rounds" => cfg.max_rounds = parse_num(value).map_err(at)? as usize,
            "epsilon" => {
                cfg.epsilon = if value == "auto" {
                    None
                } else {
                    Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| at(format!("bad epsilon {value:?}")))?,
                    )
                };
            }
            "pretokenize" => {
                cfg.pretoken_rules = match value {
                    "discard" => PretokenRules::default(),
                    "attach" => PretokenRules {
                        space_attachment: SpaceAttachment::AttachLeadingSpace,
                        ..PretokenRules::default()
                    },
                    other => return Err(at(format!("unknown pretokenize mode {other:?}"))),
                };
            }
            other => return Err(at(format!("unknown key {other:?}"))),
        }
    }

    cfg.categories = match manifest {
        Some(path) => CategorySource::Manifest(path),
        None => CategorySource::Synthetic {
            mode: synth_mode,
            source_bytes: synth_bytes,
            vocab_words: synth_vocab,
        },
    };
    cfg.sweep = match (sweep_axis, sweep_values) {
        (Some(axis), Some(values)) => Some((axis, values)),
        (None, None) => None,
        _ => {
            return Err(Error::Config {
                line: None,
                msg: "sweep_axis and sweep_values must be set together".into(),
            })
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_num(value: &str) -> std::result::Result<u64, String> {
    let (digits, mult) = if let Some(v) = value.strip_suffix("GB") {
        (v, 1_000_000_000u64)
    } else if let Some(v) = value.strip_suffix("MB") {
        (v, 1_000_000)
    } else if let Some(v) = value.strip_suffix("KB") {
        (v, 1_000)
    } else {
        (value, 1)
    };
    digits
        .trim()
        .parse::<u64>()
        .map(|n| n * mult)
        .map_err(|_| format!("expected a number, found {value:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# demo
mode = controlled
categories = synthetic-disjoint
pool = 6
n = 5
trials = 10
train_bytes = 20MB
estimate_bytes = 2MB
num_merges = 3000
T = 3000
methods = attack,tc,tee,random
seed = 9
";
        let cfg = parse_experiment_config(text).unwrap();
        assert_eq!(cfg.pool, 6);
        assert_eq!(cfg.train_bytes, 20_000_000);
        assert_eq!(cfg.methods.len(), 4);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn reports_the_offending_line() {
        let text = "mode = controlled\nbananas = 3\n";
        match parse_experiment_config(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, Some(2)),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_half_a_sweep() {
        let text = "mode = scaling\nsweep_axis = T\n";
        assert!(parse_experiment_config(text).is_err());
    }

    #[test]
    fn size_suffixes() {
        assert_eq!(parse_num("17").unwrap(), 17);
        assert_eq!(parse_num("2KB").unwrap(), 2000);
        assert_eq!(parse_num("3MB").unwrap(), 3_000_000);
        assert!(parse_num("x").is_err());
    }
}
