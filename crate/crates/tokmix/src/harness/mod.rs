//! Controlled experiments: sample mixtures, train tokenizers, run the
//! attack and the baselines, score everything with log10 MSE, and write
//! plot-ready CSV reports. Also covers the robustness variants (withheld
//! categories, estimation-data distribution shift) and scaling sweeps.

pub mod config;
pub mod synth;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{self, relative_efficiency};
use crate::bpe::{train, MergeList};
use crate::corpus::{
    largest_remainder_targets, mix_u64, sample_docs_seeded, sample_simplex_weights,
    split_docs_seeded, DocSet,
};
use crate::error::{Error, Result};
use crate::inference::{infer_mixture, AttackConfig, SolverChoice};
use crate::pretokenize::{pretokenize, PretokenRules, WordTable};
use crate::timeline::{replay, PairCountTimeline};

pub use synth::{AlphabetMode, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Controlled,
    Withheld,
    Shift,
    Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    EstimateBytes,
    MergeHorizon,
}

#[derive(Debug, Clone)]
pub enum CategorySource {
    Synthetic { mode: AlphabetMode, source_bytes: u64, vocab_words: usize },
    Manifest(PathBuf),
}

#[derive(Debug, Clone)]
pub enum ShiftSource {
    None,
    /// Synthetic same-category corpora with rank-perturbed frequencies.
    Perturbed(f64),
    /// Alternate estimation corpora, one path per pool category.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Attack,
    Tee,
    Tc,
    Random,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Attack => "attack",
            Method::Tee => "tee",
            Method::Tc => "tc",
            Method::Random => "random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "attack" => Ok(Method::Attack),
            "tee" => Ok(Method::Tee),
            "tc" => Ok(Method::Tc),
            "random" => Ok(Method::Random),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub categories: CategorySource,
    pub pool: usize,
    pub n: usize,
    pub trials: usize,
    pub train_bytes: u64,
    pub estimate_bytes: u64,
    pub num_merges: usize,
    pub t_horizon: usize,
    pub methods: Vec<Method>,
    pub withheld_k: usize,
    pub shift: ShiftSource,
    pub sweep: Option<(SweepAxis, Vec<u64>)>,
    pub seed: u64,
    pub batch_limit: usize,
    pub epsilon: Option<f64>,
    pub max_rounds: usize,
    pub pretoken_rules: PretokenRules,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            categories: CategorySource::Synthetic {
                mode: AlphabetMode::Disjoint,
                source_bytes: 4_000_000,
                vocab_words: 2500,
            },
            pool: 5,
            n: 5,
            trials: 10,
            train_bytes: 2_000_000,
            estimate_bytes: 500_000,
            num_merges: 1000,
            t_horizon: 1000,
            methods: vec![Method::Attack, Method::Tc, Method::Tee, Method::Random],
            withheld_k: 0,
            shift: ShiftSource::None,
            sweep: None,
            seed: 42,
            batch_limit: 0,
            epsilon: None,
            max_rounds: 50,
            pretoken_rules: PretokenRules::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > self.pool {
            return Err(Error::invalid(format!(
                "n = {} must be in 1..=pool ({})",
                self.n, self.pool
            )));
        }
        if self.withheld_k >= self.n && self.n > 0 {
            return Err(Error::invalid("withheld_k must be smaller than n"));
        }
        if matches!(self.kind, ExperimentKind::Scaling) && self.sweep.is_none() {
            return Err(Error::invalid("scaling experiments need a sweep axis"));
        }
        if let CategorySource::Synthetic { mode, .. } = self.categories {
            if self.pool > synth::max_pool(mode) {
                return Err(Error::invalid(format!(
                    "pool of {} exceeds the available disjoint alphabets",
                    self.pool
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub alpha_hat: Vec<f64>,
    pub log10_mse: f64,
    /// Error against renormalized true weights; differs from `log10_mse`
    /// only when categories were withheld.
    pub log10_mse_renorm: f64,
    pub runtime_s: f64,
    pub converged: bool,
    pub rounds: usize,
    pub constraints: usize,
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub trial: usize,
    pub category_names: Vec<String>,
    /// True weights of the categories visible to the solver. They sum to
    /// less than one when mass was withheld.
    pub true_weights: Vec<f64>,
    pub withheld_mass: f64,
    pub results: Vec<MethodResult>,
    pub error: Option<String>,
}

/// Mean squared error on the log10 scale; exact zero reports as -inf.
pub fn log10_mse(alpha_hat: &[f64], alpha_star: &[f64]) -> Result<f64> {
    if alpha_hat.len() != alpha_star.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            alpha_hat.len(),
            alpha_star.len()
        )));
    }
    if alpha_hat.is_empty() {
        return Err(Error::invalid("empty vectors"));
    }
    let mse = alpha_hat
        .iter()
        .zip(alpha_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / alpha_hat.len() as f64;
    if mse == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(mse.log10())
}

// ---------------------------------------------------------------------------
// Pool loading
// ---------------------------------------------------------------------------

struct Pool {
    names: Vec<String>,
    docs: Vec<DocSet>,
    /// Alternate estimation corpora for shift experiments.
    shift_docs: Option<Vec<DocSet>>,
}

fn load_pool(cfg: &ExperimentConfig) -> Result<Pool> {
    let (names, docs) = match &cfg.categories {
        CategorySource::Synthetic {
            mode,
            source_bytes,
            vocab_words,
        } => {
            let mut spec = SynthSpec::new(cfg.pool, *mode, *source_bytes, cfg.seed);
            spec.vocab_words = *vocab_words;
            let mut names = Vec::with_capacity(cfg.pool);
            let mut docs = Vec::with_capacity(cfg.pool);
            for (name, text) in synth::generate_pool(&spec) {
                names.push(name);
                docs.push(DocSet::from_bytes(&text));
            }
            (names, docs)
        }
        CategorySource::Manifest(path) => {
            let specs = crate::corpus::read_manifest(path)?;
            if specs.len() < cfg.pool {
                return Err(Error::invalid(format!(
                    "manifest lists {} categories, pool needs {}",
                    specs.len(),
                    cfg.pool
                )));
            }
            let mut names = Vec::new();
            let mut docs = Vec::new();
            for spec in specs.iter().take(cfg.pool) {
                names.push(spec.name.clone());
                docs.push(DocSet::load(&spec.source)?);
            }
            (names, docs)
        }
    };

    let shift_docs = match (&cfg.shift, &cfg.categories) {
        (ShiftSource::None, _) => None,
        (ShiftSource::Perturbed(strength), CategorySource::Synthetic { mode, source_bytes, vocab_words }) => {
            let mut spec = SynthSpec::new(cfg.pool, *mode, *source_bytes, cfg.seed);
            spec.vocab_words = *vocab_words;
            Some(
                (0..cfg.pool)
                    .map(|cat| DocSet::from_bytes(&synth::generate_shifted(&spec, cat, *strength)))
                    .collect(),
            )
        }
        (ShiftSource::Perturbed(_), CategorySource::Manifest(_)) => {
            return Err(Error::invalid(
                "perturbed shift requires synthetic categories; use shift = manifest:PATH",
            ));
        }
        (ShiftSource::Manifest(path), _) => {
            let specs = crate::corpus::read_manifest(path)?;
            if specs.len() < cfg.pool {
                return Err(Error::Config {
                    line: None,
                    msg: format!(
                        "shift manifest lists {} categories, pool needs {}",
                        specs.len(),
                        cfg.pool
                    ),
                });
            }
            let mut docs = Vec::new();
            for spec in specs.iter().take(cfg.pool) {
                docs.push(DocSet::load(&spec.source)?);
            }
            Some(docs)
        }
    };

    Ok(Pool {
        names,
        docs,
        shift_docs,
    })
}

// ---------------------------------------------------------------------------
// Trial execution
// ---------------------------------------------------------------------------

/// Everything a trial computed besides finished rows: TEE efficiencies wait
/// for the cross-trial calibration pass.
struct TrialOutput {
    row: ReportRow,
    tee_efficiencies: Option<Vec<f64>>,
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    pool: &'a Pool,
    references: &'a [Option<MergeList>],
}

fn choose_categories(pool: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_u64(seed ^ 0xc47));
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx
}

fn run_trial(ctx: &TrialContext<'_>, trial: usize) -> Result<TrialOutput> {
    let cfg = ctx.cfg;
    let trial_seed = mix_u64(cfg.seed ^ ((trial as u64 + 1) << 20));
    let cats = choose_categories(cfg.pool, cfg.n, trial_seed);
    let alpha_star = sample_simplex_weights(cfg.n, trial_seed)?.weights().to_vec();

    // Per-category train and estimation samples.
    let targets = largest_remainder_targets(&alpha_star, cfg.train_bytes);
    let mut train_table = WordTable::new();
    let mut estimate_buffers: Vec<Vec<u8>> = Vec::with_capacity(cfg.n);
    for (slot, (&cat, &target)) in cats.iter().zip(&targets).enumerate() {
        let docs = &ctx.pool.docs[cat];
        let estimate_here = match (&ctx.pool.shift_docs, cfg.estimate_bytes) {
            (Some(_), _) | (_, 0) => 0,
            _ => cfg.estimate_bytes,
        };
        let split = split_docs_seeded(
            docs,
            target,
            estimate_here,
            trial_seed ^ ((slot as u64 + 1) << 8),
            &ctx.pool.names[cat],
        )?;
        train_table.absorb(&pretokenize(&split.train, &cfg.pretoken_rules)?);
        let estimate = if let Some(shift_docs) = &ctx.pool.shift_docs {
            sample_docs_seeded(
                &shift_docs[cat],
                cfg.estimate_bytes,
                trial_seed ^ ((slot as u64 + 1) << 8) ^ 0x5f,
            )
        } else {
            split.estimate
        };
        estimate_buffers.push(estimate);
    }

    let merges = train(&train_table, cfg.num_merges).merges;
    let t_horizon = cfg.t_horizon.min(merges.len());
    if t_horizon < cfg.t_horizon {
        log::warn!(
            "trial {trial}: training stopped at {} merges, horizon capped",
            merges.len()
        );
    }
    if t_horizon == 0 {
        return Err(Error::MissingData(format!(
            "trial {trial}: tokenizer learned no merges"
        )));
    }

    let timelines: Vec<PairCountTimeline> = estimate_buffers
        .iter()
        .enumerate()
        .map(|(slot, buf)| {
            let table = pretokenize(buf, &cfg.pretoken_rules)?;
            let mut tl = replay(&table, &merges, t_horizon)?;
            tl.category_id = slot as u32;
            Ok(tl)
        })
        .collect::<Result<_>>()?;

    // Withholding: the solver loses the lightest withheld_k categories.
    let mut kept: Vec<usize> = (0..cfg.n).collect();
    let mut withheld_mass = 0.0;
    if cfg.withheld_k > 0 {
        let mut by_weight: Vec<usize> = (0..cfg.n).collect();
        by_weight.sort_by(|&a, &b| alpha_star[a].partial_cmp(&alpha_star[b]).unwrap());
        let withheld: Vec<usize> = by_weight[..cfg.withheld_k].to_vec();
        withheld_mass = withheld.iter().map(|&i| alpha_star[i]).sum();
        kept.retain(|i| !withheld.contains(i));
    }
    let kept_names: Vec<String> = kept
        .iter()
        .map(|&i| ctx.pool.names[cats[i]].clone())
        .collect();
    let kept_truth: Vec<f64> = kept.iter().map(|&i| alpha_star[i]).collect();
    let kept_sum: f64 = kept_truth.iter().sum();
    let kept_truth_renorm: Vec<f64> = kept_truth.iter().map(|w| w / kept_sum).collect();
    let kept_timelines: Vec<PairCountTimeline> = kept
        .iter()
        .map(|&i| timelines[i].clone())
        .collect();
    let kept_estimates: Vec<Vec<u8>> = kept.iter().map(|&i| estimate_buffers[i].clone()).collect();

    let mut results: Vec<MethodResult> = Vec::new();
    let mut tee_efficiencies = None;

    for method in &cfg.methods {
        match method {
            Method::Attack => {
                let started = Instant::now();
                let mut attack_cfg = AttackConfig::new(t_horizon);
                attack_cfg.epsilon = cfg.epsilon;
                attack_cfg.max_rounds = cfg.max_rounds;
                attack_cfg.batch_limit = cfg.batch_limit;
                attack_cfg.solver = SolverChoice::Embedded;
                let est = infer_mixture(&merges, &kept_timelines, &attack_cfg)?;
                results.push(MethodResult {
                    method: Method::Attack,
                    log10_mse: log10_mse(&est.alpha_hat, &kept_truth)?,
                    log10_mse_renorm: log10_mse(&est.alpha_hat, &kept_truth_renorm)?,
                    alpha_hat: est.alpha_hat,
                    runtime_s: started.elapsed().as_secs_f64(),
                    converged: est.converged,
                    rounds: est.rounds,
                    constraints: est.constraints_used,
                });
            }
            Method::Tc => {
                let started = Instant::now();
                let vocab: Vec<Vec<u8>> = (merges.base_len()..merges.vocab_len())
                    .map(|id| merges.token_bytes(id as u32).unwrap().to_vec())
                    .collect();
                let est = baselines::tc_estimate(&vocab, &kept_estimates)?;
                results.push(MethodResult {
                    method: Method::Tc,
                    log10_mse: log10_mse(&est.alpha_hat, &kept_truth)?,
                    log10_mse_renorm: log10_mse(&est.alpha_hat, &kept_truth_renorm)?,
                    alpha_hat: est.alpha_hat,
                    runtime_s: started.elapsed().as_secs_f64(),
                    converged: true,
                    rounds: 0,
                    constraints: 0,
                });
            }
            Method::Random => {
                let est = baselines::random_estimate(kept.len(), mix_u64(trial_seed ^ 0x9a9a))?;
                results.push(MethodResult {
                    method: Method::Random,
                    log10_mse: log10_mse(&est.alpha_hat, &kept_truth)?,
                    log10_mse_renorm: log10_mse(&est.alpha_hat, &kept_truth_renorm)?,
                    alpha_hat: est.alpha_hat,
                    runtime_s: 0.0,
                    converged: true,
                    rounds: 0,
                    constraints: 0,
                });
            }
            Method::Tee => {
                // Efficiencies now, prediction after calibration exists.
                let mut effs = Vec::with_capacity(kept.len());
                for (k, &i) in kept.iter().enumerate() {
                    let reference = ctx.references[cats[i]].as_ref().ok_or_else(|| {
                        Error::Internal("tee requested without reference tokenizers".into())
                    })?;
                    effs.push(relative_efficiency(
                        &merges,
                        reference,
                        &kept_estimates[k],
                        &cfg.pretoken_rules,
                    )?);
                }
                tee_efficiencies = Some(effs);
            }
        }
    }

    Ok(TrialOutput {
        row: ReportRow {
            trial,
            category_names: kept_names,
            true_weights: kept_truth,
            withheld_mass,
            results,
            error: None,
        },
        tee_efficiencies,
    })
}

/// Fill in TEE rows once all trials exist: each trial is predicted with a
/// log-log model fitted on every other trial's (efficiency, weight) pairs.
fn finish_tee(outputs: &mut [TrialOutput]) {
    let all: Vec<(usize, Vec<(f64, f64)>)> = outputs
        .iter()
        .filter_map(|o| {
            o.tee_efficiencies.as_ref().map(|effs| {
                (
                    o.row.trial,
                    effs.iter()
                        .copied()
                        .zip(o.row.true_weights.iter().copied())
                        .collect(),
                )
            })
        })
        .collect();
    for output in outputs.iter_mut() {
        let Some(effs) = output.tee_efficiencies.clone() else {
            continue;
        };
        let calibration: Vec<(f64, f64)> = all
            .iter()
            .filter(|(t, _)| *t != output.row.trial)
            .flat_map(|(_, pairs)| pairs.iter().copied())
            .collect();
        let started = Instant::now();
        let n_kept = output.row.true_weights.len();
        let alpha_hat = if calibration.len() < 2 {
            log::warn!("tee calibration needs at least two trials; reporting uniform");
            vec![1.0 / n_kept as f64; n_kept]
        } else {
            match predict_tee(&effs, &calibration) {
                Ok(a) => a,
                Err(e) => {
                    output.row.error = Some(format!("tee: {e}"));
                    continue;
                }
            }
        };
        let kept_truth = output.row.true_weights.clone();
        let kept_sum: f64 = kept_truth.iter().sum();
        let kept_truth_renorm: Vec<f64> = kept_truth.iter().map(|w| w / kept_sum).collect();
        output.row.results.push(MethodResult {
            method: Method::Tee,
            log10_mse: log10_mse(&alpha_hat, &kept_truth).unwrap_or(f64::NAN),
            log10_mse_renorm: log10_mse(&alpha_hat, &kept_truth_renorm).unwrap_or(f64::NAN),
            alpha_hat,
            runtime_s: started.elapsed().as_secs_f64(),
            converged: true,
            rounds: 0,
            constraints: 0,
        });
    }
}

fn predict_tee(effs: &[f64], calibration: &[(f64, f64)]) -> Result<Vec<f64>> {
    let (a, b) = crate::baselines::fit_loglog(calibration)?;
    let mut preds: Vec<f64> = effs
        .iter()
        .map(|&e| (a * e.max(1e-12).ln() + b).exp())
        .collect();
    let sum: f64 = preds.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::Internal("tee predictions did not normalize".into()));
    }
    for p in &mut preds {
        *p /= sum;
    }
    Ok(preds)
}

fn train_references(cfg: &ExperimentConfig, pool: &Pool) -> Result<Vec<Option<MergeList>>> {
    if !cfg.methods.contains(&Method::Tee) {
        return Ok(vec![None; pool.docs.len()]);
    }
    pool.docs
        .par_iter()
        .enumerate()
        .map(|(cat, docs)| {
            let text = sample_docs_seeded(docs, cfg.train_bytes, mix_u64(cfg.seed ^ 0xbe5 ^ cat as u64));
            let table = pretokenize(&text, &cfg.pretoken_rules)?;
            Ok(Some(train(&table, cfg.num_merges).merges))
        })
        .collect()
}

fn run_trials(cfg: &ExperimentConfig, pool: &Pool) -> Result<Vec<ReportRow>> {
    let references = train_references(cfg, pool)?;
    let ctx = TrialContext {
        cfg,
        pool,
        references: &references,
    };
    let mut outputs: Vec<TrialOutput> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| match run_trial(&ctx, trial) {
            Ok(out) => out,
            Err(e) => TrialOutput {
                row: ReportRow {
                    trial,
                    category_names: Vec::new(),
                    true_weights: Vec::new(),
                    withheld_mass: 0.0,
                    results: Vec::new(),
                    error: Some(e.to_string()),
                },
                tee_efficiencies: None,
            },
        })
        .collect();
    finish_tee(&mut outputs);
    Ok(outputs.into_iter().map(|o| o.row).collect())
}

/// The main controlled experiment: known mixtures, every requested method.
pub fn run_controlled(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let pool = load_pool(cfg)?;
    run_trials(cfg, &pool)
}

/// Controlled experiment where the solver does not see the `withheld_k`
/// lightest categories; errors are scored on the remaining ones against
/// their unnormalized true weights (and the renormalized variant).
pub fn run_withheld(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    if cfg.withheld_k == 0 {
        return run_controlled(cfg);
    }
    let pool = load_pool(cfg)?;
    run_trials(cfg, &pool)
}

/// Controlled experiment with estimation data drawn from shifted sources.
pub fn run_shift(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    if matches!(cfg.shift, ShiftSource::None) {
        return run_controlled(cfg);
    }
    let pool = load_pool(cfg)?;
    run_trials(cfg, &pool)
}

/// One sub-experiment per sweep value, tokenizers shared across the sweep
/// through the common seed. Returns (value label, rows) per value.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<ReportRow>)>> {
    cfg.validate()?;
    let Some((axis, values)) = cfg.sweep.clone() else {
        return Err(Error::invalid("scaling run without sweep values"));
    };
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let pool = load_pool(cfg)?;
    let mut out = Vec::with_capacity(values.len());
    for &value in &values {
        let mut sub = cfg.clone();
        sub.sweep = None;
        match axis {
            SweepAxis::EstimateBytes => {
                sub.estimate_bytes = value;
                out.push((format!("estimate_bytes_{value}"), run_trials(&sub, &pool)?));
            }
            SweepAxis::MergeHorizon => {
                sub.t_horizon = value as usize;
                out.push((format!("T_{value}"), run_trials(&sub, &pool)?));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Aggregation and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub mean_log10_mse: f64,
    pub std_log10_mse: f64,
}

pub fn summarize(rows: &[ReportRow]) -> Vec<MethodSummary> {
    let mut per_method: HashMap<Method, Vec<f64>> = HashMap::new();
    for row in rows {
        for r in &row.results {
            if r.log10_mse.is_finite() {
                per_method.entry(r.method).or_default().push(r.log10_mse);
            }
        }
    }
    let mut out: Vec<MethodSummary> = per_method
        .into_iter()
        .map(|(method, vals)| {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            MethodSummary {
                method,
                trials: n,
                mean_log10_mse: mean,
                std_log10_mse: std,
            }
        })
        .collect();
    out.sort_by_key(|s| s.method.name());
    out
}

fn fmt_float(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Write `rows.csv`, `summary.csv` and `trials.csv` into `dir`.
pub fn write_report_csvs(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows_csv = String::from("trial,method,category,true_weight,est_weight\n");
    for row in rows {
        for r in &row.results {
            for ((name, &truth), &est) in row
                .category_names
                .iter()
                .zip(&row.true_weights)
                .zip(&r.alpha_hat)
            {
                rows_csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.trial,
                    r.method.name(),
                    name,
                    fmt_float(truth),
                    fmt_float(est)
                ));
            }
        }
    }
    let rows_path = dir.join("rows.csv");
    std::fs::write(&rows_path, rows_csv).map_err(|e| Error::io(&rows_path, e))?;

    let mut summary_csv = String::from("method,mean_log10_mse,std_log10_mse\n");
    for s in summarize(rows) {
        summary_csv.push_str(&format!(
            "{},{},{}\n",
            s.method.name(),
            fmt_float(s.mean_log10_mse),
            fmt_float(s.std_log10_mse)
        ));
    }
    let summary_path = dir.join("summary.csv");
    std::fs::write(&summary_path, summary_csv).map_err(|e| Error::io(&summary_path, e))?;

    let mut trials_csv = String::from(
        "trial,method,log10_mse,log10_mse_renorm,runtime_s,converged,rounds,constraints,withheld_mass,error\n",
    );
    for row in rows {
        if let Some(err) = &row.error {
            trials_csv.push_str(&format!(
                "{},,,,,,,,{},{}\n",
                row.trial,
                fmt_float(row.withheld_mass),
                err.replace(',', ";")
            ));
            continue;
        }
        for r in &row.results {
            trials_csv.push_str(&format!(
                "{},{},{},{},{:.3},{},{},{},{},\n",
                row.trial,
                r.method.name(),
                fmt_float(r.log10_mse),
                fmt_float(r.log10_mse_renorm),
                r.runtime_s,
                r.converged,
                r.rounds,
                r.constraints,
                fmt_float(row.withheld_mass)
            ));
        }
    }
    let trials_path = dir.join("trials.csv");
    std::fs::write(&trials_path, trials_csv).map_err(|e| Error::io(&trials_path, e))?;
    Ok(())
}
