//! The attack core: relaxed LP over mixture weights, violation detection,
//! and the lazy row/column generation loop.

pub mod detect;
pub mod lp;

use std::collections::HashMap;

use crate::bpe::{MergeList, Pair};
use crate::error::{Error, Result};
use crate::timeline::PairCountTimeline;

pub use detect::{detect_violations, detect_violations_detailed};
pub use lp::{EmbeddedSimplex, ExternalLpFile, LpBackend, LpBuilder, LpInstance};

/// Which LP solver runs the per-round optimizations.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SolverChoice {
    #[default]
    Embedded,
    /// Shell command bridging to an external solver via LP-format files.
    External(String),
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// Number of merge steps whose constraints the attack uses, counted
    /// from `offset`.
    pub t_horizon: usize,
    /// First merge step considered; lets the attack run on the suffix of an
    /// extended merge list. Merges before the offset are still applied.
    pub offset: usize,
    /// Violation tolerance. `None` scales 1e-9 by the largest normalized
    /// base count, which also absorbs float noise between the detector and
    /// the LP rows.
    pub epsilon: Option<f64>,
    pub max_rounds: usize,
    pub solver: SolverChoice,
    /// Most-violated constraints added per round; 0 means all of them.
    pub batch_limit: usize,
}

impl AttackConfig {
    pub fn new(t_horizon: usize) -> Self {
        AttackConfig {
            t_horizon,
            offset: 0,
            epsilon: None,
            max_rounds: 50,
            solver: SolverChoice::Embedded,
            batch_limit: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_horizon == 0 {
            return Err(Error::invalid("attack horizon T must be at least 1"));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::invalid("epsilon must be non-negative"));
            }
        }
        Ok(())
    }

    /// Exclusive end of the constraint window.
    pub fn end_step(&self, merges: &MergeList) -> usize {
        (self.offset + self.t_horizon).min(merges.len()).max(self.offset)
    }

    pub fn resolved_epsilon(&self, timelines: &[PairCountTimeline]) -> f64 {
        self.epsilon.unwrap_or_else(|| auto_epsilon(timelines))
    }
}

/// Default tolerance: 1e-9 of the largest normalized base count.
pub fn auto_epsilon(timelines: &[PairCountTimeline]) -> f64 {
    let mut max_norm: f64 = 0.0;
    for tl in timelines {
        let denom = tl.norm_denominator.max(1) as f64;
        for (_, c) in tl.base_counts() {
            max_norm = max_norm.max(c as f64 / denom);
        }
    }
    1e-9 * max_norm
}

/// Identity of one relaxed constraint: competing pair `pair` at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintRef {
    pub t: usize,
    pub pair: Pair,
}

/// A solved LP round: mixture weights plus instantiated slack values.
/// Slacks absent from the maps are zero.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub alpha: Vec<f64>,
    pub v_step: HashMap<usize, f64>,
    pub v_pair: HashMap<Pair, f64>,
    pub objective: f64,
}

impl LpSolution {
    /// Round-zero guess: uniform mixture, all slacks zero.
    pub fn initial(n: usize) -> Self {
        LpSolution {
            alpha: vec![1.0 / n as f64; n],
            v_step: HashMap::new(),
            v_pair: HashMap::new(),
            objective: 0.0,
        }
    }
}

/// The attack's verdict.
#[derive(Debug, Clone)]
pub struct MixtureEstimate {
    pub alpha_hat: Vec<f64>,
    pub objective: f64,
    pub rounds: usize,
    pub constraints_used: usize,
    pub converged: bool,
}

/// Alpha-weighted normalized count of `pair` at step `t`. Reconstruction
/// walks the deltas, so this is a diagnostic path, not the sweep's.
pub fn score(
    alpha: &[f64],
    timelines: &[PairCountTimeline],
    t: usize,
    pair: Pair,
) -> Result<f64> {
    if alpha.len() != timelines.len() {
        return Err(Error::invalid(format!(
            "{} alphas for {} categories",
            alpha.len(),
            timelines.len()
        )));
    }
    let mut acc = 0.0;
    for (i, tl) in timelines.iter().enumerate() {
        let counts = tl.counts_at(t)?;
        if let Some(&c) = counts.get(&pair) {
            acc += alpha[i] * (c as f64 / tl.norm_denominator.max(1) as f64);
        }
    }
    Ok(acc)
}

/// Run the full lazy loop with the solver named in the config.
pub fn infer_mixture(
    merges: &MergeList,
    timelines: &[PairCountTimeline],
    cfg: &AttackConfig,
) -> Result<MixtureEstimate> {
    match &cfg.solver {
        SolverChoice::Embedded => infer_mixture_with(merges, timelines, cfg, &EmbeddedSimplex),
        SolverChoice::External(cmd) => {
            infer_mixture_with(merges, timelines, cfg, &ExternalLpFile::new(cmd.clone()))
        }
    }
}

/// Lazy constraint generation: start from the uniform mixture with zero
/// slacks, alternate detection and solving until no constraint of the full
/// program is violated (optimal) or the round budget runs out (flagged).
pub fn infer_mixture_with(
    merges: &MergeList,
    timelines: &[PairCountTimeline],
    cfg: &AttackConfig,
    backend: &dyn LpBackend,
) -> Result<MixtureEstimate> {
    cfg.validate()?;
    let n = timelines.len();
    if n == 0 {
        return Err(Error::invalid("attack needs at least one category"));
    }
    if n == 1 {
        // The simplex constraint pins the answer before any LP runs.
        return Ok(MixtureEstimate {
            alpha_hat: vec![1.0],
            objective: 0.0,
            rounds: 0,
            constraints_used: 0,
            converged: true,
        });
    }

    let mut sol = LpSolution::initial(n);
    let mut builder = LpBuilder::new(n);
    let mut rounds = 0;
    let mut converged = false;

    loop {
        let sweep_started = std::time::Instant::now();
        let violations = detect_violations_detailed(&sol, timelines, merges, cfg)?;
        let sweep_s = sweep_started.elapsed().as_secs_f64();
        if violations.is_empty() {
            converged = true;
            break;
        }
        if rounds >= cfg.max_rounds {
            log::warn!(
                "attack stopped after {rounds} rounds with {} violations outstanding",
                violations.len()
            );
            break;
        }
        let found = violations.len();
        let batch = select_batch(violations, cfg.batch_limit);
        let added = builder.add_constraints(&batch, timelines, merges)?;
        if added == 0 {
            // Every violated row is already in the LP; the residuals are
            // float noise below epsilon's resolution.
            log::debug!("no new constraints to add; treating as converged");
            converged = true;
            break;
        }
        let solve_started = std::time::Instant::now();
        sol = backend.solve(builder.instance())?;
        rounds += 1;
        log::debug!(
            "round {rounds}: {found} violations, +{added} rows ({} total), objective {:.6e}, sweep {sweep_s:.2}s, solve {:.2}s",
            builder.num_constraints(),
            sol.objective,
            solve_started.elapsed().as_secs_f64()
        );
    }

    Ok(MixtureEstimate {
        alpha_hat: normalize_alpha(&sol.alpha),
        objective: sol.objective,
        rounds,
        constraints_used: builder.num_constraints(),
        converged,
    })
}

/// Pick which violated constraints join the LP this round. Under a batch
/// limit, walk the steps taking each one's worst remaining violation, and
/// cap how many rows a single pair contributes per round: one overweight
/// pair tops thousands of steps at once with near-duplicate rows, while a
/// diverse batch settles the LP in far fewer total rows.
fn select_batch(violations: Vec<(ConstraintRef, f64)>, limit: usize) -> Vec<ConstraintRef> {
    if limit == 0 || violations.len() <= limit {
        return violations.into_iter().map(|(r, _)| r).collect();
    }
    let mut per_step: Vec<Vec<(ConstraintRef, f64)>> = Vec::new();
    let mut last_t = usize::MAX;
    for v in violations {
        if v.0.t != last_t {
            last_t = v.0.t;
            per_step.push(Vec::new());
        }
        per_step.last_mut().unwrap().push(v);
    }
    for step in &mut per_step {
        step.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }

    const PAIR_CAP: usize = 2;
    let mut pair_uses: HashMap<Pair, usize> = HashMap::new();
    let mut out = Vec::with_capacity(limit);
    let mut cursors = vec![0usize; per_step.len()];
    loop {
        let mut any = false;
        for (step, cursor) in per_step.iter().zip(cursors.iter_mut()) {
            while let Some(&(r, _)) = step.get(*cursor) {
                *cursor += 1;
                let uses = pair_uses.entry(r.pair).or_insert(0);
                if *uses < PAIR_CAP {
                    *uses += 1;
                    out.push(r);
                    any = true;
                    break;
                }
            }
            if out.len() == limit {
                return out;
            }
        }
        if !any {
            // Remaining rows are capped-out near-duplicates; they come back
            // next round if they still violate.
            break;
        }
    }
    out
}

/// Clip solver round-off below zero and rescale onto the simplex.
fn normalize_alpha(alpha: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = alpha.iter().map(|&a| a.max(0.0)).collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for a in &mut out {
            *a /= sum;
        }
    } else {
        let n = out.len().max(1);
        out = vec![1.0 / n as f64; n];
    }
    out
}
