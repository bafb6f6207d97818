//! Slow reference implementations used by the test suites to cross-check
//! the fast paths. Everything here recomputes from first principles:
//! literal in-order merge application, full (step, pair) constraint scans,
//! and a small dense two-phase simplex.

use std::collections::HashMap;

use crate::bpe::{MergeList, Pair, TokenId};
use crate::error::{Error, Result};
use crate::inference::lp::{LpBackend, LpInstance, RowOp};
use crate::inference::{AttackConfig, ConstraintRef, LpSolution};
use crate::pretokenize::WordTable;
use crate::timeline::PairCountTimeline;

/// Apply the first `t` merges to a word by scanning rule after rule,
/// each applied exhaustively left to right. Deliberately the most literal
/// reading of in-order encoding; quadratic and only fit for tests.
pub fn apply_merges_in_order(word: &[u8], merges: &MergeList, t: usize) -> Vec<TokenId> {
    let (mut ids, _) = merges.base_units(word, None);
    for k in 0..t.min(merges.len()) {
        let (l, r) = merges.rule(k);
        let new_id = merges.produced_id(k);
        let mut out: Vec<TokenId> = Vec::with_capacity(ids.len());
        let mut i = 0;
        while i < ids.len() {
            if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
                out.push(new_id);
                i += 2;
            } else {
                out.push(ids[i]);
                i += 1;
            }
        }
        ids = out;
    }
    ids
}

/// From-scratch recount of adjacent pairs after the first `t` merges.
pub fn brute_pair_counts(
    table: &WordTable,
    merges: &MergeList,
    t: usize,
) -> HashMap<Pair, u64> {
    let mut counts: HashMap<Pair, u64> = HashMap::new();
    for (word, count) in table.iter() {
        let ids = apply_merges_in_order(word, merges, t);
        for w in ids.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += count;
        }
    }
    counts
}

/// The argmax pair the trainer would pick at step `t`: highest count, ties
/// to the lexicographically smallest (left bytes, right bytes), skipping
/// pairs whose concatenation already names a token created before step `t`.
pub fn best_pair_by_bytes(
    counts: &HashMap<Pair, u64>,
    merges: &MergeList,
    t: usize,
) -> Option<Pair> {
    let vocab_limit = (merges.base_len() + t) as u32;
    counts
        .iter()
        .filter(|&(_, &c)| c >= 2)
        .filter(|&(&(l, r), _)| {
            let mut produced = merges.token_bytes(l).unwrap_or(b"").to_vec();
            produced.extend_from_slice(merges.token_bytes(r).unwrap_or(b""));
            match merges.canonical_id(&produced) {
                Some(id) => id >= vocab_limit,
                None => true,
            }
        })
        .max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (
                    merges.token_bytes(pa.0).unwrap_or(b""),
                    merges.token_bytes(pa.1).unwrap_or(b""),
                );
                let kb = (
                    merges.token_bytes(pb.0).unwrap_or(b""),
                    merges.token_bytes(pb.1).unwrap_or(b""),
                );
                kb.cmp(&ka) // reversed: smaller bytes win the tie
            })
        })
        .map(|(&p, _)| p)
}

/// Full scan over every (step, competing pair) combination; the oracle for
/// the priority-queue detector. Mirrors the detector's float expression so
/// boundary comparisons agree bit for bit.
pub fn naive_violation_scan(
    sol: &LpSolution,
    timelines: &[PairCountTimeline],
    merges: &MergeList,
    cfg: &AttackConfig,
) -> Result<Vec<ConstraintRef>> {
    let n = timelines.len();
    let eps = cfg.resolved_epsilon(timelines);
    let denoms: Vec<f64> = timelines
        .iter()
        .map(|tl| tl.norm_denominator.max(1) as f64)
        .collect();
    let mut live: Vec<HashMap<Pair, i64>> = timelines
        .iter()
        .map(|tl| tl.base_counts().map(|(p, c)| (p, c as i64)).collect())
        .collect();

    let score = |live: &[HashMap<Pair, i64>], pair: Pair| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            if let Some(&c) = live[i].get(&pair) {
                if c != 0 {
                    acc += sol.alpha[i] * (c as f64 / denoms[i]);
                }
            }
        }
        acc
    };

    let horizon = cfg.end_step(merges);
    let mut out = Vec::new();
    for t in 0..horizon {
        if t >= cfg.offset {
            let m = merges.rule(t);
            let s_m = score(&live, m);
            let v_t = sol.v_step.get(&t).copied().unwrap_or(0.0);
            let threshold = s_m + v_t + eps;
            let mut pairs: Vec<Pair> = Vec::new();
            for cat in &live {
                pairs.extend(cat.keys().copied());
            }
            pairs.sort_unstable();
            pairs.dedup();
            for pair in pairs {
                if pair == m {
                    continue;
                }
                let v_p = sol.v_pair.get(&pair).copied().unwrap_or(0.0);
                if score(&live, pair) - v_p > threshold {
                    out.push(ConstraintRef { t, pair });
                }
            }
        }
        for (i, tl) in timelines.iter().enumerate() {
            for &(p, d) in tl.delta(t) {
                let e = live[i].entry(p).or_insert(0);
                *e += d;
                if *e == 0 {
                    live[i].remove(&p);
                }
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Every constraint of the full truncated program: all steps in the window,
/// all pairs alive anywhere at that step, competing pairs only.
pub fn enumerate_constraints(
    timelines: &[PairCountTimeline],
    merges: &MergeList,
    cfg: &AttackConfig,
) -> Vec<ConstraintRef> {
    let mut live: Vec<HashMap<Pair, i64>> = timelines
        .iter()
        .map(|tl| tl.base_counts().map(|(p, c)| (p, c as i64)).collect())
        .collect();
    let horizon = cfg.end_step(merges);
    let mut out = Vec::new();
    for t in 0..horizon {
        if t >= cfg.offset {
            let m = merges.rule(t);
            let mut pairs: Vec<Pair> = Vec::new();
            for cat in &live {
                pairs.extend(cat.keys().copied());
            }
            pairs.sort_unstable();
            pairs.dedup();
            for pair in pairs {
                if pair != m {
                    out.push(ConstraintRef { t, pair });
                }
            }
        }
        for (i, tl) in timelines.iter().enumerate() {
            for &(p, d) in tl.delta(t) {
                let e = live[i].entry(p).or_insert(0);
                *e += d;
                if *e == 0 {
                    live[i].remove(&p);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dense two-phase simplex
// ---------------------------------------------------------------------------

/// Textbook dense tableau simplex with Bland's rule; an independent check on
/// the embedded backend for instances small enough to afford it.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseSimplex;

const TOL: f64 = 1e-9;

impl LpBackend for DenseSimplex {
    fn solve(&self, lp: &LpInstance) -> Result<LpSolution> {
        let values = dense_solve(lp)?;
        Ok(lp.solution_from_values(&values))
    }
}

fn dense_solve(lp: &LpInstance) -> Result<Vec<f64>> {
    let n_struct = lp.vars().len();

    // Rows in (coeffs, op, rhs) form with rhs >= 0; upper bounds become rows.
    enum Op {
        Le,
        Ge,
        Eq,
    }
    let mut rows: Vec<(Vec<f64>, Op, f64)> = Vec::new();
    for row in lp.rows() {
        let mut coeffs = vec![0.0; n_struct];
        for &(c, v) in &row.coeffs {
            coeffs[c] = v;
        }
        let op = match row.op {
            RowOp::Le => Op::Le,
            RowOp::Eq => Op::Eq,
        };
        rows.push((coeffs, op, row.rhs));
    }
    for (j, var) in lp.vars().iter().enumerate() {
        let (_, hi) = var.bounds();
        if hi.is_finite() {
            let mut coeffs = vec![0.0; n_struct];
            coeffs[j] = 1.0;
            rows.push((coeffs, Op::Le, hi));
        }
    }
    for (coeffs, op, rhs) in &mut rows {
        if *rhs < 0.0 {
            for c in coeffs.iter_mut() {
                *c = -*c;
            }
            *rhs = -*rhs;
            *op = match *op {
                Op::Le => Op::Ge,
                Op::Ge => Op::Le,
                Op::Eq => Op::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows
        .iter()
        .filter(|(_, op, _)| !matches!(op, Op::Eq))
        .count();
    let n_art = rows
        .iter()
        .filter(|(_, op, _)| !matches!(op, Op::Le))
        .count();
    let total = n_struct + n_slack + n_art;

    // tableau[i] = row coefficients + rhs at the end
    let mut tab = vec![vec![0.0f64; total + 1]; m];
    let mut basis = vec![0usize; m];
    let mut slack_at = n_struct;
    let mut art_at = n_struct + n_slack;
    let art_start = n_struct + n_slack;
    for (i, (coeffs, op, rhs)) in rows.iter().enumerate() {
        tab[i][..n_struct].copy_from_slice(coeffs);
        tab[i][total] = *rhs;
        match op {
            Op::Le => {
                tab[i][slack_at] = 1.0;
                basis[i] = slack_at;
                slack_at += 1;
            }
            Op::Ge => {
                tab[i][slack_at] = -1.0;
                slack_at += 1;
                tab[i][art_at] = 1.0;
                basis[i] = art_at;
                art_at += 1;
            }
            Op::Eq => {
                tab[i][art_at] = 1.0;
                basis[i] = art_at;
                art_at += 1;
            }
        }
    }

    // Phase 1: minimize the artificial sum.
    let mut cost1 = vec![0.0f64; total];
    for c in cost1.iter_mut().skip(art_start) {
        *c = 1.0;
    }
    let obj1 = run_simplex(&mut tab, &mut basis, &cost1, total, None)?;
    if obj1 > 1e-7 {
        return Err(Error::Backend(format!(
            "reference simplex found the program infeasible (phase-1 objective {obj1:.3e})"
        )));
    }

    // Drive leftover basic-at-zero artificials out of the basis so later
    // pivots cannot push them positive again. Rows with no structural
    // support are redundant and inert.
    for i in 0..m {
        if basis[i] >= art_start {
            if let Some(j) = (0..art_start).find(|&j| tab[i][j].abs() > TOL) {
                pivot(&mut tab, &mut basis, i, j);
            }
        }
    }

    // Phase 2: the real objective, artificial columns barred from entering.
    let mut cost2 = vec![0.0f64; total];
    for (j, var) in lp.vars().iter().enumerate() {
        cost2[j] = var.objective_coeff();
    }
    run_simplex(&mut tab, &mut basis, &cost2, art_start, Some(art_start))?;

    let mut values = vec![0.0f64; n_struct];
    for (i, &b) in basis.iter().enumerate() {
        if b < n_struct {
            values[b] = tab[i][total];
        }
    }
    Ok(values)
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], l: usize, e: usize) {
    let total = tab[0].len() - 1;
    let pv = tab[l][e];
    for j in 0..=total {
        tab[l][j] /= pv;
    }
    for i in 0..tab.len() {
        if i != l && tab[i][e] != 0.0 {
            let f = tab[i][e];
            for j in 0..=total {
                tab[i][j] -= f * tab[l][j];
            }
        }
    }
    basis[l] = e;
}

/// Bland-rule simplex iterations on an explicit tableau. `enter_limit`
/// bounds the entering-candidate columns; `banned_from` excludes a suffix
/// (artificials in phase 2). Returns the final objective value.
fn run_simplex(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    enter_limit: usize,
    banned_from: Option<usize>,
) -> Result<f64> {
    let m = tab.len();
    if m == 0 {
        return Ok(0.0);
    }
    let total = tab[0].len() - 1;

    // Reduced costs: z[j] = cost[j] - cost_B * B^-1 A_j, tracked as a row.
    let mut z = vec![0.0f64; total + 1];
    z[..total].copy_from_slice(cost);
    for i in 0..m {
        let cb = cost[basis[i]];
        if cb != 0.0 {
            for j in 0..=total {
                z[j] -= cb * tab[i][j];
            }
        }
    }

    for _iter in 0..50_000 {
        // Bland: smallest eligible column index.
        let mut entering = None;
        for (j, &zj) in z.iter().enumerate().take(enter_limit) {
            if banned_from.is_some_and(|b| j >= b) {
                continue;
            }
            if zj < -TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else {
            return Ok(-z[total]);
        };

        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            if tab[i][e] > TOL {
                let ratio = tab[i][total] / tab[i][e];
                let better = match leaving {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - TOL || (ratio <= lr + TOL && basis[i] < basis[li])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((l, _)) = leaving else {
            return Err(Error::Backend(
                "reference simplex: unbounded program".into(),
            ));
        };

        // Pivot on (l, e).
        let pv = tab[l][e];
        for j in 0..=total {
            tab[l][j] /= pv;
        }
        for i in 0..m {
            if i != l && tab[i][e].abs() > 0.0 {
                let f = tab[i][e];
                for j in 0..=total {
                    tab[i][j] -= f * tab[l][j];
                }
            }
        }
        let f = z[e];
        if f != 0.0 {
            for j in 0..=total {
                z[j] -= f * tab[l][j];
            }
        }
        basis[l] = e;
    }
    Err(Error::Backend(
        "reference simplex: iteration limit reached".into(),
    ))
}

/// Grid search over the alpha simplex for instances whose rows have
/// pairwise-distinct slack variables, where the inner optimum is separable:
/// each row contributes `max(gap, 0)`. Returns (best objective, best alpha).
pub fn grid_search_separable(
    lp_rows: &[(Vec<f64>, f64)], // (alpha coefficients, rhs) of `coeffs*a - v <= rhs`
    n: usize,
    step: f64,
) -> (f64, Vec<f64>) {
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut alpha = vec![0.0f64; n];
    grid_recurse(lp_rows, n, step, 0, 1.0, &mut alpha, &mut best);
    best
}

fn grid_recurse(
    rows: &[(Vec<f64>, f64)],
    n: usize,
    step: f64,
    idx: usize,
    remaining: f64,
    alpha: &mut Vec<f64>,
    best: &mut (f64, Vec<f64>),
) {
    if idx == n - 1 {
        alpha[idx] = remaining;
        let mut obj = 0.0;
        for (coeffs, rhs) in rows {
            let lhs: f64 = coeffs.iter().zip(alpha.iter()).map(|(c, a)| c * a).sum();
            obj += (lhs - rhs).max(0.0);
        }
        if obj < best.0 {
            *best = (obj, alpha.clone());
        }
        return;
    }
    let mut a = 0.0;
    while a <= remaining + 1e-12 {
        alpha[idx] = a.min(remaining);
        grid_recurse(rows, n, step, idx + 1, remaining - alpha[idx], alpha, best);
        a += step;
    }
}
