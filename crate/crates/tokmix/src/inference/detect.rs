//! Violated-constraint detection: one priority-queue sweep over the merge
//! timeline instead of a full scan of every (step, pair) combination.
//!
//! The queue is keyed by `s_p - v_p` where `s_p` is the alpha-weighted
//! normalized count of pair `p`. Walking pairs in descending key order, the
//! first pair that satisfies its constraint proves every remaining pair
//! does too, because the threshold at a fixed step is the same for all of
//! them. Between steps the precomputed deltas update only the touched pairs
//! (inserts for created pairs, priority updates for consumed ones); stale
//! heap entries are skipped on pop.

use std::collections::{BinaryHeap, HashMap, HashSet};

use smallvec::SmallVec;

use crate::bpe::{MergeList, Pair};
use crate::error::{Error, Result};
use crate::inference::{AttackConfig, ConstraintRef, LpSolution};
use crate::timeline::PairCountTimeline;

/// Per-pair raw counts for the categories where the pair occurs, kept in
/// ascending category order so score summation order is deterministic.
type CatCounts = SmallVec<[(u16, i64); 2]>;

/// Alpha-weighted normalized count. Categories are accumulated in ascending
/// order; the naive reference scan mirrors this exact float expression.
#[inline]
fn score_of(entries: &CatCounts, alpha: &[f64], denoms: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &(i, c) in entries {
        acc += alpha[i as usize] * (c as f64 / denoms[i as usize]);
    }
    acc
}

struct SweepEntry {
    priority: f64,
    pair: Pair,
}

impl PartialEq for SweepEntry {
    fn eq(&self, other: &Self) -> bool {
        self.priority.to_bits() == other.priority.to_bits() && self.pair == other.pair
    }
}
impl Eq for SweepEntry {}

impl Ord for SweepEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| self.pair.cmp(&other.pair))
    }
}

impl PartialOrd for SweepEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn validate_inputs(
    sol: &LpSolution,
    timelines: &[PairCountTimeline],
    merges: &MergeList,
    cfg: &AttackConfig,
) -> Result<()> {
    if timelines.is_empty() {
        return Err(Error::invalid("no category timelines supplied"));
    }
    if timelines.len() > u16::MAX as usize {
        return Err(Error::invalid("more than 65535 categories"));
    }
    if sol.alpha.len() != timelines.len() {
        return Err(Error::invalid(format!(
            "solution has {} alphas for {} categories",
            sol.alpha.len(),
            timelines.len()
        )));
    }
    let horizon = cfg.end_step(merges);
    if horizon > merges.len() {
        return Err(Error::invalid(format!(
            "attack horizon {horizon} exceeds the {}-rule merge list",
            merges.len()
        )));
    }
    let expect = merges.vocab_hash();
    for tl in timelines {
        if tl.vocab_hash() != expect {
            return Err(Error::InputMismatch(format!(
                "timeline for category {} was built for a different merge list",
                tl.category_id
            )));
        }
        if tl.steps() < horizon {
            return Err(Error::invalid(format!(
                "timeline for category {} has {} steps, horizon needs {horizon}",
                tl.category_id,
                tl.steps()
            )));
        }
    }
    Ok(())
}

/// The exact violated set `{(t, p) : s_p - v_p > s_m + v_t + eps}` over the
/// configured window, found by the incremental sweep.
pub fn detect_violations(
    sol: &LpSolution,
    timelines: &[PairCountTimeline],
    merges: &MergeList,
    cfg: &AttackConfig,
) -> Result<Vec<ConstraintRef>> {
    Ok(detect_violations_detailed(sol, timelines, merges, cfg)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// Like [`detect_violations`] but with each constraint's violation gap,
/// which the lazy loop uses to prioritize batched rows.
pub fn detect_violations_detailed(
    sol: &LpSolution,
    timelines: &[PairCountTimeline],
    merges: &MergeList,
    cfg: &AttackConfig,
) -> Result<Vec<(ConstraintRef, f64)>> {
    validate_inputs(sol, timelines, merges, cfg)?;
    let eps = cfg.resolved_epsilon(timelines);
    let alpha = &sol.alpha;
    let denoms: Vec<f64> = timelines
        .iter()
        .map(|tl| tl.norm_denominator.max(1) as f64)
        .collect();

    let mut counts: HashMap<Pair, CatCounts> = HashMap::new();
    for (i, tl) in timelines.iter().enumerate() {
        for (pair, c) in tl.base_counts() {
            counts.entry(pair).or_default().push((i as u16, c as i64));
        }
    }
    let mut priority: HashMap<Pair, f64> = HashMap::with_capacity(counts.len());
    let mut heap: BinaryHeap<SweepEntry> = BinaryHeap::with_capacity(counts.len());
    for (&pair, entries) in &counts {
        let p = score_of(entries, alpha, &denoms) - v_pair(sol, pair);
        priority.insert(pair, p);
        heap.push(SweepEntry { priority: p, pair });
    }

    let horizon = cfg.end_step(merges);
    let mut violations: Vec<(ConstraintRef, f64)> = Vec::new();
    let mut popped: Vec<SweepEntry> = Vec::new();
    let mut touched: HashSet<Pair> = HashSet::new();

    for t in 0..horizon {
        if t >= cfg.offset {
            let m = merges.rule(t);
            let s_m = counts
                .get(&m)
                .map(|e| score_of(e, alpha, &denoms))
                .unwrap_or(0.0);
            let threshold = s_m + v_step(sol, t) + eps;

            popped.clear();
            while let Some(entry) = heap.pop() {
                match priority.get(&entry.pair) {
                    Some(&p) if p.to_bits() == entry.priority.to_bits() => {}
                    _ => continue, // stale
                }
                if entry.pair != m && entry.priority > threshold {
                    violations.push((
                        ConstraintRef {
                            t,
                            pair: entry.pair,
                        },
                        entry.priority - threshold,
                    ));
                    popped.push(entry);
                } else {
                    // Everything still queued has a lower key and therefore
                    // satisfies its constraint at this step.
                    popped.push(entry);
                    break;
                }
            }
            heap.extend(popped.drain(..));
        }

        // Advance the counts to step t+1.
        touched.clear();
        for (i, tl) in timelines.iter().enumerate() {
            for &(pair, d) in tl.delta(t) {
                let entries = counts.entry(pair).or_default();
                match entries.binary_search_by_key(&(i as u16), |&(c, _)| c) {
                    Ok(k) => {
                        entries[k].1 += d;
                        if entries[k].1 == 0 {
                            entries.remove(k);
                        }
                    }
                    Err(k) => entries.insert(k, (i as u16, d)),
                }
                touched.insert(pair);
            }
        }
        for &pair in &touched {
            let entries = counts.get(&pair);
            let s = entries.map(|e| score_of(e, alpha, &denoms)).unwrap_or(0.0);
            let p = s - v_pair(sol, pair);
            let stale = priority.insert(pair, p);
            if stale.map(f64::to_bits) != Some(p.to_bits()) {
                heap.push(SweepEntry { priority: p, pair });
            }
        }
    }

    violations.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Ok(violations)
}

#[inline]
fn v_pair(sol: &LpSolution, pair: Pair) -> f64 {
    sol.v_pair.get(&pair).copied().unwrap_or(0.0)
}

#[inline]
fn v_step(sol: &LpSolution, t: usize) -> f64 {
    sol.v_step.get(&t).copied().unwrap_or(0.0)
}
