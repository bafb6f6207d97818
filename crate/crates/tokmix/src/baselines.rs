//! Reference estimators the attack is compared against: token
//! classification (TC), tokenizer encoding efficiency (TEE), and random
//! guessing.

use memchr::memmem;

use crate::bpe::{byte_to_token_ratio, MergeList};
use crate::corpus::sample_simplex_weights;
use crate::error::{Error, Result};
use crate::pretokenize::PretokenRules;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Tee,
    Tc,
    Random,
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaselineMethod::Tee => write!(f, "tee"),
            BaselineMethod::Tc => write!(f, "tc"),
            BaselineMethod::Random => write!(f, "random"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineEstimate {
    pub method: BaselineMethod,
    pub alpha_hat: Vec<f64>,
}

/// Token classification: hard-assign every vocabulary token to the category
/// where it is most frequent per byte, then normalize the assignment counts.
pub fn tc_estimate(vocab: &[Vec<u8>], category_samples: &[Vec<u8>]) -> Result<BaselineEstimate> {
    let n = category_samples.len();
    if n == 0 {
        return Err(Error::invalid("tc baseline needs at least one category"));
    }
    if category_samples.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("tc baseline needs non-empty samples"));
    }
    let sizes: Vec<f64> = category_samples.iter().map(|s| s.len() as f64).collect();
    let mut assigned = vec![0u64; n];
    let mut skipped = 0usize;
    for token in vocab {
        if token.is_empty() {
            continue;
        }
        let finder = memmem::Finder::new(token);
        let mut best: Option<(usize, f64)> = None;
        for (i, sample) in category_samples.iter().enumerate() {
            let occurrences = finder.find_iter(sample).count() as f64;
            if occurrences == 0.0 {
                continue;
            }
            let rate = occurrences / sizes[i];
            let better = match best {
                None => true,
                // Ties go to the lowest category id.
                Some((_, b)) => rate > b,
            };
            if better {
                best = Some((i, rate));
            }
        }
        match best {
            Some((i, _)) => assigned[i] += 1,
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::debug!("tc baseline skipped {skipped} tokens with zero counts everywhere");
    }
    let total: u64 = assigned.iter().sum();
    let alpha_hat = if total == 0 {
        log::warn!("tc baseline assigned no tokens; falling back to uniform");
        vec![1.0 / n as f64; n]
    } else {
        assigned.iter().map(|&a| a as f64 / total as f64).collect()
    };
    Ok(BaselineEstimate {
        method: BaselineMethod::Tc,
        alpha_hat,
    })
}

/// Relative encoding efficiency of the target tokenizer on one category:
/// its byte-to-token ratio divided by that of a reference tokenizer trained
/// only on that category.
pub fn relative_efficiency(
    target: &MergeList,
    reference: &MergeList,
    sample: &[u8],
    rules: &PretokenRules,
) -> Result<f64> {
    let target_ratio = byte_to_token_ratio(sample, rules, target)?;
    let reference_ratio = byte_to_token_ratio(sample, rules, reference)?;
    if reference_ratio <= 0.0 || !reference_ratio.is_finite() {
        return Err(Error::invalid("reference tokenizer ratio is not positive"));
    }
    Ok(target_ratio / reference_ratio)
}

/// Tokenizer encoding efficiency: predict each category's proportion from
/// its relative efficiency through a log-log linear model fitted on
/// calibration pairs `(efficiency, true proportion)`, then normalize.
pub fn tee_estimate(
    target: &MergeList,
    references: &[MergeList],
    category_samples: &[Vec<u8>],
    rules: &PretokenRules,
    calibration: &[(f64, f64)],
) -> Result<BaselineEstimate> {
    let n = category_samples.len();
    if references.len() != n {
        return Err(Error::invalid(format!(
            "{} references for {n} categories",
            references.len()
        )));
    }
    if calibration.is_empty() {
        return Err(Error::invalid("tee baseline needs calibration pairs"));
    }
    let mut efficiencies = Vec::with_capacity(n);
    for i in 0..n {
        efficiencies.push(relative_efficiency(
            target,
            &references[i],
            &category_samples[i],
            rules,
        )?);
    }
    let (a, b) = fit_loglog(calibration)?;
    let mut predictions: Vec<f64> = efficiencies
        .iter()
        .map(|&e| (a * e.max(1e-12).ln() + b).exp())
        .collect();
    let sum: f64 = predictions.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::Internal("tee predictions did not normalize".into()));
    }
    for p in &mut predictions {
        *p /= sum;
    }
    Ok(BaselineEstimate {
        method: BaselineMethod::Tee,
        alpha_hat: predictions,
    })
}

/// Least squares on `ln(proportion) = a * ln(efficiency) + b`. Proportions
/// are floored away from zero before the log. A degenerate design (all
/// efficiencies equal) fits a constant.
pub(crate) fn fit_loglog(calibration: &[(f64, f64)]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = calibration
        .iter()
        .filter(|&&(e, _)| e > 0.0 && e.is_finite())
        .map(|&(e, p)| (e.ln(), p.max(1e-6).ln()))
        .collect();
    if pts.is_empty() {
        return Err(Error::invalid("no usable tee calibration pairs"));
    }
    let n = pts.len() as f64;
    let mean_x: f64 = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y: f64 = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx < 1e-18 {
        return Ok((0.0, mean_y));
    }
    let a = sxy / sxx;
    Ok((a, mean_y - a * mean_x))
}

/// A fresh unit-simplex draw; the floor every other method must beat.
pub fn random_estimate(n: usize, seed: u64) -> Result<BaselineEstimate> {
    let mix = sample_simplex_weights(n, seed)?;
    Ok(BaselineEstimate {
        method: BaselineMethod::Random,
        alpha_hat: mix.weights().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{train, MergeRule};
    use crate::pretokenize::WordTable;

    fn on_simplex(v: &[f64]) {
        assert!(v.iter().all(|&x| x >= 0.0));
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tc_assigns_one_token_each_way() {
        // foo appears often in category 0, bar only in category 1.
        let cat0 = b"foo foo foo foo baz".repeat(10);
        let cat1 = b"bar foo qux qux qux".repeat(10);
        let vocab = vec![b"foo".to_vec(), b"bar".to_vec()];
        let est = tc_estimate(&vocab, &[cat0, cat1]).unwrap();
        assert_eq!(est.alpha_hat, vec![0.5, 0.5]);
    }

    #[test]
    fn tc_all_tokens_one_category() {
        let cat0 = b"aaa bbb aaa bbb".to_vec();
        let cat1 = b"zzz yyy zzz yyy".to_vec();
        let vocab = vec![b"aaa".to_vec(), b"bbb".to_vec()];
        let est = tc_estimate(&vocab, &[cat0, cat1]).unwrap();
        assert_eq!(est.alpha_hat, vec![1.0, 0.0]);
    }

    #[test]
    fn tc_skips_absent_tokens() {
        let cat0 = b"aaa".to_vec();
        let cat1 = b"bbb".to_vec();
        let vocab = vec![b"aaa".to_vec(), b"zzz".to_vec()];
        let est = tc_estimate(&vocab, &[cat0, cat1]).unwrap();
        assert_eq!(est.alpha_hat, vec![1.0, 0.0]);
    }

    #[test]
    fn relative_efficiency_is_a_plain_ratio() {
        // target merges nothing; reference halves the token count.
        let target = MergeList::new_byte_level();
        let mut reference = MergeList::new_byte_level();
        reference.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        let rules = PretokenRules::default();
        let e = relative_efficiency(&target, &reference, b"abab", &rules).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tee_normalizes_predictions() {
        // Calibration with slope ~1 through (e=1, p=0.2).
        let calibration = vec![(0.5, 0.1), (1.0, 0.2), (2.0, 0.4)];
        let mut table = WordTable::new();
        table.add_word(b"ab", 10);
        let merges = train(&table, 1).merges;
        let refs = vec![merges.clone(), merges.clone()];
        let samples = vec![b"ab ab ab".to_vec(), b"ab ab ab".to_vec()];
        let est = tee_estimate(
            &merges,
            &refs,
            &samples,
            &PretokenRules::default(),
            &calibration,
        )
        .unwrap();
        on_simplex(&est.alpha_hat);
        // Equal efficiencies must give the uniform mixture.
        assert!((est.alpha_hat[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn loglog_fit_recovers_known_line() {
        // p = e^2 * exp(-1)
        let calib: Vec<(f64, f64)> = [0.5f64, 0.8, 1.0, 1.3]
            .iter()
            .map(|&e| (e, (2.0 * e.ln() - 1.0).exp()))
            .collect();
        let (a, b) = fit_loglog(&calib).unwrap();
        assert!((a - 2.0).abs() < 1e-9);
        assert!((b + 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_estimates_are_seeded() {
        let a = random_estimate(5, 1).unwrap();
        let b = random_estimate(5, 1).unwrap();
        let c = random_estimate(5, 2).unwrap();
        assert_eq!(a.alpha_hat, b.alpha_hat);
        assert_ne!(a.alpha_hat, c.alpha_hat);
        on_simplex(&a.alpha_hat);
        let single = random_estimate(1, 7).unwrap();
        assert_eq!(single.alpha_hat, vec![1.0]);
    }
}
