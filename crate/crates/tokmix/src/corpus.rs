//! Category corpora: manifests, simplex-weight sampling, and byte-budgeted
//! materialization of mixtures at document (line) granularity.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One data category: a display name and a newline-delimited source file.
#[derive(Debug, Clone)]
pub struct CategorySpec {
    pub id: u32,
    pub name: String,
    pub source: PathBuf,
    pub available_bytes: u64,
}

/// Mixture weights on the unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one weight"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("mixture weights must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        Ok(MixtureSpec { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Uniform draw from the (n-1)-simplex via sorted-uniform gaps.
/// Deterministic per seed.
pub fn sample_simplex_weights(n: usize, seed: u64) -> Result<MixtureSpec> {
    if n == 0 {
        return Err(Error::invalid("cannot sample weights for zero categories"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut weights = Vec::with_capacity(n);
    let mut prev = 0.0;
    for &c in &cuts {
        weights.push(c - prev);
        prev = c;
    }
    weights.push(1.0 - prev);
    // Gaps of sorted uniforms sum to 1 exactly up to float round-off; nudge
    // the largest coordinate so the simplex invariant holds bit-tight.
    let sum: f64 = weights.iter().sum();
    let imax = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    weights[imax] += 1.0 - sum;
    MixtureSpec::new(weights)
}

/// Read a `id<TAB>name<TAB>path` manifest. Ids must be dense 0..n-1.
pub fn read_manifest(path: &Path) -> Result<Vec<CategorySpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut specs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.splitn(3, '\t');
        let id: u32 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "expected numeric category id".into(),
            })?;
        let name = fields
            .next()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "expected category name".into(),
            })?;
        let raw_path = fields.next().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(
            || Error::Parse {
                line: line_no,
                msg: "expected source path".into(),
            },
        )?;
        let mut source = PathBuf::from(raw_path);
        if source.is_relative() {
            source = base.join(source);
        }
        let available_bytes = fs::metadata(&source)
            .map(|m| m.len())
            .map_err(|e| Error::io(&source, e))?;
        specs.push(CategorySpec {
            id,
            name: name.to_string(),
            source,
            available_bytes,
        });
    }
    specs.sort_by_key(|s| s.id);
    for (i, spec) in specs.iter().enumerate() {
        if spec.id as usize != i {
            return Err(Error::invalid(format!(
                "manifest ids must be dense 0..n-1, found id {} at position {i}",
                spec.id
            )));
        }
    }
    if specs.is_empty() {
        return Err(Error::invalid("manifest lists no categories"));
    }
    Ok(specs)
}

/// A loaded source split into documents (one per line). The separator byte
/// is accounted to each document so budgets track on-disk sizes.
#[derive(Debug, Clone)]
pub struct DocSet {
    docs: Vec<Vec<u8>>,
}

impl DocSet {
    pub fn from_bytes(data: &[u8]) -> DocSet {
        let docs = data
            .split(|&b| b == b'\n')
            .filter(|d| !d.is_empty())
            .map(|d| d.to_vec())
            .collect();
        DocSet { docs }
    }

    pub fn load(path: &Path) -> Result<DocSet> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(DocSet::from_bytes(&data))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn doc_cost(&self, idx: usize) -> u64 {
        self.docs[idx].len() as u64 + 1
    }

    fn pass_cost(&self) -> u64 {
        (0..self.docs.len()).map(|i| self.doc_cost(i)).sum()
    }
}

/// Apportion `total` bytes over `weights` by largest remainder, so the
/// targets sum to `total` exactly.
pub fn largest_remainder_targets(weights: &[f64], total: u64) -> Vec<u64> {
    let mut targets: Vec<u64> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        let exact = w * total as f64;
        let floor = exact.floor() as u64;
        targets.push(floor);
        assigned += floor;
        fracs.push((i, exact - floor as f64));
    }
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = total.saturating_sub(assigned);
    for &(i, _) in &fracs {
        if leftover == 0 {
            break;
        }
        targets[i] += 1;
        leftover -= 1;
    }
    if leftover > 0 {
        // Float slop left more than one unit per category unassigned.
        targets[0] += leftover;
    }
    targets
}

/// Draw roughly `target` bytes of documents in a seeded shuffled order.
/// If the source is smaller than the target, whole passes are repeated so
/// relative document frequencies are preserved, then a partial pass tops up
/// until the budget is met (overshoot bounded by one document).
fn sample_docs(docs: &DocSet, target: u64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    if target == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    let pass = docs.pass_cost();
    let mut out = Vec::with_capacity(target as usize + 64);
    let mut written = 0u64;
    while target - written >= pass {
        for &i in &order {
            out.extend_from_slice(&docs.docs[i]);
            out.push(b'\n');
        }
        written += pass;
    }
    for &i in &order {
        if written >= target {
            break;
        }
        out.extend_from_slice(&docs.docs[i]);
        out.push(b'\n');
        written += docs.doc_cost(i);
    }
    out
}

/// Materialize a mixture: category `i` contributes its weight's share of
/// `total_bytes` (largest-remainder rounding), sampled at document
/// granularity from its source, duplicated whole if the source is too small.
pub fn materialize_mixture(
    specs: &[CategorySpec],
    mix: &MixtureSpec,
    total_bytes: u64,
    seed: u64,
) -> Result<Vec<Vec<u8>>> {
    if total_bytes == 0 {
        return Err(Error::invalid("total_bytes must be positive"));
    }
    if specs.len() != mix.len() {
        return Err(Error::invalid(format!(
            "{} categories but {} weights",
            specs.len(),
            mix.len()
        )));
    }
    let targets = largest_remainder_targets(mix.weights(), total_bytes);
    let mut buffers = Vec::with_capacity(specs.len());
    for (spec, &target) in specs.iter().zip(&targets) {
        if target == 0 {
            buffers.push(Vec::new());
            continue;
        }
        let docs = DocSet::load(&spec.source)?;
        if docs.is_empty() {
            return Err(Error::MissingData(format!(
                "category {} ({}) has no documents but positive weight",
                spec.id, spec.name
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix_u64(spec.id as u64));
        buffers.push(sample_docs(&docs, target, &mut rng));
    }
    Ok(buffers)
}

/// Two samples from one source: a training part and an estimation part.
#[derive(Debug, Clone)]
pub struct SplitSample {
    pub train: Vec<u8>,
    pub estimate: Vec<u8>,
    /// Set when the source was too small to keep the parts disjoint.
    pub overlap: bool,
}

/// Sample `train_bytes` + `estimate_bytes` from one source, disjoint at
/// document level when capacity allows, overlapping (flagged and logged)
/// otherwise.
pub fn split_train_estimate(
    spec: &CategorySpec,
    train_bytes: u64,
    estimate_bytes: u64,
    seed: u64,
) -> Result<SplitSample> {
    if train_bytes == 0 && estimate_bytes == 0 {
        return Err(Error::invalid("both split budgets are zero"));
    }
    let docs = DocSet::load(&spec.source)?;
    if docs.is_empty() {
        return Err(Error::MissingData(format!(
            "category {} ({}) has no documents",
            spec.id, spec.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix_u64(spec.id as u64 | 1 << 32));
    split_docs(&docs, train_bytes, estimate_bytes, &mut rng, &spec.name)
}

fn split_docs(
    docs: &DocSet,
    train_bytes: u64,
    estimate_bytes: u64,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<SplitSample> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);

    let mut train = Vec::with_capacity(train_bytes as usize + 64);
    let mut written = 0u64;
    let mut cursor = 0usize;
    let mut train_wrapped = false;
    while written < train_bytes {
        if cursor == order.len() {
            cursor = 0; // source smaller than the training budget alone
            train_wrapped = true;
        }
        let i = order[cursor];
        train.extend_from_slice(&docs.docs[i]);
        train.push(b'\n');
        written += docs.doc_cost(i);
        cursor += 1;
    }
    let train_consumed_all = train_bytes > 0 && (train_wrapped || cursor >= order.len());

    let mut estimate = Vec::with_capacity(estimate_bytes as usize + 64);
    let mut overlap = false;
    if estimate_bytes > 0 {
        let remaining: Vec<usize> = if train_wrapped {
            Vec::new()
        } else {
            order[cursor.min(order.len())..].to_vec()
        };
        let mut est_written = 0u64;
        for &i in &remaining {
            if est_written >= estimate_bytes {
                break;
            }
            estimate.extend_from_slice(&docs.docs[i]);
            estimate.push(b'\n');
            est_written += docs.doc_cost(i);
        }
        if est_written < estimate_bytes {
            overlap = true;
            let mut wrap_cursor = 0usize;
            while est_written < estimate_bytes {
                let i = order[wrap_cursor % order.len()];
                estimate.extend_from_slice(&docs.docs[i]);
                estimate.push(b'\n');
                est_written += docs.doc_cost(i);
                wrap_cursor += 1;
            }
        }
    }
    if train_consumed_all && estimate_bytes > 0 {
        overlap = true;
    }
    if overlap {
        log::warn!("category {name}: train/estimate samples overlap (source too small)");
    }
    Ok(SplitSample {
        train,
        estimate,
        overlap,
    })
}

/// In-memory variants for callers that already hold the documents (the
/// experiment harness generates its corpora rather than reading files).
pub fn sample_docs_seeded(docs: &DocSet, target: u64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_u64(seed));
    sample_docs(docs, target, &mut rng)
}

pub fn split_docs_seeded(
    docs: &DocSet,
    train_bytes: u64,
    estimate_bytes: u64,
    seed: u64,
    name: &str,
) -> Result<SplitSample> {
    if docs.is_empty() {
        return Err(Error::MissingData(format!("category {name} has no documents")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_u64(seed));
    split_docs(docs, train_bytes, estimate_bytes, &mut rng, name)
}

/// SplitMix64 finalizer; decorrelates per-category seeds.
pub(crate) fn mix_u64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
