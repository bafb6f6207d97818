//! Synthetic category corpora for controlled experiments: per-category
//! word vocabularies drawn from seeded Markov chains over small symbol
//! alphabets, document lengths and word frequencies Zipf-shaped. Disjoint
//! alphabets emulate distinct natural languages; a shared alphabet with
//! skewed bigram statistics emulates same-language domain mixtures.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::mix_u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphabetMode {
    /// Each category writes in its own symbols.
    Disjoint,
    /// All categories share `a..z` but differ in word stock and bigrams.
    Shared,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub pool: usize,
    pub mode: AlphabetMode,
    pub bytes_per_category: u64,
    pub vocab_words: usize,
    pub doc_words: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(pool: usize, mode: AlphabetMode, bytes_per_category: u64, seed: u64) -> Self {
        SynthSpec {
            pool,
            mode,
            bytes_per_category,
            vocab_words: 2500,
            doc_words: 14,
            zipf_exponent: 1.08,
            seed,
        }
    }
}

const SYMBOLS_PER_CATEGORY: usize = 7;

fn symbol_pool() -> Vec<u8> {
    let mut s: Vec<u8> = (b'a'..=b'z').collect();
    s.extend(b'A'..=b'Z');
    s.extend(0xc0..=0xffu8);
    s
}

pub fn max_pool(mode: AlphabetMode) -> usize {
    match mode {
        AlphabetMode::Disjoint => symbol_pool().len() / SYMBOLS_PER_CATEGORY,
        AlphabetMode::Shared => usize::MAX,
    }
}

fn alphabet(spec: &SynthSpec, cat: usize) -> Vec<u8> {
    match spec.mode {
        AlphabetMode::Disjoint => {
            let pool = symbol_pool();
            let start = cat * SYMBOLS_PER_CATEGORY;
            pool[start..start + SYMBOLS_PER_CATEGORY].to_vec()
        }
        AlphabetMode::Shared => (b'a'..=b'z').collect(),
    }
}

/// A category's word stock with cumulative sampling weights.
struct WordDistribution {
    words: Vec<Vec<u8>>,
    cdf: Vec<f64>,
}

impl WordDistribution {
    fn sample<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a [u8] {
        let x: f64 = rng.random::<f64>() * self.cdf.last().copied().unwrap_or(1.0);
        let idx = self.cdf.partition_point(|&c| c < x);
        &self.words[idx.min(self.words.len() - 1)]
    }
}

fn build_words(spec: &SynthSpec, cat: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_u64(spec.seed ^ (cat as u64) << 8));
    let alpha = alphabet(spec, cat);
    let k = alpha.len();

    // Category-specific first-order chain; cubing uniform weights skews the
    // bigram distribution differently per category.
    let mut start = vec![0.0f64; k];
    let mut trans = vec![vec![0.0f64; k]; k];
    for s in &mut start {
        *s = rng.random::<f64>().powi(3) + 1e-3;
    }
    for row in &mut trans {
        for p in row.iter_mut() {
            *p = rng.random::<f64>().powi(3) + 1e-3;
        }
    }
    let start_cdf = cumsum(&start);
    let trans_cdf: Vec<Vec<f64>> = trans.iter().map(|r| cumsum(r)).collect();

    let mut words = Vec::with_capacity(spec.vocab_words);
    let mut seen = std::collections::HashSet::with_capacity(spec.vocab_words);
    let mut attempts = 0usize;
    while words.len() < spec.vocab_words && attempts < spec.vocab_words * 60 {
        attempts += 1;
        let len = 2 + sample_cdf(&[0.28, 0.55, 0.76, 0.89, 0.96, 1.0], &mut rng);
        let mut word = Vec::with_capacity(len);
        let mut state = sample_cdf_f(&start_cdf, &mut rng);
        word.push(alpha[state]);
        for _ in 1..len {
            state = sample_cdf_f(&trans_cdf[state], &mut rng);
            word.push(alpha[state]);
        }
        if seen.insert(word.clone()) {
            words.push(word);
        }
    }
    words
}

fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for r in 0..n {
        acc += 1.0 / ((r + 1) as f64).powf(s);
        cdf.push(acc);
    }
    cdf
}

fn cumsum(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.random::<f64>() * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|&c| c < x).min(cdf.len() - 1)
}

fn sample_cdf_f(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    sample_cdf(cdf, rng)
}

/// Generate one category's source corpus, newline-delimited documents.
pub fn generate_category(spec: &SynthSpec, cat: usize) -> Vec<u8> {
    generate_with_rank_noise(spec, cat, 0.0)
}

/// Same word stock, locally reshuffled frequency ranks: a same-category
/// corpus from a shifted distribution. `strength` 0 is the identity; around
/// 0.5 ranks move by half the vocabulary scale.
pub fn generate_shifted(spec: &SynthSpec, cat: usize, strength: f64) -> Vec<u8> {
    generate_with_rank_noise(spec, cat, strength)
}

fn generate_with_rank_noise(spec: &SynthSpec, cat: usize, strength: f64) -> Vec<u8> {
    let mut words = build_words(spec, cat);
    if words.is_empty() {
        return Vec::new();
    }
    if strength > 0.0 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_u64(spec.seed ^ (cat as u64) << 8 ^ 0x51f7));
        let v = words.len() as f64;
        let mut keyed: Vec<(f64, Vec<u8>)> = words
            .into_iter()
            .enumerate()
            .map(|(i, w)| (i as f64 + strength * v * (rng.random::<f64>() - 0.5), w))
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        words = keyed.into_iter().map(|(_, w)| w).collect();
    }
    let dist = WordDistribution {
        cdf: zipf_cdf(words.len(), spec.zipf_exponent),
        words,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_u64(
        spec.seed ^ (cat as u64) << 8 ^ if strength > 0.0 { 0xd0c5 } else { 0x7e47 },
    ));
    let mut out = Vec::with_capacity(spec.bytes_per_category as usize + 256);
    while (out.len() as u64) < spec.bytes_per_category {
        for w in 0..spec.doc_words {
            if w > 0 {
                out.push(b' ');
            }
            out.extend_from_slice(dist.sample(&mut rng));
        }
        out.push(b'\n');
    }
    out
}

/// Generate the whole pool: `(name, corpus)` per category.
pub fn generate_pool(spec: &SynthSpec) -> Vec<(String, Vec<u8>)> {
    assert!(
        spec.pool <= max_pool(spec.mode),
        "pool of {} exceeds the {} disjoint alphabets available",
        spec.pool,
        max_pool(spec.mode)
    );
    (0..spec.pool)
        .map(|cat| (format!("synth{cat:02}"), generate_category(spec, cat)))
        .collect()
}
