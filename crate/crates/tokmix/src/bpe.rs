//! BPE merge lists: training from word tables and in-order encoding.

use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pretokenize::{split_words, PretokenRules, WordTable};

pub type TokenId = u32;
/// Adjacent token pair, keyed by creation-ordered vocabulary ids.
pub type Pair = (TokenId, TokenId);

/// The units words are split into before any merge applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseAlphabet {
    /// All 256 byte values; ids 0..=255 are the bytes themselves.
    Bytes,
    /// Supplied character units (sorted, deduplicated). Used when replaying
    /// character-level merge lists; training always uses bytes.
    Chars(Vec<Vec<u8>>),
}

impl BaseAlphabet {
    pub fn chars(units: impl IntoIterator<Item = Vec<u8>>) -> Self {
        let mut units: Vec<Vec<u8>> = units.into_iter().filter(|u| !u.is_empty()).collect();
        units.sort();
        units.dedup();
        BaseAlphabet::Chars(units)
    }

    pub fn len(&self) -> usize {
        match self {
            BaseAlphabet::Bytes => 256,
            BaseAlphabet::Chars(units) => units.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A merge rule spelled out as byte strings; the produced token is
/// `left ‖ right`. This is the parsing/serialization boundary type, the
/// in-memory list stores token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MergeRule {
    pub left: Vec<u8>,
    pub right: Vec<u8>,
}

impl MergeRule {
    pub fn new(left: impl Into<Vec<u8>>, right: impl Into<Vec<u8>>) -> Self {
        MergeRule {
            left: left.into(),
            right: right.into(),
        }
    }

    pub fn produced(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.left.len() + self.right.len());
        out.extend_from_slice(&self.left);
        out.extend_from_slice(&self.right);
        out
    }
}

/// An ordered list of merge rules plus the creation-ordered vocabulary.
///
/// `vocab[k]` for `k >= base_len()` is the token produced by rule
/// `k - base_len()`. Lists converted from other formats may contain several
/// rules producing the same byte string; ids stay distinct but all pair keys
/// are canonicalized to the earliest id with those bytes. A rule side that
/// is not producible at all (seen in malformed or converted lists) is
/// interned as a phantom token: it gets an id so the rule is representable,
/// but no input can ever produce it, so the rule never fires.
#[derive(Debug, Clone)]
pub struct MergeList {
    base: BaseAlphabet,
    vocab: Vec<Arc<[u8]>>,
    rules: Vec<Pair>,
    canonical: HashMap<Arc<[u8]>, TokenId>,
    phantoms: Vec<Arc<[u8]>>,
}

/// Phantom ids count down from here; `OOV_SENTINEL` stays reserved.
const PHANTOM_CEILING: TokenId = u32::MAX - 1;

impl PartialEq for MergeList {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base
            && self.vocab == other.vocab
            && self.rules == other.rules
            && self.phantoms == other.phantoms
    }
}
impl Eq for MergeList {}

impl MergeList {
    pub fn new_byte_level() -> Self {
        MergeList::with_base(BaseAlphabet::Bytes)
    }

    pub fn with_base(base: BaseAlphabet) -> Self {
        let mut vocab: Vec<Arc<[u8]>> = Vec::with_capacity(base.len());
        match &base {
            BaseAlphabet::Bytes => {
                for b in 0u8..=255 {
                    vocab.push(Arc::from(vec![b].into_boxed_slice()));
                }
            }
            BaseAlphabet::Chars(units) => {
                for u in units {
                    vocab.push(Arc::from(u.clone().into_boxed_slice()));
                }
            }
        }
        let mut canonical = HashMap::with_capacity(vocab.len());
        for (id, tok) in vocab.iter().enumerate() {
            canonical.entry(tok.clone()).or_insert(id as TokenId);
        }
        MergeList {
            base,
            vocab,
            rules: Vec::new(),
            canonical,
            phantoms: Vec::new(),
        }
    }

    pub fn base(&self) -> &BaseAlphabet {
        &self.base
    }

    pub fn base_len(&self) -> usize {
        self.base.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Number of merge rules (the `M` of the list).
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        if id > PHANTOM_CEILING - self.phantoms.len() as TokenId && id <= PHANTOM_CEILING {
            let k = (PHANTOM_CEILING - id) as usize;
            return self.phantoms.get(k).map(|t| t.as_ref());
        }
        self.vocab.get(id as usize).map(|t| t.as_ref())
    }

    /// Whether this id names a phantom (never-producible) token.
    pub fn is_phantom(&self, id: TokenId) -> bool {
        id <= PHANTOM_CEILING && id > PHANTOM_CEILING - self.phantoms.len() as TokenId
    }

    pub(crate) fn token_arc(&self, id: TokenId) -> Arc<[u8]> {
        if self.is_phantom(id) {
            return self.phantoms[(PHANTOM_CEILING - id) as usize].clone();
        }
        self.vocab[id as usize].clone()
    }

    /// Earliest vocabulary id carrying exactly these bytes.
    pub fn canonical_id(&self, token: &[u8]) -> Option<TokenId> {
        self.canonical.get(token).copied()
    }

    /// Rule `k` as canonical-id pair.
    pub fn rule(&self, k: usize) -> Pair {
        self.rules[k]
    }

    pub fn rules(&self) -> &[Pair] {
        &self.rules
    }

    pub fn rule_bytes(&self, k: usize) -> (&[u8], &[u8]) {
        let (l, r) = self.rules[k];
        (
            self.token_bytes(l).expect("rule side id is interned"),
            self.token_bytes(r).expect("rule side id is interned"),
        )
    }

    /// Canonical id of the token produced by rule `k`.
    pub fn produced_id(&self, k: usize) -> TokenId {
        let id = (self.base_len() + k) as TokenId;
        self.canonical[&self.vocab[id as usize]]
    }

    /// Append a rule given as byte strings. A side that is neither a base
    /// unit nor a product of an earlier rule is interned as a phantom.
    pub fn push_rule(&mut self, rule: &MergeRule) -> Result<()> {
        if rule.left.is_empty() || rule.right.is_empty() {
            return Err(Error::invalid("merge rule sides must be non-empty"));
        }
        let left = self.resolve_or_phantom(&rule.left);
        let right = self.resolve_or_phantom(&rule.right);
        self.push_resolved(left, right)
    }

    pub fn push_rule_ids(&mut self, left: TokenId, right: TokenId) -> Result<()> {
        let known = |id: TokenId| (id as usize) < self.vocab.len() || self.is_phantom(id);
        if !known(left) || !known(right) {
            return Err(Error::invalid("merge rule references unknown token id"));
        }
        let canon = |list: &Self, id: TokenId| {
            if list.is_phantom(id) {
                id
            } else {
                list.canonical[&list.vocab[id as usize]]
            }
        };
        let left = canon(self, left);
        let right = canon(self, right);
        self.push_resolved(left, right)
    }

    fn resolve_or_phantom(&mut self, token: &[u8]) -> TokenId {
        if let Some(id) = self.canonical_id(token) {
            return id;
        }
        let tok: Arc<[u8]> = Arc::from(token.to_vec().into_boxed_slice());
        let id = PHANTOM_CEILING - self.phantoms.len() as TokenId;
        self.phantoms.push(tok.clone());
        self.canonical.insert(tok, id);
        id
    }

    fn push_resolved(&mut self, left: TokenId, right: TokenId) -> Result<()> {
        let left_bytes = self.token_arc(left);
        let right_bytes = self.token_arc(right);
        if left_bytes.is_empty() || right_bytes.is_empty() {
            return Err(Error::invalid("merge rule sides must be non-empty"));
        }
        let mut produced = Vec::with_capacity(left_bytes.len() + right_bytes.len());
        produced.extend_from_slice(&left_bytes);
        produced.extend_from_slice(&right_bytes);
        let produced: Arc<[u8]> = Arc::from(produced.into_boxed_slice());
        let id = self.vocab.len() as TokenId;
        if id >= PHANTOM_CEILING - self.phantoms.len() as TokenId {
            return Err(Error::invalid("vocabulary exhausted the id space"));
        }
        match self.canonical.get(&produced) {
            // A phantom becomes real once something produces those bytes.
            Some(&prev) if self.is_phantom(prev) => {
                self.canonical.insert(produced.clone(), id);
            }
            Some(_) => {}
            None => {
                self.canonical.insert(produced.clone(), id);
            }
        }
        self.vocab.push(produced);
        self.rules.push((left, right));
        Ok(())
    }

    /// Re-resolve phantom rule sides whose bytes were produced later in the
    /// list (converted lists are not always in creation order). Encoding
    /// merges pairs by rank whenever both operands exist, so such rules can
    /// fire and must carry the real ids.
    pub fn relink_phantom_sides(&mut self) {
        for k in 0..self.rules.len() {
            let (l, r) = self.rules[k];
            let fix = |list: &Self, id: TokenId| {
                if list.is_phantom(id) {
                    let bytes = list.token_arc(id);
                    match list.canonical.get(&bytes) {
                        Some(&real) if !list.is_phantom(real) => real,
                        _ => id,
                    }
                } else {
                    id
                }
            };
            self.rules[k] = (fix(self, l), fix(self, r));
        }
    }

    pub fn iter_rules(&self) -> impl Iterator<Item = (usize, &[u8], &[u8])> {
        self.rules.iter().enumerate().map(move |(k, &(l, r))| {
            (
                k,
                self.vocab[l as usize].as_ref(),
                self.vocab[r as usize].as_ref(),
            )
        })
    }

    /// Keep only the first `t` rules.
    pub fn truncated(&self, t: usize) -> MergeList {
        let mut out = MergeList::with_base(self.base.clone());
        for k in 0..t.min(self.rules.len()) {
            let (l, r) = self.rule_bytes(k);
            let rule = MergeRule::new(l, r);
            out.push_rule(&rule).expect("existing rule stays valid");
        }
        out.relink_phantom_sides();
        out
    }

    /// Order-sensitive FNV-1a hash over the base alphabet, vocabulary, and
    /// rule sides; guards timelines against the wrong merge list.
    pub fn vocab_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.base_len() as u64);
        h.write_u64(self.rules.len() as u64);
        for tok in &self.vocab {
            h.write_u64(tok.len() as u64);
            h.write(tok);
        }
        for k in 0..self.rules.len() {
            let (l, r) = self.rule_bytes(k);
            h.write_u64(l.len() as u64);
            h.write(l);
            h.write_u64(r.len() as u64);
            h.write(r);
        }
        h.finish()
    }

    /// Split a word into base-unit token ids. In byte mode this never fails;
    /// in character mode unknown units fall back to ids supplied by `oov`
    /// (or a shared sentinel) and are tallied in the returned count.
    pub fn base_units(&self, word: &[u8], oov: Option<&OovMap>) -> (Vec<TokenId>, u64) {
        match &self.base {
            BaseAlphabet::Bytes => (word.iter().map(|&b| b as TokenId).collect(), 0),
            BaseAlphabet::Chars(_) => {
                let mut ids = Vec::new();
                let mut misses = 0;
                for unit in utf8_units(word) {
                    if let Some(id) = self.canonical_id(unit) {
                        ids.push(id);
                    } else {
                        misses += 1;
                        let id = oov
                            .and_then(|m| m.id_of(unit))
                            .unwrap_or(OOV_SENTINEL);
                        ids.push(id);
                    }
                }
                (ids, misses)
            }
        }
    }
}

/// Sentinel id for unknown units when no [`OovMap`] is supplied.
pub const OOV_SENTINEL: TokenId = u32::MAX;

/// Deterministic ids for units outside a character-mode base alphabet.
///
/// Built once over all word tables that participate in a run so every
/// category maps the same unknown unit to the same id.
#[derive(Debug, Clone, Default)]
pub struct OovMap {
    ids: HashMap<Vec<u8>, TokenId>,
}

impl OovMap {
    pub fn build(merges: &MergeList, tables: &[&WordTable]) -> OovMap {
        let mut unknown: Vec<Vec<u8>> = Vec::new();
        let mut seen = HashSet::new();
        if matches!(merges.base(), BaseAlphabet::Chars(_)) {
            for table in tables {
                for (word, _) in table.iter() {
                    for unit in utf8_units(word) {
                        if merges.canonical_id(unit).is_none() && seen.insert(unit.to_vec()) {
                            unknown.push(unit.to_vec());
                        }
                    }
                }
            }
        }
        unknown.sort();
        let start = merges.vocab_len() as TokenId;
        let ids = unknown
            .into_iter()
            .enumerate()
            .map(|(k, u)| (u, start + k as TokenId))
            .collect();
        OovMap { ids }
    }

    pub fn id_of(&self, unit: &[u8]) -> Option<TokenId> {
        self.ids.get(unit).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Split a byte string into UTF-8 character units, falling back to single
/// bytes where it is not valid UTF-8.
fn utf8_units(word: &[u8]) -> Vec<&[u8]> {
    let mut units = Vec::with_capacity(word.len());
    let mut rest = word;
    while !rest.is_empty() {
        let step = match std::str::from_utf8(rest) {
            Ok(s) => s.chars().next().map(|c| c.len_utf8()).unwrap_or(1),
            Err(e) if e.valid_up_to() > 0 => {
                let mut taken = 0;
                for c in std::str::from_utf8(&rest[..e.valid_up_to()]).unwrap().chars() {
                    units.push(&rest[taken..taken + c.len_utf8()]);
                    taken += c.len_utf8();
                }
                rest = &rest[taken..];
                units.push(&rest[..1]);
                rest = &rest[1..];
                continue;
            }
            Err(_) => 1,
        };
        units.push(&rest[..step]);
        rest = &rest[step..];
    }
    units
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// How equal pair counts are resolved during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Lexicographic on (left bytes, right bytes); the default.
    #[default]
    LeftRightBytes,
    /// Lowest (left id, right id); exposed for sensitivity testing.
    TokenIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStop {
    /// All requested merges were performed.
    Budget,
    /// No remaining pair occurs at least twice.
    NoMergeablePairs,
    /// The word table was empty.
    EmptyInput,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub merges: MergeList,
    pub stop: TrainStop,
}

/// Train a byte-level merge list: at every step pick the most frequent
/// adjacent pair, ties broken per [`TieBreak`]. Stops early when the best
/// pair occurs fewer than twice.
pub fn train(words: &WordTable, num_merges: usize) -> TrainOutcome {
    train_with(words, num_merges, TieBreak::default())
}

pub fn train_with(words: &WordTable, num_merges: usize, tie_break: TieBreak) -> TrainOutcome {
    let mut merges = MergeList::new_byte_level();
    if words.is_empty() {
        if num_merges > 0 {
            log::warn!("training requested {num_merges} merges on an empty word table");
        }
        return TrainOutcome {
            merges,
            stop: TrainStop::EmptyInput,
        };
    }

    let mut ws = MergeWorkspace::from_table(words, &merges, None);
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(ws.pair_counts.len());
    for (&pair, &count) in &ws.pair_counts {
        if count >= 2 {
            heap.push(HeapEntry::new(&merges, pair, count as u64, tie_break));
        }
    }

    let mut stop = TrainStop::Budget;
    while merges.len() < num_merges {
        let best = loop {
            match heap.pop() {
                Some(entry) => {
                    let current = ws.pair_counts.get(&entry.pair).copied().unwrap_or(0);
                    if current as u64 != entry.count {
                        continue; // stale
                    }
                    if current < 2 {
                        continue;
                    }
                    break Some(entry.pair);
                }
                None => break None,
            }
        };
        let Some(pair) = best else {
            stop = TrainStop::NoMergeablePairs;
            break;
        };

        // A pair whose concatenation is already a token is never merged
        // (the product must be a new vocabulary entry); drop it for good.
        let mut produced = merges.token_bytes(pair.0).unwrap().to_vec();
        produced.extend_from_slice(merges.token_bytes(pair.1).unwrap());
        if merges.canonical_id(&produced).is_some() {
            ws.pair_counts.remove(&pair);
            continue;
        }

        let new_id = merges.vocab_len() as TokenId;
        merges
            .push_rule_ids(pair.0, pair.1)
            .expect("training pair ids are in-vocab");
        let delta = ws.apply_merge(pair, new_id);
        for (p, _) in delta {
            let count = ws.pair_counts.get(&p).copied().unwrap_or(0);
            if count >= 2 {
                heap.push(HeapEntry::new(&merges, p, count as u64, tie_break));
            }
        }
    }

    TrainOutcome { merges, stop }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum HeapKey {
    Bytes(Arc<[u8]>, Arc<[u8]>),
    Ids(TokenId, TokenId),
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (HeapKey::Bytes(al, ar), HeapKey::Bytes(bl, br)) => {
                (al.as_ref(), ar.as_ref()).cmp(&(bl.as_ref(), br.as_ref()))
            }
            (HeapKey::Ids(al, ar), HeapKey::Ids(bl, br)) => (al, ar).cmp(&(bl, br)),
            // Mixed variants never co-occur within one heap.
            (HeapKey::Bytes(..), HeapKey::Ids(..)) => std::cmp::Ordering::Less,
            (HeapKey::Ids(..), HeapKey::Bytes(..)) => std::cmp::Ordering::Greater,
        }
    }
}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HeapEntry {
    count: u64,
    key: std::cmp::Reverse<HeapKey>,
    pair: Pair,
}

impl HeapEntry {
    fn new(merges: &MergeList, pair: Pair, count: u64, tie_break: TieBreak) -> Self {
        let key = match tie_break {
            TieBreak::LeftRightBytes => {
                HeapKey::Bytes(merges.token_arc(pair.0), merges.token_arc(pair.1))
            }
            TieBreak::TokenIds => HeapKey::Ids(pair.0, pair.1),
        };
        HeapEntry {
            count,
            key: std::cmp::Reverse(key),
            pair,
        }
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

// ---------------------------------------------------------------------------
// Shared merge-application state (training and replay)
// ---------------------------------------------------------------------------

/// Distinct words as token-id sequences plus the live pair statistics.
/// Applying a merge rewrites only the words that contain the pair and
/// returns the exact pair-count delta it caused.
pub(crate) struct MergeWorkspace {
    words: Vec<Vec<TokenId>>,
    counts: Vec<u64>,
    pub(crate) pair_counts: HashMap<Pair, i64>,
    positions: HashMap<Pair, HashSet<u32>>,
    pub(crate) oov_units: u64,
}

impl MergeWorkspace {
    pub(crate) fn from_table(
        table: &WordTable,
        merges: &MergeList,
        oov: Option<&OovMap>,
    ) -> MergeWorkspace {
        let mut words = Vec::with_capacity(table.len());
        let mut counts = Vec::with_capacity(table.len());
        let mut oov_units = 0;
        for (word, count) in table.iter() {
            let (ids, misses) = merges.base_units(word, oov);
            oov_units += misses * count;
            words.push(ids);
            counts.push(count);
        }
        let mut ws = MergeWorkspace {
            words,
            counts,
            pair_counts: HashMap::new(),
            positions: HashMap::new(),
            oov_units,
        };
        for idx in 0..ws.words.len() {
            let count = ws.counts[idx] as i64;
            let word = &ws.words[idx];
            for w in word.windows(2) {
                let pair = (w[0], w[1]);
                *ws.pair_counts.entry(pair).or_insert(0) += count;
                ws.positions.entry(pair).or_default().insert(idx as u32);
            }
        }
        ws
    }

    /// Apply `pair -> new_id` everywhere, left to right within each word.
    /// Returns the aggregate signed pair-count changes, sorted by pair.
    pub(crate) fn apply_merge(&mut self, pair: Pair, new_id: TokenId) -> Vec<(Pair, i64)> {
        let mut delta: HashMap<Pair, i64> = HashMap::new();
        let Some(word_idxs) = self.positions.remove(&pair) else {
            return Vec::new();
        };
        for idx in word_idxs {
            let word = &mut self.words[idx as usize];
            if word.len() < 2 {
                continue;
            }
            let weight = self.counts[idx as usize] as i64;
            let mut rewritten: Vec<TokenId> = Vec::with_capacity(word.len());
            let mut changed = false;
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                    rewritten.push(new_id);
                    changed = true;
                    i += 2;
                } else {
                    rewritten.push(word[i]);
                    i += 1;
                }
            }
            if !changed {
                continue; // stale position entry
            }
            for w in word.windows(2) {
                *delta.entry((w[0], w[1])).or_insert(0) -= weight;
            }
            for w in rewritten.windows(2) {
                let p = (w[0], w[1]);
                *delta.entry(p).or_insert(0) += weight;
                self.positions.entry(p).or_default().insert(idx);
            }
            *word = rewritten;
        }

        let mut out: Vec<(Pair, i64)> = Vec::with_capacity(delta.len());
        for (p, d) in delta {
            if d == 0 {
                continue;
            }
            match self.pair_counts.entry(p) {
                Entry::Occupied(mut e) => {
                    *e.get_mut() += d;
                    if *e.get() == 0 {
                        e.remove();
                    }
                }
                Entry::Vacant(e) => {
                    e.insert(d);
                }
            }
            out.push((p, d));
        }
        out.sort_unstable_by_key(|&(p, _)| p);
        out
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Applies a merge list to text, merge rules in list order, each exhausted
/// (leftmost first) before the next.
pub struct Encoder<'a> {
    merges: &'a MergeList,
    rank: HashMap<Pair, u32>,
    oov: Option<&'a OovMap>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EncodeDiag {
    /// Units outside the base alphabet that fell back to per-unit tokens.
    pub oov_units: u64,
}

impl<'a> Encoder<'a> {
    pub fn new(merges: &'a MergeList) -> Self {
        Encoder::with_oov(merges, None)
    }

    pub fn with_oov(merges: &'a MergeList, oov: Option<&'a OovMap>) -> Self {
        let mut rank = HashMap::with_capacity(merges.len());
        for (k, &pair) in merges.rules().iter().enumerate() {
            rank.entry(pair).or_insert(k as u32);
        }
        Encoder { merges, rank, oov }
    }

    /// Encode a single word (no pretokenization).
    pub fn encode_word(&self, word: &[u8]) -> (Vec<TokenId>, EncodeDiag) {
        let (ids, last, misses) = self.encode_units_traced(word);
        let _ = last;
        (
            ids,
            EncodeDiag {
                oov_units: misses,
            },
        )
    }

    /// Encode a word and report the rank of the last merge applied; the
    /// redundancy analysis uses this to find the rule that actually fires.
    pub(crate) fn encode_units_traced(&self, word: &[u8]) -> (Vec<TokenId>, Option<u32>, u64) {
        let (mut ids, misses) = self.merges.base_units(word, self.oov);
        let mut last_rank = None;
        loop {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..ids.len().saturating_sub(1) {
                if let Some(&r) = self.rank.get(&(ids[i], ids[i + 1])) {
                    if best.map_or(true, |(br, _)| r < br) {
                        best = Some((r, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (l, r) = self.merges.rule(rank as usize);
            let new_id = self.merges.produced_id(rank as usize);
            let mut rewritten = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
                    rewritten.push(new_id);
                    i += 2;
                } else {
                    rewritten.push(ids[i]);
                    i += 1;
                }
            }
            ids = rewritten;
            last_rank = Some(rank);
        }
        (ids, last_rank, misses)
    }

    /// Pretokenize and encode a whole buffer.
    pub fn encode_text(&self, text: &[u8], rules: &PretokenRules) -> (Vec<TokenId>, EncodeDiag) {
        let mut cache: HashMap<Vec<u8>, Vec<TokenId>> = HashMap::new();
        let mut out = Vec::new();
        let mut diag = EncodeDiag::default();
        for word in split_words(text, rules) {
            if let Some(ids) = cache.get(word) {
                out.extend_from_slice(ids);
                continue;
            }
            let (ids, d) = self.encode_word(word);
            diag.oov_units += d.oov_units;
            out.extend_from_slice(&ids);
            cache.insert(word.to_vec(), ids);
        }
        (out, diag)
    }

    /// Token count over a buffer without materializing the sequence.
    pub fn count_tokens(&self, text: &[u8], rules: &PretokenRules) -> Result<u64> {
        let table = pretokenize_for(text, rules)?;
        let mut total = 0u64;
        for (word, count) in table.iter() {
            let (ids, _) = self.encode_word(word);
            total += ids.len() as u64 * count;
        }
        Ok(total)
    }
}

fn pretokenize_for(text: &[u8], rules: &PretokenRules) -> Result<WordTable> {
    crate::pretokenize::pretokenize(text, rules)
}

/// Encode `text` with the merge list applied in order.
pub fn encode(text: &[u8], rules: &PretokenRules, merges: &MergeList) -> Result<Vec<TokenId>> {
    rules.validate()?;
    let encoder = Encoder::new(merges);
    let (ids, diag) = encoder.encode_text(text, rules);
    if diag.oov_units > 0 {
        log::debug!("{} units fell outside the base alphabet", diag.oov_units);
    }
    Ok(ids)
}

/// Compression efficiency: input bytes per produced token.
pub fn byte_to_token_ratio(
    text: &[u8],
    rules: &PretokenRules,
    merges: &MergeList,
) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::invalid("byte_to_token_ratio on empty text"));
    }
    rules.validate()?;
    let tokens = Encoder::new(merges).count_tokens(text, rules)?;
    if tokens == 0 {
        return Err(Error::invalid(
            "text produced no tokens under these pretokenization rules",
        ));
    }
    Ok(text.len() as f64 / tokens as f64)
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

/// FNV-1a, fixed parameters; stable across platforms and releases.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x1000_0000_01b3);
        }
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretokenize::pretokenize;

    fn toy_table(entries: &[(&str, u64)]) -> WordTable {
        let mut t = WordTable::new();
        for (w, c) in entries {
            t.add_word(w.as_bytes(), *c);
        }
        t
    }

    fn rule_strs(merges: &MergeList) -> Vec<(String, String)> {
        merges
            .iter_rules()
            .map(|(_, l, r)| {
                (
                    String::from_utf8_lossy(l).into_owned(),
                    String::from_utf8_lossy(r).into_owned(),
                )
            })
            .collect()
    }

    #[test]
    fn trains_low_lower_with_lexicographic_ties() {
        // counts: (l,o)=5 ties (o,w)=5, lexicographic pick (l,o); then
        // (lo,w)=5; then (low,e)=2 ties (e,r)=2 and "e" < "low".
        let table = toy_table(&[("low", 3), ("lower", 2)]);
        let out = train(&table, 3);
        assert_eq!(
            rule_strs(&out.merges),
            vec![
                ("l".into(), "o".into()),
                ("lo".into(), "w".into()),
                ("e".into(), "r".into())
            ]
        );
        assert_eq!(out.stop, TrainStop::Budget);
    }

    #[test]
    fn trains_two_words_by_count() {
        let table = toy_table(&[("ab", 7), ("cd", 3)]);
        let out = train(&table, 2);
        assert_eq!(
            rule_strs(&out.merges),
            vec![("a".into(), "b".into()), ("c".into(), "d".into())]
        );
    }

    #[test]
    fn zero_merges_is_empty() {
        let table = toy_table(&[("ab", 7)]);
        let out = train(&table, 0);
        assert!(out.merges.is_empty());
    }

    #[test]
    fn empty_table_warns_and_stops() {
        let out = train(&WordTable::new(), 5);
        assert!(out.merges.is_empty());
        assert_eq!(out.stop, TrainStop::EmptyInput);
    }

    #[test]
    fn stops_when_no_pair_reaches_two() {
        let table = toy_table(&[("ab", 1), ("cd", 1)]);
        let out = train(&table, 5);
        assert!(out.merges.is_empty());
        assert_eq!(out.stop, TrainStop::NoMergeablePairs);
    }

    #[test]
    fn encode_applies_merges_in_order() {
        let table = toy_table(&[("low", 3), ("lower", 2)]);
        let merges = train(&table, 3).merges;
        let rules = PretokenRules::default();
        let ids = encode(b"lower", &rules, &merges).unwrap();
        let toks: Vec<&[u8]> = ids
            .iter()
            .map(|&id| merges.token_bytes(id).unwrap())
            .collect();
        assert_eq!(toks, vec![b"low".as_slice(), b"er".as_slice()]);

        let ids = encode(b"low", &rules, &merges).unwrap();
        assert_eq!(ids.len(), 1);
        assert_eq!(merges.token_bytes(ids[0]).unwrap(), b"low");

        assert!(encode(b"", &rules, &merges).unwrap().is_empty());
    }

    #[test]
    fn ratio_matches_hand_example() {
        let table = toy_table(&[("low", 3), ("lower", 2)]);
        let merges = train(&table, 3).merges;
        let rules = PretokenRules::default();
        let r = byte_to_token_ratio(b"lower", &rules, &merges).unwrap();
        assert!((r - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ratio_is_one_for_untrained_ascii() {
        let merges = MergeList::new_byte_level();
        let rules = PretokenRules::default();
        let r = byte_to_token_ratio(b"plain", &rules, &merges).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_increases_when_a_firing_merge_is_added() {
        let rules = PretokenRules::default();
        let text = b"ababab";
        let base = MergeList::new_byte_level();
        let r0 = byte_to_token_ratio(text, &rules, &base).unwrap();
        let mut with_merge = MergeList::new_byte_level();
        with_merge.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        let r1 = byte_to_token_ratio(text, &rules, &with_merge).unwrap();
        assert!(r1 > r0);
    }

    #[test]
    fn ratio_rejects_empty_text() {
        let merges = MergeList::new_byte_level();
        assert!(byte_to_token_ratio(b"", &PretokenRules::default(), &merges).is_err());
    }

    #[test]
    fn encode_is_deterministic() {
        let text = b"the cat sat on the mat and the cat sat";
        let table = pretokenize(text, &PretokenRules::default()).unwrap();
        let merges = train(&table, 10).merges;
        let a = encode(text, &PretokenRules::default(), &merges).unwrap();
        let b = encode(text, &PretokenRules::default(), &merges).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn char_mode_oov_falls_back_per_unit() {
        let base = BaseAlphabet::chars(vec![b"a".to_vec(), b"b".to_vec()]);
        let merges = MergeList::with_base(base);
        let encoder = Encoder::new(&merges);
        let (ids, diag) = encoder.encode_word("axb".as_bytes());
        assert_eq!(ids.len(), 3);
        assert_eq!(diag.oov_units, 1);
        assert_eq!(ids[1], OOV_SENTINEL);
    }

    #[test]
    fn overlapping_pairs_merge_left_to_right() {
        let mut merges = MergeList::new_byte_level();
        merges.push_rule(&MergeRule::new(*b"a", *b"a")).unwrap();
        let rules = PretokenRules::default();
        let ids = encode(b"aaa", &rules, &merges).unwrap();
        let toks: Vec<&[u8]> = ids
            .iter()
            .map(|&id| merges.token_bytes(id).unwrap())
            .collect();
        assert_eq!(toks, vec![b"aa".as_slice(), b"a".as_slice()]);
    }

    #[test]
    fn vocab_hash_tracks_rules() {
        let a = train(&toy_table(&[("ab", 5)]), 1).merges;
        let b = train(&toy_table(&[("ab", 5)]), 1).merges;
        let c = train(&toy_table(&[("cd", 5)]), 1).merges;
        assert_eq!(a.vocab_hash(), b.vocab_hash());
        assert_ne!(a.vocab_hash(), c.vocab_hash());
    }
}
