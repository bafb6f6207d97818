//! Pair-count timelines: per-category counts stored as a base snapshot plus
//! the sparse delta each merge causes.
//!
//! Counts are raw integers; normalization by the category's byte size is
//! deferred to constraint-evaluation time so deltas stay exact.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::bpe::{MergeList, MergeWorkspace, OovMap, Pair};
use crate::error::{Error, Result};
use crate::pretokenize::WordTable;

const MAGIC: &[u8; 4] = b"PCTL";
const FORMAT_VERSION: u16 = 1;

/// Per-category pair counts at every step of a merge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCountTimeline {
    pub category_id: u32,
    /// Raw byte size of the category sample; the normalization denominator.
    pub norm_denominator: u64,
    vocab_hash: u64,
    base_counts: Vec<(Pair, u64)>,
    deltas: Vec<Vec<(Pair, i64)>>,
}

impl PairCountTimeline {
    /// Number of replayed steps `T`.
    pub fn steps(&self) -> usize {
        self.deltas.len()
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn base_counts(&self) -> impl Iterator<Item = (Pair, u64)> + '_ {
        self.base_counts.iter().copied()
    }

    pub fn delta(&self, t: usize) -> &[(Pair, i64)] {
        &self.deltas[t]
    }

    /// Reconstruct the counts after the first `t` merges were applied.
    pub fn counts_at(&self, t: usize) -> Result<std::collections::HashMap<Pair, u64>> {
        if t > self.steps() {
            return Err(Error::invalid(format!(
                "step {t} out of range (timeline has {} steps)",
                self.steps()
            )));
        }
        let mut counts: std::collections::HashMap<Pair, i64> = self
            .base_counts
            .iter()
            .map(|&(p, c)| (p, c as i64))
            .collect();
        for delta in &self.deltas[..t] {
            for &(p, d) in delta {
                let e = counts.entry(p).or_insert(0);
                *e += d;
                if *e == 0 {
                    counts.remove(&p);
                }
            }
        }
        let mut out = std::collections::HashMap::with_capacity(counts.len());
        for (p, c) in counts {
            if c < 0 {
                return Err(Error::Internal(format!(
                    "negative reconstructed count for pair {p:?} at step {t}"
                )));
            }
            out.insert(p, c as u64);
        }
        Ok(out)
    }
}

/// Replay the first `t_max` merges over a word table, recording the pair
/// counts they touch. `t_max` may not exceed the list length.
pub fn replay(words: &WordTable, merges: &MergeList, t_max: usize) -> Result<PairCountTimeline> {
    replay_with_oov(words, merges, t_max, None)
}

pub fn replay_with_oov(
    words: &WordTable,
    merges: &MergeList,
    t_max: usize,
    oov: Option<&OovMap>,
) -> Result<PairCountTimeline> {
    if t_max > merges.len() {
        return Err(Error::invalid(format!(
            "cannot replay {t_max} steps of a {}-rule merge list",
            merges.len()
        )));
    }
    let mut ws = MergeWorkspace::from_table(words, merges, oov);
    if ws.oov_units > 0 {
        log::debug!(
            "replay: {} word occurrences contained units outside the base alphabet",
            ws.oov_units
        );
    }
    let mut base_counts: Vec<(Pair, u64)> = ws
        .pair_counts
        .iter()
        .map(|(&p, &c)| (p, c as u64))
        .collect();
    base_counts.sort_unstable_by_key(|&(p, _)| p);

    let mut deltas = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let pair = merges.rule(t);
        let new_id = merges.produced_id(t);
        deltas.push(ws.apply_merge(pair, new_id));
    }

    Ok(PairCountTimeline {
        category_id: 0,
        norm_denominator: words.total_bytes(),
        vocab_hash: merges.vocab_hash(),
        base_counts,
        deltas,
    })
}

// ---------------------------------------------------------------------------
// Binary format
// ---------------------------------------------------------------------------
//
// magic "PCTL", version u16, category id u32, norm_denominator u64,
// vocab hash u64, base entry count u64, base triples (u32, u32, u64),
// step count u32, then per-step blocks (step u32, entry count u32,
// entries (u32, u32, i64)), trailing CRC32 of everything before it.
// Little-endian throughout.

/// Serialize a timeline to its binary form.
pub fn timeline_to_bytes(tl: &PairCountTimeline) -> Vec<u8> {
    let mut buf = Vec::with_capacity(
        32 + tl.base_counts.len() * 16
            + tl.deltas.iter().map(|d| 8 + d.len() * 16).sum::<usize>(),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&tl.category_id.to_le_bytes());
    buf.extend_from_slice(&tl.norm_denominator.to_le_bytes());
    buf.extend_from_slice(&tl.vocab_hash.to_le_bytes());
    buf.extend_from_slice(&(tl.base_counts.len() as u64).to_le_bytes());
    for &((l, r), c) in &tl.base_counts {
        buf.extend_from_slice(&l.to_le_bytes());
        buf.extend_from_slice(&r.to_le_bytes());
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf.extend_from_slice(&(tl.deltas.len() as u32).to_le_bytes());
    for (t, delta) in tl.deltas.iter().enumerate() {
        buf.extend_from_slice(&(t as u32).to_le_bytes());
        buf.extend_from_slice(&(delta.len() as u32).to_le_bytes());
        for &((l, r), d) in delta {
            buf.extend_from_slice(&l.to_le_bytes());
            buf.extend_from_slice(&r.to_le_bytes());
            buf.extend_from_slice(&d.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn write_timeline(tl: &PairCountTimeline, path: &Path) -> Result<()> {
    let bytes = timeline_to_bytes(tl);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn timeline_from_bytes(data: &[u8]) -> Result<PairCountTimeline> {
    let mut r = Reader { data, pos: 0 };
    if data.len() < 4 + 2 + 4 {
        return Err(Error::Format("timeline file truncated".into()));
    }
    let crc_stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    let crc_actual = crc32fast::hash(&data[..data.len() - 4]);
    if crc_stored != crc_actual {
        return Err(Error::Format(format!(
            "timeline checksum mismatch (stored {crc_stored:08x}, computed {crc_actual:08x})"
        )));
    }
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("not a timeline file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version > FORMAT_VERSION {
        return Err(Error::Format(format!(
            "timeline format version {version} is newer than supported {FORMAT_VERSION}"
        )));
    }
    let category_id = r.u32()?;
    let norm_denominator = r.u64()?;
    let vocab_hash = r.u64()?;
    let n_base = r.u64()? as usize;
    let mut base_counts = Vec::with_capacity(n_base.min(1 << 24));
    for _ in 0..n_base {
        let l = r.u32()?;
        let rr = r.u32()?;
        let c = r.u64()?;
        base_counts.push(((l, rr), c));
    }
    let n_steps = r.u32()? as usize;
    let mut deltas = Vec::with_capacity(n_steps.min(1 << 24));
    for expect in 0..n_steps {
        let step = r.u32()? as usize;
        if step != expect {
            return Err(Error::Format(format!(
                "timeline step blocks out of order ({step} where {expect} expected)"
            )));
        }
        let n = r.u32()? as usize;
        let mut delta = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let l = r.u32()?;
            let rr = r.u32()?;
            let d = r.i64()?;
            delta.push(((l, rr), d));
        }
        deltas.push(delta);
    }
    Ok(PairCountTimeline {
        category_id,
        norm_denominator,
        vocab_hash,
        base_counts,
        deltas,
    })
}

pub fn read_timeline(path: &Path) -> Result<PairCountTimeline> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    timeline_from_bytes(&data)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        // The CRC trailer is not part of the payload.
        if self.pos + n > self.data.len().saturating_sub(4) {
            return Err(Error::Format("timeline file truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{train, MergeRule};
    use crate::pretokenize::WordTable;
    use crate::reference;

    fn toy_table(entries: &[(&str, u64)]) -> WordTable {
        let mut t = WordTable::new();
        for (w, c) in entries {
            t.add_word(w.as_bytes(), *c);
        }
        t
    }

    fn id(b: u8) -> u32 {
        b as u32
    }

    #[test]
    fn replay_records_consumption_deltas() {
        let table = toy_table(&[("ab", 7), ("cd", 3)]);
        let mut merges = crate::bpe::MergeList::new_byte_level();
        merges.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        merges.push_rule(&MergeRule::new(*b"c", *b"d")).unwrap();
        let tl = replay(&table, &merges, 2).unwrap();

        let base: std::collections::HashMap<_, _> = tl.base_counts().collect();
        assert_eq!(base[&(id(b'a'), id(b'b'))], 7);
        assert_eq!(base[&(id(b'c'), id(b'd'))], 3);
        assert_eq!(tl.delta(0), &[((id(b'a'), id(b'b')), -7)]);
        assert_eq!(tl.delta(1), &[((id(b'c'), id(b'd')), -3)]);
    }

    #[test]
    fn replay_splits_deltas_between_consumed_and_created() {
        let table = toy_table(&[("abc", 4)]);
        let mut merges = crate::bpe::MergeList::new_byte_level();
        merges.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        let tl = replay(&table, &merges, 1).unwrap();
        assert_eq!(
            tl.delta(0),
            &[
                ((id(b'a'), id(b'b')), -4),
                ((id(b'b'), id(b'c')), -4),
                ((256, id(b'c')), 4)
            ]
        );
    }

    #[test]
    fn replay_zero_steps_has_base_only() {
        let table = toy_table(&[("ab", 2)]);
        let merges = train(&table, 1).merges;
        let tl = replay(&table, &merges, 0).unwrap();
        assert_eq!(tl.steps(), 0);
        assert_eq!(tl.base_counts().count(), 1);
    }

    #[test]
    fn replay_rejects_excess_steps() {
        let table = toy_table(&[("ab", 2)]);
        let merges = train(&table, 1).merges;
        assert!(replay(&table, &merges, 5).is_err());
    }

    #[test]
    fn counts_at_walks_the_deltas() {
        let table = toy_table(&[("ab", 7), ("cd", 3)]);
        let mut merges = crate::bpe::MergeList::new_byte_level();
        merges.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        merges.push_rule(&MergeRule::new(*b"c", *b"d")).unwrap();
        let tl = replay(&table, &merges, 2).unwrap();

        let c0 = tl.counts_at(0).unwrap();
        assert_eq!(c0.len(), 2);
        let c1 = tl.counts_at(1).unwrap();
        assert_eq!(c1.len(), 1);
        assert_eq!(c1[&(id(b'c'), id(b'd'))], 3);
        let c2 = tl.counts_at(2).unwrap();
        assert!(c2.is_empty());
        assert!(tl.counts_at(3).is_err());
    }

    #[test]
    fn counts_match_brute_force_recount() {
        let table = toy_table(&[("the", 6), ("then", 4), ("he", 5), ("ten", 3)]);
        let merges = train(&table, 5).merges;
        let t_max = merges.len();
        let tl = replay(&table, &merges, t_max).unwrap();
        for t in 0..=t_max {
            let expected = reference::brute_pair_counts(&table, &merges, t);
            assert_eq!(tl.counts_at(t).unwrap(), expected, "mismatch at step {t}");
        }
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let table = toy_table(&[("the", 6), ("then", 4)]);
        let merges = train(&table, 3).merges;
        let mut tl = replay(&table, &merges, 3).unwrap();
        tl.category_id = 9;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cat9.pctl");
        write_timeline(&tl, &path).unwrap();
        let back = read_timeline(&path).unwrap();
        assert_eq!(back, tl);
        // Byte-stable re-serialization.
        let bytes = timeline_to_bytes(&tl);
        assert_eq!(bytes, timeline_to_bytes(&back));
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let table = toy_table(&[("ab", 3)]);
        let merges = train(&table, 1).merges;
        let tl = replay(&table, &merges, 1).unwrap();
        let mut bytes = timeline_to_bytes(&tl);
        bytes.truncate(bytes.len() - 6);
        match timeline_from_bytes(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum") || msg.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let table = toy_table(&[("ab", 3)]);
        let merges = train(&table, 1).merges;
        let tl = replay(&table, &merges, 1).unwrap();
        let mut bytes = timeline_to_bytes(&tl);
        bytes[4] = 0xff; // version low byte
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        match timeline_from_bytes(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn unfirable_merges_record_empty_deltas() {
        let table = toy_table(&[("ab", 5)]);
        let mut merges = crate::bpe::MergeList::new_byte_level();
        merges.push_rule(&MergeRule::new(*b"x", *b"y")).unwrap();
        merges.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        let tl = replay(&table, &merges, 2).unwrap();
        assert!(tl.delta(0).is_empty());
        assert_eq!(tl.delta(1).len(), 1);
    }
}
