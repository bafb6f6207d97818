//! Reading and normalizing real-world merge-list formats.
//!
//! Three formats are supported:
//! - `plain`: one `left<SPACE>right` per line, bytes outside printable ASCII
//!   escaped as `\xNN` (the crate's own exact format),
//! - `hf-merges`: `merges.txt` lines under the GPT-2 byte-to-unicode
//!   convention (`Ġ` is space, `Ċ` is newline),
//! - `rank-vocab`: `base64(token)<SPACE>rank` lines, rank ascending equals
//!   creation order; merges are reconstructed from the vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;

use base64::Engine as _;

use crate::bpe::{Encoder, MergeList, MergeRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeFormat {
    HfMerges,
    RankVocab,
    Plain,
}

impl std::fmt::Display for MergeFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MergeFormat::HfMerges => write!(f, "hf-merges"),
            MergeFormat::RankVocab => write!(f, "rank-vocab"),
            MergeFormat::Plain => write!(f, "plain"),
        }
    }
}

impl std::str::FromStr for MergeFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hf-merges" | "hf" => Ok(MergeFormat::HfMerges),
            "rank-vocab" | "rank" => Ok(MergeFormat::RankVocab),
            "plain" => Ok(MergeFormat::Plain),
            other => Err(Error::invalid(format!("unknown merge format {other:?}"))),
        }
    }
}

/// A tokenizer file with its format pinned down. Use [`detect_format`] when
/// the format is not declared; detection is reported, never silent.
#[derive(Debug, Clone)]
pub struct RawTokenizerFile {
    pub format: MergeFormat,
    pub payload: Vec<u8>,
}

impl RawTokenizerFile {
    pub fn new(format: MergeFormat, payload: Vec<u8>) -> Self {
        RawTokenizerFile { format, payload }
    }
}

/// Best-effort format detection from content. The caller decides whether to
/// trust it; the CLI prints the verdict before proceeding.
pub fn detect_format(payload: &[u8]) -> Result<MergeFormat> {
    let text = std::str::from_utf8(payload)
        .map_err(|_| Error::Format("merge file is not valid UTF-8 text".into()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let probe: Vec<&str> = lines.by_ref().take(32).collect();
    if probe.is_empty() {
        return Err(Error::Format("empty merge file".into()));
    }
    let rankish = probe.iter().all(|l| {
        let mut it = l.split(' ');
        match (it.next(), it.next(), it.next()) {
            (Some(tok), Some(rank), None) => {
                !tok.is_empty()
                    && rank.bytes().all(|b| b.is_ascii_digit())
                    && tok
                        .bytes()
                        .all(|b| b.is_ascii_alphanumeric() || b == b'+' || b == b'/' || b == b'=')
                    && base64::engine::general_purpose::STANDARD.decode(tok).is_ok()
            }
            _ => false,
        }
    });
    if rankish {
        return Ok(MergeFormat::RankVocab);
    }
    let body: Vec<&str> = probe
        .iter()
        .copied()
        .filter(|l| !l.starts_with('#'))
        .collect();
    if body
        .iter()
        .any(|l| l.contains('Ġ') || l.contains('Ċ') || l.contains('ĉ'))
    {
        return Ok(MergeFormat::HfMerges);
    }
    if body.iter().any(|l| l.contains("\\x")) {
        return Ok(MergeFormat::Plain);
    }
    // Two plain-ASCII fields per line reads the same in both conventions;
    // prefer the HF interpretation, which is what files in the wild are.
    if body
        .iter()
        .all(|l| l.split(' ').filter(|f| !f.is_empty()).count() == 2)
    {
        return Ok(MergeFormat::HfMerges);
    }
    Err(Error::Format(
        "could not detect merge file format; declare it explicitly".into(),
    ))
}

/// Parse a merge list in its declared format.
pub fn parse_merge_list(file: &RawTokenizerFile) -> Result<MergeList> {
    let text = std::str::from_utf8(&file.payload)
        .map_err(|_| Error::Format("merge file is not valid UTF-8 text".into()))?;
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "empty merge file".into(),
        });
    }
    match file.format {
        MergeFormat::HfMerges => parse_pair_lines(text, decode_hf_token),
        MergeFormat::Plain => parse_pair_lines(text, decode_plain_token),
        MergeFormat::RankVocab => parse_rank_vocab(text),
    }
}

fn parse_pair_lines(
    text: &str,
    decode: impl Fn(&str) -> Result<Vec<u8>>,
) -> Result<MergeList> {
    let mut merges = MergeList::new_byte_level();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let at = |msg: String| Error::Parse { line: line_no, msg };
        if line.trim().is_empty() || line.starts_with("#version") {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(at(format!(
                "expected `left right`, found {} field(s)",
                fields.len()
            )));
        }
        let left = decode(fields[0]).map_err(|e| at(e.to_string()))?;
        let right = decode(fields[1]).map_err(|e| at(e.to_string()))?;
        merges
            .push_rule(&MergeRule::new(left, right))
            .map_err(|e| at(e.to_string()))?;
    }
    if merges.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "merge file contains no rules".into(),
        });
    }
    merges.relink_phantom_sides();
    Ok(merges)
}

fn parse_rank_vocab(text: &str) -> Result<MergeList> {
    let mut vocab: Vec<Vec<u8>> = Vec::new();
    let mut last_rank: Option<u64> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(' ');
        let (Some(tok), Some(rank), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected `base64(token) rank`".into(),
            });
        };
        let token = base64::engine::general_purpose::STANDARD
            .decode(tok)
            .map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad base64 token: {e}"),
            })?;
        let rank: u64 = rank.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: "bad rank".into(),
        })?;
        if let Some(prev) = last_rank {
            if rank <= prev {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("ranks must be strictly ascending ({prev} then {rank})"),
                });
            }
        }
        last_rank = Some(rank);
        if token.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty token".into(),
            });
        }
        vocab.push(token);
    }
    if vocab.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "rank-vocab file contains no entries".into(),
        });
    }
    // Single bytes are the base alphabet; merges come from the rest.
    let products: Vec<Vec<u8>> = vocab.into_iter().filter(|t| t.len() > 1).collect();
    reconstruct_from_products(&products)
}

/// Rebuild the merge list from a creation-ordered vocabulary (byte-level
/// base). Every multi-byte token must split into two earlier tokens.
pub fn reconstruct_from_vocab(vocab: &[Vec<u8>]) -> Result<MergeList> {
    let products: Vec<Vec<u8>> = vocab.iter().filter(|t| t.len() > 1).cloned().collect();
    reconstruct_from_products(&products)
}

fn reconstruct_from_products(products: &[Vec<u8>]) -> Result<MergeList> {
    let mut merges = MergeList::new_byte_level();
    let mut rank: HashMap<(u32, u32), u32> = HashMap::new();
    for token in products {
        // The merge that created this token is the last step of its merge
        // path: encoding the token's bytes under the earlier rules must end
        // at exactly the two operands.
        let ids = encode_under(&merges, &rank, token);
        let (l, r) = if ids.len() == 2 {
            (ids[0], ids[1])
        } else {
            // No two-operand path (duplicate vocabulary entries or lists
            // that are not in creation order): fall back to the split whose
            // later-created side is earliest, ties to the shorter left.
            log::debug!(
                "merge path for {} is inconclusive; using achievability scoring",
                display_token(token)
            );
            best_split_by_achievability(&merges, token).ok_or_else(|| Error::Reconstruction {
                token: display_token(token),
            })?
        };
        let k = merges.len() as u32;
        merges.push_rule_ids(l, r)?;
        rank.entry((l, r)).or_insert(k);
    }
    Ok(merges)
}

/// Encode raw bytes with the rules known so far: repeatedly merge the
/// lowest-ranked adjacent pair, occurrences left to right.
fn encode_under(merges: &MergeList, rank: &HashMap<(u32, u32), u32>, token: &[u8]) -> Vec<u32> {
    let (mut ids, _) = merges.base_units(token, None);
    loop {
        let mut best: Option<u32> = None;
        for w in ids.windows(2) {
            if let Some(&k) = rank.get(&(w[0], w[1])) {
                if best.map_or(true, |b| k < b) {
                    best = Some(k);
                }
            }
        }
        let Some(k) = best else { break };
        let (l, r) = merges.rule(k as usize);
        let new_id = merges.produced_id(k as usize);
        let mut out = Vec::with_capacity(ids.len());
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

fn best_split_by_achievability(merges: &MergeList, token: &[u8]) -> Option<(u32, u32)> {
    let mut best: Option<(u32, u32, u32)> = None; // (latest side, left, right)
    for cut in 1..token.len() {
        let (Some(l), Some(r)) = (
            merges.canonical_id(&token[..cut]),
            merges.canonical_id(&token[cut..]),
        ) else {
            continue;
        };
        let latest = l.max(r);
        if best.map_or(true, |(b_latest, ..)| latest < b_latest) {
            best = Some((latest, l, r));
        }
    }
    best.map(|(_, l, r)| (l, r))
}

/// Drop rules that can never fire because another rule producing the same
/// token always wins the in-order merge race. Returns the cleaned list plus
/// the indices of removed rules (in the original list).
pub fn dedupe_redundant(merges: &MergeList) -> (MergeList, Vec<usize>) {
    let mut by_product: HashMap<&[u8], Vec<usize>> = HashMap::new();
    for k in 0..merges.len() {
        let id = (merges.base_len() + k) as u32;
        by_product
            .entry(merges.token_bytes(id).expect("product id in vocab"))
            .or_default()
            .push(k);
    }

    let mut removed: Vec<usize> = Vec::new();
    let encoder = Encoder::new(merges);
    for (product, cluster) in by_product {
        if cluster.len() < 2 {
            continue;
        }
        // Simulate encoding the produced bytes; the final merge applied is
        // the one rule of the cluster that actually fires.
        let (ids, last_rank, _) = encoder.encode_units_traced(product);
        let keeper = match (ids.len(), last_rank) {
            (1, Some(rank)) if cluster.contains(&(rank as usize)) => rank as usize,
            _ => {
                // The token never assembles from its own bytes; keep the
                // earliest rule rather than risk changing encode behavior.
                log::warn!(
                    "redundancy simulation inconclusive for {}; keeping earliest rule",
                    display_token(product)
                );
                cluster[0]
            }
        };
        for &k in &cluster {
            if k != keeper {
                removed.push(k);
            }
        }
    }
    removed.sort_unstable();
    for &k in &removed {
        let (l, r) = merges.rule_bytes(k);
        log::info!(
            "removing redundant merge {} + {} (rule {k})",
            display_token(l),
            display_token(r)
        );
    }

    let mut cleaned = MergeList::with_base(merges.base().clone());
    let mut removed_iter = removed.iter().peekable();
    for k in 0..merges.len() {
        if removed_iter.peek() == Some(&&k) {
            removed_iter.next();
            continue;
        }
        let (l, r) = merges.rule_bytes(k);
        cleaned
            .push_rule(&MergeRule::new(l, r))
            .expect("non-empty sides survive dedup");
    }
    cleaned.relink_phantom_sides();
    (cleaned, removed)
}

/// Remove the maximal leading run of rules whose sides are all whitespace
/// (space, tab, newline). Some published lists place hand-inserted
/// whitespace merges ahead of the organically learned ones.
pub fn strip_manual_prefix(merges: &MergeList) -> (MergeList, usize) {
    let is_ws_token = |tok: &[u8]| tok.iter().all(|&b| b == b' ' || b == b'\t' || b == b'\n');
    let mut stripped = 0;
    for k in 0..merges.len() {
        let (l, r) = merges.rule_bytes(k);
        if is_ws_token(l) && is_ws_token(r) {
            stripped += 1;
        } else {
            break;
        }
    }
    if stripped == 0 {
        return (merges.clone(), 0);
    }
    let mut out = MergeList::with_base(merges.base().clone());
    for k in stripped..merges.len() {
        let (l, r) = merges.rule_bytes(k);
        out.push_rule(&MergeRule::new(l, r))
            .expect("non-empty sides survive stripping");
    }
    out.relink_phantom_sides();
    (out, stripped)
}

/// First `t` rules of the list.
pub fn truncate(merges: &MergeList, t: usize) -> MergeList {
    merges.truncated(t)
}

/// Serialize in any supported format. `rank-vocab` writes the
/// creation-ordered vocabulary, which re-parses to the same rules whenever
/// the list itself was creation-ordered.
pub fn serialize_merge_list(merges: &MergeList, format: MergeFormat) -> Result<Vec<u8>> {
    let mut out = String::new();
    match format {
        MergeFormat::Plain => {
            for (_, l, r) in merges.iter_rules() {
                let _ = writeln!(out, "{} {}", encode_plain_token(l), encode_plain_token(r));
            }
        }
        MergeFormat::HfMerges => {
            out.push_str("#version: 0.2\n");
            for (_, l, r) in merges.iter_rules() {
                let _ = writeln!(out, "{} {}", encode_hf_token(l)?, encode_hf_token(r)?);
            }
        }
        MergeFormat::RankVocab => {
            let b64 = base64::engine::general_purpose::STANDARD;
            let mut rank = 0u64;
            for b in 0u8..=255 {
                let _ = writeln!(out, "{} {rank}", b64.encode([b]));
                rank += 1;
            }
            for k in 0..merges.len() {
                let (l, r) = merges.rule_bytes(k);
                let mut tok = l.to_vec();
                tok.extend_from_slice(r);
                let _ = writeln!(out, "{} {rank}", b64.encode(&tok));
                rank += 1;
            }
        }
    }
    Ok(out.into_bytes())
}

// ---------------------------------------------------------------------------
// Token escapes
// ---------------------------------------------------------------------------

fn encode_plain_token(tok: &[u8]) -> String {
    let mut out = String::with_capacity(tok.len());
    for &b in tok {
        if (33..=126).contains(&b) && b != b'\\' {
            out.push(b as char);
        } else {
            let _ = write!(out, "\\x{b:02x}");
        }
    }
    out
}

fn decode_plain_token(s: &str) -> Result<Vec<u8>> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            if i + 4 > bytes.len() {
                return Err(Error::invalid(format!("truncated escape in {s:?}")));
            }
            if bytes.get(i + 1) != Some(&b'x') {
                return Err(Error::invalid(format!("bad escape in {s:?}")));
            }
            let hex = std::str::from_utf8(&bytes[i + 2..i + 4])
                .ok()
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| Error::invalid(format!("bad hex escape in {s:?}")))?;
            out.push(hex);
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(out)
}

/// GPT-2 byte <-> unicode table: printable latin bytes map to themselves,
/// the remaining 68 bytes map to U+0100.. in order.
fn gpt2_tables() -> (&'static [char; 256], &'static HashMap<char, u8>) {
    use std::sync::OnceLock;
    static TABLES: OnceLock<([char; 256], HashMap<char, u8>)> = OnceLock::new();
    let (fwd, rev) = TABLES.get_or_init(|| {
        let mut fwd = ['\0'; 256];
        let mut rev = HashMap::with_capacity(256);
        let keeps = |b: u8| {
            (b'!'..=b'~').contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b)
        };
        let mut shift = 0u32;
        for b in 0u16..256 {
            let b = b as u8;
            let c = if keeps(b) {
                char::from_u32(b as u32).unwrap()
            } else {
                let c = char::from_u32(256 + shift).unwrap();
                shift += 1;
                c
            };
            fwd[b as usize] = c;
            rev.insert(c, b);
        }
        (fwd, rev)
    });
    (fwd, rev)
}

fn encode_hf_token(tok: &[u8]) -> Result<String> {
    let (fwd, _) = gpt2_tables();
    Ok(tok.iter().map(|&b| fwd[b as usize]).collect())
}

fn decode_hf_token(s: &str) -> Result<Vec<u8>> {
    let (_, rev) = gpt2_tables();
    s.chars()
        .map(|c| {
            rev.get(&c)
                .copied()
                .ok_or_else(|| Error::invalid(format!("character {c:?} is not a GPT-2 byte")))
        })
        .collect()
}

/// Human-readable token rendering: space as `_`, newline as `\n`, other
/// non-printables as `\xNN`.
pub fn display_token(tok: &[u8]) -> String {
    let mut out = String::with_capacity(tok.len());
    for &b in tok {
        match b {
            b' ' => out.push('_'),
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            33..=126 => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::train;
    use crate::pretokenize::WordTable;
    use proptest::prelude::*;

    fn rules_of(m: &MergeList) -> Vec<(Vec<u8>, Vec<u8>)> {
        m.iter_rules().map(|(_, l, r)| (l.to_vec(), r.to_vec())).collect()
    }

    fn plain_list(pairs: &[(&[u8], &[u8])]) -> MergeList {
        let mut m = MergeList::new_byte_level();
        for (l, r) in pairs {
            m.push_rule(&MergeRule::new(*l, *r)).unwrap();
        }
        m
    }

    #[test]
    fn parses_hf_merge_lines() {
        let file = RawTokenizerFile::new(MergeFormat::HfMerges, b"l o\nlo w\n".to_vec());
        let m = parse_merge_list(&file).unwrap();
        assert_eq!(
            rules_of(&m),
            vec![(b"l".to_vec(), b"o".to_vec()), (b"lo".to_vec(), b"w".to_vec())]
        );
    }

    #[test]
    fn parses_hf_space_conventions() {
        let file =
            RawTokenizerFile::new(MergeFormat::HfMerges, "#version: 0.2\nĠ t\nĉ ĉ\n".into());
        let m = parse_merge_list(&file).unwrap();
        assert_eq!(
            rules_of(&m),
            vec![(b" ".to_vec(), b"t".to_vec()), (b"\t".to_vec(), b"\t".to_vec())]
        );
    }

    #[test]
    fn rejects_empty_payload() {
        let file = RawTokenizerFile::new(MergeFormat::HfMerges, Vec::new());
        assert!(parse_merge_list(&file).is_err());
    }

    #[test]
    fn reports_line_numbers_on_malformed_input() {
        let file = RawTokenizerFile::new(MergeFormat::HfMerges, b"l o\nbroken\n".to_vec());
        match parse_merge_list(&file) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rank_vocab_reconstructs_merges() {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut text = String::new();
        for (i, tok) in ["a", "b", "c", "ab", "abc"].iter().enumerate() {
            text.push_str(&format!("{} {}\n", b64.encode(tok.as_bytes()), i));
        }
        let file = RawTokenizerFile::new(MergeFormat::RankVocab, text.into_bytes());
        let m = parse_merge_list(&file).unwrap();
        assert_eq!(
            rules_of(&m),
            vec![(b"a".to_vec(), b"b".to_vec()), (b"ab".to_vec(), b"c".to_vec())]
        );
    }

    #[test]
    fn reconstruct_unique_splits() {
        let vocab: Vec<Vec<u8>> = ["_", "t", "h", "e", "th", "the"]
            .iter()
            .map(|s| s.as_bytes().to_vec())
            .collect();
        let m = reconstruct_from_vocab(&vocab).unwrap();
        assert_eq!(
            rules_of(&m),
            vec![(b"t".to_vec(), b"h".to_vec()), (b"th".to_vec(), b"e".to_vec())]
        );
    }

    #[test]
    fn reconstruct_single_split() {
        let vocab: Vec<Vec<u8>> = vec![b"a".to_vec(), b"b".to_vec(), b"ab".to_vec()];
        let m = reconstruct_from_vocab(&vocab).unwrap();
        assert_eq!(rules_of(&m), vec![(b"a".to_vec(), b"b".to_vec())]);
    }

    #[test]
    fn reconstruct_errors_on_unsplittable_token() {
        let vocab: Vec<Vec<u8>> =
            vec![b"a".to_vec(), b"b".to_vec(), b"c".to_vec(), b"abc".to_vec()];
        match reconstruct_from_vocab(&vocab) {
            Err(Error::Reconstruction { token }) => assert_eq!(token, "abc"),
            other => panic!("expected reconstruction error, got {other:?}"),
        }
    }

    #[test]
    fn dedupe_drops_unreachable_rule() {
        // `_th` is never created, so (_th, e) can never fire.
        let m = plain_list(&[
            (b" ", b"t"),
            (b"h", b"e"),
            (b" t", b"he"),
            (b" th", b"e"),
        ]);
        let (cleaned, removed) = dedupe_redundant(&m);
        assert_eq!(removed, vec![3]);
        assert_eq!(cleaned.len(), 3);
        assert_eq!(
            rules_of(&cleaned),
            vec![
                (b" ".to_vec(), b"t".to_vec()),
                (b"h".to_vec(), b"e".to_vec()),
                (b" t".to_vec(), b"he".to_vec())
            ]
        );
    }

    #[test]
    fn dedupe_keeps_the_firing_rule_of_a_cluster() {
        // Converted-list shape: (_ t) fires before (t h), so the path to
        // `_the` goes through `_t` + `he` even though (_ the) sits first in
        // the cluster.
        let m = plain_list(&[
            (b" ", b"t"),
            (b"t", b"h"),
            (b"h", b"e"),
            (b"th", b"e"),
            (b" ", b"the"),
            (b" t", b"he"),
            (b" th", b"e"),
        ]);
        let (cleaned, removed) = dedupe_redundant(&m);
        assert_eq!(removed, vec![4, 6]);
        assert!(rules_of(&cleaned).contains(&(b" t".to_vec(), b"he".to_vec())));
    }

    #[test]
    fn dedupe_keeper_depends_on_merge_race() {
        // Same cluster, but (t h) outranks (_ t): now `the` assembles first
        // and (_ the) is the rule that fires.
        let m = plain_list(&[
            (b"t", b"h"),
            (b"th", b"e"),
            (b" ", b"t"),
            (b"h", b"e"),
            (b" ", b"the"),
            (b" t", b"he"),
            (b" th", b"e"),
        ]);
        let (cleaned, removed) = dedupe_redundant(&m);
        assert_eq!(removed, vec![5, 6]);
        assert!(rules_of(&cleaned).contains(&(b" ".to_vec(), b"the".to_vec())));
    }

    #[test]
    fn dedupe_is_identity_without_duplicates() {
        let m = plain_list(&[(b"a", b"b"), (b"c", b"d")]);
        let (cleaned, removed) = dedupe_redundant(&m);
        assert!(removed.is_empty());
        assert_eq!(rules_of(&cleaned), rules_of(&m));
    }

    #[test]
    fn strip_removes_leading_whitespace_run() {
        let m = plain_list(&[(b"\n", b"\n"), (b"\n\n", b"\n\n"), (b"a", b"b")]);
        let (out, n) = strip_manual_prefix(&m);
        assert_eq!(n, 2);
        assert_eq!(rules_of(&out), vec![(b"a".to_vec(), b"b".to_vec())]);
    }

    #[test]
    fn strip_ignores_runs_after_the_head() {
        let m = plain_list(&[(b"a", b"b"), (b"\n", b"\n")]);
        let (out, n) = strip_manual_prefix(&m);
        assert_eq!(n, 0);
        assert_eq!(rules_of(&out), rules_of(&m));
    }

    #[test]
    fn strip_handles_long_manual_prefixes() {
        // A 1395-rule whitespace prefix like the ones found in the wild.
        let mut m = MergeList::new_byte_level();
        m.push_rule(&MergeRule::new(*b"\n", *b"\n")).unwrap();
        let mut tok = b"\n\n".to_vec();
        for _ in 1..1395 {
            m.push_rule(&MergeRule::new(tok.clone(), *b"\n")).unwrap();
            tok.push(b'\n');
        }
        m.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
        m.push_rule(&MergeRule::new(*b"ab", *b"a")).unwrap();
        let (out, n) = strip_manual_prefix(&m);
        assert_eq!(n, 1395);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn truncate_clamps_to_length() {
        let m = plain_list(&[(b"a", b"b"), (b"c", b"d"), (b"e", b"f"), (b"g", b"h"), (b"i", b"j")]);
        assert_eq!(truncate(&m, 3).len(), 3);
        assert_eq!(truncate(&m, 0).len(), 0);
        assert_eq!(truncate(&m, 100).len(), 5);
    }

    #[test]
    fn detect_recognizes_the_three_formats() {
        assert_eq!(detect_format(b"YQ== 0\nYg== 1\n").unwrap(), MergeFormat::RankVocab);
        assert_eq!(detect_format("Ġ t\nh e\n".as_bytes()).unwrap(), MergeFormat::HfMerges);
        assert_eq!(detect_format(b"\\x20 t\nh e\n").unwrap(), MergeFormat::Plain);
        assert!(detect_format(b"").is_err());
    }

    #[test]
    fn reconstruction_matches_training() {
        // Train a toy tokenizer, then rebuild its rules from the vocabulary.
        let mut table = WordTable::new();
        for (w, c) in [("the", 5), ("then", 3), ("than", 2), ("tan", 4)] {
            table.add_word(w.as_bytes(), c);
        }
        let trained = train(&table, 6).merges;
        let vocab: Vec<Vec<u8>> = (0..trained.vocab_len() as u32)
            .map(|id| trained.token_bytes(id).unwrap().to_vec())
            .collect();
        let rebuilt = reconstruct_from_vocab(&vocab[256..]).unwrap();
        assert_eq!(rules_of(&rebuilt), rules_of(&trained));
    }

    proptest! {
        // parse -> serialize -> parse is the identity for pair formats.
        #[test]
        fn plain_and_hf_roundtrip(words in proptest::collection::vec("[a-f]{2,6}", 3..10)) {
            let mut table = WordTable::new();
            for (i, w) in words.iter().enumerate() {
                table.add_word(w.as_bytes(), (i as u64 % 5) + 2);
            }
            let merges = train(&table, 8).merges;
            prop_assume!(!merges.is_empty());
            for format in [MergeFormat::Plain, MergeFormat::HfMerges] {
                let bytes = serialize_merge_list(&merges, format).unwrap();
                let parsed =
                    parse_merge_list(&RawTokenizerFile::new(format, bytes.clone())).unwrap();
                prop_assert_eq!(rules_of(&parsed), rules_of(&merges));
                let bytes2 = serialize_merge_list(&parsed, format).unwrap();
                prop_assert_eq!(bytes, bytes2);
            }
        }

        #[test]
        fn rank_vocab_roundtrip(words in proptest::collection::vec("[a-f]{2,6}", 3..10)) {
            let mut table = WordTable::new();
            for (i, w) in words.iter().enumerate() {
                table.add_word(w.as_bytes(), (i as u64 % 5) + 2);
            }
            let merges = train(&table, 8).merges;
            prop_assume!(!merges.is_empty());
            let bytes = serialize_merge_list(&merges, MergeFormat::RankVocab).unwrap();
            let parsed =
                parse_merge_list(&RawTokenizerFile::new(MergeFormat::RankVocab, bytes.clone()))
                    .unwrap();
            prop_assert_eq!(rules_of(&parsed), rules_of(&merges));
            let bytes2 = serialize_merge_list(&parsed, MergeFormat::RankVocab).unwrap();
            prop_assert_eq!(bytes, bytes2);
        }
    }
}
