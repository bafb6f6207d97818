//! Splitting raw bytes into the "words" that bound BPE merges.
//!
//! Merges never cross word boundaries, so everything downstream (training,
//! replay, encoding) consumes word-frequency tables produced here rather than
//! raw text. Whitespace and digit classes are ASCII-only; multi-byte
//! characters are never split by the rules themselves.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// What happens to the whitespace separating two words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceAttachment {
    /// Separators are dropped; words carry no surrounding whitespace.
    DiscardSeparators,
    /// The last space of a separator run sticks to the following word, the
    /// rest of the run becomes a word of its own. This is the shape of
    /// commercial byte-level merge lists, which are full of space-prefixed
    /// tokens.
    AttachLeadingSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PretokenRules {
    pub split_on_whitespace: bool,
    /// Digit runs become standalone words, so digits only merge with
    /// contiguous digits.
    pub isolate_digit_runs: bool,
    pub space_attachment: SpaceAttachment,
}

impl Default for PretokenRules {
    fn default() -> Self {
        PretokenRules {
            split_on_whitespace: true,
            isolate_digit_runs: true,
            space_attachment: SpaceAttachment::DiscardSeparators,
        }
    }
}

impl PretokenRules {
    /// Rules used when replaying commercial byte-level merge lists.
    pub fn commercial() -> Self {
        PretokenRules {
            split_on_whitespace: true,
            isolate_digit_runs: true,
            space_attachment: SpaceAttachment::AttachLeadingSpace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.split_on_whitespace && !self.isolate_digit_runs {
            return Err(Error::invalid(
                "at least one pretokenization rule must be active",
            ));
        }
        if self.space_attachment == SpaceAttachment::AttachLeadingSpace && !self.split_on_whitespace
        {
            return Err(Error::invalid(
                "attach-leading-space requires whitespace splitting",
            ));
        }
        Ok(())
    }
}

/// Word-frequency table over a byte buffer.
///
/// `total_bytes` is the raw input length, including separator bytes; it is
/// the normalization denominator used when pair counts from different
/// categories are compared.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordTable {
    entries: HashMap<Vec<u8>, u64>,
    total_bytes: u64,
}

impl WordTable {
    pub fn new() -> Self {
        WordTable::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn count(&self, word: &[u8]) -> u64 {
        self.entries.get(word).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], u64)> {
        self.entries.iter().map(|(w, &c)| (w.as_slice(), c))
    }

    pub fn add_word(&mut self, word: &[u8], count: u64) {
        if word.is_empty() || count == 0 {
            return;
        }
        *self.entries.entry(word.to_vec()).or_insert(0) += count;
    }

    /// Fold another table into this one, summing counts and byte totals.
    pub fn absorb(&mut self, other: &WordTable) {
        for (word, count) in other.iter() {
            self.add_word(word, count);
        }
        self.total_bytes += other.total_bytes;
    }
}

/// Split `text` into words under `rules` and tally their frequencies.
pub fn pretokenize(text: &[u8], rules: &PretokenRules) -> Result<WordTable> {
    rules.validate()?;
    let mut table = WordTable::new();
    table.total_bytes = text.len() as u64;
    for word in split_words(text, rules) {
        table.add_word(word, 1);
    }
    Ok(table)
}

fn is_sep(b: u8) -> bool {
    b.is_ascii_whitespace()
}

fn is_digit(b: u8) -> bool {
    b.is_ascii_digit()
}

/// Iterate the words of `text` in order. Used by both the table builder and
/// the encoder, so the two can never disagree about boundaries.
pub(crate) fn split_words<'a>(
    text: &'a [u8],
    rules: &PretokenRules,
) -> impl Iterator<Item = &'a [u8]> {
    let mut segments: Vec<&'a [u8]> = Vec::new();
    if rules.split_on_whitespace {
        match rules.space_attachment {
            SpaceAttachment::DiscardSeparators => {
                for seg in text.split(|&b| is_sep(b)) {
                    if !seg.is_empty() {
                        segments.push(seg);
                    }
                }
            }
            SpaceAttachment::AttachLeadingSpace => {
                let mut i = 0;
                while i < text.len() {
                    if is_sep(text[i]) {
                        let run_start = i;
                        while i < text.len() && is_sep(text[i]) {
                            i += 1;
                        }
                        // One trailing space of the run attaches to a
                        // following word; everything before it stands alone.
                        let attach = i < text.len() && text[i - 1] == b' ';
                        let run_end = if attach { i - 1 } else { i };
                        if run_end > run_start {
                            segments.push(&text[run_start..run_end]);
                        }
                        if attach {
                            let word_start = i - 1;
                            while i < text.len() && !is_sep(text[i]) {
                                i += 1;
                            }
                            segments.push(&text[word_start..i]);
                        }
                    } else {
                        let start = i;
                        while i < text.len() && !is_sep(text[i]) {
                            i += 1;
                        }
                        segments.push(&text[start..i]);
                    }
                }
            }
        }
    } else {
        if !text.is_empty() {
            segments.push(text);
        }
    }

    let isolate = rules.isolate_digit_runs;
    segments.into_iter().flat_map(move |seg| {
        let mut parts: Vec<&'a [u8]> = Vec::new();
        if !isolate {
            parts.push(seg);
            return parts.into_iter();
        }
        // Split at digit/non-digit boundaries. A leading attached space
        // belongs to the first part, whatever its class.
        let mut start = 0;
        let class_at = |idx: usize| is_digit(seg[idx]);
        let skip = usize::from(!seg.is_empty() && seg[0] == b' ');
        let mut current = if seg.len() > skip {
            class_at(skip)
        } else {
            false
        };
        for idx in (skip + 1)..seg.len() {
            if class_at(idx) != current {
                parts.push(&seg[start..idx]);
                start = idx;
                current = class_at(idx);
            }
        }
        if start < seg.len() {
            parts.push(&seg[start..]);
        }
        parts.into_iter()
    })
}
