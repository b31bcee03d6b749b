//! Per-field local vocabularies packed into disjoint global id ranges.
//!
//! Global id space: a shared reserved range [0, 4) for the special tokens,
//! then each token column's local ids offset consecutively in column order.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const SEP: u32 = 3;
pub const NUM_SPECIALS: u32 = 4;


const FILE_HEADER: &str = "tabseq-vocab\tv1\t[PAD]=0\t[MASK]=1\t[UNK]=2\t[SEP]=3\n";

/// Token <-> local id bijection for one token column.
#[derive(Debug, Clone)]
pub struct FieldVocab {
    pub field_name: String,
    pub tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    pub offset: u32,
}

impl FieldVocab {
    /// Build from distinct tokens; ids are assigned in sorted token order so
    /// the vocabulary is independent of row order.
    pub fn from_tokens(field_name: &str, mut tokens: Vec<String>, offset: u32) -> Result<Self> {
        tokens.sort();
        tokens.dedup();
        for t in &tokens {
            if t.contains('\t') || t.contains('\n') {
                return Err(Error::Vocab(format!(
                    "token in field '{field_name}' contains tab/newline"
                )));
            }
        }
        if tokens.is_empty() {
            return Err(Error::Vocab(format!("field '{field_name}' has no tokens")));
        }
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(FieldVocab {
            field_name: field_name.to_string(),
            tokens,
            token_to_id,
            offset,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn local_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Global id for a token, [UNK] when unseen.
    pub fn encode(&self, token: &str) -> u32 {
        match self.local_id(token) {
            Some(local) => self.offset + local,
            None => UNK,
        }
    }

    pub fn global_range(&self) -> std::ops::Range<u32> {
        self.offset..self.offset + self.tokens.len() as u32
    }

    pub fn token_of_local(&self, local: u32) -> Option<&str> {
        self.tokens.get(local as usize).map(|s| s.as_str())
    }
}

/// All column vocabularies of a schema, in token-column order.
#[derive(Debug, Clone)]
pub struct VocabSet {
    pub columns: Vec<FieldVocab>,
}

impl VocabSet {
    /// Assign consecutive offsets starting after the reserved specials.
    pub fn build(column_tokens: Vec<(String, Vec<String>)>) -> Result<VocabSet> {
        let mut columns = Vec::with_capacity(column_tokens.len());
        let mut offset = NUM_SPECIALS;
        for (name, tokens) in column_tokens {
            let vocab = FieldVocab::from_tokens(&name, tokens, offset)?;
            offset += vocab.len() as u32;
            columns.push(vocab);
        }
        Ok(VocabSet { columns })
    }

    pub fn column(&self, name: &str) -> Option<&FieldVocab> {
        self.columns.iter().find(|c| c.field_name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.field_name == name)
    }

    /// Total global id count including the reserved specials.
    pub fn global_size(&self) -> u32 {
        self.columns
            .last()
            .map(|c| c.offset + c.len() as u32)
            .unwrap_or(NUM_SPECIALS)
    }

    /// Which column a global id belongs to, None for specials/out of range.
    pub fn column_of_global(&self, id: u32) -> Option<usize> {
        if id < NUM_SPECIALS {
            return None;
        }
        self.columns.iter().position(|c| c.global_range().contains(&id))
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    /// Token string for a global id within a known column.
    pub fn decode_in_column(&self, col: usize, id: u32) -> Option<&str> {
        let c = self.columns.get(col)?;
        if c.global_range().contains(&id) {
            c.token_of_local(id - c.offset)
        } else {
            None
        }
    }

    // ---- file format ------------------------------------------------------
    // One header line with format version and the special-token table, then
    // one line per token: field, token, local id, global id, tab-separated.

    pub fn to_file_string(&self) -> String {
        let mut out = String::from(FILE_HEADER);
        for col in &self.columns {
            for (local, token) in col.tokens.iter().enumerate() {
                let global = col.offset + local as u32;
                writeln!(out, "{}\t{}\t{}\t{}", col.field_name, token, local, global).unwrap();
            }
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<VocabSet> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty vocab file".into()))?;
        if header != FILE_HEADER.trim_end() {
            return Err(Error::Format("unrecognized vocab file header".into()));
        }
        let mut columns: Vec<(String, Vec<(String, u32, u32)>)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!(
                    "vocab line {} has {} fields, expected 4",
                    lineno + 2,
                    parts.len()
                )));
            }
            let local: u32 = parts[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad local id on line {}", lineno + 2)))?;
            let global: u32 = parts[3]
                .parse()
                .map_err(|_| Error::Format(format!("bad global id on line {}", lineno + 2)))?;
            match columns.last_mut() {
                Some((name, toks)) if name == parts[0] => {
                    toks.push((parts[1].to_string(), local, global))
                }
                _ => columns.push((
                    parts[0].to_string(),
                    vec![(parts[1].to_string(), local, global)],
                )),
            }
        }
        let mut built = Vec::new();
        for (name, toks) in columns {
            let offset = toks
                .first()
                .map(|&(_, local, global)| global - local)
                .ok_or_else(|| Error::Format("empty column in vocab file".into()))?;
            for (i, &(_, local, global)) in toks.iter().enumerate() {
                if local as usize != i || global != offset + local {
                    return Err(Error::Format(format!(
                        "non-contiguous ids in column '{name}'"
                    )));
                }
            }
            let tokens: Vec<String> = toks.into_iter().map(|(t, _, _)| t).collect();
            let token_to_id = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect();
            built.push(FieldVocab {
                field_name: name,
                tokens,
                token_to_id,
                offset,
            });
        }
        let set = VocabSet { columns: built };
        set.check_disjoint()?;
        Ok(set)
    }

    /// Every pair of columns must occupy disjoint global ranges above the
    /// reserved specials.
    pub fn check_disjoint(&self) -> Result<()> {
        for (i, a) in self.columns.iter().enumerate() {
            if a.offset < NUM_SPECIALS {
                return Err(Error::Vocab(format!(
                    "column '{}' overlaps the reserved special range",
                    a.field_name
                )));
            }
            for b in self.columns.iter().skip(i + 1) {
                let (ra, rb) = (a.global_range(), b.global_range());
                if ra.start < rb.end && rb.start < ra.end {
                    return Err(Error::Vocab(format!(
                        "columns '{}' and '{}' have overlapping id ranges",
                        a.field_name, b.field_name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// FNV-1a hash of artifact bytes, rendered as 16 hex chars. Used for the
/// vocab fingerprint and the provenance chain.
pub fn content_fingerprint(parts: &[&[u8]]) -> String {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0xFF;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> VocabSet {
        VocabSet::build(vec![
            ("merchant".into(), vec!["acme".into(), "zenith".into(), "bistro".into()]),
            ("amount".into(), vec!["b0".into(), "b1".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn offsets_start_after_specials_and_are_disjoint() {
        let set = sample_set();
        assert_eq!(set.columns[0].offset, 4);
        assert_eq!(set.columns[1].offset, 7);
        assert_eq!(set.global_size(), 9);
        set.check_disjoint().unwrap();
    }

    #[test]
    fn known_token_gets_offset_id_unknown_gets_unk() {
        let set = sample_set();
        let m = set.column("merchant").unwrap();
        // sorted order: acme, bistro, zenith
        assert_eq!(m.encode("acme"), 4);
        assert_eq!(m.encode("bistro"), 5);
        assert_eq!(m.encode("zenith"), 6);
        assert_eq!(m.encode("unseen-corp"), UNK);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let set = sample_set();
        let text = set.to_file_string();
        let back = VocabSet::from_file_string(&text).unwrap();
        assert_eq!(back.to_file_string(), text);
    }

    #[test]
    fn column_of_global_resolves_ranges() {
        let set = sample_set();
        assert_eq!(set.column_of_global(4), Some(0));
        assert_eq!(set.column_of_global(7), Some(1));
        assert_eq!(set.column_of_global(3), None); // [SEP]
        assert_eq!(set.column_of_global(99), None);
    }

    #[test]
    fn fingerprint_separates_boundary_shifts() {
        assert_ne!(
            content_fingerprint(&[b"ab", b"c"]),
            content_fingerprint(&[b"a", b"bc"])
        );
        assert_eq!(
            content_fingerprint(&[b"ab", b"c"]),
            content_fingerprint(&[b"ab", b"c"])
        );
    }
}
