//! IAST ↔ one-symbol-per-phoneme transliteration.
//!
//! IAST writes diphthongs and aspirated stops with two letters. The internal
//! scheme gives each of those units a single private-use code point so that
//! one character always corresponds to one phoneme. Everything else passes
//! through unchanged.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranslitError {
    #[error("table entry {0} has an empty IAST side")]
    EmptyUnit(usize),
    #[error("IAST unit {0:?} appears twice")]
    DuplicateUnit(String),
    #[error("internal symbol {0:?} is used twice")]
    DuplicateSymbol(char),
    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },
}

/// Version tag of [`TranslitTable::builtin`]; stored in checkpoints.
pub const BUILTIN_VERSION: &str = "builtin-1";

const BUILTIN_UNITS: &[&str] = &[
    "ai", "au", "kh", "gh", "ch", "jh", "ṭh", "ḍh", "th", "dh", "ph", "bh",
];
const PRIVATE_USE_BASE: u32 = 0xE000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, char)>", into = "Vec<(String, char)>")]
pub struct TranslitTable {
    pairs: Vec<(String, char)>,
    // candidate entries per first char, longest first, ties in table order
    by_first: HashMap<char, Vec<usize>>,
    reverse: HashMap<char, usize>,
}

impl TranslitTable {
    pub fn new(pairs: Vec<(String, char)>) -> Result<Self, TranslitError> {
        let mut by_first: HashMap<char, Vec<usize>> = HashMap::new();
        let mut reverse = HashMap::new();
        let mut seen = HashMap::new();
        for (i, (iast, internal)) in pairs.iter().enumerate() {
            let first = iast.chars().next().ok_or(TranslitError::EmptyUnit(i))?;
            if seen.insert(iast.clone(), i).is_some() {
                return Err(TranslitError::DuplicateUnit(iast.clone()));
            }
            if reverse.insert(*internal, i).is_some() {
                return Err(TranslitError::DuplicateSymbol(*internal));
            }
            by_first.entry(first).or_default().push(i);
        }
        for candidates in by_first.values_mut() {
            // stable sort keeps table order among equal lengths
            candidates.sort_by_key(|&i| std::cmp::Reverse(pairs[i].0.chars().count()));
        }
        Ok(TranslitTable {
            pairs,
            by_first,
            reverse,
        })
    }

    pub fn builtin() -> Self {
        let pairs = BUILTIN_UNITS
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let sym = char::from_u32(PRIVATE_USE_BASE + i as u32).expect("private use area");
                (u.to_string(), sym)
            })
            .collect();
        TranslitTable::new(pairs).expect("builtin table is valid")
    }

    pub fn pairs(&self) -> &[(String, char)] {
        &self.pairs
    }

    /// Parses a TSV table with header `iast<TAB>internal`. The internal column
    /// holds either the symbol itself or a `U+XXXX` code point.
    pub fn from_tsv(text: &str) -> Result<Self, TranslitError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim() == "iast\tinternal" => {}
            Some((i, _)) => {
                return Err(TranslitError::Tsv {
                    line: i + 1,
                    message: "expected header `iast<TAB>internal`".into(),
                })
            }
            None => return TranslitTable::new(Vec::new()),
        }
        let mut pairs = Vec::new();
        for (i, line) in lines {
            let err = |message: &str| TranslitError::Tsv {
                line: i + 1,
                message: message.to_string(),
            };
            let (iast, internal) = line.split_once('\t').ok_or_else(|| err("missing tab"))?;
            let sym = parse_symbol(internal).ok_or_else(|| err("internal must be one symbol"))?;
            pairs.push((iast.to_string(), sym));
        }
        TranslitTable::new(pairs)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iast\tinternal\n");
        for (iast, sym) in &self.pairs {
            out.push_str(&format!("{iast}\tU+{:04X}\n", *sym as u32));
        }
        out
    }

    /// Greedy longest-match substitution, left to right.
    pub fn to_internal(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        'outer: while pos < chars.len() {
            if let Some(candidates) = self.by_first.get(&chars[pos]) {
                for &i in candidates {
                    let (iast, sym) = &self.pairs[i];
                    let n = iast.chars().count();
                    if pos + n <= chars.len() && iast.chars().eq(chars[pos..pos + n].iter().copied())
                    {
                        out.push(*sym);
                        pos += n;
                        continue 'outer;
                    }
                }
            }
            out.push(chars[pos]);
            pos += 1;
        }
        out
    }

    pub fn to_iast(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len() + 8);
        for c in text.chars() {
            match self.reverse.get(&c) {
                Some(&i) => out.push_str(&self.pairs[i].0),
                None => out.push(c),
            }
        }
        out
    }
}

impl Default for TranslitTable {
    fn default() -> Self {
        TranslitTable::builtin()
    }
}

impl TryFrom<Vec<(String, char)>> for TranslitTable {
    type Error = TranslitError;
    fn try_from(pairs: Vec<(String, char)>) -> Result<Self, Self::Error> {
        TranslitTable::new(pairs)
    }
}

impl From<TranslitTable> for Vec<(String, char)> {
    fn from(t: TranslitTable) -> Self {
        t.pairs
    }
}

fn parse_symbol(field: &str) -> Option<char> {
    let field = field.trim_end_matches(['\r', '\n']);
    if let Some(hex) = field.strip_prefix("U+") {
        return u32::from_str_radix(hex, 16).ok().and_then(char::from_u32);
    }
    let mut it = field.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

pub fn to_internal(text: &str, table: &TranslitTable) -> String {
    table.to_internal(text)
}

pub fn to_iast(text: &str, table: &TranslitTable) -> String {
    table.to_iast(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diphthong_becomes_one_symbol() {
        let t = TranslitTable::builtin();
        assert_eq!(t.to_internal("ai").chars().count(), 1);
        assert_eq!(t.to_internal("au").chars().count(), 1);
    }

    #[test]
    fn simple_letters_are_untouched() {
        let t = TranslitTable::builtin();
        assert_eq!(t.to_internal("kena"), "kena");
        assert_eq!(t.to_internal("kena pathā").chars().nth(4), Some(' '));
    }

    #[test]
    fn aspirate_is_fused() {
        let t = TranslitTable::builtin();
        let internal = t.to_internal("bhavati");
        let chars: Vec<char> = internal.chars().collect();
        assert_eq!(chars.len(), 6);
        assert_eq!(chars[0], '\u{E00B}');
        assert_eq!(&internal[chars[0].len_utf8()..], "avati");
    }

    #[test]
    fn example_round_trip() {
        let t = TranslitTable::builtin();
        assert_eq!(t.to_iast(""), "");
        assert_eq!(t.to_iast(&t.to_internal("cãtra")), "cãtra");
        assert_eq!(t.to_iast(&t.to_internal("bhavati cãtra")), "bhavati cãtra");
    }

    #[test]
    fn longest_match_wins_over_table_order() {
        let t = TranslitTable::new(vec![
            ("a".into(), 'A'),
            ("ai".into(), 'E'),
        ])
        .unwrap();
        assert_eq!(t.to_internal("aia"), "EA");
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let t = TranslitTable::builtin();
        let again = TranslitTable::from_tsv(&t.to_tsv()).unwrap();
        assert_eq!(again, t);
        let custom = TranslitTable::from_tsv("iast\tinternal\nkh\tK\nā\tA\n").unwrap();
        assert_eq!(custom.to_internal("khādati"), "KAdati");
        assert!(matches!(
            TranslitTable::from_tsv("iast\tinternal\nkh\tKK\n"),
            Err(TranslitError::Tsv { line: 2, .. })
        ));
        assert!(TranslitTable::from_tsv("x\ty\n").is_err());
        assert_eq!(
            TranslitTable::from_tsv("iast\tinternal\nkh\tK\ngh\tK\n"),
            Err(TranslitError::DuplicateSymbol('K'))
        );
    }

    #[test]
    fn serde_round_trip() {
        let t = TranslitTable::builtin();
        let json = serde_json::to_string(&t).unwrap();
        let back: TranslitTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    fn iast_string() -> impl Strategy<Value = String> {
        let alphabet: Vec<char> = "aāiīuūṛeokhgcjṭḍtdnpbmyrlvśṣsḥṃ ñṅṇã".chars().collect();
        proptest::collection::vec(proptest::sample::select(alphabet), 0..40)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn round_trips_and_never_grows(s in iast_string()) {
            let t = TranslitTable::builtin();
            let internal = t.to_internal(&s);
            prop_assert!(internal.chars().count() <= s.chars().count());
            prop_assert_eq!(t.to_iast(&internal), s.clone());
            prop_assert_eq!(t.to_internal(&t.to_iast(&internal)), internal);
        }
    }
}
