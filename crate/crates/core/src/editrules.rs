//! Per-character segmentation edit rules.
//!
//! A sandhied sentence is aligned to its space-joined gold segmentation by
//! minimum Levenshtein distance. Matching stretches become `COPY` labels,
//! differing stretches become `REPLACE(source → target)` rules attached to
//! every source character they cover, and a bare inserted space becomes
//! `INSERT_SPACE_AFTER` on the preceding character. Applying a label sequence
//! reverses the process.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Deref, Range};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EditRuleError {
    #[error("source has {source_len} chars but target only {target_len}")]
    SourceLonger { source_len: usize, target_len: usize },
    #[error("target starts with inserted text {0:?} that has no character to attach to")]
    LeadingInsertion(String),
    #[error("{labels} labels for a source of {chars} characters")]
    LengthMismatch { labels: usize, chars: usize },
    #[error("invalid rule vocabulary: {0}")]
    BadVocab(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditRule {
    Copy,
    InsertSpaceAfter,
    Replace { source: String, target: String },
}

impl EditRule {
    pub fn replace(source: impl Into<String>, target: impl Into<String>) -> Self {
        EditRule::Replace {
            source: source.into(),
            target: target.into(),
        }
    }

    pub fn is_replace(&self) -> bool {
        matches!(self, EditRule::Replace { .. })
    }
}

impl fmt::Display for EditRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditRule::Copy => f.write_str("COPY"),
            EditRule::InsertSpaceAfter => f.write_str("INSERT_SPACE_AFTER"),
            EditRule::Replace { source, target } => write!(f, "{source:?}→{target:?}"),
        }
    }
}

/// One label per source character, spaces included.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditLabelSequence(pub Vec<EditRule>);

impl Deref for EditLabelSequence {
    type Target = [EditRule];
    fn deref(&self) -> &[EditRule] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkKind {
    Match,
    Diff,
}

/// Half-open character spans in source and target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignChunk {
    pub kind: ChunkKind,
    pub src_span: (usize, usize),
    pub tgt_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub chunks: Vec<AlignChunk>,
    /// Number of non-match edit operations on the chosen path.
    pub cost: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Sub,
    Ins,
    Del,
}

/// Minimal unit-cost alignment. Ties are broken walking left to right,
/// preferring match, then substitution, insertion, deletion.
pub fn align(source: &str, target: &str) -> Result<Alignment, EditRuleError> {
    let s: Vec<char> = source.chars().collect();
    let t: Vec<char> = target.chars().collect();
    if s.len() > t.len() {
        return Err(EditRuleError::SourceLonger {
            source_len: s.len(),
            target_len: t.len(),
        });
    }
    Ok(align_chars(&s, &t))
}

fn align_chars(s: &[char], t: &[char]) -> Alignment {
    let (n, m) = (s.len(), t.len());
    let w = m + 1;
    // suffix distances: d[i * w + j] = dist(s[i..], t[j..])
    let mut d = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        d[n * w + j] = (m - j) as u32;
    }
    for i in (0..n).rev() {
        d[i * w + m] = (n - i) as u32;
        for j in (0..m).rev() {
            let diag = d[(i + 1) * w + j + 1] + u32::from(s[i] != t[j]);
            let ins = d[i * w + j + 1] + 1;
            let del = d[(i + 1) * w + j] + 1;
            d[i * w + j] = diag.min(ins).min(del);
        }
    }

    let mut ops = Vec::with_capacity(m);
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = d[i * w + j];
        let op = if i < n && j < m && s[i] == t[j] && here == d[(i + 1) * w + j + 1] {
            Op::Match
        } else if i < n && j < m && here == d[(i + 1) * w + j + 1] + 1 {
            Op::Sub
        } else if j < m && here == d[i * w + j + 1] + 1 {
            Op::Ins
        } else {
            Op::Del
        };
        match op {
            Op::Match | Op::Sub => {
                i += 1;
                j += 1;
            }
            Op::Ins => j += 1,
            Op::Del => i += 1,
        }
        ops.push(op);
    }

    let cost = ops.iter().filter(|&&o| o != Op::Match).count();
    debug_assert_eq!(cost as u32, d[0]);

    let mut chunks: Vec<AlignChunk> = Vec::new();
    let (mut i, mut j) = (0, 0);
    for op in ops {
        let kind = if op == Op::Match {
            ChunkKind::Match
        } else {
            ChunkKind::Diff
        };
        let (di, dj) = match op {
            Op::Match | Op::Sub => (1, 1),
            Op::Ins => (0, 1),
            Op::Del => (1, 0),
        };
        match chunks.last_mut() {
            Some(c) if c.kind == kind => {
                c.src_span.1 += di;
                c.tgt_span.1 += dj;
            }
            _ => chunks.push(AlignChunk {
                kind,
                src_span: (i, i + di),
                tgt_span: (j, j + dj),
            }),
        }
        i += di;
        j += dj;
    }
    Alignment { chunks, cost }
}

/// Gold labels for turning `source` into `target` (the space-joined words).
pub fn derive_labels(source: &str, target: &str) -> Result<EditLabelSequence, EditRuleError> {
    let s: Vec<char> = source.chars().collect();
    let t: Vec<char> = target.chars().collect();
    if s.len() > t.len() {
        return Err(EditRuleError::SourceLonger {
            source_len: s.len(),
            target_len: t.len(),
        });
    }
    let alignment = align_chars(&s, &t);
    let mut labels = vec![EditRule::Copy; s.len()];
    for chunk in &alignment.chunks {
        if chunk.kind == ChunkKind::Match {
            continue;
        }
        let (a, b) = chunk.src_span;
        let tgt: String = t[chunk.tgt_span.0..chunk.tgt_span.1].iter().collect();
        if a < b {
            let rule = EditRule::Replace {
                source: s[a..b].iter().collect(),
                target: tgt,
            };
            labels[a..b].fill(rule);
            continue;
        }
        // pure insertion: glue it onto the rule of the character to the left
        if a == 0 {
            return Err(EditRuleError::LeadingInsertion(tgt));
        }
        let left = a - 1;
        labels[left] = match &labels[left] {
            EditRule::Copy if tgt == " " => EditRule::InsertSpaceAfter,
            EditRule::Copy => EditRule::replace(s[left].to_string(), format!("{}{tgt}", s[left])),
            EditRule::InsertSpaceAfter => {
                EditRule::replace(s[left].to_string(), format!("{} {tgt}", s[left]))
            }
            EditRule::Replace { .. } => unreachable!("diff chunks are maximal"),
        };
    }
    Ok(EditLabelSequence(labels))
}

/// One application of a label (or a contracted run of equal REPLACE labels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Application {
    pub range: Range<usize>,
    pub output: String,
    /// The REPLACE source did not match the labelled text; copied instead.
    pub fallback: bool,
}

pub fn applications(source: &str, labels: &[EditRule]) -> Result<Vec<Application>, EditRuleError> {
    let s: Vec<char> = source.chars().collect();
    if s.len() != labels.len() {
        return Err(EditRuleError::LengthMismatch {
            labels: labels.len(),
            chars: s.len(),
        });
    }
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        let app = match &labels[i] {
            EditRule::Copy => Application {
                range: i..i + 1,
                output: s[i].to_string(),
                fallback: false,
            },
            EditRule::InsertSpaceAfter => Application {
                range: i..i + 1,
                output: format!("{} ", s[i]),
                fallback: false,
            },
            rule @ EditRule::Replace { source, target } => {
                let mut j = i + 1;
                while j < s.len() && &labels[j] == rule {
                    j += 1;
                }
                let span: String = s[i..j].iter().collect();
                if &span == source {
                    Application {
                        range: i..j,
                        output: target.clone(),
                        fallback: false,
                    }
                } else {
                    Application {
                        range: i..j,
                        output: span,
                        fallback: true,
                    }
                }
            }
        };
        i = app.range.end;
        out.push(app);
    }
    Ok(out)
}

/// Result of applying a label sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub words: Vec<String>,
    /// Source spans whose REPLACE rule did not match and were copied.
    pub fallbacks: Vec<Range<usize>>,
}

pub fn apply_labels_traced(source: &str, labels: &[EditRule]) -> Result<Applied, EditRuleError> {
    let apps = applications(source, labels)?;
    let text: String = apps.iter().map(|a| a.output.as_str()).collect();
    Ok(Applied {
        words: split_words(&text),
        fallbacks: apps
            .into_iter()
            .filter(|a| a.fallback)
            .map(|a| a.range)
            .collect(),
    })
}

pub fn apply_labels(source: &str, labels: &[EditRule]) -> Result<Vec<String>, EditRuleError> {
    apply_labels_traced(source, labels).map(|a| a.words)
}

pub fn split_words(text: &str) -> Vec<String> {
    text.split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// First and last (inclusive) source index of an output word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub i: usize,
    pub j: usize,
}

/// Maps every output word of `apply_labels` back to the source characters it
/// came from.
///
/// The text a rule emits before its first space belongs to the word being
/// built and claims the rule's whole source range; text after a space starts
/// a new word that claims no source characters of that rule. Characters whose
/// rule emits nothing attach to the preceding word. A word left without any
/// source character (only possible with rules emitting several spaces) takes
/// the next free index, or shares the previous word's last index if none is
/// free.
pub fn spans_from_labels(source: &str, labels: &[EditRule]) -> Result<Vec<TokenSpan>, EditRuleError> {
    let apps = applications(source, labels)?;
    let mut words: Vec<Option<(usize, usize)>> = Vec::new();
    let mut open = false;
    let mut pending: Option<(usize, usize)> = None;

    fn claim(slot: &mut Option<(usize, usize)>, r: &Range<usize>) {
        *slot = Some(match *slot {
            Some((a, b)) => (a.min(r.start), b.max(r.end - 1)),
            None => (r.start, r.end - 1),
        });
    }

    for app in &apps {
        if app.output.is_empty() {
            match words.last_mut() {
                Some(w) => claim(w, &app.range),
                None => {
                    let mut p = pending.take();
                    claim(&mut p, &app.range);
                    pending = p;
                }
            }
            continue;
        }
        for (k, piece) in app.output.split(' ').enumerate() {
            if k > 0 {
                open = false;
            }
            if piece.is_empty() {
                continue;
            }
            if !open {
                words.push(pending.take());
                open = true;
            }
            if k == 0 {
                claim(words.last_mut().expect("word is open"), &app.range);
            }
        }
    }

    let n = source.chars().count();
    let mut spans: Vec<TokenSpan> = Vec::with_capacity(words.len());
    for (idx, w) in words.iter().enumerate() {
        let span = match *w {
            Some((i, j)) => TokenSpan { i, j },
            None => {
                let next_free = spans.last().map_or(0, |s| s.j + 1);
                let next_taken = words[idx + 1..]
                    .iter()
                    .flatten()
                    .map(|&(i, _)| i)
                    .next()
                    .unwrap_or(n);
                let at = if next_free < next_taken {
                    next_free
                } else {
                    spans.last().map_or(0, |s| s.j)
                };
                TokenSpan { i: at, j: at }
            }
        };
        spans.push(span);
    }
    Ok(spans)
}

/// Indexed rule inventory. Ids 0 and 1 are PAD and UNK, 2 and 3 are COPY and
/// INSERT_SPACE_AFTER, REPLACE rules follow by descending frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditRuleVocab {
    rules: Vec<EditRule>,
    freqs: Vec<usize>,
    index: HashMap<EditRule, usize>,
    /// Records skipped during collection because no labels could be derived.
    pub skipped: usize,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const SPECIALS: usize = 2;

impl EditRuleVocab {
    fn from_counts(mut counted: Vec<(EditRule, usize)>, copy: usize, insert: usize) -> Self {
        counted.sort_by(|(ra, fa), (rb, fb)| fb.cmp(fa).then_with(|| ra.cmp(rb)));
        let mut rules = vec![EditRule::Copy, EditRule::InsertSpaceAfter];
        let mut freqs = vec![0, 0, copy, insert];
        for (r, f) in counted {
            rules.push(r);
            freqs.push(f);
        }
        let index = rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i + SPECIALS))
            .collect();
        EditRuleVocab {
            rules,
            freqs,
            index,
            skipped: 0,
        }
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.rules.len() + SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, rule: &EditRule) -> usize {
        self.index.get(rule).copied().unwrap_or(UNK_ID)
    }

    /// The rule behind an id; PAD and UNK decode to `None`.
    pub fn rule(&self, id: usize) -> Option<&EditRule> {
        id.checked_sub(SPECIALS).and_then(|i| self.rules.get(i))
    }

    pub fn freq(&self, id: usize) -> usize {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn replace_rules(&self) -> impl Iterator<Item = (&EditRule, usize)> {
        self.rules
            .iter()
            .zip(&self.freqs[SPECIALS..])
            .filter(|(r, _)| r.is_replace())
            .map(|(r, &f)| (r, f))
    }

    pub fn replace_count(&self) -> usize {
        self.rules.len() - 2
    }

    /// REPLACE rules whose target is empty. These usually come from gold data
    /// with missing characters.
    pub fn deletion_rules(&self) -> Vec<&EditRule> {
        self.rules
            .iter()
            .filter(|r| matches!(r, EditRule::Replace { target, .. } if target.is_empty()))
            .collect()
    }

    pub fn encode(&self, labels: &[EditRule]) -> Vec<usize> {
        labels.iter().map(|r| self.id(r)).collect()
    }

    /// Decodes predicted ids; PAD and UNK become COPY.
    pub fn decode(&self, ids: &[usize]) -> EditLabelSequence {
        EditLabelSequence(
            ids.iter()
                .map(|&id| self.rule(id).cloned().unwrap_or(EditRule::Copy))
                .collect(),
        )
    }

    pub fn to_entries(&self) -> Vec<VocabEntry> {
        let mut out = vec![
            VocabEntry::special("PAD"),
            VocabEntry::special("UNK"),
        ];
        for (i, r) in self.rules.iter().enumerate() {
            let freq = self.freqs[i + SPECIALS];
            out.push(match r {
                EditRule::Copy => VocabEntry { kind: "COPY".into(), source: None, target: None, freq },
                EditRule::InsertSpaceAfter => VocabEntry {
                    kind: "INSERT_SPACE_AFTER".into(),
                    source: None,
                    target: None,
                    freq,
                },
                EditRule::Replace { source, target } => VocabEntry {
                    kind: "REPLACE".into(),
                    source: Some(source.clone()),
                    target: Some(target.clone()),
                    freq,
                },
            });
        }
        out
    }

    pub fn from_entries(entries: &[VocabEntry]) -> Result<Self, EditRuleError> {
        let bad = |m: String| EditRuleError::BadVocab(m);
        let kinds: Vec<&str> = entries.iter().map(|e| e.kind.as_str()).collect();
        if kinds.len() < 4 || kinds[..4] != ["PAD", "UNK", "COPY", "INSERT_SPACE_AFTER"] {
            return Err(bad("must start with PAD, UNK, COPY, INSERT_SPACE_AFTER".into()));
        }
        let mut rules = vec![EditRule::Copy, EditRule::InsertSpaceAfter];
        let mut freqs: Vec<usize> = entries[..4].iter().map(|e| e.freq).collect();
        for (i, e) in entries.iter().enumerate().skip(4) {
            match (e.kind.as_str(), &e.source, &e.target) {
                ("REPLACE", Some(s), Some(t)) if !s.is_empty() => {
                    rules.push(EditRule::replace(s.clone(), t.clone()));
                    freqs.push(e.freq);
                }
                _ => return Err(bad(format!("entry {i} is not a valid REPLACE rule"))),
            }
        }
        let index: HashMap<EditRule, usize> = rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i + SPECIALS))
            .collect();
        if index.len() != rules.len() {
            return Err(bad("duplicate rules".into()));
        }
        Ok(EditRuleVocab {
            rules,
            freqs,
            index,
            skipped: 0,
        })
    }
}

/// Serialized form of one vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub freq: usize,
}

impl VocabEntry {
    fn special(kind: &str) -> Self {
        VocabEntry {
            kind: kind.into(),
            source: None,
            target: None,
            freq: 0,
        }
    }
}

impl Serialize for EditRuleVocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_entries().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EditRuleVocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<VocabEntry>::deserialize(d)?;
        EditRuleVocab::from_entries(&entries).map_err(serde::de::Error::custom)
    }
}

/// Counts REPLACE rules once per application; COPY and INSERT_SPACE_AFTER per
/// character.
#[derive(Debug, Clone, Default)]
pub struct RuleCounter {
    replace: HashMap<EditRule, usize>,
    copy: usize,
    insert: usize,
}

impl RuleCounter {
    pub fn add(&mut self, labels: &[EditRule]) {
        let mut prev: Option<&EditRule> = None;
        for r in labels {
            match r {
                EditRule::Copy => self.copy += 1,
                EditRule::InsertSpaceAfter => self.insert += 1,
                EditRule::Replace { .. } => {
                    if prev != Some(r) {
                        *self.replace.entry(r.clone()).or_default() += 1;
                    }
                }
            }
            prev = Some(r);
        }
    }

    pub fn merge(&mut self, other: RuleCounter) {
        for (r, c) in other.replace {
            *self.replace.entry(r).or_default() += c;
        }
        self.copy += other.copy;
        self.insert += other.insert;
    }

    pub fn into_vocab(self, cutoff: usize) -> EditRuleVocab {
        let kept = self
            .replace
            .into_iter()
            .filter(|(_, f)| *f >= cutoff)
            .collect();
        EditRuleVocab::from_counts(kept, self.copy, self.insert)
    }
}

/// Labels for one record, using the space-joined segmentation as target.
pub fn record_labels(record: &SentenceRecord) -> Result<EditLabelSequence, EditRuleError> {
    derive_labels(&record.sandhied, &record.target())
}

pub fn collect_rules(records: &[SentenceRecord], cutoff: usize) -> EditRuleVocab {
    let mut counter = RuleCounter::default();
    let mut skipped = 0;
    for (i, r) in records.iter().enumerate() {
        match record_labels(r) {
            Ok(labels) => counter.add(&labels),
            Err(e) => {
                log::warn!("record {i}: no edit labels: {e}");
                skipped += 1;
            }
        }
    }
    let mut vocab = counter.into_vocab(cutoff);
    vocab.skipped = skipped;
    for r in vocab.deletion_rules() {
        log::warn!("deletion rule {r} kept; likely from incomplete gold data");
    }
    vocab
}
