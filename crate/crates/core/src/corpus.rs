//! Sentence records: loading, validation, corruption filtering and a
//! deterministic synthetic generator.
//!
//! A dataset file is UTF-8 JSON-lines. Each line holds one object:
//!
//! ```text
//! {"sandhied":"bhavati cãtra","segmentation":["bhavati","ca","atra"],
//!  "analyses":[["bhavati","bhū","pr. [1] ac. sg. 3"], ...]}
//! ```
//!
//! `analyses` is optional (segmentation-only corpora are legal). An optional
//! `strata` array tags the record for stratified evaluation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stemrules::MorphTag;

pub mod toy;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("lexicon is empty but {0} sentences were requested")]
    EmptyLexicon(usize),
    #[error("sandhi entries {0} and {1} overlap in context")]
    OverlappingSandhi(usize, usize),
    #[error("sandhi entry {0} has an empty context")]
    EmptySandhiContext(usize),
    #[error("stem {stem:?} does not end with {strip:?} required by paradigm {paradigm:?}")]
    BadParadigm {
        stem: String,
        strip: String,
        paradigm: String,
    },
    #[error("invalid synthesis options: {0}")]
    BadOptions(String),
}

/// One gold (word, stem, tag) triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String, MorphTag)", into = "(String, String, MorphTag)")]
pub struct Analysis {
    pub word: String,
    pub stem: String,
    pub tag: MorphTag,
}

impl Analysis {
    pub fn new(word: impl Into<String>, stem: impl Into<String>, tag: impl Into<MorphTag>) -> Self {
        Analysis {
            word: word.into(),
            stem: stem.into(),
            tag: tag.into(),
        }
    }
}

impl From<(String, String, MorphTag)> for Analysis {
    fn from((word, stem, tag): (String, String, MorphTag)) -> Self {
        Analysis { word, stem, tag }
    }
}

impl From<Analysis> for (String, String, MorphTag) {
    fn from(a: Analysis) -> Self {
        (a.word, a.stem, a.tag)
    }
}

/// A sandhied sentence with its gold segmentation and, optionally, analyses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sandhied: String,
    pub segmentation: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyses: Option<Vec<Analysis>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<String>,
}

impl SentenceRecord {
    pub fn new(sandhied: impl Into<String>, segmentation: Vec<String>) -> Self {
        SentenceRecord {
            sandhied: sandhied.into(),
            segmentation,
            analyses: None,
            strata: Vec::new(),
        }
    }

    pub fn with_analyses(mut self, analyses: Vec<Analysis>) -> Self {
        self.analyses = Some(analyses);
        self
    }

    /// Checks the record invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        for (i, w) in self.segmentation.iter().enumerate() {
            if w.is_empty() {
                return Err(format!("segmentation word {i} is empty"));
            }
            if w.chars().any(char::is_whitespace) {
                return Err(format!("segmentation word {i} ({w:?}) contains whitespace"));
            }
        }
        if let Some(analyses) = &self.analyses {
            if analyses.len() != self.segmentation.len() {
                return Err(format!(
                    "{} analyses for {} segmentation words",
                    analyses.len(),
                    self.segmentation.len()
                ));
            }
            for (i, (a, w)) in analyses.iter().zip(&self.segmentation).enumerate() {
                if &a.word != w {
                    return Err(format!(
                        "analysis {i} is for {:?} but segmentation word is {w:?}",
                        a.word
                    ));
                }
            }
        }
        Ok(())
    }

    /// The gold segmentation joined by single spaces.
    pub fn target(&self) -> String {
        self.segmentation.join(" ")
    }

    /// Applies `f` to every text field (sentence, words, stems); tags and
    /// strata are kept.
    pub fn map_text(&self, f: impl Fn(&str) -> String) -> SentenceRecord {
        SentenceRecord {
            sandhied: f(&self.sandhied),
            segmentation: self.segmentation.iter().map(|w| f(w)).collect(),
            analyses: self.analyses.as_ref().map(|v| {
                v.iter()
                    .map(|a| Analysis {
                        word: f(&a.word),
                        stem: f(&a.stem),
                        tag: a.tag.clone(),
                    })
                    .collect()
            }),
            strata: self.strata.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub removed_corrupt: usize,
    #[serde(default)]
    pub rule_counts: BTreeMap<String, usize>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SentenceRecord>, CorpusError> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file))
}

/// Parses JSON-lines records. Blank lines and lines starting with `#` are
/// skipped; line numbers in errors are 1-based.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<SentenceRecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let record: SentenceRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Schema {
                line: idx + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| CorpusError::Schema {
            line: idx + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_dataset<W: Write>(mut writer: W, records: &[SentenceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// True when the sandhied source has more characters than the space-joined
/// gold words. Such pairs cannot be aligned by insertions and substitutions.
pub fn is_corrupt(record: &SentenceRecord) -> bool {
    let target_len = record.segmentation.iter().map(|w| w.chars().count()).sum::<usize>()
        + record.segmentation.len().saturating_sub(1);
    record.sandhied.chars().count() > target_len
}

pub fn filter_corrupt(records: Vec<SentenceRecord>) -> (Vec<SentenceRecord>, CorpusStats) {
    let total = records.len();
    let kept: Vec<_> = records.into_iter().filter(|r| !is_corrupt(r)).collect();
    let stats = CorpusStats {
        total,
        removed_corrupt: total - kept.len(),
        rule_counts: BTreeMap::new(),
    };
    (kept, stats)
}

/// One inflected form: the stem loses `strip` from its end and gains `ending`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParadigmForm {
    pub strip: String,
    pub ending: String,
    pub tag: MorphTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paradigm {
    pub name: String,
    pub forms: Vec<ParadigmForm>,
}

impl Paradigm {
    pub fn new(name: impl Into<String>, forms: &[(&str, &str, &str)]) -> Self {
        Paradigm {
            name: name.into(),
            forms: forms
                .iter()
                .map(|&(strip, ending, tag)| ParadigmForm {
                    strip: strip.to_string(),
                    ending: ending.to_string(),
                    tag: MorphTag::new(tag),
                })
                .collect(),
        }
    }

    pub fn inflect(&self, stem: &str, form: &ParadigmForm) -> Result<String, CorpusError> {
        match stem.strip_suffix(form.strip.as_str()) {
            Some(base) => Ok(format!("{base}{}", form.ending)),
            None => Err(CorpusError::BadParadigm {
                stem: stem.to_string(),
                strip: form.strip.clone(),
                paradigm: self.name.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub stem: String,
    pub paradigm: Paradigm,
}

/// A word-boundary fusion: a left word ending in `left` followed by a right
/// word starting with `right` is written with `left` + `right` replaced by
/// `fused` and no space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandhiRule {
    pub left: String,
    pub right: String,
    pub fused: String,
}

impl SandhiRule {
    pub fn new(left: &str, right: &str, fused: &str) -> Self {
        SandhiRule {
            left: left.into(),
            right: right.into(),
            fused: fused.into(),
        }
    }

    fn matches(&self, left_word: &str, right_word: &str) -> bool {
        left_word.ends_with(self.left.as_str()) && right_word.starts_with(self.right.as_str())
    }
}

/// Rejects tables where two entries could fire on the same boundary.
pub fn validate_sandhi_table(table: &[SandhiRule]) -> Result<(), CorpusError> {
    for (i, a) in table.iter().enumerate() {
        if a.left.is_empty() || a.right.is_empty() {
            return Err(CorpusError::EmptySandhiContext(i));
        }
        for (j, b) in table.iter().enumerate().skip(i + 1) {
            let left_overlap = a.left.ends_with(b.left.as_str()) || b.left.ends_with(a.left.as_str());
            let right_overlap =
                a.right.starts_with(b.right.as_str()) || b.right.starts_with(a.right.as_str());
            if left_overlap && right_overlap {
                return Err(CorpusError::OverlappingSandhi(i, j));
            }
        }
    }
    Ok(())
}

/// Where a fusion was applied while synthesizing a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionSite {
    /// Index of the left word of the fused boundary.
    pub boundary: usize,
    /// Character offset of the fused string in the sandhied sentence.
    pub offset: usize,
    /// Index into the sandhi table.
    pub rule: usize,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            min_words: 3,
            max_words: 6,
        }
    }
}

pub fn synth_corpus(
    lexicon: &[LexiconEntry],
    sandhi_table: &[SandhiRule],
    n: usize,
    seed: u64,
) -> Result<Vec<SentenceRecord>, CorpusError> {
    Ok(synth_corpus_traced(lexicon, sandhi_table, n, seed, &SynthOptions::default())?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// Like [`synth_corpus`], also returning the fusion sites of every sentence.
pub fn synth_corpus_traced(
    lexicon: &[LexiconEntry],
    sandhi_table: &[SandhiRule],
    n: usize,
    seed: u64,
    options: &SynthOptions,
) -> Result<Vec<(SentenceRecord, Vec<FusionSite>)>, CorpusError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if lexicon.is_empty() {
        return Err(CorpusError::EmptyLexicon(n));
    }
    if options.min_words == 0 || options.min_words > options.max_words {
        return Err(CorpusError::BadOptions(format!(
            "word range {}..={}",
            options.min_words, options.max_words
        )));
    }
    validate_sandhi_table(sandhi_table)?;
    for entry in lexicon {
        if entry.paradigm.forms.is_empty() {
            return Err(CorpusError::BadOptions(format!(
                "paradigm {:?} has no forms",
                entry.paradigm.name
            )));
        }
        for form in &entry.paradigm.forms {
            entry.paradigm.inflect(&entry.stem, form)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.gen_range(options.min_words..=options.max_words);
        let mut analyses = Vec::with_capacity(len);
        for _ in 0..len {
            let entry = &lexicon[rng.gen_range(0..lexicon.len())];
            let form = &entry.paradigm.forms[rng.gen_range(0..entry.paradigm.forms.len())];
            let word = entry.paradigm.inflect(&entry.stem, form)?;
            analyses.push(Analysis::new(word, entry.stem.clone(), form.tag.clone()));
        }
        let words: Vec<String> = analyses.iter().map(|a| a.word.clone()).collect();
        let (sandhied, sites) = fuse_words(&words, sandhi_table);
        out.push((
            SentenceRecord::new(sandhied, words).with_analyses(analyses),
            sites,
        ));
    }
    Ok(out)
}

/// Joins words, applying at most one fusion per boundary. A fusion only fires
/// when each word keeps at least one character untouched by fusions.
pub fn fuse_words(words: &[String], table: &[SandhiRule]) -> (String, Vec<FusionSite>) {
    let mut out: Vec<char> = Vec::new();
    let mut sites = Vec::new();
    // characters of the current word already consumed by the previous fusion
    let mut consumed_front = 0usize;
    for (i, word) in words.iter().enumerate() {
        if i == 0 {
            out.extend(word.chars());
            continue;
        }
        let prev = &words[i - 1];
        let prev_len = prev.chars().count();
        let cur_len = word.chars().count();
        let rule = table.iter().enumerate().find(|(_, r)| {
            r.matches(prev, word)
                && consumed_front + r.left.chars().count() < prev_len
                && r.right.chars().count() < cur_len
        });
        match rule {
            Some((idx, r)) => {
                let left_len = r.left.chars().count();
                out.truncate(out.len() - left_len);
                sites.push(FusionSite {
                    boundary: i - 1,
                    offset: out.len(),
                    rule: idx,
                });
                out.extend(r.fused.chars());
                out.extend(word.chars().skip(r.right.chars().count()));
                consumed_front = r.right.chars().count();
            }
            None => {
                out.push(' ');
                out.extend(word.chars());
                consumed_front = 0;
            }
        }
    }
    (out.into_iter().collect(), sites)
}

/// Reverses recorded fusions and splits the result into words.
pub fn undo_fusions(sandhied: &str, sites: &[FusionSite], table: &[SandhiRule]) -> Vec<String> {
    let chars: Vec<char> = sandhied.chars().collect();
    let mut sorted: Vec<&FusionSite> = sites.iter().collect();
    sorted.sort_by_key(|s| s.offset);
    let mut out = String::new();
    let mut pos = 0;
    for site in sorted {
        let rule = &table[site.rule];
        out.extend(&chars[pos..site.offset]);
        out.push_str(&rule.left);
        out.push(' ');
        out.push_str(&rule.right);
        pos = site.offset + rule.fused.chars().count();
    }
    out.extend(&chars[pos..]);
    out.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, seg: &[&str]) -> SentenceRecord {
        SentenceRecord::new(s, seg.iter().map(|w| w.to_string()).collect())
    }

    #[test]
    fn parses_example_line() {
        let data = r#"{"sandhied":"bhavati cãtra","segmentation":["bhavati","ca","atra"]}"#;
        let recs = read_dataset(data.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].segmentation, vec!["bhavati", "ca", "atra"]);
        assert!(recs[0].analyses.is_none());
    }

    #[test]
    fn parses_analyses_triples() {
        let data = concat!(
            r#"{"sandhied":"bhavati cãtra","segmentation":["bhavati","ca","atra"],"#,
            r#""analyses":[["bhavati","bhū","pr. [1] ac. sg. 3"],["ca","ca","conj."],["atra","atra","adv."]]}"#
        );
        let recs = read_dataset(data.as_bytes()).unwrap();
        let a = recs[0].analyses.as_ref().unwrap();
        assert_eq!(a[0], Analysis::new("bhavati", "bhū", "pr. [1] ac. sg. 3"));
        assert_eq!(a[2].tag.as_str(), "adv.");
    }

    #[test]
    fn comment_lines_are_skipped() {
        let data = "# {\"tool_version\":\"0\"}\n{\"sandhied\":\"ca\",\"segmentation\":[\"ca\"]}\n";
        assert_eq!(read_dataset(data.as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn empty_input_gives_no_records() {
        assert!(read_dataset("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let data = "{\"sandhied\":\"a\",\"segmentation\":[\"a\"]}\n\n{\"sandhied\":1}\n";
        match read_dataset(data.as_bytes()) {
            Err(CorpusError::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let data = r#"{"sandhied":"ab","segmentation":["a b"]}"#;
        assert!(matches!(
            read_dataset(data.as_bytes()),
            Err(CorpusError::Schema { line: 1, .. })
        ));
        let data = r#"{"sandhied":"ab","segmentation":["ab"],"analyses":[["x","x","adv."]]}"#;
        assert!(read_dataset(data.as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_preserves_records() {
        let records = vec![
            rec("kena pathā", &["kena", "pathā"]),
            rec("cātra", &["ca", "atra"]).with_analyses(vec![
                Analysis::new("ca", "ca", "conj."),
                Analysis::new("atra", "atra", "adv."),
            ]),
        ];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"sandhied":"kena pathā","segmentation":["kena","pathā"]}"#));
        assert_eq!(read_dataset(&buf[..]).unwrap(), records);
    }

    #[test]
    fn corruption_filter() {
        let (kept, stats) = filter_corrupt(vec![rec("abc", &["abc"]), rec("abcdefgh", &["ab"])]);
        assert_eq!(kept, vec![rec("abc", &["abc"])]);
        assert_eq!(stats.total, 2);
        assert_eq!(stats.removed_corrupt, 1);
    }

    #[test]
    fn corruption_filter_on_synthetic_corpus() {
        let mut corpus =
            synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 100, 11).unwrap();
        corpus[37].segmentation.truncate(1);
        corpus[37].analyses = None;
        let (kept, stats) = filter_corrupt(corpus);
        assert_eq!(kept.len(), 99);
        assert_eq!(stats.removed_corrupt, 1);
        assert!(kept.iter().all(|r| !is_corrupt(r)));
        let (again, stats2) = filter_corrupt(kept.clone());
        assert_eq!(again, kept);
        assert_eq!(stats2.removed_corrupt, 0);
    }

    #[test]
    fn fusion_example() {
        let table = vec![SandhiRule::new("a", "a", "ā")];
        let (s, sites) = fuse_words(&["saha".to_string(), "agacchat".to_string()], &table);
        assert_eq!(s, "sahāgacchat");
        assert_eq!(sites, vec![FusionSite { boundary: 0, offset: 3, rule: 0 }]);
        assert_eq!(undo_fusions(&s, &sites, &table), vec!["saha", "agacchat"]);
    }

    #[test]
    fn unmatched_boundaries_keep_spaces() {
        let table = vec![SandhiRule::new("a", "a", "ā")];
        let (s, sites) = fuse_words(&["kena".to_string(), "pathā".to_string()], &table);
        assert_eq!(s, "kena pathā");
        assert!(sites.is_empty());
    }

    #[test]
    fn synthesis_edge_cases() {
        assert!(synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 0, 1).unwrap().is_empty());
        assert!(matches!(
            synth_corpus(&[], &toy::sandhi_table(), 3, 1),
            Err(CorpusError::EmptyLexicon(3))
        ));
        let overlapping = vec![SandhiRule::new("a", "a", "ā"), SandhiRule::new("ha", "a", "hā")];
        assert!(matches!(
            synth_corpus(&toy::lexicon(), &overlapping, 3, 1),
            Err(CorpusError::OverlappingSandhi(0, 1))
        ));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 50, 7).unwrap();
        let b = synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 50, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesized_records_are_valid_and_invertible() {
        let table = toy::sandhi_table();
        let traced =
            synth_corpus_traced(&toy::lexicon(), &table, 500, 3, &SynthOptions::default()).unwrap();
        let mut fused = 0;
        for (r, sites) in &traced {
            r.validate().unwrap();
            assert!(!is_corrupt(r));
            assert_eq!(undo_fusions(&r.sandhied, sites, &table), r.segmentation);
            let (again, _) = fuse_words(&r.segmentation, &table);
            assert_eq!(again, r.sandhied);
            fused += sites.len();
        }
        assert!(fused > 100, "toy table should fire often, got {fused}");
    }
}
