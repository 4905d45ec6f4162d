//! Scoring of predictions against gold records: strict string equality, the
//! character-counter comparison of tags, and error categories.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Analysis, SentenceRecord};
use crate::models::Prediction;
use crate::stemrules::MorphTag;
use crate::Task;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{pred} predicted sentences for {gold} gold sentences")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("sentence {index}: prediction does not fit task {task}")]
    WrongShape { index: usize, task: Task },
    #[error("sentence {index}: gold record has no analyses")]
    MissingAnalyses { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Strict,
    /// Tags compared by character multiset overlap.
    Counter,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(ScoreMode::Strict),
            "counter" => Ok(ScoreMode::Counter),
            other => Err(format!("unknown scoring mode {other:?} (strict, counter)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub mode: ScoreMode,
    /// Counter similarity as `2·|∩|/(|pred|+|gold|)` instead of `|∩|/|gold|`.
    pub symmetric: bool,
}

/// Character-multiset overlap of two tags divided by the gold length. Spaces
/// and dots count like any other character.
pub fn score_counter(pred_tag: &str, gold_tag: &str) -> f64 {
    let gold_len = gold_tag.chars().count();
    if gold_len == 0 {
        return if pred_tag.is_empty() { 1.0 } else { 0.0 };
    }
    common_chars(pred_tag, gold_tag) as f64 / gold_len as f64
}

/// `2·|∩| / (|pred| + |gold|)`; 1 when both are empty.
pub fn score_counter_sym(pred_tag: &str, gold_tag: &str) -> f64 {
    let total = pred_tag.chars().count() + gold_tag.chars().count();
    if total == 0 {
        return 1.0;
    }
    2.0 * common_chars(pred_tag, gold_tag) as f64 / total as f64
}

fn common_chars(a: &str, b: &str) -> usize {
    let mut counts: HashMap<char, usize> = HashMap::new();
    for c in b.chars() {
        *counts.entry(c).or_insert(0) += 1;
    }
    let mut common = 0;
    for c in a.chars() {
        if let Some(n) = counts.get_mut(&c) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    common
}

/// Number of whitespace-separated subtags that differ, counting a
/// substitution once.
pub fn subtag_errors(pred: &MorphTag, gold: &MorphTag) -> usize {
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for s in gold.subtags() {
        *counts.entry(s).or_insert(0) += 1;
    }
    for s in pred.subtags() {
        *counts.entry(s).or_insert(0) -= 1;
    }
    let missing: isize = counts.values().filter(|&&v| v > 0).sum();
    let extra: isize = -counts.values().filter(|&&v| v < 0).sum::<isize>();
    missing.max(extra) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCategory {
    /// More predicted words than gold words.
    Oversplit,
    /// Fewer predicted words than gold words.
    Undersplit,
    /// Same number of words, different boundaries or forms.
    WrongSplit,
    /// The prediction lost characters that the gold words contain.
    VanishedChars,
    StemOnlyWrong,
    /// Stem right, tag wrong; `subtag_errors` counts the differing subtags.
    TagOnlyWrong { subtag_errors: usize },
    BothWrong,
}

impl ErrorCategory {
    pub fn is_tag_only(self) -> bool {
        matches!(self, ErrorCategory::TagOnlyWrong { .. })
    }

    pub fn label(self) -> String {
        match self {
            ErrorCategory::Oversplit => "OVERSPLIT".into(),
            ErrorCategory::Undersplit => "UNDERSPLIT".into(),
            ErrorCategory::WrongSplit => "WRONG_SPLIT".into(),
            ErrorCategory::VanishedChars => "VANISHED_CHARS".into(),
            ErrorCategory::StemOnlyWrong => "STEM_ONLY_WRONG".into(),
            ErrorCategory::TagOnlyWrong { .. } => "TAG_ONLY_WRONG".into(),
            ErrorCategory::BothWrong => "BOTH_WRONG".into(),
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub sentence: usize,
    pub category: ErrorCategory,
    pub detail: String,
}

/// How the analysed items of an evaluation split up. Every gold item lands in
/// exactly one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartialCounts {
    pub full_correct: usize,
    pub stem_only_wrong: usize,
    pub tag_only_wrong: usize,
    pub both_wrong: usize,
}

impl PartialCounts {
    pub fn total(&self) -> usize {
        self.full_correct + self.stem_only_wrong + self.tag_only_wrong + self.both_wrong
    }

    fn add(&mut self, stem_ok: bool, tag_ok: bool) {
        match (stem_ok, tag_ok) {
            (true, true) => self.full_correct += 1,
            (false, true) => self.stem_only_wrong += 1,
            (true, false) => self.tag_only_wrong += 1,
            (false, false) => self.both_wrong += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumScore {
    pub sentences: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub full_sentence_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: Task,
    pub mode: ScoreMode,
    pub symmetric: bool,
    pub sentences: usize,
    pub pred_items: usize,
    pub gold_items: usize,
    /// Matched items; fractional in counter mode.
    pub matched: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub full_sentence_match: f64,
    pub errors: BTreeMap<String, usize>,
    /// Tag-only errors by number of wrong subtags.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subtag_errors: BTreeMap<usize, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<PartialCounts>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, StratumScore>,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(a: f64, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a / b as f64
    }
}

/// Gold items of a record in the shape the task predicts.
pub fn gold_prediction(record: &SentenceRecord, task: Task) -> Option<Prediction> {
    match task {
        Task::T1 => Some(Prediction::Words(record.segmentation.clone())),
        Task::T2 => record
            .analyses
            .as_ref()
            .map(|a| Prediction::Pairs(a.iter().map(|x| (x.stem.clone(), x.tag.clone())).collect())),
        Task::T3 => record.analyses.clone().map(Prediction::Triples),
    }
}

/// Per-sentence outcome.
#[derive(Debug, Clone, Default)]
struct SentenceScore {
    pred: usize,
    gold: usize,
    matched: f64,
    full: bool,
    partial: PartialCounts,
    errors: Vec<(ErrorCategory, String)>,
}

struct Scorer {
    opts: ScoreOptions,
}

impl Scorer {
    fn tag_credit(&self, pred: &MorphTag, gold: &MorphTag) -> f64 {
        match self.opts.mode {
            ScoreMode::Strict => f64::from(u8::from(pred == gold)),
            ScoreMode::Counter if self.opts.symmetric => score_counter_sym(pred.as_str(), gold.as_str()),
            ScoreMode::Counter => score_counter(pred.as_str(), gold.as_str()),
        }
    }

    fn words(&self, pred: &[String], gold: &[String]) -> SentenceScore {
        let matched = multiset_matches(pred, gold);
        let mut s = SentenceScore {
            pred: pred.len(),
            gold: gold.len(),
            matched: matched as f64,
            full: matched == pred.len() && matched == gold.len(),
            ..Default::default()
        };
        if !s.full {
            s.errors.push(split_error(pred, gold));
        }
        s
    }

    fn pairs(&self, pred: &[(String, MorphTag)], gold: &[Analysis]) -> SentenceScore {
        let mut s = SentenceScore {
            pred: pred.len(),
            gold: gold.len(),
            ..Default::default()
        };
        for (k, g) in gold.iter().enumerate() {
            let Some((stem, tag)) = pred.get(k) else {
                s.partial.add(false, false);
                s.errors
                    .push((ErrorCategory::BothWrong, format!("no prediction for {:?}", g.word)));
                continue;
            };
            let stem_ok = *stem == g.stem;
            let tag_ok = *tag == g.tag;
            if stem_ok {
                s.matched += self.tag_credit(tag, &g.tag);
            }
            s.partial.add(stem_ok, tag_ok);
            if let Some(e) = item_error(&g.word, stem, tag, g) {
                s.errors.push(e);
            }
        }
        s.full = s.partial.full_correct == gold.len() && pred.len() == gold.len();
        s
    }

    fn triples(&self, pred: &[Analysis], gold: &[Analysis]) -> SentenceScore {
        let mut s = SentenceScore {
            pred: pred.len(),
            gold: gold.len(),
            ..Default::default()
        };
        // credit: each gold triple takes the unused prediction with the same
        // word and stem whose tag scores best (first on ties)
        let mut used = vec![false; pred.len()];
        for g in gold {
            let mut best: Option<(usize, f64)> = None;
            for (k, p) in pred.iter().enumerate() {
                if used[k] || p.word != g.word || p.stem != g.stem {
                    continue;
                }
                let c = self.tag_credit(&p.tag, &g.tag);
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((k, c));
                }
            }
            if let Some((k, c)) = best {
                used[k] = true;
                s.matched += c;
            }
        }
        let exact = multiset_matches(pred, gold);
        s.full = exact == pred.len() && exact == gold.len();

        let pw: Vec<String> = pred.iter().map(|a| a.word.clone()).collect();
        let gw: Vec<String> = gold.iter().map(|a| a.word.clone()).collect();
        if multiset_matches(&pw, &gw) != gw.len() || pw.len() != gw.len() {
            s.errors.push(split_error(&pw, &gw));
        }
        // analysis errors among words that were segmented correctly
        let mut taken = vec![false; pred.len()];
        for g in gold {
            let hit = pred
                .iter()
                .enumerate()
                .find(|(k, p)| !taken[*k] && p.word == g.word)
                .map(|(k, _)| k);
            match hit {
                Some(k) => {
                    taken[k] = true;
                    let p = &pred[k];
                    s.partial.add(p.stem == g.stem, p.tag == g.tag);
                    if let Some(e) = item_error(&g.word, &p.stem, &p.tag, g) {
                        s.errors.push(e);
                    }
                }
                None => s.partial.add(false, false),
            }
        }
        s
    }
}

fn multiset_matches<T: Eq + std::hash::Hash>(pred: &[T], gold: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_insert(0) += 1;
    }
    let mut n = 0;
    for p in pred {
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                n += 1;
            }
        }
    }
    n
}

fn split_error(pred: &[String], gold: &[String]) -> (ErrorCategory, String) {
    let p: String = pred.concat();
    let g: String = gold.concat();
    let kept = common_chars(&p, &g);
    let lost = g.chars().count() - kept;
    let detail = format!("{:?} vs gold {:?}", pred.join(" "), gold.join(" "));
    let cat = if lost > 0 {
        ErrorCategory::VanishedChars
    } else if pred.len() > gold.len() {
        ErrorCategory::Oversplit
    } else if pred.len() < gold.len() {
        ErrorCategory::Undersplit
    } else {
        ErrorCategory::WrongSplit
    };
    (cat, detail)
}

fn item_error(word: &str, stem: &str, tag: &MorphTag, gold: &Analysis) -> Option<(ErrorCategory, String)> {
    let stem_ok = stem == gold.stem;
    let tag_ok = *tag == gold.tag;
    let cat = match (stem_ok, tag_ok) {
        (true, true) => return None,
        (false, true) => ErrorCategory::StemOnlyWrong,
        (true, false) => ErrorCategory::TagOnlyWrong {
            subtag_errors: subtag_errors(tag, &gold.tag),
        },
        (false, false) => ErrorCategory::BothWrong,
    };
    let detail = format!(
        "{word}: predicted ({stem:?}, {:?}), gold ({:?}, {:?})",
        tag.as_str(),
        gold.stem,
        gold.tag.as_str()
    );
    Some((cat, detail))
}

fn score_sentences(
    pred: &[Prediction],
    gold: &[SentenceRecord],
    task: Task,
    opts: ScoreOptions,
) -> Result<Vec<SentenceScore>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let scorer = Scorer { opts };
    pred.iter()
        .zip(gold)
        .enumerate()
        .map(|(index, (p, g))| {
            let analyses = || g.analyses.as_deref().ok_or(EvalError::MissingAnalyses { index });
            Ok(match (task, p) {
                (Task::T1, Prediction::Words(w)) => scorer.words(w, &g.segmentation),
                (Task::T2, Prediction::Pairs(v)) => scorer.pairs(v, analyses()?),
                (Task::T3, Prediction::Triples(v)) => scorer.triples(v, analyses()?),
                // an empty list deserializes as the first untagged variant
                (_, Prediction::Words(w)) if w.is_empty() => match task {
                    Task::T2 => scorer.pairs(&[], analyses()?),
                    _ => scorer.triples(&[], analyses()?),
                },
                _ => return Err(EvalError::WrongShape { index, task }),
            })
        })
        .collect()
}

fn summarize(scores: &[&SentenceScore]) -> (usize, usize, f64, f64, f64, f64, f64) {
    let pred: usize = scores.iter().map(|s| s.pred).sum();
    let gold: usize = scores.iter().map(|s| s.gold).sum();
    let matched: f64 = scores.iter().map(|s| s.matched).sum();
    let p = ratio(matched, pred);
    let r = ratio(matched, gold);
    let full = ratio(scores.iter().filter(|s| s.full).count() as f64, scores.len());
    (pred, gold, matched, p, r, f1(p, r), full)
}

/// Scores predictions against gold records.
pub fn score(
    pred: &[Prediction],
    gold: &[SentenceRecord],
    task: Task,
    opts: ScoreOptions,
) -> Result<ScoreReport, EvalError> {
    let scores = score_sentences(pred, gold, task, opts)?;
    let all: Vec<&SentenceScore> = scores.iter().collect();
    let (pred_items, gold_items, matched, precision, recall, f1, full) = summarize(&all);

    let mut errors = BTreeMap::new();
    let mut subtags = BTreeMap::new();
    let mut partial = PartialCounts::default();
    for s in &scores {
        for (cat, _) in &s.errors {
            *errors.entry(cat.label()).or_insert(0) += 1;
            if let ErrorCategory::TagOnlyWrong { subtag_errors } = cat {
                *subtags.entry(*subtag_errors).or_insert(0) += 1;
            }
        }
        partial.full_correct += s.partial.full_correct;
        partial.stem_only_wrong += s.partial.stem_only_wrong;
        partial.tag_only_wrong += s.partial.tag_only_wrong;
        partial.both_wrong += s.partial.both_wrong;
    }

    let mut by_stratum: BTreeMap<&str, Vec<&SentenceScore>> = BTreeMap::new();
    for (s, g) in scores.iter().zip(gold) {
        for name in &g.strata {
            by_stratum.entry(name).or_default().push(s);
        }
    }
    let strata = by_stratum
        .into_iter()
        .map(|(name, group)| {
            let (_, _, _, p, r, f, full) = summarize(&group);
            (
                name.to_string(),
                StratumScore {
                    sentences: group.len(),
                    precision: p,
                    recall: r,
                    f1: f,
                    full_sentence_match: full,
                },
            )
        })
        .collect();

    Ok(ScoreReport {
        task,
        mode: opts.mode,
        symmetric: opts.symmetric,
        sentences: scores.len(),
        pred_items,
        gold_items,
        matched,
        precision,
        recall,
        f1,
        full_sentence_match: full,
        errors,
        subtag_errors: subtags,
        partial: (task != Task::T1).then_some(partial),
        strata,
    })
}

pub fn score_strict(pred: &[Prediction], gold: &[SentenceRecord], task: Task) -> Result<ScoreReport, EvalError> {
    score(pred, gold, task, ScoreOptions::default())
}

/// Every erroneous item or sentence with its category.
pub fn error_report(pred: &[Prediction], gold: &[SentenceRecord], task: Task) -> Result<Vec<ErrorEntry>, EvalError> {
    let scores = score_sentences(pred, gold, task, ScoreOptions::default())?;
    Ok(scores
        .into_iter()
        .enumerate()
        .flat_map(|(sentence, s)| {
            s.errors.into_iter().map(move |(category, detail)| ErrorEntry {
                sentence,
                category,
                detail,
            })
        })
        .collect())
}

impl ScoreReport {
    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mode = match (self.mode, self.symmetric) {
            (ScoreMode::Strict, _) => "strict",
            (ScoreMode::Counter, false) => "counter",
            (ScoreMode::Counter, true) => "counter (symmetric)",
        };
        let _ = writeln!(out, "task {} / {mode}: {} sentences", self.task, self.sentences);
        let _ = writeln!(out, "{:<22}{:>10}", "metric", "value");
        let rows = [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("full sentence match", self.full_sentence_match),
        ];
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<22}{:>10.4}", v);
        }
        let _ = writeln!(
            out,
            "{:<22}{:>10}\n{:<22}{:>10}\n{:<22}{:>10.2}",
            "predicted items", self.pred_items, "gold items", self.gold_items, "matched", self.matched
        );
        if let Some(p) = &self.partial {
            let _ = writeln!(out, "\nitems");
            for (name, n) in [
                ("fully correct", p.full_correct),
                ("stem only wrong", p.stem_only_wrong),
                ("tag only wrong", p.tag_only_wrong),
                ("both wrong", p.both_wrong),
            ] {
                let _ = writeln!(out, "{name:<22}{n:>10}");
            }
        }
        if !self.errors.is_empty() {
            let _ = writeln!(out, "\nerrors");
            for (cat, n) in &self.errors {
                let _ = writeln!(out, "{cat:<22}{n:>10}");
            }
            for (k, n) in &self.subtag_errors {
                let _ = writeln!(out, "{:<22}{n:>10}", format!("  {k} wrong subtag(s)"));
            }
        }
        if !self.strata.is_empty() {
            let _ = writeln!(out, "\n{:<22}{:>10}{:>10}{:>10}{:>10}", "stratum", "sentences", "P", "R", "F1");
            for (name, s) in &self.strata {
                let _ = writeln!(
                    out,
                    "{name:<22}{:>10}{:>10.4}{:>10.4}{:>10.4}",
                    s.sentences, s.precision, s.recall, s.f1
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn seg_record(v: &[&str]) -> SentenceRecord {
        SentenceRecord::new(v.join(" "), words(v))
    }

    fn ana_record(items: &[(&str, &str, &str)]) -> SentenceRecord {
        let ws: Vec<&str> = items.iter().map(|t| t.0).collect();
        seg_record(&ws).with_analyses(items.iter().map(|&(w, s, t)| Analysis::new(w, s, t)).collect())
    }

    fn pairs(items: &[(&str, &str)]) -> Prediction {
        Prediction::Pairs(items.iter().map(|&(s, t)| (s.to_string(), MorphTag::new(t))).collect())
    }

    #[test]
    fn counter_treats_permuted_tags_as_correct() {
        assert_eq!(score_counter("opt. [1] ac. sg. 3", "opt. [3] ac. sg. 1"), 1.0);
    }

    #[test]
    fn counter_counts_shared_characters() {
        // f. du. abl. / m. pl. dat. share ". ", ". ", "a", "l", "." and a space
        assert_eq!(score_counter("f. du. abl.", "m. pl. dat."), 8.0 / 11.0);
    }

    #[test]
    fn counter_edge_cases() {
        assert_eq!(score_counter("adv.", "adv."), 1.0);
        assert_eq!(score_counter("", ""), 1.0);
        assert_eq!(score_counter("x", ""), 0.0);
        assert_eq!(score_counter("", "m."), 0.0);
        assert_eq!(score_counter_sym("ab", "abcd"), 2.0 * 2.0 / 6.0);
        assert_eq!(score_counter_sym("", ""), 1.0);
    }

    #[test]
    fn identical_predictions_score_one() {
        let gold = vec![seg_record(&["bhavati", "ca", "atra"]), seg_record(&["kena", "pathā"])];
        let pred: Vec<Prediction> = gold.iter().map(|g| gold_prediction(g, Task::T1).unwrap()).collect();
        let r = score_strict(&pred, &gold, Task::T1).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.full_sentence_match), (1.0, 1.0, 1.0, 1.0));
        assert!(r.errors.is_empty());
    }

    #[test]
    fn oversplit_region_gets_no_credit() {
        let gold = vec![seg_record(&["dinantara"])];
        let pred = vec![Prediction::Words(words(&["dina", "antara"]))];
        let r = score_strict(&pred, &gold, Task::T1).unwrap();
        assert_eq!(r.matched, 0.0);
        assert_eq!(r.f1, 0.0);
        let e = error_report(&pred, &gold, Task::T1).unwrap();
        assert_eq!(e[0].category, ErrorCategory::Oversplit);
    }

    #[test]
    fn one_wrong_word_in_ten() {
        let gold = vec![
            seg_record(&["a", "b", "c"]),
            seg_record(&["d", "e", "f", "g"]),
            seg_record(&["h", "i", "j"]),
        ];
        let pred = vec![
            Prediction::Words(words(&["a", "b", "c"])),
            Prediction::Words(words(&["d", "x", "f", "g"])),
            Prediction::Words(words(&["h", "i", "j"])),
        ];
        let r = score_strict(&pred, &gold, Task::T1).unwrap();
        // 9 of 10 on both sides
        assert!((r.precision - 0.9).abs() < 1e-12);
        assert!((r.recall - 0.9).abs() < 1e-12);
        assert!((r.f1 - 0.9).abs() < 1e-12);
        assert!((r.full_sentence_match - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn split_categories() {
        let cases = [
            (&["ab", "c"][..], &["abc"][..], ErrorCategory::Oversplit),
            (&["abc"][..], &["a", "bc"][..], ErrorCategory::Undersplit),
            (&["ab", "cd"][..], &["a", "bcd"][..], ErrorCategory::WrongSplit),
            (&["ab", "d"][..], &["ab", "cd"][..], ErrorCategory::VanishedChars),
        ];
        for (p, g, want) in cases {
            assert_eq!(split_error(&words(p), &words(g)).0, want, "{p:?} vs {g:?}");
        }
    }

    #[test]
    fn gender_error_is_one_subtag() {
        let gold = vec![ana_record(&[("tam", "tad", "n. sg. acc.")])];
        let pred = vec![pairs(&[("tad", "m. sg. acc.")])];
        let e = error_report(&pred, &gold, Task::T2).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].category, ErrorCategory::TagOnlyWrong { subtag_errors: 1 });
        assert!(e[0].category.is_tag_only());
    }

    #[test]
    fn causative_confusion_is_tag_only() {
        let gold = vec![ana_record(&[("bhāvayet", "bhū", "opt. [10] ac. sg. 3")])];
        let pred = vec![pairs(&[("bhū", "ca. opt. ac. sg. 3")])];
        let e = error_report(&pred, &gold, Task::T2).unwrap();
        assert!(e[0].category.is_tag_only());
    }

    #[test]
    fn correct_item_has_no_entry() {
        let gold = vec![ana_record(&[("atra", "atra", "adv.")])];
        let pred = vec![pairs(&[("atra", "adv.")])];
        assert!(error_report(&pred, &gold, Task::T2).unwrap().is_empty());
    }

    #[test]
    fn positional_pairs_and_partial_counts() {
        let gold = vec![ana_record(&[
            ("bhavati", "bhū", "pr. [1] ac. sg. 3"),
            ("ca", "ca", "conj."),
            ("atra", "atra", "adv."),
            ("saH", "tad", "m. sg. nom."),
        ])];
        let pred = vec![pairs(&[
            ("bhū", "pr. [1] ac. sg. 3"),
            ("cam", "conj."),
            ("atra", "conj."),
            ("sa", "n. sg. nom."),
        ])];
        let r = score_strict(&pred, &gold, Task::T2).unwrap();
        let p = r.partial.unwrap();
        assert_eq!(p, PartialCounts { full_correct: 1, stem_only_wrong: 1, tag_only_wrong: 1, both_wrong: 1 });
        assert_eq!(r.matched, 1.0);
        let c = score(&pred, &gold, Task::T2, ScoreOptions { mode: ScoreMode::Counter, symmetric: false }).unwrap();
        // the tag-only error earns its character overlap: "conj." vs "adv." share "." only
        assert!((c.matched - (1.0 + 1.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn short_prediction_counts_missing_items() {
        let gold = vec![ana_record(&[("ca", "ca", "conj."), ("atra", "atra", "adv.")])];
        let pred = vec![pairs(&[("ca", "conj.")])];
        let r = score_strict(&pred, &gold, Task::T2).unwrap();
        assert_eq!(r.partial.unwrap().total(), 2);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
    }

    #[test]
    fn joint_triples_are_multisets() {
        let gold = vec![ana_record(&[("ca", "ca", "conj."), ("atra", "atra", "adv.")])];
        let pred = vec![Prediction::Triples(vec![
            Analysis::new("atra", "atra", "adv."),
            Analysis::new("ca", "ca", "conj."),
        ])];
        let r = score_strict(&pred, &gold, Task::T3).unwrap();
        assert_eq!(r.f1, 1.0);
        let wrong = vec![Prediction::Triples(vec![Analysis::new("caatra", "caatra", "adv.")])];
        let e = error_report(&wrong, &gold, Task::T3).unwrap();
        assert_eq!(e[0].category, ErrorCategory::Undersplit);
    }

    #[test]
    fn length_and_shape_errors() {
        let gold = vec![seg_record(&["a"])];
        assert_eq!(
            score_strict(&[], &gold, Task::T1).unwrap_err(),
            EvalError::LengthMismatch { pred: 0, gold: 1 }
        );
        assert!(matches!(
            score_strict(&[pairs(&[("a", "b")])], &gold, Task::T1),
            Err(EvalError::WrongShape { .. })
        ));
        assert!(matches!(
            score_strict(&[pairs(&[("a", "b")])], &gold, Task::T2),
            Err(EvalError::MissingAnalyses { .. })
        ));
    }

    #[test]
    fn strata_are_scored_separately() {
        let mut a = seg_record(&["x", "y"]);
        a.strata = vec!["oov".into()];
        let b = seg_record(&["z"]);
        let pred = vec![Prediction::Words(words(&["xy"])), Prediction::Words(words(&["z"]))];
        let r = score_strict(&pred, &[a, b], Task::T1).unwrap();
        assert_eq!(r.strata["oov"].f1, 0.0);
        assert_eq!(r.strata["oov"].sentences, 1);
        assert!(r.to_table().contains("oov"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let gold = vec![ana_record(&[("ca", "ca", "conj.")])];
        let pred = vec![pairs(&[("ca", "adv.")])];
        let r = score_strict(&pred, &gold, Task::T2).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ScoreReport>(&json).unwrap(), r);
    }

    #[test]
    fn empty_prediction_list_is_accepted_for_analyses() {
        let gold = vec![ana_record(&[("ca", "ca", "conj.")])];
        let pred: Vec<Prediction> = serde_json::from_str("[[]]").unwrap();
        assert_eq!(score_strict(&pred, &gold, Task::T2).unwrap().recall, 0.0);
        assert_eq!(score_strict(&pred, &gold, Task::T3).unwrap().recall, 0.0);
    }

    fn small_word() -> impl Strategy<Value = String> {
        "[a-d]{1,3}"
    }

    fn tag() -> impl Strategy<Value = String> {
        "[a-c. \\[\\]0-9]{0,12}"
    }

    proptest! {
        #[test]
        fn counter_is_one_on_itself(s in tag()) {
            prop_assert_eq!(score_counter(&s, &s), 1.0);
            prop_assert_eq!(score_counter_sym(&s, &s), 1.0);
        }

        #[test]
        fn counter_ignores_character_order(s in tag(), g in tag(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut chars: Vec<char> = s.chars().collect();
            chars.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: String = chars.into_iter().collect();
            prop_assert_eq!(score_counter(&s, &g), score_counter(&shuffled, &g));
            let v = score_counter(&s, &g);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn equal_sizes_give_equal_precision_and_recall(
            sents in prop::collection::vec((prop::collection::vec(small_word(), 1..5), any::<u64>()), 1..6)
        ) {
            use rand::{Rng, SeedableRng};
            let mut gold = Vec::new();
            let mut pred = Vec::new();
            for (ws, seed) in sents {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let p: Vec<String> = ws.iter().map(|w| if rng.gen_bool(0.3) { format!("{w}z") } else { w.clone() }).collect();
                gold.push(SentenceRecord::new(ws.join(" "), ws));
                pred.push(Prediction::Words(p));
            }
            let r = score_strict(&pred, &gold, Task::T1).unwrap();
            prop_assert_eq!(r.precision, r.recall);
            prop_assert!((r.f1 - f1(r.precision, r.recall)).abs() < 1e-12);
        }

        #[test]
        fn partial_counts_cover_every_item(
            items in prop::collection::vec((small_word(), small_word(), tag(), any::<bool>(), any::<bool>()), 1..8),
            drop in 0usize..3,
        ) {
            let gold_items: Vec<Analysis> = items.iter().map(|(w, s, t, _, _)| Analysis::new(w.clone(), s.clone(), t.as_str())).collect();
            let pred_items: Vec<(String, MorphTag)> = items
                .iter()
                .map(|(_, s, t, bad_stem, bad_tag)| {
                    let stem = if *bad_stem { format!("{s}x") } else { s.clone() };
                    let tag = if *bad_tag { format!("{t} q") } else { t.clone() };
                    (stem, MorphTag::new(&tag))
                })
                .take(items.len().saturating_sub(drop))
                .collect();
            let words: Vec<String> = gold_items.iter().map(|a| a.word.clone()).collect();
            let gold = vec![SentenceRecord::new(words.join(" "), words).with_analyses(gold_items)];
            let r = score_strict(&[Prediction::Pairs(pred_items)], &gold, Task::T2).unwrap();
            prop_assert_eq!(r.partial.unwrap().total(), r.gold_items);
        }
    }
}
