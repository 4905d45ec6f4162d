//! Word → stem rules from longest-common-infix alignment.
//!
//! A word and its stem are aligned on their longest common substring. What
//! precedes and follows it on either side gives the rule quadruple
//! `(prefix_word, suffix_word, prefix_stem, suffix_stem)`. Applying a rule
//! swaps the word's affixes for the stem's.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::SentenceRecord;

/// Heritage-style morphological tag, e.g. `pr. [1] ac. sg. 3`.
///
/// Tags are opaque apart from whitespace normalization; subtags are the
/// whitespace-separated units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct MorphTag {
    raw: String,
}

impl MorphTag {
    pub fn new(raw: &str) -> Self {
        MorphTag {
            raw: raw.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn subtags(&self) -> Vec<&str> {
        self.raw.split(' ').filter(|s| !s.is_empty()).collect()
    }
}

impl fmt::Display for MorphTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl From<String> for MorphTag {
    fn from(s: String) -> Self {
        MorphTag::new(&s)
    }
}

impl From<&str> for MorphTag {
    fn from(s: &str) -> Self {
        MorphTag::new(s)
    }
}

impl From<MorphTag> for String {
    fn from(t: MorphTag) -> Self {
        t.raw
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StemRule {
    pub prefix_word: String,
    pub suffix_word: String,
    pub prefix_stem: String,
    pub suffix_stem: String,
    /// Only set when tags are part of the rule identity.
    pub tag: Option<MorphTag>,
}

impl StemRule {
    pub fn identity() -> Self {
        StemRule::default()
    }

    pub fn new(pw: &str, sw: &str, ps: &str, ss: &str) -> Self {
        StemRule {
            prefix_word: pw.into(),
            suffix_word: sw.into(),
            prefix_stem: ps.into(),
            suffix_stem: ss.into(),
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: MorphTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn is_identity(&self) -> bool {
        self.prefix_word.is_empty()
            && self.suffix_word.is_empty()
            && self.prefix_stem.is_empty()
            && self.suffix_stem.is_empty()
    }
}

impl fmt::Display for StemRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}+·+{:?} → {:?}+·+{:?}",
            self.prefix_word, self.suffix_word, self.prefix_stem, self.suffix_stem
        )?;
        if let Some(t) = &self.tag {
            write!(f, " [{t}]")?;
        }
        Ok(())
    }
}

/// Longest common substring as `(start_in_word, start_in_stem, length)` in
/// characters. Ties go to the leftmost start in the word, then in the stem.
pub fn longest_common_infix(word: &str, stem: &str) -> (usize, usize, usize) {
    let w: Vec<char> = word.chars().collect();
    let s: Vec<char> = stem.chars().collect();
    // run[j + 1] = length of the common suffix of w[..=i] and s[..=j]
    let mut prev = vec![0usize; s.len() + 1];
    let mut cur = vec![0usize; s.len() + 1];
    let mut best = (0, 0, 0);
    for i in 0..w.len() {
        for j in 0..s.len() {
            cur[j + 1] = if w[i] == s[j] { prev[j] + 1 } else { 0 };
            let len = cur[j + 1];
            if len > best.2 {
                best = (i + 1 - len, j + 1 - len, len);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

fn slice(chars: &[char], from: usize, to: usize) -> String {
    chars[from..to].iter().collect()
}

pub fn extract(word: &str, stem: &str) -> StemRule {
    let (sw, ss, len) = longest_common_infix(word, stem);
    if len == 0 {
        return StemRule::new(word, "", stem, "");
    }
    let w: Vec<char> = word.chars().collect();
    let s: Vec<char> = stem.chars().collect();
    StemRule {
        prefix_word: slice(&w, 0, sw),
        suffix_word: slice(&w, sw + len, w.len()),
        prefix_stem: slice(&s, 0, ss),
        suffix_stem: slice(&s, ss + len, s.len()),
        tag: None,
    }
}

pub fn applicable(rule: &StemRule, word: &str) -> bool {
    word.starts_with(rule.prefix_word.as_str())
        && word.ends_with(rule.suffix_word.as_str())
        && word.len() >= rule.prefix_word.len() + rule.suffix_word.len()
}

/// Applies `rule`, or returns `None` when it is not applicable.
pub fn apply(rule: &StemRule, word: &str) -> Option<String> {
    if !applicable(rule, word) {
        return None;
    }
    let core = &word[rule.prefix_word.len()..word.len() - rule.suffix_word.len()];
    Some(format!("{}{core}{}", rule.prefix_stem, rule.suffix_stem))
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const SPECIALS: usize = 2;

/// Indexed set with PAD and UNK reserved at ids 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Indexed<T: Eq + std::hash::Hash + Clone> {
    items: Vec<T>,
    freqs: Vec<usize>,
    index: HashMap<T, usize>,
}

impl<T: Eq + std::hash::Hash + Clone + Ord> Indexed<T> {
    /// `pinned` items come first in the given order; the rest sort by
    /// descending frequency, then by value.
    fn build(counts: HashMap<T, usize>, pinned: &[T], cutoff: usize) -> Self {
        let mut rest: Vec<(T, usize)> = counts
            .iter()
            .filter(|(k, f)| **f >= cutoff && !pinned.contains(k))
            .map(|(k, f)| (k.clone(), *f))
            .collect();
        rest.sort_by(|(a, fa), (b, fb)| fb.cmp(fa).then_with(|| a.cmp(b)));
        let mut items: Vec<T> = pinned.to_vec();
        let mut freqs: Vec<usize> = pinned
            .iter()
            .map(|p| counts.get(p).copied().unwrap_or(0))
            .collect();
        for (k, f) in rest {
            items.push(k);
            freqs.push(f);
        }
        Self::from_parts(items, freqs)
    }

    fn from_parts(items: Vec<T>, freqs: Vec<usize>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i + SPECIALS))
            .collect();
        Indexed {
            items,
            freqs,
            index,
        }
    }

    fn id(&self, item: &T) -> usize {
        self.index.get(item).copied().unwrap_or(UNK_ID)
    }

    fn get(&self, id: usize) -> Option<&T> {
        id.checked_sub(SPECIALS).and_then(|i| self.items.get(i))
    }

    fn len(&self) -> usize {
        self.items.len() + SPECIALS
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocab(Indexed<MorphTag>);

impl TagVocab {
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a MorphTag>) -> Self {
        let mut counts = HashMap::new();
        for t in tags {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        TagVocab(Indexed::build(counts, &[], 1))
    }

    /// Total number of ids, PAD and UNK included.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.items.is_empty()
    }

    pub fn id(&self, tag: &MorphTag) -> usize {
        self.0.id(tag)
    }

    pub fn tag(&self, id: usize) -> Option<&MorphTag> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MorphTag, usize)> {
        self.0.items.iter().zip(self.0.freqs.iter().copied())
    }
}

/// Serialized stem rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemRuleEntry {
    pub pw: String,
    pub sw: String,
    pub ps: String,
    pub ss: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<MorphTag>,
    pub freq: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEntry {
    pub tag: MorphTag,
    pub freq: usize,
}

/// Stem rules and tags seen in training data. The identity rule always has
/// id 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemRuleVocab {
    rules: Indexed<StemRule>,
    pub tags: TagVocab,
    pub joint_tags: bool,
}

impl StemRuleVocab {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, rule: &StemRule) -> usize {
        self.rules.id(rule)
    }

    pub fn rule(&self, id: usize) -> Option<&StemRule> {
        self.rules.get(id)
    }

    pub fn rules(&self) -> impl Iterator<Item = (&StemRule, usize)> {
        self.rules.items.iter().zip(self.rules.freqs.iter().copied())
    }

    pub fn non_identity_count(&self) -> usize {
        self.rules.items.iter().filter(|r| !r.is_identity()).count()
    }

    /// The training target for one analysed word.
    pub fn target(&self, word: &str, stem: &str, tag: &MorphTag) -> usize {
        let mut rule = extract(word, stem);
        if self.joint_tags {
            rule.tag = Some(tag.clone());
        }
        self.id(&rule)
    }

    /// The highest-scoring rule that applies to `word`; PAD and UNK are never
    /// chosen. Equal scores go to the lower id.
    pub fn best_applicable<S: PartialOrd + Copy>(&self, word: &str, scores: &[S]) -> Option<&StemRule> {
        let mut order: Vec<usize> = (SPECIALS..scores.len().min(self.len())).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .filter_map(|id| self.rule(id))
            .find(|r| applicable(r, word))
    }

    pub fn entries(&self) -> Vec<StemRuleEntry> {
        self.rules()
            .map(|(r, freq)| StemRuleEntry {
                pw: r.prefix_word.clone(),
                sw: r.suffix_word.clone(),
                ps: r.prefix_stem.clone(),
                ss: r.suffix_stem.clone(),
                tag: r.tag.clone(),
                freq,
            })
            .collect()
    }

    pub fn tag_entries(&self) -> Vec<TagEntry> {
        self.tags
            .iter()
            .map(|(t, freq)| TagEntry {
                tag: t.clone(),
                freq,
            })
            .collect()
    }

    pub fn from_entries(
        rules: &[StemRuleEntry],
        tags: &[TagEntry],
        joint_tags: bool,
    ) -> Result<Self, String> {
        let items: Vec<StemRule> = rules
            .iter()
            .map(|e| StemRule {
                prefix_word: e.pw.clone(),
                suffix_word: e.sw.clone(),
                prefix_stem: e.ps.clone(),
                suffix_stem: e.ss.clone(),
                tag: e.tag.clone(),
            })
            .collect();
        if items.first() != Some(&StemRule::identity()) {
            return Err("first stem rule must be the untagged identity".into());
        }
        let freqs = rules.iter().map(|e| e.freq).collect();
        let rules = Indexed::from_parts(items, freqs);
        if rules.index.len() != rules.items.len() {
            return Err("duplicate stem rules".into());
        }
        let tags = Indexed::from_parts(
            tags.iter().map(|t| t.tag.clone()).collect(),
            tags.iter().map(|t| t.freq).collect(),
        );
        Ok(StemRuleVocab {
            rules,
            tags: TagVocab(tags),
            joint_tags,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StemRuleVocabRepr {
    joint_tags: bool,
    rules: Vec<StemRuleEntry>,
    tags: Vec<TagEntry>,
}

impl Serialize for StemRuleVocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StemRuleVocabRepr {
            joint_tags: self.joint_tags,
            rules: self.entries(),
            tags: self.tag_entries(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StemRuleVocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = StemRuleVocabRepr::deserialize(d)?;
        StemRuleVocab::from_entries(&r.rules, &r.tags, r.joint_tags).map_err(serde::de::Error::custom)
    }
}

/// Builds the rule and tag inventories from analysed records. Records without
/// analyses are ignored.
pub fn collect(records: &[SentenceRecord], cutoff: usize, joint_tags: bool) -> StemRuleVocab {
    let mut rule_counts: HashMap<StemRule, usize> = HashMap::new();
    let mut tag_counts: HashMap<MorphTag, usize> = HashMap::new();
    for a in records.iter().filter_map(|r| r.analyses.as_ref()).flatten() {
        let mut rule = extract(&a.word, &a.stem);
        if joint_tags {
            rule.tag = Some(a.tag.clone());
        }
        *rule_counts.entry(rule).or_default() += 1;
        *tag_counts.entry(a.tag.clone()).or_default() += 1;
    }
    StemRuleVocab {
        rules: Indexed::build(rule_counts, &[StemRule::identity()], cutoff),
        tags: TagVocab(Indexed::build(tag_counts, &[], 1)),
        joint_tags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, toy, Analysis, LexiconEntry, Paradigm};
    use proptest::prelude::*;

    #[test]
    fn infix_examples() {
        assert_eq!(longest_common_infix("saH", "tad"), (1, 1, 1));
        assert_eq!(longest_common_infix("atra", "atra"), (0, 0, 4));
        assert_eq!(longest_common_infix("bhavati", "bhū"), (0, 0, 2));
        assert_eq!(longest_common_infix("xyz", "abc"), (0, 0, 0));
    }

    #[test]
    fn infix_ties_prefer_leftmost() {
        // "ab" occurs twice in the word and twice in the stem
        assert_eq!(longest_common_infix("abxab", "yabab"), (0, 1, 2));
        assert_eq!(longest_common_infix("aa", "a"), (0, 0, 1));
    }

    #[test]
    fn extraction_examples() {
        assert_eq!(extract("saH", "tad"), StemRule::new("s", "H", "t", "d"));
        assert_eq!(extract("ca", "ca"), StemRule::identity());
        assert!(extract("ca", "ca").is_identity());
        assert_eq!(extract("bhavati", "bhū"), StemRule::new("", "avati", "", "ū"));
        assert_eq!(extract("xyz", "abc"), StemRule::new("xyz", "", "abc", ""));
    }

    #[test]
    fn applicability() {
        assert!(applicable(&StemRule::new("s", "H", "t", "d"), "saH"));
        assert!(applicable(&StemRule::identity(), "anything"));
        assert!(!applicable(&StemRule::new("", "avati", "", "ū"), "gacchati"));
        // prefix and suffix would overlap
        assert!(!applicable(&StemRule::new("ab", "ba", "", ""), "aba"));
    }

    #[test]
    fn application() {
        assert_eq!(apply(&StemRule::new("s", "H", "t", "d"), "saH").unwrap(), "tad");
        assert_eq!(apply(&StemRule::identity(), "atra").unwrap(), "atra");
        assert_eq!(apply(&StemRule::new("", "avati", "", "ū"), "bhavati").unwrap(), "bhū");
        assert_eq!(apply(&StemRule::new("", "avati", "", "ū"), "gacchati"), None);
    }

    #[test]
    fn rules_generalize_across_a_paradigm() {
        let rule = extract("devena", "deva");
        assert_eq!(apply(&rule, "rāmena").unwrap(), "rāma");
        let rule = extract("vadanti", "vad");
        assert_eq!(apply(&rule, "likhanti").unwrap(), "likh");
    }

    #[test]
    fn tag_normalization() {
        let t = MorphTag::new("  pr.  [1] ac.\tsg. 3 ");
        assert_eq!(t.as_str(), "pr. [1] ac. sg. 3");
        assert_eq!(t.subtags(), vec!["pr.", "[1]", "ac.", "sg.", "3"]);
        assert_eq!(t.subtags().join(" "), t.as_str());
    }

    fn identity_corpus() -> Vec<SentenceRecord> {
        vec![SentenceRecord::new("ca atra", vec!["ca".into(), "atra".into()]).with_analyses(vec![
            Analysis::new("ca", "ca", "conj."),
            Analysis::new("atra", "atra", "adv."),
        ])]
    }

    #[test]
    fn identity_corpus_collects_identity_only() {
        let v = collect(&identity_corpus(), 1, false);
        assert_eq!(v.len(), 3);
        assert_eq!(v.rule(2), Some(&StemRule::identity()));
        assert_eq!(v.tags.len(), 4);
        let joint = collect(&identity_corpus(), 1, true);
        // untagged identity plus one tagged identity per tag
        assert_eq!(joint.len(), 5);
        assert_eq!(joint.rules().filter(|(r, _)| r.is_identity()).count(), 3);
    }

    #[test]
    fn paradigm_with_four_endings() {
        let p = Paradigm::new(
            "p",
            &[
                ("a", "aḥ", "m. sg. nom."),
                ("a", "am", "m. sg. acc."),
                ("a", "ena", "m. sg. i."),
                ("a", "asya", "m. sg. g."),
            ],
        );
        let lexicon: Vec<LexiconEntry> = ["deva", "rāma", "gaja", "loka"]
            .iter()
            .map(|s| LexiconEntry {
                stem: s.to_string(),
                paradigm: p.clone(),
            })
            .collect();
        let corpus = synth_corpus(&lexicon, &[], 200, 2).unwrap();
        let v = collect(&corpus, 1, false);
        assert_eq!(v.non_identity_count(), 4);
        for r in &corpus {
            for a in r.analyses.as_ref().unwrap() {
                let id = v.target(&a.word, &a.stem, &a.tag);
                assert_eq!(apply(v.rule(id).unwrap(), &a.word).unwrap(), a.stem);
            }
        }
    }

    #[test]
    fn cutoff_keeps_identity() {
        let corpus = synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 50, 1).unwrap();
        let v = collect(&corpus, usize::MAX, false);
        assert_eq!(v.len(), 3);
        assert!(v.tags.len() > 2);
    }

    #[test]
    fn best_applicable_skips_inapplicable_top_choice() {
        let corpus = synth_corpus(&toy::lexicon(), &[], 300, 4).unwrap();
        let v = collect(&corpus, 1, false);
        let wrong = v.id(&extract("devena", "deva"));
        let right = v.id(&extract("vadati", "vad"));
        let mut scores = vec![0.0f32; v.len()];
        scores[wrong] = 5.0;
        scores[right] = 4.0;
        scores[UNK_ID] = 9.0;
        let best = v.best_applicable("patati", &scores).unwrap();
        assert_eq!(apply(best, "patati").unwrap(), "pat");
    }

    #[test]
    fn serde_round_trip() {
        let corpus = synth_corpus(&toy::lexicon(), &toy::sandhi_table(), 50, 1).unwrap();
        for joint in [false, true] {
            let v = collect(&corpus, 1, joint);
            let json = serde_json::to_string(&v).unwrap();
            let back: StemRuleVocab = serde_json::from_str(&json).unwrap();
            assert_eq!(back, v);
        }
        let json = serde_json::to_string(&collect(&corpus, 1, false).entries()).unwrap();
        assert!(json.starts_with(r#"[{"pw":"","sw":"","ps":"","ss":"","freq":"#));
    }

    proptest! {
        #[test]
        fn extract_then_apply_recovers_stem(word in "[aābhkt]{0,8}", stem in "[aābhkt]{0,8}") {
            let rule = extract(&word, &stem);
            prop_assert!(applicable(&rule, &word));
            prop_assert_eq!(apply(&rule, &word).unwrap(), stem);
        }
    }
}
