//! A small built-in lexicon and sandhi table for synthetic corpora.
//!
//! The forms are Sanskrit-flavoured but simplified: every surface form maps
//! to exactly one (stem, tag) pair and every boundary fusion is invertible.

use super::{LexiconEntry, Paradigm, SandhiRule};

fn masculine_a() -> Paradigm {
    Paradigm::new(
        "masc-a",
        &[
            ("a", "aḥ", "m. sg. nom."),
            ("a", "am", "m. sg. acc."),
            ("a", "ena", "m. sg. i."),
            ("a", "āya", "m. sg. dat."),
            ("a", "asya", "m. sg. g."),
        ],
    )
}

fn feminine_aa() -> Paradigm {
    Paradigm::new(
        "fem-ā",
        &[
            ("ā", "ā", "f. sg. nom."),
            ("ā", "ām", "f. sg. acc."),
            ("ā", "ayā", "f. sg. i."),
            ("ā", "āyai", "f. sg. dat."),
        ],
    )
}

fn thematic_verb() -> Paradigm {
    Paradigm::new(
        "verb-1",
        &[
            ("", "ati", "pr. [1] ac. sg. 3"),
            ("", "anti", "pr. [1] ac. pl. 3"),
            ("", "āmi", "pr. [1] ac. sg. 1"),
            ("", "et", "opt. [1] ac. sg. 3"),
        ],
    )
}

fn indeclinable(tag: &str) -> Paradigm {
    Paradigm::new(format!("indecl-{tag}"), &[("", "", tag)])
}

const MASCULINE: &[&str] = &[
    "deva", "rāma", "putra", "vṛkṣa", "gaja", "loka", "megha", "hasta", "grāma", "mārga",
];
const FEMININE: &[&str] = &["senā", "kanyā", "latā", "mālā", "vidyā", "śālā", "bālā", "guhā"];
const VERBS: &[&str] = &["vad", "pat", "car", "likh", "khād", "paṭh", "vas", "jīv", "nind", "rakṣ"];
const INDECLINABLES: &[(&str, &str)] = &[
    ("ca", "conj."),
    ("uta", "conj."),
    ("atra", "adv."),
    ("tatra", "adv."),
    ("iha", "adv."),
    ("iti", "part."),
    ("eva", "part."),
    ("api", "part."),
];

/// 36 stems over four paradigm families.
pub fn lexicon() -> Vec<LexiconEntry> {
    let mut out = Vec::new();
    let groups: [(&[&str], fn() -> Paradigm); 3] = [
        (MASCULINE, masculine_a),
        (FEMININE, feminine_aa),
        (VERBS, thematic_verb),
    ];
    for (stems, paradigm) in groups {
        for stem in stems {
            out.push(LexiconEntry {
                stem: stem.to_string(),
                paradigm: paradigm(),
            });
        }
    }
    for (stem, tag) in INDECLINABLES {
        out.push(LexiconEntry {
            stem: stem.to_string(),
            paradigm: indeclinable(tag),
        });
    }
    out
}

/// Six vowel/consonant fusions plus one bare concatenation (which only
/// removes the space and so yields an insert-space label).
pub fn sandhi_table() -> Vec<SandhiRule> {
    vec![
        SandhiRule::new("a", "a", "ā"),
        SandhiRule::new("a", "i", "e"),
        SandhiRule::new("a", "u", "o"),
        SandhiRule::new("i", "a", "ya"),
        SandhiRule::new("m", "c", "ṃc"),
        SandhiRule::new("t", "c", "cc"),
        SandhiRule::new("m", "t", "mt"),
    ]
}
