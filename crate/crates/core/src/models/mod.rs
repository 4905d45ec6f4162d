//! The three task models: segmenter (T1), analyzer (T2) and the joint
//! segment-then-analyse pipeline (T3), with training, decoding and
//! checkpoints.

mod checkpoint;
mod nets;
mod train;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Analysis, SentenceRecord};
use crate::editrules::{self, EditLabelSequence, EditRule, EditRuleError, EditRuleVocab, TokenSpan};
use crate::neuralcore::{ConfigError, Graph, ModelConfig, ParamStore, Scalar, Tensor, TensorError, Var};
use crate::stemrules::{self, MorphTag, StemRule, StemRuleVocab};
use crate::translit::TranslitTable;
use crate::Task;

pub use checkpoint::{CheckpointHeader, StemVocabFile, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, train_model, TrainError, TrainLog, TrainOptions, Trained};

use nets::{AnalyzerNet, Dropout, JointNet, SegmenterNet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    EditRules(#[from] EditRuleError),
    #[error("no usable training sentences")]
    NoTrainingData,
    #[error("{task} model cannot {what}")]
    WrongTask { task: Task, what: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;

/// Character inventory with PAD at id 0 and UNK at id 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl From<Vec<char>> for CharVocab {
    fn from(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharVocab { chars, index }
    }
}

impl From<CharVocab> for Vec<char> {
    fn from(v: CharVocab) -> Self {
        v.chars
    }
}

impl CharVocab {
    /// Sorted set of all characters in `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        set.sort_unstable();
        set.dedup();
        CharVocab::from(set)
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }
}

/// Model output for one sentence, shaped after the task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    /// T1: the words.
    Words(Vec<String>),
    /// T2: (stem, tag) per given word.
    Pairs(Vec<(String, MorphTag)>),
    /// T3: (word, stem, tag) triples.
    Triples(Vec<Analysis>),
}

/// Everything the joint model produces for one sentence.
#[derive(Debug, Clone)]
pub struct JointOutput {
    pub rule_logits: Tensor<f32>,
    pub labels: EditLabelSequence,
    pub words: Vec<String>,
    pub spans: Vec<TokenSpan>,
    pub stem_logits: Option<Tensor<f32>>,
    pub tag_logits: Option<Tensor<f32>>,
}

#[derive(Debug, Clone)]
enum Net {
    Seg(SegmenterNet),
    Ana(AnalyzerNet),
    Joint(JointNet),
}

/// A trained or freshly initialised model together with its vocabularies.
#[derive(Debug, Clone)]
pub struct Model {
    task: Task,
    config: ModelConfig,
    translit: Option<TranslitTable>,
    chars: CharVocab,
    edit_vocab: Option<EditRuleVocab>,
    stem_vocab: Option<StemRuleVocab>,
    params: ParamStore<f32>,
    net: Net,
}

/// A sentence converted to ids and targets.
#[derive(Debug, Clone)]
pub(crate) enum Example {
    Seg {
        ids: Vec<usize>,
        labels: Vec<usize>,
    },
    Ana {
        words: Vec<Vec<usize>>,
        rules: Vec<usize>,
        tags: Option<Vec<usize>>,
    },
    Joint {
        text: String,
        ids: Vec<usize>,
        labels: Vec<usize>,
        spans: Vec<(usize, usize)>,
        rules: Vec<usize>,
        tags: Vec<usize>,
    },
}

/// Per-head target counts, used to normalise losses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Counts {
    pub seg: usize,
    pub stem: usize,
    pub tag: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.seg += o.seg;
        self.stem += o.stem;
        self.tag += o.tag;
    }
}

impl Example {
    fn counts(&self) -> Counts {
        let nonpad = |v: &[usize]| v.iter().filter(|&&t| t != 0).count();
        match self {
            Example::Seg { labels, .. } => Counts {
                seg: nonpad(labels),
                ..Counts::default()
            },
            Example::Ana { rules, tags, .. } => Counts {
                stem: nonpad(rules),
                tag: tags.as_deref().map_or(0, nonpad),
                ..Counts::default()
            },
            Example::Joint { labels, rules, tags, .. } => Counts {
                seg: nonpad(labels),
                stem: nonpad(rules),
                tag: nonpad(tags),
            },
        }
    }
}

pub(crate) fn argmax<S: PartialOrd + Copy>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax per row (ties to the lowest id); PAD and UNK decode to COPY.
pub fn decode_edit_labels(logits: &Tensor<f32>, vocab: &EditRuleVocab) -> EditLabelSequence {
    let ids: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
    vocab.decode(&ids)
}

/// Source-character span of every word that `apply_labels` produces.
pub fn labels_to_spans(source: &str, labels: &[EditRule]) -> Result<Vec<TokenSpan>, EditRuleError> {
    editrules::spans_from_labels(source, labels)
}

/// Stem for `word` from the best applicable rule under `scores`, or the word
/// itself when no rule applies.
pub fn choose_stem<'v, S: PartialOrd + Copy>(
    vocab: &'v StemRuleVocab,
    word: &str,
    scores: &[S],
) -> (String, Option<&'v StemRule>) {
    match vocab.best_applicable(word, scores) {
        Some(rule) => (stemrules::apply(rule, word).unwrap_or_else(|| word.to_string()), Some(rule)),
        None => (word.to_string(), None),
    }
}

fn nonempty_ids(chars: &CharVocab, word: &str) -> Vec<usize> {
    let ids = chars.encode(word);
    if ids.is_empty() {
        vec![CHAR_UNK]
    } else {
        ids
    }
}

type Segmented<'a> = (Tensor<f32>, EditLabelSequence, Vec<String>, Var, Graph<'a, f32>);

impl Model {
    /// Builds vocabularies from `records` and initialises the network from
    /// `config.seed`.
    pub fn new(task: Task, config: ModelConfig, records: &[SentenceRecord]) -> Result<Model, ModelError> {
        let translit = config.transliteration.then(TranslitTable::builtin);
        Model::build(task, config, translit, records)
    }

    /// Like [`Model::new`] with a custom table in place of the built-in one.
    /// The table is ignored when `config.transliteration` is off.
    pub fn with_translit(
        task: Task,
        config: ModelConfig,
        table: TranslitTable,
        records: &[SentenceRecord],
    ) -> Result<Model, ModelError> {
        let translit = config.transliteration.then_some(table);
        Model::build(task, config, translit, records)
    }

    fn build(
        task: Task,
        config: ModelConfig,
        translit: Option<TranslitTable>,
        records: &[SentenceRecord],
    ) -> Result<Model, ModelError> {
        config.validate()?;
        let prepared: Vec<SentenceRecord> = match &translit {
            Some(t) => records.iter().map(|r| r.map_text(|s| t.to_internal(s))).collect(),
            None => records.to_vec(),
        };
        let mut texts: Vec<&str> = Vec::new();
        for r in &prepared {
            texts.push(&r.sandhied);
            texts.extend(r.segmentation.iter().map(String::as_str));
        }
        let chars = CharVocab::build(texts);
        let edit_vocab = match task {
            Task::T1 | Task::T3 => Some(editrules::collect_rules(&prepared, 1)),
            Task::T2 => None,
        };
        let stem_vocab = match task {
            Task::T1 => None,
            Task::T2 => Some(stemrules::collect(&prepared, config.rule_cutoff, config.joint_tag_rules)),
            Task::T3 => Some(stemrules::collect(&prepared, config.rule_cutoff, false)),
        };
        Model::from_parts(task, config, translit, chars, edit_vocab, stem_vocab)
    }

    pub(crate) fn from_parts(
        task: Task,
        config: ModelConfig,
        translit: Option<TranslitTable>,
        chars: CharVocab,
        edit_vocab: Option<EditRuleVocab>,
        stem_vocab: Option<StemRuleVocab>,
    ) -> Result<Model, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let missing = |what| ModelError::Checkpoint(format!("{task} model needs a {what} vocabulary"));
        let net = match task {
            Task::T1 => {
                let ev = edit_vocab.as_ref().ok_or_else(|| missing("edit rule"))?;
                Net::Seg(SegmenterNet::new(&mut params, "seg", chars.len(), ev.len(), &config, &mut rng)?)
            }
            Task::T2 => {
                let sv = stem_vocab.as_ref().ok_or_else(|| missing("stem rule"))?;
                let tags = (!sv.joint_tags).then(|| sv.tags.len());
                Net::Ana(AnalyzerNet::new(&mut params, "ana", chars.len(), sv.len(), tags, &config, &mut rng)?)
            }
            Task::T3 => {
                let ev = edit_vocab.as_ref().ok_or_else(|| missing("edit rule"))?;
                let sv = stem_vocab.as_ref().ok_or_else(|| missing("stem rule"))?;
                Net::Joint(JointNet::new(
                    &mut params,
                    chars.len(),
                    ev.len(),
                    sv.len(),
                    sv.tags.len(),
                    &config,
                    &mut rng,
                )?)
            }
        };
        Ok(Model {
            task,
            config,
            translit,
            chars,
            edit_vocab,
            stem_vocab,
            params,
            net,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn chars(&self) -> &CharVocab {
        &self.chars
    }

    pub fn translit(&self) -> Option<&TranslitTable> {
        self.translit.as_ref()
    }

    pub fn edit_vocab(&self) -> Option<&EditRuleVocab> {
        self.edit_vocab.as_ref()
    }

    pub fn stem_vocab(&self) -> Option<&StemRuleVocab> {
        self.stem_vocab.as_ref()
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }


    fn to_model(&self, s: &str) -> String {
        match &self.translit {
            Some(t) => t.to_internal(s),
            None => s.to_string(),
        }
    }

    fn to_output(&self, s: &str) -> String {
        match &self.translit {
            Some(t) => t.to_iast(s),
            None => s.to_string(),
        }
    }

    /// Converts a record into ids and targets, or `None` if it cannot be used
    /// for this task.
    pub(crate) fn prepare(&self, record: &SentenceRecord) -> Option<Example> {
        let r = record.map_text(|s| self.to_model(s));
        match self.task {
            Task::T1 => {
                let ev = self.edit_vocab.as_ref()?;
                let labels = editrules::record_labels(&r).ok()?;
                if labels.is_empty() {
                    return None;
                }
                Some(Example::Seg {
                    ids: self.chars.encode(&r.sandhied),
                    labels: ev.encode(&labels),
                })
            }
            Task::T2 => {
                let sv = self.stem_vocab.as_ref()?;
                let analyses = r.analyses.as_ref().filter(|a| !a.is_empty())?;
                Some(Example::Ana {
                    words: analyses.iter().map(|a| nonempty_ids(&self.chars, &a.word)).collect(),
                    rules: analyses.iter().map(|a| sv.target(&a.word, &a.stem, &a.tag)).collect(),
                    tags: (!sv.joint_tags).then(|| analyses.iter().map(|a| sv.tags.id(&a.tag)).collect()),
                })
            }
            Task::T3 => {
                let ev = self.edit_vocab.as_ref()?;
                let sv = self.stem_vocab.as_ref()?;
                let analyses = r.analyses.as_ref().filter(|a| !a.is_empty())?;
                let labels = editrules::record_labels(&r).ok()?;
                let spans = labels_to_spans(&r.sandhied, &labels).ok()?;
                if spans.len() != analyses.len() {
                    return None;
                }
                Some(Example::Joint {
                    text: r.sandhied.clone(),
                    ids: self.chars.encode(&r.sandhied),
                    labels: ev.encode(&labels),
                    spans: spans.iter().map(|s| (s.i, s.j)).collect(),
                    rules: analyses.iter().map(|a| sv.target(&a.word, &a.stem, &a.tag)).collect(),
                    tags: analyses.iter().map(|a| sv.tags.id(&a.tag)).collect(),
                })
            }
        }
    }

    /// Builds the loss of one example on `g`: each head's summed
    /// cross-entropy divided by the batch-wide count for that head.
    pub(crate) fn example_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ex: &Example,
        totals: Counts,
        drop: &mut Dropout<'_>,
    ) -> Result<Var, ModelError> {
        let scale = |n: usize| T::one() / T::of(n.max(1) as f64);
        let mut terms = Vec::new();
        match (&self.net, ex) {
            (Net::Seg(net), Example::Seg { ids, labels }) => {
                let h = net.encode(g, ids, drop)?;
                let logits = net.classify(g, h)?;
                terms.push(g.cross_entropy(logits, labels, Some(0), scale(totals.seg))?.0);
            }
            (Net::Ana(net), Example::Ana { words, rules, tags }) => {
                let (stem, tag) = net.forward(g, words, drop)?;
                terms.push(g.cross_entropy(stem, rules, Some(0), scale(totals.stem))?.0);
                if let (Some(tag), Some(targets)) = (tag, tags) {
                    terms.push(g.cross_entropy(tag, targets, Some(0), scale(totals.tag))?.0);
                }
            }
            (
                Net::Joint(net),
                Example::Joint {
                    text,
                    ids,
                    labels,
                    spans,
                    rules,
                    tags,
                },
            ) => {
                let h = net.seg.encode(g, ids, drop)?;
                let logits = net.seg.classify(g, h)?;
                terms.push(g.cross_entropy(logits, labels, Some(0), scale(totals.seg))?.0);
                let spans = match self.config.span_source {
                    crate::SpanSource::Gold => spans.clone(),
                    crate::SpanSource::Predicted => self
                        .predicted_spans(text, g.value(logits), g.shape(logits)[1])
                        .filter(|p| p.len() == spans.len())
                        .unwrap_or_else(|| spans.clone()),
                };
                let (stem, tag) = net.heads(g, h, &spans)?;
                terms.push(g.cross_entropy(stem, rules, Some(0), scale(totals.stem))?.0);
                terms.push(g.cross_entropy(tag, tags, Some(0), scale(totals.tag))?.0);
            }
            _ => return Err(ModelError::WrongTask {
                task: self.task,
                what: "train on this example",
            }),
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        Ok(total)
    }

    /// Spans implied by the argmax of `logits` (row-major, `width` columns).
    fn predicted_spans<T: Scalar>(&self, text: &str, logits: &[T], width: usize) -> Option<Vec<(usize, usize)>> {
        let ev = self.edit_vocab.as_ref()?;
        let ids: Vec<usize> = logits.chunks(width).map(argmax).collect();
        let labels = ev.decode(&ids);
        let spans = labels_to_spans(text, &labels).ok()?;
        Some(spans.iter().map(|s| (s.i, s.j)).collect())
    }

    /// Rule logits, decoded labels and words, plus the encoder output and its
    /// graph for the joint heads.
    fn segment_internal(&self, internal: &str) -> Result<Segmented<'_>, ModelError> {
        let ev = self.edit_vocab.as_ref().ok_or(ModelError::WrongTask {
            task: self.task,
            what: "segment",
        })?;
        let seg = match &self.net {
            Net::Seg(n) => n,
            Net::Joint(j) => &j.seg,
            Net::Ana(_) => {
                return Err(ModelError::WrongTask {
                    task: self.task,
                    what: "segment",
                })
            }
        };
        let ids = self.chars.encode(internal);
        let mut g = Graph::new(&self.params);
        let h = seg.encode(&mut g, &ids, &mut Dropout::eval())?;
        let logits = seg.classify(&mut g, h)?;
        let logits = g.tensor(logits);
        let labels = decode_edit_labels(&logits, ev);
        let words = editrules::apply_labels(internal, &labels)?;
        Ok((logits, labels, words, h, g))
    }

    /// Per-character logits over the edit-rule vocabulary, `[L×|rules|]`.
    pub fn segmenter_forward(&self, sandhied: &str) -> Result<Tensor<f32>, ModelError> {
        let internal = self.to_model(sandhied);
        if internal.is_empty() {
            let width = self.edit_vocab.as_ref().map_or(0, EditRuleVocab::len);
            return Ok(Tensor::zeros(&[0, width]));
        }
        Ok(self.segment_internal(&internal)?.0)
    }

    /// Splits a sandhied sentence into words.
    pub fn segment(&self, sandhied: &str) -> Result<Vec<String>, ModelError> {
        let internal = self.to_model(sandhied);
        if internal.is_empty() {
            return Ok(Vec::new());
        }
        let (_, _, words, _, _) = self.segment_internal(&internal)?;
        Ok(words.iter().map(|w| self.to_output(w)).collect())
    }

    /// Stem-rule logits `[T×|rules|]` and tag logits `[T×|tags|]` (absent when
    /// tags are part of the rules).
    pub fn analyzer_forward(&self, words: &[String]) -> Result<(Tensor<f32>, Option<Tensor<f32>>), ModelError> {
        let Net::Ana(net) = &self.net else {
            return Err(ModelError::WrongTask {
                task: self.task,
                what: "analyse given words",
            });
        };
        if words.is_empty() {
            return Ok((Tensor::zeros(&[0, 0]), None));
        }
        let ids: Vec<Vec<usize>> = words.iter().map(|w| nonempty_ids(&self.chars, &self.to_model(w))).collect();
        let mut g = Graph::new(&self.params);
        let (stem, tag) = net.forward(&mut g, &ids, &mut Dropout::eval())?;
        Ok((g.tensor(stem), tag.map(|t| g.tensor(t))))
    }

    fn decode_analyses(
        &self,
        internal_words: &[String],
        stem_logits: &Tensor<f32>,
        tag_logits: Option<&Tensor<f32>>,
    ) -> Vec<(String, MorphTag)> {
        let sv = self.stem_vocab.as_ref().expect("analysis model has a stem vocabulary");
        internal_words
            .iter()
            .enumerate()
            .map(|(t, word)| {
                let scores = stem_logits.row(t);
                let (stem, rule) = choose_stem(sv, word, scores);
                let tag = if sv.joint_tags {
                    rule.or_else(|| sv.rule(argmax(scores)))
                        .and_then(|r| r.tag.clone())
                        .unwrap_or_else(|| MorphTag::new(""))
                } else {
                    tag_logits
                        .and_then(|tl| {
                            let row = tl.row(t);
                            let best = 2 + argmax(row.get(2..).unwrap_or(&[]));
                            sv.tags.tag(best).cloned()
                        })
                        .unwrap_or_else(|| MorphTag::new(""))
                };
                (self.to_output(&stem), tag)
            })
            .collect()
    }

    /// (stem, tag) for every word of an already segmented sentence.
    pub fn analyze(&self, words: &[String]) -> Result<Vec<(String, MorphTag)>, ModelError> {
        let (stem, tag) = self.analyzer_forward(words)?;
        let internal: Vec<String> = words.iter().map(|w| self.to_model(w)).collect();
        Ok(self.decode_analyses(&internal, &stem, tag.as_ref()))
    }

    /// Segmentation and analysis of a sandhied sentence in one pass.
    pub fn joint_forward(&self, sandhied: &str) -> Result<JointOutput, ModelError> {
        let Net::Joint(net) = &self.net else {
            return Err(ModelError::WrongTask {
                task: self.task,
                what: "run the joint pipeline",
            });
        };
        let internal = self.to_model(sandhied);
        if internal.is_empty() {
            return Ok(JointOutput {
                rule_logits: Tensor::zeros(&[0, self.edit_vocab.as_ref().map_or(0, EditRuleVocab::len)]),
                labels: EditLabelSequence(Vec::new()),
                words: Vec::new(),
                spans: Vec::new(),
                stem_logits: None,
                tag_logits: None,
            });
        }
        let (rule_logits, labels, words, h, mut g) = self.segment_internal(&internal)?;
        let spans = labels_to_spans(&internal, &labels)?;
        let (stem_logits, tag_logits) = if spans.is_empty() {
            (None, None)
        } else {
            let pairs: Vec<(usize, usize)> = spans.iter().map(|s| (s.i, s.j)).collect();
            let (s, t) = net.heads(&mut g, h, &pairs)?;
            (Some(g.tensor(s)), Some(g.tensor(t)))
        };
        Ok(JointOutput {
            rule_logits,
            labels,
            words,
            spans,
            stem_logits,
            tag_logits,
        })
    }

    /// (word, stem, tag) triples for a sandhied sentence.
    pub fn joint(&self, sandhied: &str) -> Result<Vec<Analysis>, ModelError> {
        let out = self.joint_forward(sandhied)?;
        let Some(stem_logits) = &out.stem_logits else {
            return Ok(Vec::new());
        };
        let pairs = self.decode_analyses(&out.words, stem_logits, out.tag_logits.as_ref());
        Ok(out
            .words
            .iter()
            .zip(pairs)
            .map(|(w, (stem, tag))| Analysis {
                word: self.to_output(w),
                stem,
                tag,
            })
            .collect())
    }

    /// Runs the task's prediction on a dataset record. T2 reads the gold
    /// segmentation; T1 and T3 read only the sandhied text.
    pub fn predict(&self, record: &SentenceRecord) -> Result<Prediction, ModelError> {
        Ok(match self.task {
            Task::T1 => Prediction::Words(self.segment(&record.sandhied)?),
            Task::T2 => Prediction::Pairs(self.analyze(&record.segmentation)?),
            Task::T3 => Prediction::Triples(self.joint(&record.sandhied)?),
        })
    }

    /// Mean per-head loss over `records` without dropout (sum of the head
    /// means for multi-head tasks).
    pub fn eval_loss(&self, records: &[SentenceRecord]) -> Result<f64, ModelError> {
        let examples: Vec<Example> = records.iter().filter_map(|r| self.prepare(r)).collect();
        if examples.is_empty() {
            return Err(ModelError::NoTrainingData);
        }
        self.loss_over(&examples.iter().collect::<Vec<_>>())
    }
}
