//! Network definitions. Parameters are created in a fixed order from the
//! config and vocabulary sizes, so a network can be rebuilt exactly when a
//! checkpoint is loaded.

use rand_chacha::ChaCha8Rng;

use crate::neuralcore::{
    BiLstm, Char2Token, Conv1d, Embedding, Graph, Linear, LstmDirection, ModelConfig, ParamStore,
    ResidualBlock, Scalar, TensorError, Var,
};

pub(crate) const SEG_WIDTHS: std::ops::RangeInclusive<usize> = 2..=8;
pub(crate) const TOKEN_WIDTHS: std::ops::RangeInclusive<usize> = 2..=6;

/// Dropout state: `Some` while training.
pub(crate) struct Dropout<'a> {
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub p: f64,
}

impl Dropout<'_> {
    pub fn eval() -> Dropout<'static> {
        Dropout { rng: None, p: 0.0 }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Var {
        g.dropout(x, self.p, self.rng.as_deref_mut())
    }
}

/// Character convolutions of widths 2..=8, each followed by a residual
/// block, projected down to `hidden_dim` and contextualised by a two-layer
/// BiLSTM.
#[derive(Debug, Clone)]
pub(crate) struct SegmenterNet {
    emb: Embedding,
    branches: Vec<(Conv1d, ResidualBlock)>,
    proj: Linear,
    lstm: Option<BiLstm>,
    out: Linear,
}

impl SegmenterNet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        chars: usize,
        labels: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TensorError> {
        let e = cfg.embedding_dim;
        let emb = Embedding::new(store, &format!("{prefix}.emb"), chars, e, Some(0), rng)?;
        let mut branches = Vec::new();
        for k in SEG_WIDTHS {
            let conv = Conv1d::new(store, &format!("{prefix}.conv{k}"), k, e, e, rng)?;
            let res = ResidualBlock::new(store, &format!("{prefix}.res{k}"), k, e, rng)?;
            branches.push((conv, res));
        }
        let proj = Linear::new(store, &format!("{prefix}.proj"), e * branches.len(), cfg.hidden_dim, rng)?;
        let lstm = if cfg.use_lstm {
            Some(BiLstm::new(
                store,
                &format!("{prefix}.lstm"),
                cfg.hidden_dim,
                cfg.hidden_dim / 2,
                2,
                true,
                rng,
            )?)
        } else {
            None
        };
        let out = Linear::new(store, &format!("{prefix}.out"), cfg.hidden_dim, labels, rng)?;
        Ok(SegmenterNet {
            emb,
            branches,
            proj,
            lstm,
            out,
        })
    }

    /// Per-character hidden states `[L×hidden]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize], drop: &mut Dropout<'_>) -> Result<Var, TensorError> {
        let x = self.emb.forward(g, ids)?;
        let mut feats = Vec::with_capacity(self.branches.len());
        for (conv, res) in &self.branches {
            let c = conv.forward(g, x)?;
            let c = g.relu(c);
            feats.push(res.forward(g, c)?);
        }
        let cat = g.concat_cols(&feats)?;
        let h = self.proj.forward(g, cat)?;
        let mut h = drop.apply(g, h);
        if let Some(lstm) = &self.lstm {
            h = lstm.forward(g, h)?;
            h = drop.apply(g, h);
        }
        Ok(h)
    }

    pub fn classify<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Var, TensorError> {
        self.out.forward(g, h)
    }
}

#[derive(Debug, Clone)]
enum CharEncoder {
    Max(Vec<Conv1d>),
    Lstm(LstmDirection, LstmDirection),
}

/// Words are embedded from their characters, then contextualised by a
/// sentence-level BiLSTM whose input is added back to its output.
#[derive(Debug, Clone)]
pub(crate) struct AnalyzerNet {
    emb: Embedding,
    enc: CharEncoder,
    proj: Linear,
    lstm: BiLstm,
    stem: Linear,
    tag: Option<Linear>,
}

impl AnalyzerNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        chars: usize,
        rules: usize,
        tags: Option<usize>,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TensorError> {
        let e = cfg.embedding_dim;
        let emb = Embedding::new(store, &format!("{prefix}.emb"), chars, e, Some(0), rng)?;
        let (enc, width) = match cfg.char2token {
            Char2Token::Max => {
                let convs = TOKEN_WIDTHS
                    .map(|k| Conv1d::new(store, &format!("{prefix}.conv{k}"), k, e, e, rng))
                    .collect::<Result<Vec<_>, _>>()?;
                let w = e * convs.len();
                (CharEncoder::Max(convs), w)
            }
            Char2Token::Lstm => {
                let f = LstmDirection::new(store, &format!("{prefix}.chars.fwd"), e, e, rng)?;
                let b = LstmDirection::new(store, &format!("{prefix}.chars.bwd"), e, e, rng)?;
                (CharEncoder::Lstm(f, b), 2 * e)
            }
        };
        let h = cfg.hidden_dim;
        let proj = Linear::new(store, &format!("{prefix}.proj"), width, h, rng)?;
        let lstm = BiLstm::new(store, &format!("{prefix}.lstm"), h, h / 2, 1, true, rng)?;
        let stem = Linear::new(store, &format!("{prefix}.stem"), h, rules, rng)?;
        let tag = match tags {
            Some(n) => Some(Linear::new(store, &format!("{prefix}.tag"), h, n, rng)?),
            None => None,
        };
        Ok(AnalyzerNet {
            emb,
            enc,
            proj,
            lstm,
            stem,
            tag,
        })
    }

    fn token<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var, TensorError> {
        let x = self.emb.forward(g, ids)?;
        match &self.enc {
            CharEncoder::Max(convs) => {
                let mut pooled = Vec::with_capacity(convs.len());
                for conv in convs {
                    let c = conv.forward(g, x)?;
                    let c = g.relu(c);
                    pooled.push(g.max_pool_rows(c)?);
                }
                g.concat_cols(&pooled)
            }
            CharEncoder::Lstm(f, b) => {
                let fo = f.forward(g, x, false)?;
                let bo = b.forward(g, x, true)?;
                let last = g.select_rows(fo, &[ids.len() - 1])?;
                let first = g.select_rows(bo, &[0])?;
                g.concat_cols(&[last, first])
            }
        }
    }

    /// Stem-rule logits `[T×rules]` and, unless tags are carried by the rules,
    /// tag logits `[T×tags]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        words: &[Vec<usize>],
        drop: &mut Dropout<'_>,
    ) -> Result<(Var, Option<Var>), TensorError> {
        let tokens = words
            .iter()
            .map(|w| self.token(g, w))
            .collect::<Result<Vec<_>, _>>()?;
        let x = g.concat_rows(&tokens)?;
        let h = self.proj.forward(g, x)?;
        let h = drop.apply(g, h);
        let h = self.lstm.forward(g, h)?;
        let h = drop.apply(g, h);
        let stem = self.stem.forward(g, h)?;
        let tag = match &self.tag {
            Some(t) => Some(t.forward(g, h)?),
            None => None,
        };
        Ok((stem, tag))
    }
}

/// Segmenter backbone whose hidden states are max-pooled over each word span
/// and fed to separate stem-rule and tag heads.
#[derive(Debug, Clone)]
pub(crate) struct JointNet {
    pub seg: SegmenterNet,
    stem: Linear,
    tag: Linear,
}

impl JointNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        chars: usize,
        labels: usize,
        rules: usize,
        tags: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TensorError> {
        let seg = SegmenterNet::new(store, "seg", chars, labels, cfg, rng)?;
        let stem = Linear::new(store, "joint.stem", cfg.hidden_dim, rules, rng)?;
        let tag = Linear::new(store, "joint.tag", cfg.hidden_dim, tags, rng)?;
        Ok(JointNet { seg, stem, tag })
    }

    pub fn heads<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        spans: &[(usize, usize)],
    ) -> Result<(Var, Var), TensorError> {
        let pooled = g.span_max_pool(h, spans)?;
        let stem = self.stem.forward(g, pooled)?;
        let tag = self.tag.forward(g, pooled)?;
        Ok((stem, tag))
    }
}
