use rand::Rng;

use super::{Graph, ParamId, ParamStore, Scalar, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub pad: Option<usize>,
}

impl Embedding {
    /// Uniform init in ±1 except the PAD row, which starts at zero.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        pad: Option<usize>,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let table = store.uniform_bound(name, &[vocab, dim], 1.0, rng)?;
        if let Some(p) = pad {
            if p < vocab {
                store.get_mut(table).data_mut()[p * dim..(p + 1) * dim]
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
            }
        }
        Ok(Embedding { table, pad })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var, TensorError> {
        let t = g.param(self.table);
        g.embed(t, ids, self.pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Linear {
            w: store.uniform(&format!("{name}.w"), &[input, output], input, rng)?,
            b: store.uniform(&format!("{name}.b"), &[output], input, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub width: usize,
}

impl Conv1d {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let fan_in = width * input;
        Ok(Conv1d {
            w: store.uniform(&format!("{name}.w"), &[width, input, output], fan_in, rng)?,
            b: store.uniform(&format!("{name}.b"), &[output], fan_in, rng)?,
            width,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv1d_same(x, w, Some(b))
    }
}

/// `x + relu(conv(x))` with a same-width convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualBlock {
    pub conv: Conv1d,
}

impl ResidualBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(ResidualBlock {
            conv: Conv1d::new(store, name, width, channels, channels, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        let c = self.conv.forward(g, x)?;
        let r = g.relu(c);
        g.add(x, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmDirection {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(LstmDirection {
            w_ih: store.uniform(&format!("{name}.w_ih"), &[input, 4 * hidden], hidden, rng)?,
            w_hh: store.uniform(&format!("{name}.w_hh"), &[hidden, 4 * hidden], hidden, rng)?,
            b: store.uniform(&format!("{name}.b"), &[4 * hidden], hidden, rng)?,
            hidden,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, reverse: bool) -> Result<Var, TensorError> {
        let (wi, wh, b) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.b));
        g.lstm(x, wi, wh, b, reverse)
    }
}

/// Stacked bidirectional LSTM. With `residual` set, a layer whose input width
/// equals its output width adds its input to its output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiLstm {
    pub layers: Vec<(LstmDirection, LstmDirection)>,
    pub residual: bool,
}

impl BiLstm {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden_per_dir: usize,
        layers: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let mut out = Vec::with_capacity(layers);
        let mut width = input;
        for l in 0..layers {
            let fwd = LstmDirection::new(store, &format!("{name}.{l}.fwd"), width, hidden_per_dir, rng)?;
            let bwd = LstmDirection::new(store, &format!("{name}.{l}.bwd"), width, hidden_per_dir, rng)?;
            out.push((fwd, bwd));
            width = 2 * hidden_per_dir;
        }
        Ok(BiLstm { layers: out, residual })
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(|(f, _)| 2 * f.hidden)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var, TensorError> {
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(g, x, false)?;
            let b = bwd.forward(g, x, true)?;
            let mut out = g.concat_cols(&[f, b])?;
            if self.residual && g.shape(x) == g.shape(out) {
                out = g.add(out, x)?;
            }
            x = out;
        }
        Ok(x)
    }
}
