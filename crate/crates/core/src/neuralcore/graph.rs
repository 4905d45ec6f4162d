//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] borrows the parameter store read-only, records every operation
//! in execution order and walks the tape backwards in [`Graph::backward`].
//! Matrices are 2-D and row-major; scalars have shape `[1]`.

use rand::Rng;

use super::kernels::{axpy, gemm, gemm_a_bt, gemm_at_b, sigmoid};
use super::{ParamId, ParamStore, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Param(ParamId),
    Input,
    Embed {
        table: Var,
        ids: Vec<usize>,
        pad: Option<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Add(Var, Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    MaxPool {
        x: Var,
        // source row for every output cell
        argmax: Vec<usize>,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        reverse: bool,
        // activated gates [i|f|g|o] per step, cell state, tanh(cell)
        gates: Vec<T>,
        cell: Vec<T>,
        tanh_cell: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<T>,
        scale: T,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, n)| self.nodes[n].as_deref())
    }

    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].as_deref()
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params
            .iter()
            .filter_map(|&(p, n)| self.nodes[n].as_deref().map(|g| (p, g)))
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            0 => (1, 1),
            1 => (1, s[0]),
            _ => (s[0], s[1..].iter().product()),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("consistent node")
    }

    /// Scalar value of a `[1]`-shaped node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Input, false)
    }

    /// Input whose gradient is kept, for checks against finite differences.
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Input, true)
    }

    /// Row lookup. Ids equal to `pad` produce a zero row and no gradient.
    pub fn embed(&mut self, table: Var, ids: &[usize], pad: Option<usize>) -> Result<Var, TensorError> {
        let (v, e) = self.dims(table);
        let mut out = vec![T::zero(); ids.len() * e];
        let tv = self.value(table);
        for (r, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(TensorError::Index {
                    op: "embed",
                    index: id,
                    size: v,
                });
            }
            if Some(id) != pad {
                out[r * e..(r + 1) * e].copy_from_slice(&tv[id * e..(id + 1) * e]);
            }
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), e],
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
                pad,
            },
            needs,
        ))
    }

    /// `x·w + b` with `x[n×in]`, `w[in×out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (n, i) = self.dims(x);
        let (wi, o) = self.dims(w);
        if wi != i {
            return Err(shape_err("linear", format!("input width {i}, weight rows {wi}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(shape_err("linear", format!("bias length {} for width {o}", self.value(b).len())));
            }
        }
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv);
            }
        }
        gemm(self.value(x), self.value(w), &mut out, n, i, o);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(vec![n, o], out, Op::Linear { x, w, b }, needs))
    }

    /// Convolution over rows with zero padding that keeps the length:
    /// `(k-1)/2` rows on the left, the rest on the right. `w` is `[k×c_in×c_out]`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (l, cin) = self.dims(x);
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[0] == 0 {
            return Err(shape_err("conv1d_same", format!("filters {ws:?} for input width {cin}")));
        }
        let (k, cout) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(shape_err("conv1d_same", "bias length".into()));
            }
        }
        let mut out = vec![T::zero(); l * cout];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bv);
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        for d in 0..k {
            if let Some((t0, s0, n)) = conv_window(l, k, d) {
                gemm(
                    &xv[s0 * cin..(s0 + n) * cin],
                    &wv[d * cin * cout..(d + 1) * cin * cout],
                    &mut out[t0 * cout..(t0 + n) * cout],
                    n,
                    cin,
                    cout,
                );
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(vec![l, cout], out, Op::Conv { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(shape, out, Op::Relu(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, Op::Add(a, b), needs))
    }

    /// Inverted dropout. With `rng = None` (evaluation) or `p = 0` this is the
    /// identity and records nothing.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(shape, out, Op::Dropout { x, mask }, needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let rows = self.dims(first).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs".into()));
        };
        let cols = self.dims(first).1;
        if parts.iter().any(|&p| self.dims(p).1 != cols) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rows = out.len() / cols.max(1);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (n, c) = self.dims(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(TensorError::Index {
                    op: "select_rows",
                    index: r,
                    size: n,
                });
            }
            out.extend_from_slice(&self.value(x)[r * c..(r + 1) * c]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            vec![rows.len(), c],
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Feature-wise maximum over all rows: `[n×d]` to `[1×d]`.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.dims(x).0;
        if n == 0 {
            return Err(shape_err("max_pool_rows", "no rows".into()));
        }
        self.span_max_pool(x, &[(0, n - 1)])
    }

    /// Feature-wise maximum over the inclusive row ranges `spans`, one output
    /// row per span. Ties go to the lowest row.
    pub fn span_max_pool(&mut self, x: Var, spans: &[(usize, usize)]) -> Result<Var, TensorError> {
        let (n, d) = self.dims(x);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(spans.len() * d);
        let mut argmax = Vec::with_capacity(spans.len() * d);
        for &(i, j) in spans {
            if i > j || j >= n {
                return Err(shape_err("span_max_pool", format!("span ({i},{j}) over {n} rows")));
            }
            for c in 0..d {
                let mut best = i;
                for r in i + 1..=j {
                    if xv[r * d + c] > xv[best * d + c] {
                        best = r;
                    }
                }
                out.push(xv[best * d + c]);
                argmax.push(best);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![spans.len(), d], out, Op::MaxPool { x, argmax }, needs))
    }

    /// One LSTM direction over the rows of `x[L×D]`. `w_ih[D×4H]`,
    /// `w_hh[H×4H]`, `b[4H]`, gate order `[i|f|g|o]`. Returns `[L×H]`, rows in
    /// input order even when `reverse` is set.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Result<Var, TensorError> {
        let (l, d) = self.dims(x);
        let (wd, h4) = self.dims(w_ih);
        let (hh, hh4) = self.dims(w_hh);
        let h = hh;
        if wd != d || h4 != 4 * h || hh4 != 4 * h || self.value(b).len() != 4 * h {
            return Err(shape_err(
                "lstm",
                format!("input width {d}, w_ih {:?}, w_hh {:?}", self.shape(w_ih), self.shape(w_hh)),
            ));
        }
        let mut gates = vec![T::zero(); l * 4 * h];
        let bv = self.value(b);
        for row in gates.chunks_mut(4 * h) {
            row.copy_from_slice(bv);
        }
        gemm(self.value(x), self.value(w_ih), &mut gates, l, d, 4 * h);
        let whh = self.value(w_hh);
        let mut hs = vec![T::zero(); l * h];
        let mut cell = vec![T::zero(); l * h];
        let mut tanh_cell = vec![T::zero(); l * h];
        let mut prev: Option<usize> = None;
        for step in 0..l {
            let t = if reverse { l - 1 - step } else { step };
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            if let Some(p) = prev {
                gemm(&hs[p * h..(p + 1) * h], whh, g, 1, h, 4 * h);
            }
            for u in 0..h {
                let ig = sigmoid(g[u]);
                let fg = sigmoid(g[h + u]);
                let gg = g[2 * h + u].tanh();
                let og = sigmoid(g[3 * h + u]);
                g[u] = ig;
                g[h + u] = fg;
                g[2 * h + u] = gg;
                g[3 * h + u] = og;
                let c_prev = prev.map_or(T::zero(), |p| cell[p * h + u]);
                let c = fg * c_prev + ig * gg;
                let tc = c.tanh();
                cell[t * h + u] = c;
                tanh_cell[t * h + u] = tc;
                hs[t * h + u] = og * tc;
            }
            prev = Some(t);
        }
        let needs = self.needs(x) || self.needs(w_ih) || self.needs(w_hh) || self.needs(b);
        Ok(self.push(
            vec![l, h],
            hs,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                reverse,
                gates,
                cell,
                tanh_cell,
            },
            needs,
        ))
    }

    /// `scale · Σ −log softmax(logits[r])[targets[r]]` over rows whose target is
    /// not `ignore`. Returns the scalar node and the number of counted rows.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        scale: T,
    ) -> Result<(Var, usize), TensorError> {
        let (n, k) = self.dims(logits);
        if targets.len() != n {
            return Err(shape_err("cross_entropy", format!("{} targets for {n} rows", targets.len())));
        }
        let (loss, probs, count) = softmax_nll(self.value(logits), targets, k, ignore)?;
        let needs = self.needs(logits);
        let v = self.push(
            vec![1],
            vec![loss * scale],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                scale,
            },
            needs,
        );
        Ok((v, count))
    }

    /// `Σ weights ⊙ x` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var, TensorError> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum", "weight count".into()));
        }
        let s = self.value(x).iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        let needs = self.needs(x);
        Ok(self.push(vec![1], vec![s], Op::WeightedSum { x, weights }, needs))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v.0)))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Param(_) | Op::Input => {}
            Op::Embed { table, ids, pad } => {
                if let Some(gt) = self.slot(grads, *table) {
                    let e = node.shape[1];
                    for (r, &id) in ids.iter().enumerate() {
                        if Some(id) != *pad {
                            axpy(T::one(), &g[r * e..(r + 1) * e], &mut gt[id * e..(id + 1) * e]);
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, i) = self.dims(*x);
                let o = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    gemm_a_bt(g, self.value(*w), gx, n, o, i);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    gemm_at_b(self.value(*x), g, gw, n, i, o);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for row in g.chunks(o) {
                            axpy(T::one(), row, gb);
                        }
                    }
                }
            }
            Op::Conv { x, w, b } => {
                let (l, cin) = self.dims(*x);
                let ws = self.shape(*w);
                let (k, cout) = (ws[0], ws[2]);
                let block = cin * cout;
                if let Some(gx) = self.slot(grads, *x) {
                    let wv = self.value(*w);
                    for d in 0..k {
                        if let Some((t0, s0, n)) = conv_window(l, k, d) {
                            gemm_a_bt(
                                &g[t0 * cout..(t0 + n) * cout],
                                &wv[d * block..(d + 1) * block],
                                &mut gx[s0 * cin..(s0 + n) * cin],
                                n,
                                cout,
                                cin,
                            );
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    let xv = self.value(*x);
                    for d in 0..k {
                        if let Some((t0, s0, n)) = conv_window(l, k, d) {
                            gemm_at_b(
                                &xv[s0 * cin..(s0 + n) * cin],
                                &g[t0 * cout..(t0 + n) * cout],
                                &mut gw[d * block..(d + 1) * block],
                                n,
                                cin,
                                cout,
                            );
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for row in g.chunks(cout) {
                            axpy(T::one(), row, gb);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let out = &node.value;
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, &gv), &o) in gx.iter_mut().zip(g).zip(out) {
                        if o > T::zero() {
                            *a += gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(T::one(), g, gv);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *a += gv * m;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..rows {
                            axpy(
                                T::one(),
                                &g[r * total + off..r * total + off + w],
                                &mut gp[r * w..(r + 1) * w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        axpy(T::one(), &g[off..off + len], gp);
                    }
                    off += len;
                }
            }
            Op::SelectRows { x, rows } => {
                let c = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for (o, &r) in rows.iter().enumerate() {
                        axpy(T::one(), &g[o * c..(o + 1) * c], &mut gx[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let d = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for (cell, &r) in argmax.iter().enumerate() {
                        gx[r * d + cell % d] += g[cell];
                    }
                }
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                reverse,
                gates,
                cell,
                tanh_cell,
            } => self.lstm_backward(
                node, g, grads, *x, *w_ih, *w_hh, *b, *reverse, gates, cell, tanh_cell,
            ),
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                scale,
            } => {
                let k = self.dims(*logits).1;
                let coef = g[0] * *scale;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        let row = &mut gl[r * k..(r + 1) * k];
                        for (c, a) in row.iter_mut().enumerate() {
                            let p = probs[r * k + c];
                            let y = if c == t { T::one() } else { T::zero() };
                            *a += coef * (p - y);
                        }
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(g[0], weights, gx);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        reverse: bool,
        gates: &[T],
        cell: &[T],
        tanh_cell: &[T],
    ) {
        let (l, d) = self.dims(x);
        let h = node.shape[1];
        let hs = &node.value;
        let whh = self.value(w_hh);
        // pre-activation gate gradients, one row per step
        let mut da = vec![T::zero(); l * 4 * h];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut gwhh = if self.needs(w_hh) {
            Some(vec![T::zero(); h * 4 * h])
        } else {
            None
        };
        let order: Vec<usize> = if reverse {
            (0..l).rev().collect()
        } else {
            (0..l).collect()
        };
        let one = T::one();
        for pos in (0..l).rev() {
            let t = order[pos];
            let prev = if pos > 0 { Some(order[pos - 1]) } else { None };
            let gt = &gates[t * 4 * h..(t + 1) * 4 * h];
            let row = &mut da[t * 4 * h..(t + 1) * 4 * h];
            for u in 0..h {
                let (ig, fg, gg, og) = (gt[u], gt[h + u], gt[2 * h + u], gt[3 * h + u]);
                let tc = tanh_cell[t * h + u];
                let dh = g[t * h + u] + dh_next[u];
                let d_o = dh * tc;
                let dc = dh * og * (one - tc * tc) + dc_next[u];
                let c_prev = prev.map_or(T::zero(), |p| cell[p * h + u]);
                row[u] = dc * gg * ig * (one - ig);
                row[h + u] = dc * c_prev * fg * (one - fg);
                row[2 * h + u] = dc * ig * (one - gg * gg);
                row[3 * h + u] = d_o * og * (one - og);
                dc_next[u] = dc * fg;
            }
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            if let Some(p) = prev {
                gemm_a_bt(row, whh, &mut dh_next, 1, 4 * h, h);
                if let Some(gw) = gwhh.as_mut() {
                    gemm_at_b(&hs[p * h..(p + 1) * h], row, gw, 1, h, 4 * h);
                }
            }
        }
        if let Some(gx) = self.slot(grads, x) {
            gemm_a_bt(&da, self.value(w_ih), gx, l, 4 * h, d);
        }
        if let Some(gw) = self.slot(grads, w_ih) {
            gemm_at_b(self.value(x), &da, gw, l, d, 4 * h);
        }
        if let (Some(src), Some(gw)) = (gwhh, self.slot(grads, w_hh)) {
            axpy(T::one(), &src, gw);
        }
        if let Some(gb) = self.slot(grads, b) {
            for row in da.chunks(4 * h) {
                axpy(T::one(), row, gb);
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.needs(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

/// Output rows `t0..t0+n` read input rows `s0..s0+n` at filter offset `d`.
fn conv_window(l: usize, k: usize, d: usize) -> Option<(usize, usize, usize)> {
    let left = (k - 1) / 2;
    // output t reads input t + d - left
    let t0 = left.saturating_sub(d);
    let t1 = (l + left).saturating_sub(d).min(l);
    if t1 <= t0 {
        return None;
    }
    Some((t0, t0 + d - left, t1 - t0))
}

/// Summed negative log-likelihood, row softmax probabilities and the number
/// of counted rows.
pub(crate) fn softmax_nll<T: Scalar>(
    logits: &[T],
    targets: &[usize],
    k: usize,
    ignore: Option<usize>,
) -> Result<(T, Vec<T>, usize), TensorError> {
    let mut probs = vec![T::zero(); logits.len()];
    let mut loss = T::zero();
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        if t >= k {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: t,
                size: k,
            });
        }
        let row = &logits[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let pr = &mut probs[r * k..(r + 1) * k];
        let mut z = T::zero();
        for (p, &v) in pr.iter_mut().zip(row) {
            *p = (v - m).exp();
            z += *p;
        }
        for p in pr.iter_mut() {
            *p /= z;
        }
        loss += z.ln() + m - row[t];
        count += 1;
    }
    if count == 0 {
        return Err(TensorError::AllPadding);
    }
    Ok((loss, probs, count))
}
