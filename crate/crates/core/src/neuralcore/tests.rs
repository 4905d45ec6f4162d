use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn weights(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const H: f64 = 1e-5;

#[test]
fn embed_repeated_id_gives_equal_rows() {
    let mut s = ParamStore::<f64>::new();
    let t = s.add("t", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let mut g = Graph::new(&s);
    let tv = g.param(t);
    let e = g.embed(tv, &[0, 0], None).unwrap();
    assert_eq!(g.value(e), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn embed_one_hot_table_and_pad_row() {
    let mut s = ParamStore::<f64>::new();
    let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    let t = s.add("t", Tensor::matrix(3, 3, eye).unwrap()).unwrap();
    let mut g = Graph::new(&s);
    let tv = g.param(t);
    let e = g.embed(tv, &[2, 1], None).unwrap();
    assert_eq!(g.value(e), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    let p = g.embed(tv, &[0, 2], Some(0)).unwrap();
    assert_eq!(g.value(p), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    assert!(matches!(g.embed(tv, &[3], None), Err(TensorError::Index { index: 3, .. })));
}

#[test]
fn embed_gradient_with_step_1e3() {
    let mut r = rng(1);
    for (v, e, n) in [(3, 2, 4), (5, 4, 1), (7, 3, 9), (2, 6, 3), (10, 5, 12)] {
        let mut s = ParamStore::new();
        let t = s.add("t", random(&[v, e], &mut r)).unwrap();
        let ids: Vec<usize> = (0..n).map(|_| r.gen_range(0..v)).collect();
        let rep = check_gradients(&s, &[], 1e-3, |g, _| {
            let tv = g.param(t);
            let x = g.embed(tv, &ids, Some(0))?;
            let ones = vec![1.0; n * e];
            g.weighted_sum(x, ones)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn conv_width_one_identity() {
    let mut r = rng(2);
    let x = random(&[4, 3], &mut r);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let mut s = ParamStore::new();
    let w = s.add("w", Tensor::new(vec![1, 3, 3], eye).unwrap()).unwrap();
    let mut g = Graph::new(&s);
    let xv = g.input(x.clone());
    let wv = g.param(w);
    let y = g.conv1d_same(xv, wv, None).unwrap();
    assert_eq!(g.value(y), x.data());
}

#[test]
fn conv_zero_input_gives_bias_rows() {
    let mut r = rng(3);
    let mut s = ParamStore::new();
    let w = s.add("w", random(&[3, 2, 4], &mut r)).unwrap();
    let b = s.add("b", Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::zeros(&[5, 2]));
    let (wv, bv) = (g.param(w), g.param(b));
    let no_bias = g.conv1d_same(x, wv, None).unwrap();
    assert!(g.value(no_bias).iter().all(|&v| v == 0.0));
    let biased = g.conv1d_same(x, wv, Some(bv)).unwrap();
    for row in g.value(biased).chunks(4) {
        assert_eq!(row, &[1.0, 2.0, 3.0, 4.0]);
    }
    let bad = g.input(Tensor::zeros(&[5, 3]));
    assert!(g.conv1d_same(bad, wv, None).is_err());
}

/// Direct sliding-window convolution with explicit zero padding.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>) -> Vec<f64> {
    let (l, cin) = (x.rows(), x.cols());
    let (k, cout) = (w.shape()[0], w.shape()[2]);
    let left = (k - 1) / 2;
    let mut padded = vec![vec![0.0; cin]; l + k - 1];
    for t in 0..l {
        padded[t + left].copy_from_slice(x.row(t));
    }
    let mut out = vec![0.0; l * cout];
    for t in 0..l {
        for o in 0..cout {
            let mut acc = 0.0;
            for d in 0..k {
                for c in 0..cin {
                    acc += padded[t + d][c] * w.data()[(d * cin + c) * cout + o];
                }
            }
            out[t * cout + o] = acc;
        }
    }
    out
}

#[test]
fn conv_matches_sliding_window_oracle() {
    let mut r = rng(4);
    for (l, cin, k, cout) in [(5, 3, 3, 2), (5, 3, 2, 4), (1, 2, 8, 3), (7, 1, 4, 1), (3, 4, 6, 2)] {
        let x = random(&[l, cin], &mut r);
        let mut s = ParamStore::new();
        let w = s.add("w", random(&[k, cin, cout], &mut r)).unwrap();
        let mut g = Graph::new(&s);
        let xv = g.input(x.clone());
        let wv = g.param(w);
        let y = g.conv1d_same(xv, wv, None).unwrap();
        let want = conv_oracle(&x, s.get(w));
        for (a, b) in g.value(y).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_gradients() {
    let mut r = rng(5);
    for (l, cin, k, cout) in [(5, 3, 3, 2), (4, 2, 2, 3), (1, 2, 5, 2), (6, 1, 4, 1), (3, 3, 8, 2)] {
        let mut s = ParamStore::new();
        let c = Conv1d::new(&mut s, "c", k, cin, cout, &mut r).unwrap();
        let ws = weights(l * cout, &mut r);
        let x = random(&[l, cin], &mut r);
        let rep = check_gradients(&s, &[x], H, |g, v| {
            let y = c.forward(g, v[0])?;
            g.weighted_sum(y, ws.clone())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn residual_block_gradients() {
    let mut r = rng(6);
    for (l, c, k) in [(5, 3, 3), (4, 2, 2), (1, 4, 5), (6, 2, 7), (3, 3, 8)] {
        let mut s = ParamStore::new();
        let block = ResidualBlock::new(&mut s, "r", k, c, &mut r).unwrap();
        let ws = weights(l * c, &mut r);
        let x = random(&[l, c], &mut r);
        let rep = check_gradients(&s, &[x], H, |g, v| {
            let y = block.forward(g, v[0])?;
            g.weighted_sum(y, ws.clone())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn linear_and_relu_gradients() {
    let mut r = rng(7);
    for (n, i, o) in [(1, 1, 1), (3, 4, 2), (5, 2, 6), (2, 7, 3), (4, 3, 3)] {
        let mut s = ParamStore::new();
        let lin = Linear::new(&mut s, "l", i, o, &mut r).unwrap();
        let ws = weights(n * o, &mut r);
        let x = random(&[n, i], &mut r);
        let rep = check_gradients(&s, &[x], H, |g, v| {
            let y = lin.forward(g, v[0])?;
            let y = g.relu(y);
            g.weighted_sum(y, ws.clone())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

/// One LSTM cell step written out per unit; `w_ih` is `[D×4H]`, gates `[i|f|g|o]`.
fn cell_step(x: &[f64], h: &[f64], c: &[f64], w_ih: &[f64], w_hh: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let pre = |gate: usize, u: usize| {
        let col = gate * hid + u;
        let mut a = b[col];
        for (d, xv) in x.iter().enumerate() {
            a += xv * w_ih[d * 4 * hid + col];
        }
        for (p, hv) in h.iter().enumerate() {
            a += hv * w_hh[p * 4 * hid + col];
        }
        a
    };
    let mut h2 = vec![0.0; hid];
    let mut c2 = vec![0.0; hid];
    for u in 0..hid {
        let i = sigmoid(pre(0, u));
        let f = sigmoid(pre(1, u));
        let gg = pre(2, u).tanh();
        let o = sigmoid(pre(3, u));
        c2[u] = f * c[u] + i * gg;
        h2[u] = o * c2[u].tanh();
    }
    (h2, c2)
}

fn lstm_oracle(x: &Tensor<f64>, dir: &LstmDirection, s: &ParamStore<f64>, reverse: bool) -> Vec<f64> {
    let hid = dir.hidden;
    let l = x.rows();
    let mut out = vec![0.0; l * hid];
    let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
    let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
    for t in order {
        let (h2, c2) = cell_step(
            x.row(t),
            &h,
            &c,
            s.get(dir.w_ih).data(),
            s.get(dir.w_hh).data(),
            s.get(dir.b).data(),
        );
        out[t * hid..(t + 1) * hid].copy_from_slice(&h2);
        h = h2;
        c = c2;
    }
    out
}

#[test]
fn bilstm_zero_weights_give_zero_output() {
    let mut r = rng(8);
    let mut s = ParamStore::<f64>::new();
    let bi = BiLstm::new(&mut s, "b", 3, 2, 2, false, &mut r).unwrap();
    let ids: Vec<_> = s.ids().collect();
    for id in ids {
        s.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&s);
    let x = g.input(random(&[4, 3], &mut r));
    let y = bi.forward(&mut g, x).unwrap();
    assert_eq!(g.shape(y), &[4, 4]);
    assert!(g.value(y).iter().all(|&v| v == 0.0));
}

#[test]
fn bilstm_matches_scalar_recurrence() {
    let mut r = rng(9);
    for l in [1, 3] {
        let mut s = ParamStore::<f64>::new();
        let bi = BiLstm::new(&mut s, "b", 3, 2, 1, false, &mut r).unwrap();
        let x = random(&[l, 3], &mut r);
        let mut g = Graph::new(&s);
        let xv = g.input(x.clone());
        let y = bi.forward(&mut g, xv).unwrap();
        let (fwd, bwd) = &bi.layers[0];
        let f = lstm_oracle(&x, fwd, &s, false);
        let b = lstm_oracle(&x, bwd, &s, true);
        for t in 0..l {
            let want: Vec<f64> = f[t * 2..t * 2 + 2].iter().chain(&b[t * 2..t * 2 + 2]).copied().collect();
            for (a, w) in g.value(y)[t * 4..t * 4 + 4].iter().zip(&want) {
                assert!((a - w).abs() < 1e-6);
            }
        }
        if l == 1 {
            // a single step is the same cell in both directions over the same input
            let (h, _) = cell_step(x.row(0), &[0.0; 2], &[0.0; 2], s.get(fwd.w_ih).data(), s.get(fwd.w_hh).data(), s.get(fwd.b).data());
            assert!((g.value(y)[0] - h[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn bilstm_gradients() {
    let mut r = rng(10);
    for (l, d, hid, layers, residual) in [
        (1, 2, 1, 1, false),
        (3, 3, 2, 1, false),
        (4, 4, 2, 2, true),
        (5, 2, 3, 2, false),
        (2, 6, 3, 2, true),
    ] {
        let mut s = ParamStore::new();
        let bi = BiLstm::new(&mut s, "b", d, hid, layers, residual, &mut r).unwrap();
        let ws = weights(l * 2 * hid, &mut r);
        let x = random(&[l, d], &mut r);
        let rep = check_gradients(&s, &[x], H, |g, v| {
            let y = bi.forward(g, v[0])?;
            g.weighted_sum(y, ws.clone())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn max_pool_ties_go_to_lowest_row() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let x = g.input_with_grad(Tensor::matrix(3, 2, vec![1.0, 5.0, 1.0, 2.0, 0.0, 5.0]).unwrap());
    let p = g.max_pool_rows(x).unwrap();
    assert_eq!(g.value(p), &[1.0, 5.0]);
    let loss = g.weighted_sum(p, vec![1.0, 1.0]).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn pooling_gradients() {
    let mut r = rng(11);
    for (l, d) in [(1, 1), (3, 2), (5, 4), (8, 3), (2, 6)] {
        let s = ParamStore::new();
        let x = random(&[l, d], &mut r);
        let ws = weights(d, &mut r);
        let rep = check_gradients(&s, &[x.clone()], H, |g, v| {
            let y = g.max_pool_rows(v[0])?;
            g.weighted_sum(y, ws.clone())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");

        let mut spans = Vec::new();
        let mut i = 0;
        while i < l {
            let j = (i + r.gen_range(0..3)).min(l - 1);
            spans.push((i, j));
            i = j + 1;
        }
        let ws = weights(spans.len() * d, &mut r);
        let rep = check_gradients(&s, &[x], H, |g, v| {
            let y = g.span_max_pool(v[0], &spans)?;
            g.weighted_sum(y, ws.clone())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn span_pool_rejects_bad_spans() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::zeros(&[3, 2]));
    assert!(g.span_max_pool(x, &[(2, 1)]).is_err());
    assert!(g.span_max_pool(x, &[(0, 3)]).is_err());
}

#[test]
fn cross_entropy_gradients_with_padding() {
    let mut r = rng(12);
    for (n, k) in [(1, 2), (3, 5), (4, 3), (6, 7), (2, 10)] {
        let s = ParamStore::new();
        let x = random(&[n, k], &mut r);
        let mut targets: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        if n > 1 {
            targets[0] = 0;
        }
        let rep = check_gradients(&s, &[x], H, |g, v| {
            Ok(g.cross_entropy(v[0], &targets, Some(0).filter(|_| n > 1), 0.5)?.0)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn graph_cross_entropy_agrees_with_softmax_xent() {
    let mut r = rng(13);
    let x = random(&[4, 3], &mut r);
    let targets = [2, 0, 1, 1];
    let (mean, grad) = softmax_xent(&x, &targets, Some(0)).unwrap();
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let xv = g.input_with_grad(x);
    let (loss, count) = g.cross_entropy(xv, &targets, Some(0), 1.0 / 3.0).unwrap();
    assert_eq!(count, 3);
    assert!((g.scalar(loss) - mean).abs() < 1e-12);
    let grads = g.backward(loss).unwrap();
    for (a, b) in grads.wrt(xv).unwrap().iter().zip(grad.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn concat_select_and_add_gradients() {
    let mut r = rng(14);
    for (n, a, b) in [(1, 1, 1), (2, 3, 1), (3, 2, 2), (4, 1, 5), (5, 3, 3)] {
        let s = ParamStore::new();
        let xa = random(&[n, a], &mut r);
        let xb = random(&[n, b], &mut r);
        let rows: Vec<usize> = (0..n + 2).map(|_| r.gen_range(0..n)).collect();
        let ws = weights((n + 2) * (a + b) + n * a * 2, &mut r);
        let rep = check_gradients(&s, &[xa, xb], H, |g, v| {
            let c = g.concat_cols(&[v[0], v[1]])?;
            let sel = g.select_rows(c, &rows)?;
            let twice = g.add(v[0], v[0])?;
            let stacked = g.concat_rows(&[v[0], twice])?;
            let sel = g.weighted_sum(sel, ws[..(n + 2) * (a + b)].to_vec())?;
            let st = g.weighted_sum(stacked, ws[(n + 2) * (a + b)..].to_vec())?;
            g.add(sel, st)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}

#[test]
fn dropout_train_and_eval() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::from_fn(&[10, 10], |_| 1.0));
    let same = g.dropout::<ChaCha8Rng>(x, 0.5, None);
    assert_eq!(same, x);
    let mut r = rng(15);
    let d = g.dropout(x, 0.25, Some(&mut r));
    let kept = g.value(d).iter().filter(|&&v| v != 0.0).count();
    assert!(g.value(d).iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    assert!((50..100).contains(&kept));
}

#[test]
fn backward_needs_scalar() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::zeros(&[2, 2]));
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn shape_errors_are_reported() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let a = g.input(Tensor::zeros(&[2, 2]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert!(g.add(a, b).is_err());
    assert!(g.linear(a, b, None).is_ok());
    assert!(g.linear(b, a, None).is_err());
    assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn param_accumulation_sums_graphs() {
    let mut s = ParamStore::<f64>::new();
    let w = s.add("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
    for x in [3.0, 4.0] {
        let grads = {
            let mut g = Graph::new(&s);
            let wv = g.param(w);
            let xv = g.input(Tensor::matrix(1, 1, vec![x]).unwrap());
            let y = g.linear(xv, wv, None).unwrap();
            let loss = g.weighted_sum(y, vec![1.0]).unwrap();
            g.backward(loss).unwrap()
        };
        s.accumulate(&grads);
    }
    assert_eq!(s.get(w).grad(), Some(&[7.0][..]));
    assert!(s.add("w", Tensor::zeros(&[1])).is_err());
}
