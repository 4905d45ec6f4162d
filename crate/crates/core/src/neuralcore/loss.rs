use super::graph::softmax_nll;
use super::{Scalar, Tensor, TensorError};

/// Mean cross-entropy over the rows of `logits[N×K]` whose target is not
/// `pad`, and its gradient with respect to the logits.
pub fn softmax_xent<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    pad: Option<usize>,
) -> Result<(T, Tensor<T>), TensorError> {
    let (n, k) = (logits.rows(), logits.cols());
    if targets.len() != n {
        return Err(TensorError::Shape {
            op: "softmax_xent",
            detail: format!("{} targets for {n} rows", targets.len()),
        });
    }
    let (sum, probs, count) = softmax_nll(logits.data(), targets, k, pad)?;
    let inv = T::one() / T::of(count as f64);
    let mut grad = vec![T::zero(); n * k];
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == pad {
            continue;
        }
        for c in 0..k {
            let y = if c == t { T::one() } else { T::zero() };
            grad[r * k + c] = (probs[r * k + c] - y) * inv;
        }
    }
    Ok((sum * inv, Tensor::new(logits.shape().to_vec(), grad)?))
}
