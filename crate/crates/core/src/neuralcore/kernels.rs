//! Row-major matrix kernels. All of them accumulate into `out`.

use super::Scalar;

/// `out[n×m] += a[n×k] · b[k×m]`
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    debug_assert!(a.len() >= n * k && b.len() >= k * m && out.len() >= n * m);
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(av, &b[p * m..(p + 1) * m], out_row);
        }
    }
}

/// `out[k×m] += aᵀ · g` with `a[n×k]`, `g[n×m]`
pub(crate) fn gemm_at_b<T: Scalar>(a: &[T], g: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(av, g_row, &mut out[p * m..(p + 1) * m]);
        }
    }
}

/// `out[n×k] += g · bᵀ` with `g[n×m]`, `b[k×m]`
pub(crate) fn gemm_a_bt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            *o += dot(g_row, &b[p * m..(p + 1) * m]);
        }
    }
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // four partial sums let the compiler vectorise the reduction
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
