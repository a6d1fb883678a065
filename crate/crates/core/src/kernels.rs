//! Shared compute kernels.
//!
//! Both the recorded graph ops and the plain inference forwards call into
//! these, so the two paths stay bitwise identical. Every kernel accumulates
//! each output element in a fixed order (k ascending), which makes results
//! independent of batching and of the worker count used by the row-parallel
//! matmul.

use crate::parallel;
use crate::tensor::Real;

/// Work threshold (multiply-adds) below which matmuls stay on one thread.
const PAR_MIN_FLOPS: usize = 1 << 22;

/// `out[m,n] = a[m,k] * b[k,n]`.
pub fn matmul_nn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    let row_job = |i: usize, orow: &mut [F]| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    };
    if m * k * n >= PAR_MIN_FLOPS {
        parallel::for_each_chunk_mut(&mut out, n, row_job);
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            row_job(i, orow);
        }
    }
    out
}

/// `out[m,n] = a[m,k] * b[n,k]^T` (dot products of rows).
pub fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    let row_job = |i: usize, orow: &mut [F]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *o = acc;
        }
    };
    if m * k * n >= PAR_MIN_FLOPS {
        parallel::for_each_chunk_mut(&mut out, n, row_job);
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            row_job(i, orow);
        }
    }
    out
}

/// `out[k,n] = a[m,k]^T * b[m,n]`. Sequential over `m` so the accumulation
/// order is fixed.
pub fn matmul_tn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// Adds `bias[n]` to every row of `x[m,n]` in place.
pub fn add_bias_rows<F: Real>(x: &mut [F], bias: &[F]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

pub fn relu<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v.max(F::zero())).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximate GELU.
pub fn gelu<F: Real>(x: &[F]) -> Vec<F> {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    x.iter()
        .map(|&v| {
            let u = c * (v + a * v * v * v);
            half * v * (F::one() + u.tanh())
        })
        .collect()
}

/// Derivative of the tanh-approximate GELU at each input.
pub fn gelu_prime<F: Real>(x: &[F]) -> Vec<F> {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let three = F::of(3.0);
    x.iter()
        .map(|&v| {
            let u = c * (v + a * v * v * v);
            let t = u.tanh();
            let sech2 = F::one() - t * t;
            half * (F::one() + t) + half * v * sech2 * c * (F::one() + three * a * v * v)
        })
        .collect()
}

/// Row-wise layer normalization over the trailing axis (no affine params).
/// Returns the normalized values and the reciprocal std per row, which the
/// backward rule reuses.
pub fn layer_norm_rows<F: Real>(x: &[F], cols: usize, eps: F) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / cols;
    let mut out = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let nf = F::of(cols as f64);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().copied().sum::<F>() / nf;
        let mut var = F::zero();
        for &v in xr {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / nf;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(xr) {
            *o = (v - mean) * rs;
        }
    }
    (out, rstd)
}

/// Numerically stable row-wise log-softmax over the trailing axis.
pub fn log_softmax_rows<F: Real>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = xr.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for &v in xr {
            sum = sum + (v - max).exp();
        }
        let lse = max + sum.ln();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
    out
}

/// Row-wise softmax over the trailing axis.
pub fn softmax_rows<F: Real>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = log_softmax_rows(x, cols);
    for v in out.iter_mut() {
        *v = v.exp();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let id = vec![1.0f64, 0.0, 0.0, 1.0];
        assert_eq!(matmul_nn(&a, &id, 2, 2, 2), a);
    }

    #[test]
    fn matmul_transposes_agree() {
        // (A * B)^T == B^T * A^T, checked via the nt/tn kernels.
        let a = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let c = matmul_nn(&a, &b, 2, 3, 2);
        // b_t stored as [2,3]
        let b_t = vec![7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        let c2 = matmul_nt(&a, &b_t, 2, 3, 2);
        assert_eq!(c, c2);
        let c3 = matmul_tn(&b_t, &a, 2, 3, 3); // (B^T)^T * A = B * A : [3,3]
        let c4 = matmul_nn(&b, &a, 3, 2, 3);
        assert_eq!(c3, c4);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let (out, _) = layer_norm_rows(&[1.0f64, 1.0, 1.0, 1.0], 4, 1e-5);
        for v in out {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_rows_normalized() {
        let out = log_softmax_rows(&[1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0], 3);
        for row in out.chunks(3) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_prime_matches_finite_difference() {
        let xs = [-2.0f64, -0.5, 0.0, 0.3, 1.7];
        let g = gelu_prime(&xs);
        for (i, &x) in xs.iter().enumerate() {
            let h = 1e-6;
            let fd = (gelu(&[x + h])[0] - gelu(&[x - h])[0]) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-8, "at {x}: {} vs {fd}", g[i]);
        }
    }
}
