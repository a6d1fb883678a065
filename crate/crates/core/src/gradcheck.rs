//! Central finite-difference gradient oracle.
//!
//! Every loss in the crate is verified against this check; it stays
//! independent of the backward implementation by re-running the forward pass
//! at perturbed inputs.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdReport<F> {
    /// max over components of |analytic - central| / max(1, |analytic|)
    pub max_rel_err: F,
    /// (input index, component index) of the worst component
    pub worst: (usize, usize),
    /// Set when halving eps failed to shrink the error, which usually means
    /// the function is not smooth at this point.
    pub suspected_nonsmooth: bool,
}

/// Compares analytic gradients of a scalar-valued graph function against
/// central differences, over every component of every input in `xs`.
///
/// `build` receives leaf vars in the order of `xs` and must return the
/// scalar root. Returns the max relative error.
pub fn finite_diff_check<F, B>(xs: &[Tensor<F>], eps: F, build: B) -> Result<F>
where
    F: Real,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_report(xs, eps, build)?.max_rel_err)
}

/// As [`finite_diff_check`] but returns the full report, retrying once with
/// a smaller step to flag suspected non-smooth points instead of failing.
pub fn finite_diff_report<F, B>(xs: &[Tensor<F>], eps: F, build: B) -> Result<FdReport<F>>
where
    F: Real,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    if xs.is_empty() {
        return Err(Error::contract("finite_diff_check needs at least one input"));
    }
    let analytic = analytic_grads(xs, &build)?;
    let (err, worst) = max_rel_err(xs, eps, &build, &analytic)?;
    let mut suspected_nonsmooth = false;
    // A smooth function's central-difference error shrinks roughly with
    // eps^2; if halving eps does not help at a suspicious error level, report
    // the point as non-smooth rather than erroring out.
    let tol = F::of(1e-4);
    if err > tol {
        let (err2, _) = max_rel_err(xs, eps / F::of(2.0), &build, &analytic)?;
        if err2 > err * F::of(0.9) {
            suspected_nonsmooth = true;
        }
    }
    Ok(FdReport {
        max_rel_err: err,
        worst,
        suspected_nonsmooth,
    })
}

fn analytic_grads<F, B>(xs: &[Tensor<F>], build: &B) -> Result<Vec<Vec<F>>>
where
    F: Real,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = xs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t = t.with_grad();
            g.leaf(&t)
        })
        .collect();
    let root = build(&mut g, &vars)?;
    if g.value(root).len() != 1 {
        return Err(Error::contract("finite_diff_check target must be scalar"));
    }
    g.backward(root)?;
    Ok(vars
        .iter()
        .zip(xs)
        .map(|(&v, x)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![F::zero(); x.len()])
        })
        .collect())
}

fn eval_at<F, B>(xs: &[Tensor<F>], build: &B) -> Result<F>
where
    F: Real,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|t| g.constant(t)).collect();
    let root = build(&mut g, &vars)?;
    Ok(g.scalar_value(root))
}

fn max_rel_err<F, B>(
    xs: &[Tensor<F>],
    eps: F,
    build: &B,
    analytic: &[Vec<F>],
) -> Result<(F, (usize, usize))>
where
    F: Real,
    B: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let mut worst = (0usize, 0usize);
    let mut max_err = F::zero();
    let mut work: Vec<Tensor<F>> = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        for ci in 0..x.len() {
            let orig = x.data()[ci];
            work[ti].data_mut()[ci] = orig + eps;
            let f_plus = eval_at(&work, build)?;
            work[ti].data_mut()[ci] = orig - eps;
            let f_minus = eval_at(&work, build)?;
            work[ti].data_mut()[ci] = orig;
            let central = (f_plus - f_minus) / (F::of(2.0) * eps);
            let a = analytic[ti][ci];
            let denom = F::one().max(a.abs());
            let err = (a - central).abs() / denom;
            if err > max_err {
                max_err = err;
                worst = (ti, ci);
            }
        }
    }
    Ok((max_err, worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(vec![0.3f64, -0.7, 1.1]);
        let err = finite_diff_check(&[x], 1e-5, |g, vs| g.sum(vs[0])).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn composite_expression_checks_out() {
        let x = Tensor::new([2, 3], vec![0.5f64, -0.2, 0.8, 1.5, -1.1, 0.3]).unwrap();
        let w = Tensor::new([3, 2], vec![0.1f64, -0.4, 0.7, 0.2, -0.3, 0.9]).unwrap();
        let err = finite_diff_check(&[x, w], 1e-5, |g, vs| {
            let y = g.matmul(vs[0], vs[1])?;
            let y = g.gelu(y)?;
            let y = g.layer_norm(y)?;
            let y = g.mul(y, y)?;
            g.mean(y)
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn relu_kink_flagged_nonsmooth() {
        // Evaluate exactly at the kink: analytic picks one side, the central
        // difference straddles it, and the report should notice.
        let x = Tensor::from_vec(vec![0.0f64, 0.5]);
        let report = finite_diff_report(&[x], 1e-4, |g, vs| {
            let y = g.relu(vs[0])?;
            g.sum(y)
        })
        .unwrap();
        assert!(report.suspected_nonsmooth);
        assert_eq!(report.worst.1, 0);
    }
}
