//! Analytic gradients against central finite differences.
//!
//! The function under test is written once against [`Ops`]; the analytic
//! side runs on a [`Graph`] in the precision under test, and the
//! differences are always evaluated eagerly in `f64` on the same inputs so
//! that rounding in the forward pass does not swamp the step `eps`.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{arg_err, Error, Result};
use crate::ops::{Eval, Ops};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub mod suite;

/// A scalar-valued function of several tensors.
pub trait ScalarFn {
    fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, inputs: &[O::V]) -> Result<O::V>;
}

/// Denominator floor for [`relative_error`]; gradients smaller than this
/// are compared absolutely.
pub const REL_FLOOR: f64 = 1e-2;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / d
}

/// Tolerance on [`relative_error`] for the precision under test.
pub fn tolerance<T: Real>() -> f64 {
    match T::DTYPE {
        DType::F32 => 1e-3,
        DType::F64 => 1e-6,
    }
}

/// Refinements tried, in order, when the difference at `eps` disagrees.
pub const REFINE: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar coordinates compared.
    pub checked: usize,
    /// Worst error against differences at `eps` itself.
    pub max_rel_error_at_eps: f64,
    /// Coordinates that failed at `eps` but agree at a refined step: the
    /// step straddled a kink of a piecewise-linear op.
    pub kink_crossings: usize,
    /// Coordinates that agree at no step.
    pub failures: usize,
    /// Worst error after refinement.
    pub max_rel_error: f64,
    /// `(input, element)` of the worst coordinate after refinement.
    pub worst: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares gradients of `f` at `inputs` for up to `max_coords` sampled
/// elements of each input (all of them when the input is smaller).
pub fn check_gradients<T: Real, F: ScalarFn>(
    f: &F,
    inputs: &[Tensor<T>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    check_gradients_against(f, f, inputs, eps, max_coords, seed)
}

/// As [`check_gradients`], with the differences taken of `numeric`. Used
/// where the tape deliberately treats part of the function as constant.
///
/// A coordinate whose error at `eps` exceeds [`tolerance`] is
/// re-differenced at the [`REFINE`] fractions of `eps`; agreement there
/// counts as a kink crossing, no agreement as a failure.
pub fn check_gradients_against<T: Real, A: ScalarFn, N: ScalarFn>(
    analytic_fn: &A,
    numeric_fn: &N,
    inputs: &[Tensor<T>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(arg_err!("check_gradients", "eps must be positive"));
    }
    let tol = tolerance::<T>();
    let mut g = Graph::new();
    let leaves: Vec<_> = inputs.iter().map(|t| g.leaf(t, true)).collect();
    let loss = analytic_fn.eval(&mut g, &leaves)?;
    let mut grads = g.backward(loss)?;

    let base: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let eval_at = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut ev = Eval;
        let out = numeric_fn.eval(&mut ev, inputs)?;
        out.item()
            .ok_or_else(|| Error::NonScalarLoss(out.shape().to_vec()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error_at_eps: 0.0,
        kink_crossings: 0,
        failures: 0,
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (k, leaf) in leaves.iter().enumerate() {
        let n = inputs[k].numel();
        let analytic = grads.take(*leaf).unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.partial_shuffle(&mut rng, max_coords).0.to_vec()
        };
        let mut probe = base.clone();
        for i in coords {
            let x = base[k].data()[i];
            let mut central = |h: f64| -> Result<f64> {
                probe[k].data_mut()[i] = x + h;
                let up = eval_at(&probe)?;
                probe[k].data_mut()[i] = x - h;
                let down = eval_at(&probe)?;
                probe[k].data_mut()[i] = x;
                Ok((up - down) / (2.0 * h))
            };
            let a = analytic.data()[i].as_f64();
            let mut numeric = central(eps)?;
            let mut e = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_error_at_eps = report.max_rel_error_at_eps.max(e);
            if e > tol {
                for frac in REFINE {
                    let nr = central(eps * frac)?;
                    let er = relative_error(a, nr);
                    if er < e {
                        (numeric, e) = (nr, er);
                    }
                    if e <= tol {
                        break;
                    }
                }
                if e <= tol {
                    report.kink_crossings += 1;
                } else {
                    report.failures += 1;
                }
            }
            if !(e <= report.max_rel_error) {
                report.max_rel_error = e;
                report.worst = (k, i);
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct SumSquares;

    impl ScalarFn for SumSquares {
        fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, inputs: &[O::V]) -> Result<O::V> {
            let s = ops.square(&inputs[0]);
            Ok(ops.sum(&s))
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new([4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let r = check_gradients::<f64, _>(&SumSquares, &[x], 1e-3, 10, 0).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-4) - 1e-2).abs() < 1e-15);
    }
}
