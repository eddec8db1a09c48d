//! AdaGrad over the Euclidean parameters, with L2 decay on the projection
//! weights only.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::objective::{GradientSet, ModelParams};

/// Stability constant added under the square root.
pub const ADAGRAD_EPS: f64 = 1e-8;

/// One AdaGrad update of `param` in place.
///
/// `g = grad + l2 * param; acc += g^2; param -= lr * g / sqrt(acc + eps)`.
pub fn adagrad_step(
    param: &mut [f64],
    grad: &[f64],
    acc: &mut [f64],
    lr: f64,
    eps: f64,
    l2: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != acc.len() {
        return Err(Error::DimensionMismatch {
            expected: param.len(),
            found: grad.len().min(acc.len()),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        let g = g + l2 * *p;
        *a += g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
    pub l2: f64,
    weight_acc: Array2<f64>,
    bias_acc: Array1<f64>,
    score_acc: [f64; 2],
}

impl AdaGrad {
    pub fn new(params: &ModelParams, lr: f64, l2: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be non-negative, got {l2}")));
        }
        Ok(AdaGrad {
            lr,
            eps: ADAGRAD_EPS,
            l2,
            weight_acc: Array2::zeros(params.projection.weight.raw_dim()),
            bias_acc: Array1::zeros(params.projection.bias.len()),
            score_acc: [0.0; 2],
        })
    }

    /// Applies one step to every trainable parameter.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet) -> Result<()> {
        let (lr, eps) = (self.lr, self.eps);
        adagrad_step(
            slice_mut(&mut params.projection.weight),
            grads
                .projection
                .weight
                .as_slice()
                .expect("contiguous gradient"),
            slice_mut(&mut self.weight_acc),
            lr,
            eps,
            self.l2,
        )?;
        adagrad_step(
            params
                .projection
                .bias
                .as_slice_mut()
                .expect("contiguous bias"),
            grads
                .projection
                .bias
                .as_slice()
                .expect("contiguous gradient"),
            self.bias_acc
                .as_slice_mut()
                .expect("contiguous accumulator"),
            lr,
            eps,
            0.0,
        )?;
        let mut score = [params.score.weight, params.score.bias];
        adagrad_step(
            &mut score,
            &[grads.score_weight, grads.score_bias],
            &mut self.score_acc,
            lr,
            eps,
            0.0,
        )?;
        params.score.weight = score[0];
        params.score.bias = score[1];
        Ok(())
    }

    pub fn accumulators(&self) -> impl Iterator<Item = f64> + '_ {
        self.weight_acc
            .iter()
            .chain(self.bias_acc.iter())
            .chain(self.score_acc.iter())
            .copied()
    }
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [1.5, -2.0];
        let mut acc = [0.3, 0.0];
        adagrad_step(&mut p, &[0.0, 0.0], &mut acc, 0.1, ADAGRAD_EPS, 0.0).unwrap();
        assert_eq!(p, [1.5, -2.0]);
        assert_eq!(acc, [0.3, 0.0]);
    }

    #[test]
    fn first_step_is_about_lr() {
        let mut p = [0.0];
        let mut acc = [0.0];
        adagrad_step(&mut p, &[3.0], &mut acc, 0.1, 1e-8, 0.0).unwrap();
        assert_abs_diff_eq!(p[0], -0.1 * 3.0 / (9.0f64 + 1e-8).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], -0.1, epsilon = 1e-9);
    }

    #[test]
    fn accumulator_shrinks_steps() {
        let mut p = [0.0];
        let mut acc = [0.0];
        adagrad_step(&mut p, &[1.0], &mut acc, 0.1, 1e-8, 0.0).unwrap();
        let first = p[0];
        adagrad_step(&mut p, &[1.0], &mut acc, 0.1, 1e-8, 0.0).unwrap();
        assert_abs_diff_eq!(first, -0.1, epsilon = 1e-8);
        assert_abs_diff_eq!(p[0] - first, -0.1 / 2f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn l2_folds_into_gradient() {
        let mut p = [2.0];
        let mut acc = [0.0];
        adagrad_step(&mut p, &[0.0], &mut acc, 0.1, 1e-8, 0.5).unwrap();
        assert_abs_diff_eq!(acc[0], 1.0, epsilon = 1e-15);
        assert!(p[0] < 2.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = [0.0];
        let mut acc = [0.0];
        assert!(adagrad_step(&mut p, &[f64::NAN], &mut acc, 0.1, 1e-8, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn steps_bounded_and_accumulators_grow(
            grads in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..20),
            lr in 0.001f64..1.0,
        ) {
            let mut p = [0.1, -0.2, 0.3, 0.0];
            let mut acc = [0.0; 4];
            for g in &grads {
                let before = p;
                let acc_before = acc;
                adagrad_step(&mut p, g, &mut acc, lr, ADAGRAD_EPS, 0.0).unwrap();
                for i in 0..4 {
                    prop_assert!((p[i] - before[i]).abs() <= lr * (1.0 + 1e-12));
                    prop_assert!(acc[i] >= acc_before[i]);
                }
            }
        }
    }
}
