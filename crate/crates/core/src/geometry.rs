//! Poincaré-ball primitives: distance, its gradient, the metric scaling used
//! to turn Euclidean gradients into Riemannian ones, and the norm-clipping
//! retraction that keeps points strictly inside the ball.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Gap kept between every ball point and the unit sphere.
pub const BALL_EPS: f64 = 1e-5;

/// Largest norm a [`BallPoint`] may have.
pub const MAX_NORM: f64 = 1.0 - BALL_EPS;

/// Tolerance below 1 accepted by [`arcosh`], and the threshold on `gamma - 1`
/// under which two points are treated as coincident.
pub const GAMMA_TOL: f64 = 1e-12;

/// A point of the open unit ball with norm at most [`MAX_NORM`].
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Array1<f64>);

impl BallPoint {
    /// Wraps `coords`, rejecting non-finite values and norms above [`MAX_NORM`].
    pub fn new(coords: Array1<f64>) -> Result<Self> {
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ball point"));
        }
        let norm = coords.dot(&coords).sqrt();
        if norm > MAX_NORM {
            return Err(Error::OutsideBall {
                norm,
                max: MAX_NORM,
            });
        }
        Ok(BallPoint(coords))
    }

    pub fn origin(dim: usize) -> Self {
        BallPoint(Array1::zeros(dim))
    }

    pub fn coords(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.dot(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Inverse hyperbolic cosine, `ln(x + sqrt(x^2 - 1))`.
///
/// Arguments in `[1 - GAMMA_TOL, 1)` are clamped to 1.
pub fn arcosh(x: f64) -> Result<f64> {
    if x.is_nan() || x < 1.0 - GAMMA_TOL {
        return Err(Error::Domain(x));
    }
    let x = x.max(1.0);
    Ok((x + (x * x - 1.0).sqrt()).ln())
}

/// `arcosh(1 + delta)` for `delta >= 0`, accurate when `delta` is small.
fn arcosh_1p(delta: f64) -> f64 {
    let delta = delta.max(0.0);
    (delta + (delta * (delta + 2.0)).sqrt()).ln_1p()
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `2 |q - a|^2 / ((1 - |q|^2)(1 - |a|^2))`, i.e. the arcosh argument minus one.
fn distance_delta(q: &BallPoint, a: &BallPoint) -> f64 {
    let num = sq_dist(q.view(), a.view());
    2.0 * num / ((1.0 - q.norm_sq()) * (1.0 - a.norm_sq()))
}

/// Hyperbolic distance between two ball points.
pub fn poincare_distance(q: &BallPoint, a: &BallPoint) -> f64 {
    debug_assert_eq!(q.dim(), a.dim());
    arcosh_1p(distance_delta(q, a))
}

/// Euclidean gradient of `poincare_distance(theta, x)` with respect to `theta`.
///
/// Swap the arguments for the gradient with respect to `x`. Numerically
/// coincident points get the zero vector.
pub fn distance_grad(theta: &BallPoint, x: &BallPoint) -> Array1<f64> {
    debug_assert_eq!(theta.dim(), x.dim());
    let alpha = 1.0 - theta.norm_sq();
    let beta = 1.0 - x.norm_sq();
    let gamma_m1 = 2.0 * sq_dist(theta.view(), x.view()) / (alpha * beta);
    if gamma_m1 < GAMMA_TOL {
        return Array1::zeros(theta.dim());
    }
    // sqrt(gamma^2 - 1) factored to avoid cancellation near gamma = 1
    let root = (gamma_m1 * (gamma_m1 + 2.0)).sqrt();
    let coef = 4.0 / (beta * root);
    let theta_coef = (x.norm_sq() - 2.0 * theta.coords().dot(x.coords()) + 1.0) / (alpha * alpha);
    (theta.coords() * theta_coef - x.coords() / alpha) * coef
}

/// Conformal coefficient `(2 / (1 - |x|^2))^2` of the ball metric.
pub fn conformal_factor(x: &BallPoint) -> f64 {
    let l = 2.0 / (1.0 - x.norm_sq());
    l * l
}

/// Inverse of [`conformal_factor`]: `(1 - |theta|^2)^2 / 4`.
pub fn metric_scale(theta: &BallPoint) -> f64 {
    let a = 1.0 - theta.norm_sq();
    a * a / 4.0
}

/// Clips `v` to norm [`MAX_NORM`] when it lies farther out; otherwise returns
/// it unchanged.
pub fn project_into_ball(v: Array1<f64>) -> Result<BallPoint> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    let norm = v.dot(&v).sqrt();
    if norm <= MAX_NORM {
        return Ok(BallPoint(v));
    }
    let mut out = v * (MAX_NORM / norm);
    // rounding can leave the result one ulp outside
    while out.dot(&out).sqrt() > MAX_NORM {
        out *= 1.0 - f64::EPSILON;
    }
    Ok(BallPoint(out))
}
