//! Scoring layer, pairwise hinge loss and the backward pass of one training
//! triple, including the Riemannian rescaling at the ball-resident encodings.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::TrainingTriple;
use crate::encoder::{
    encode_backward, encode_forward, Encoded, ProjectionGrad, ProjectionLayer, TokenSequence,
    WordVectorTable,
};
use crate::error::{Error, Result};
use crate::geometry::{distance_grad, metric_scale, poincare_distance, BallPoint};

/// Interaction between question and answer encodings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Poincaré distance; lower scores rank first.
    #[default]
    Hyperbolic,
    /// Cosine similarity; higher scores rank first.
    Cosine,
}

impl Similarity {
    /// `+1` when a lower score is a better match, `-1` otherwise. The hinge
    /// loss and the ranking both read the direction from here.
    pub fn direction(self) -> f64 {
        match self {
            Similarity::Hyperbolic => 1.0,
            Similarity::Cosine => -1.0,
        }
    }

    pub fn lower_is_better(self) -> bool {
        self.direction() > 0.0
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Similarity::Hyperbolic),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::Config(format!("unknown similarity {other:?}"))),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Hyperbolic => "hyperbolic",
            Similarity::Cosine => "cosine",
        })
    }
}

/// Scalar affine map applied to the raw similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreLayer {
    pub weight: f64,
    pub bias: f64,
}

impl Default for ScoreLayer {
    fn default() -> Self {
        ScoreLayer {
            weight: 1.0,
            bias: 0.0,
        }
    }
}

impl ScoreLayer {
    pub fn apply(&self, raw: f64) -> f64 {
        self.weight * raw + self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub similarity: Similarity,
    /// Rescale gradients at ball points by [`metric_scale`]. Only meaningful
    /// for the hyperbolic similarity.
    pub riemannian: bool,
}

impl LossConfig {
    pub fn new(margin: f64, similarity: Similarity) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be positive, got {margin}"
            )));
        }
        Ok(LossConfig {
            margin,
            similarity,
            riemannian: true,
        })
    }
}

/// Hyperbolic score `w_f * d(q, a) + b_f`.
pub fn score(q: &BallPoint, a: &BallPoint, layer: &ScoreLayer) -> f64 {
    layer.apply(poincare_distance(q, a))
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine_score(q: ArrayView1<f64>, a: ArrayView1<f64>) -> f64 {
    let nq = q.dot(&q).sqrt();
    let na = a.dot(&a).sqrt();
    if nq == 0.0 || na == 0.0 {
        return 0.0;
    }
    q.dot(&a) / (nq * na)
}

/// Gradient of `cosine_score(q, a)` with respect to `q`.
fn cosine_grad(q: ArrayView1<f64>, a: ArrayView1<f64>) -> Array1<f64> {
    let nq = q.dot(&q).sqrt();
    let na = a.dot(&a).sqrt();
    if nq == 0.0 || na == 0.0 {
        return Array1::zeros(q.len());
    }
    let cos = q.dot(&a) / (nq * na);
    &a / (nq * na) - &q * (cos / (nq * nq))
}

/// `max(0, s_pos + margin - s_neg)`.
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (s_pos + margin - s_neg).max(0.0)
}

/// Trainable parameters plus the frozen word-vector table they read from.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub projection: ProjectionLayer,
    pub score: ScoreLayer,
    pub table: Arc<WordVectorTable>,
}

impl ModelParams {
    pub fn is_finite(&self) -> bool {
        self.projection.is_finite() && self.score.weight.is_finite() && self.score.bias.is_finite()
    }

    /// Copy with every trainable value rounded to `f32`, the precision used
    /// by checkpoints.
    pub fn rounded_to_f32(&self) -> Self {
        let r = |x: f64| x as f32 as f64;
        ModelParams {
            projection: ProjectionLayer {
                weight: self.projection.weight.mapv(r),
                bias: self.projection.bias.mapv(r),
            },
            score: ScoreLayer {
                weight: r(self.score.weight),
                bias: r(self.score.bias),
            },
            table: Arc::clone(&self.table),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub similarity: Similarity,
}

impl Model {
    pub fn encode(&self, seq: &TokenSequence) -> Result<BallPoint> {
        crate::encoder::encode_sequence(seq, &self.params.table, &self.params.projection)
    }

    pub fn encode_forward(&self, seq: &TokenSequence) -> Result<Encoded> {
        encode_forward(seq, &self.params.table, &self.params.projection)
    }

    /// Raw similarity before the score layer: distance or cosine.
    pub fn raw_similarity(&self, q: &BallPoint, a: &BallPoint) -> f64 {
        match self.similarity {
            Similarity::Hyperbolic => poincare_distance(q, a),
            Similarity::Cosine => cosine_score(q.view(), a.view()),
        }
    }

    pub fn score_points(&self, q: &BallPoint, a: &BallPoint) -> f64 {
        self.params.score.apply(self.raw_similarity(q, a))
    }

    pub fn score_pair(&self, question: &TokenSequence, answer: &TokenSequence) -> Result<f64> {
        let q = self.encode(question)?;
        let a = self.encode(answer)?;
        Ok(self.score_points(&q, &a))
    }

    pub fn zero_grads(&self) -> GradientSet {
        GradientSet::zeros_like(&self.params.projection)
    }
}

/// Forward pass of one triple.
#[derive(Debug, Clone)]
pub struct TripleForward {
    pub question: Encoded,
    pub positive: Encoded,
    pub negative: Encoded,
    pub raw_pos: f64,
    pub raw_neg: f64,
    pub s_pos: f64,
    pub s_neg: f64,
    pub loss: f64,
}

impl TripleForward {
    pub fn is_active(&self) -> bool {
        self.loss > 0.0
    }
}

pub fn triple_forward(
    model: &Model,
    triple: &TrainingTriple,
    cfg: &LossConfig,
) -> Result<TripleForward> {
    let question = model.encode_forward(&triple.question)?;
    let positive = model.encode_forward(&triple.positive)?;
    let negative = model.encode_forward(&triple.negative)?;
    let raw_pos = model.raw_similarity(&question.point, &positive.point);
    let raw_neg = model.raw_similarity(&question.point, &negative.point);
    let s_pos = model.params.score.apply(raw_pos);
    let s_neg = model.params.score.apply(raw_neg);
    let dir = cfg.similarity.direction();
    let loss = hinge_loss(dir * s_pos, dir * s_neg, cfg.margin);
    Ok(TripleForward {
        question,
        positive,
        negative,
        raw_pos,
        raw_neg,
        s_pos,
        s_neg,
        loss,
    })
}

/// Loss gradients at the three encoded points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrads {
    pub question: Array1<f64>,
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
}

/// Euclidean loss gradients at q, a and a'; when `cfg.riemannian` is set
/// (hyperbolic only) each is multiplied by `metric_scale` of its point.
/// Zero when the hinge is inactive.
pub fn point_grads(model: &Model, fwd: &TripleForward, cfg: &LossConfig) -> PointGrads {
    let d = model.params.projection.output_dim();
    if !fwd.is_active() {
        return PointGrads {
            question: Array1::zeros(d),
            positive: Array1::zeros(d),
            negative: Array1::zeros(d),
        };
    }
    let (q, a, n) = (
        &fwd.question.point,
        &fwd.positive.point,
        &fwd.negative.point,
    );
    // dL/draw_pos = dir * w_f, dL/draw_neg = -dir * w_f
    let coef = cfg.similarity.direction() * model.params.score.weight;
    match cfg.similarity {
        Similarity::Hyperbolic => {
            let mut gq = (distance_grad(q, a) - distance_grad(q, n)) * coef;
            let mut ga = distance_grad(a, q) * coef;
            let mut gn = distance_grad(n, q) * -coef;
            if cfg.riemannian {
                gq *= metric_scale(q);
                ga *= metric_scale(a);
                gn *= metric_scale(n);
            }
            PointGrads {
                question: gq,
                positive: ga,
                negative: gn,
            }
        }
        Similarity::Cosine => PointGrads {
            question: (cosine_grad(q.view(), a.view()) - cosine_grad(q.view(), n.view())) * coef,
            positive: cosine_grad(a.view(), q.view()) * coef,
            negative: cosine_grad(n.view(), q.view()) * -coef,
        },
    }
}

/// Accumulated parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub projection: ProjectionGrad,
    pub score_weight: f64,
    pub score_bias: f64,
}

impl GradientSet {
    pub fn zeros_like(layer: &ProjectionLayer) -> Self {
        GradientSet {
            projection: ProjectionGrad::zeros_like(layer),
            score_weight: 0.0,
            score_bias: 0.0,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.projection.weight *= factor;
        self.projection.bias *= factor;
        self.score_weight *= factor;
        self.score_bias *= factor;
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        self.projection.weight += &other.projection.weight;
        self.projection.bias += &other.projection.bias;
        self.score_weight += other.score_weight;
        self.score_bias += other.score_bias;
    }

    pub fn is_finite(&self) -> bool {
        self.projection
            .weight
            .iter()
            .chain(self.projection.bias.iter())
            .all(|x| x.is_finite())
            && self.score_weight.is_finite()
            && self.score_bias.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.projection
            .weight
            .iter()
            .chain(self.projection.bias.iter())
            .all(|&x| x == 0.0)
            && self.score_weight == 0.0
            && self.score_bias == 0.0
    }
}

/// Adds the gradient of one triple's loss into `grads`.
pub fn triple_backward(
    model: &Model,
    fwd: &TripleForward,
    cfg: &LossConfig,
    grads: &mut GradientSet,
) {
    if !fwd.is_active() {
        return;
    }
    let dir = cfg.similarity.direction();
    grads.score_weight += dir * (fwd.raw_pos - fwd.raw_neg);
    // b_f cancels between the two scores, so its gradient stays zero
    let pg = point_grads(model, fwd, cfg);
    let table = &model.params.table;
    encode_backward(
        &fwd.question.cache,
        pg.question.view(),
        table,
        &mut grads.projection,
    );
    encode_backward(
        &fwd.positive.cache,
        pg.positive.view(),
        table,
        &mut grads.projection,
    );
    encode_backward(
        &fwd.negative.cache,
        pg.negative.view(),
        table,
        &mut grads.projection,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Role;
    use crate::vocab::Vocabulary;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    const LN3: f64 = 1.098_612_288_668_109_7;

    #[test]
    fn score_examples() {
        let o = BallPoint::origin(2);
        let a = BallPoint::new(array![0.5, 0.0]).unwrap();
        assert_eq!(
            score(&o, &a, &ScoreLayer::default()),
            poincare_distance(&o, &a)
        );
        let flat = ScoreLayer {
            weight: 0.0,
            bias: 3.0,
        };
        assert_eq!(score(&o, &a, &flat), 3.0);
        let l = ScoreLayer {
            weight: 2.0,
            bias: 1.0,
        };
        // 2 ln 3 + 1
        assert_abs_diff_eq!(score(&o, &a, &l), 2.0 * LN3 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(score(&o, &a, &l), 3.197_224_577_336_219, epsilon = 1e-12);
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(0.5, 2.0, 1.0), 0.0);
        assert_eq!(hinge_loss(1.5, 1.0, 1.0), 1.5);
        assert_eq!(hinge_loss(0.7, 0.7, 1.0), 1.0);
    }

    #[test]
    fn cosine_examples() {
        let q = array![0.3, 0.4];
        assert_abs_diff_eq!(cosine_score(q.view(), q.view()), 1.0, epsilon = 1e-15);
        assert_eq!(
            cosine_score(array![1.0, 0.0].view(), array![0.0, 2.0].view()),
            0.0
        );
        assert_eq!(
            cosine_score(array![1.0, 0.0].view(), array![-1.0, 0.0].view()),
            -1.0
        );
        assert_eq!(
            cosine_score(array![0.0, 0.0].view(), array![1.0, 0.0].view()),
            0.0
        );
    }

    #[test]
    fn cosine_grad_matches_finite_differences() {
        let q = array![0.3, -0.2, 0.5];
        let a = array![-0.1, 0.4, 0.2];
        let g = cosine_grad(q.view(), a.view());
        let h = 1e-6;
        for i in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fd =
                (cosine_score(qp.view(), a.view()) - cosine_score(qm.view(), a.view())) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
    }

    fn tiny_model(similarity: Similarity) -> Model {
        let mut vocab = Vocabulary::new();
        vocab.extend(["a", "b", "c"]);
        let m = array![[0.0, 0.0], [0.3, 0.1], [0.1, 0.25], [-0.2, 0.3]];
        let table = WordVectorTable::new(vocab, m, vec![true; 4]).unwrap();
        Model {
            params: ModelParams {
                projection: ProjectionLayer::new(Array2::eye(2), array![0.01, 0.02]).unwrap(),
                score: ScoreLayer::default(),
                table: Arc::new(table),
            },
            similarity,
        }
    }

    fn triple(q: &[u32], p: &[u32], n: &[u32]) -> TrainingTriple {
        TrainingTriple {
            question: TokenSequence::new(q.iter().copied(), Role::Question, 3),
            positive: TokenSequence::new(p.iter().copied(), Role::Answer, 3),
            negative: TokenSequence::new(n.iter().copied(), Role::Answer, 3),
        }
    }

    #[test]
    fn inactive_hinge_gives_zero_gradients() {
        let m = tiny_model(Similarity::Hyperbolic);
        let cfg = LossConfig::new(1e-9, Similarity::Hyperbolic).unwrap();
        // positive identical to question: d_pos = 0 while d_neg > margin
        let t = triple(&[1], &[1], &[3]);
        let fwd = triple_forward(&m, &t, &cfg).unwrap();
        assert_eq!(fwd.loss, 0.0);
        let mut g = m.zero_grads();
        triple_backward(&m, &fwd, &cfg, &mut g);
        assert!(g.is_zero());
    }

    #[test]
    fn active_hinge_score_gradients() {
        let m = tiny_model(Similarity::Hyperbolic);
        let cfg = LossConfig::new(1.0, Similarity::Hyperbolic).unwrap();
        let t = triple(&[1, 2], &[3], &[2]);
        let fwd = triple_forward(&m, &t, &cfg).unwrap();
        assert!(fwd.is_active());
        let mut g = m.zero_grads();
        triple_backward(&m, &fwd, &cfg, &mut g);
        let d_pos = poincare_distance(&fwd.question.point, &fwd.positive.point);
        let d_neg = poincare_distance(&fwd.question.point, &fwd.negative.point);
        assert_eq!(g.score_weight, d_pos - d_neg);
        assert_eq!(g.score_bias, 0.0);
    }

    #[test]
    fn cosine_direction_flips_hinge() {
        let m = tiny_model(Similarity::Cosine);
        let cfg = LossConfig::new(1.0, Similarity::Cosine).unwrap();
        let t = triple(&[1], &[1], &[3]);
        let fwd = triple_forward(&m, &t, &cfg).unwrap();
        // max(0, margin - s_pos + s_neg)
        assert_abs_diff_eq!(
            fwd.loss,
            (1.0 - fwd.s_pos + fwd.s_neg).max(0.0),
            epsilon = 1e-15
        );
        assert!(!Similarity::Cosine.lower_is_better());
    }

    #[test]
    fn margin_must_be_positive() {
        assert!(LossConfig::new(0.0, Similarity::Hyperbolic).is_err());
        assert!(LossConfig::new(f64::NAN, Similarity::Hyperbolic).is_err());
        assert_eq!("cosine".parse::<Similarity>().unwrap(), Similarity::Cosine);
        assert!("euclid".parse::<Similarity>().is_err());
    }
}
