//! Neural bag-of-words encoder: frozen word vectors, a shared relu projection
//! applied to every word, summation, and the ball constraint.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_into_ball, BallPoint, MAX_NORM};
use crate::vocab::{Vocabulary, PAD_ID};

/// Pretrained word vectors, frozen for the lifetime of a model.
///
/// Row `i` holds the vector of vocabulary id `i`. The pad row and rows of
/// words missing from the pretrained file are zero and flagged unknown; the
/// encoder skips both.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    vocab: Vocabulary,
    matrix: Array2<f64>,
    known: Vec<bool>,
}

impl WordVectorTable {
    pub fn new(vocab: Vocabulary, matrix: Array2<f64>, mut known: Vec<bool>) -> Result<Self> {
        if matrix.nrows() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: matrix.nrows(),
            });
        }
        if known.len() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: known.len(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("word vectors"));
        }
        if matrix.row(PAD_ID as usize).iter().any(|&x| x != 0.0) {
            return Err(Error::Config(
                "pad row of the word-vector table must be zero".into(),
            ));
        }
        known[PAD_ID as usize] = false;
        Ok(WordVectorTable {
            vocab,
            matrix,
            known,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Pretrained dimension `n`.
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn row(&self, id: u32) -> ArrayView1<'_, f64> {
        self.matrix.row(id as usize)
    }

    /// Whether `id` contributes to sequence encodings.
    pub fn is_known(&self, id: u32) -> bool {
        self.known.get(id as usize).copied().unwrap_or(false)
    }

    /// Hash of the vocabulary and the exact bits of every entry.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.vocab.words().hash(&mut h);
        self.known.hash(&mut h);
        for x in self.matrix.iter() {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Shared per-word projection `relu(W z + b)`, `W` being `d x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weight.nrows(),
                found: bias.len(),
            });
        }
        if weight.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection layer"));
        }
        Ok(ProjectionLayer { weight, bias })
    }

    /// Uniform `[-s, s]` weights with `s = sqrt(6 / (n + d))`, zero bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, proj_dim: usize, rng: &mut R) -> Self {
        let s = (6.0 / (input_dim + proj_dim) as f64).sqrt();
        let weight =
            Array2::from_shape_simple_fn((proj_dim, input_dim), || rng.random_range(-s..=s));
        ProjectionLayer {
            weight,
            bias: Array1::zeros(proj_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|x| x.is_finite())
    }
}

/// Projects one word vector. The result is not constrained to the ball.
pub fn project_word(z: ArrayView1<f64>, layer: &ProjectionLayer) -> Result<Array1<f64>> {
    if z.len() != layer.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: layer.input_dim(),
            found: z.len(),
        });
    }
    let mut x = layer.weight.dot(&z) + &layer.bias;
    x.mapv_inplace(relu);
    Ok(x)
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Question,
    Answer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Question => "question",
            Role::Answer => "answer",
        }
    }
}

/// Token ids truncated (first `cap` kept) and padded to exactly `cap`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    role: Role,
}

impl TokenSequence {
    pub fn new(ids: impl IntoIterator<Item = u32>, role: Role, cap: usize) -> Self {
        let mut ids: Vec<u32> = ids.into_iter().take(cap).collect();
        ids.resize(cap, PAD_ID);
        TokenSequence { ids, role }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Same tokens under another role.
    pub fn with_role(&self, role: Role) -> Self {
        TokenSequence {
            ids: self.ids.clone(),
            role,
        }
    }

    /// Equality of token content, ignoring role.
    pub fn same_tokens(&self, other: &TokenSequence) -> bool {
        self.ids == other.ids
    }
}

/// Forward intermediates needed by [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncodeCache {
    ids: Vec<usize>,
    pre_act: Array2<f64>,
    sum: Array1<f64>,
    sum_norm: f64,
}

impl EncodeCache {
    /// Norm of the word-vector sum before the ball constraint.
    pub fn pre_norm(&self) -> f64 {
        self.sum_norm
    }

    pub fn sum(&self) -> &Array1<f64> {
        &self.sum
    }

    /// Number of words that contributed to the sum.
    pub fn active_words(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub point: BallPoint,
    pub cache: EncodeCache,
}

/// Encodes a sequence and keeps the intermediates for backpropagation.
pub fn encode_forward(
    seq: &TokenSequence,
    table: &WordVectorTable,
    layer: &ProjectionLayer,
) -> Result<Encoded> {
    if table.dim() != layer.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: layer.input_dim(),
            found: table.dim(),
        });
    }
    let d = layer.output_dim();
    let ids: Vec<usize> = seq
        .ids()
        .iter()
        .filter(|&&id| table.is_known(id))
        .map(|&id| id as usize)
        .collect();
    let (pre_act, sum) = if ids.is_empty() {
        (Array2::zeros((0, d)), Array1::zeros(d))
    } else {
        let z = table.matrix.select(Axis(0), &ids);
        let mut h = z.dot(&layer.weight.t());
        h += &layer.bias;
        let sum = h.mapv(relu).sum_axis(Axis(0));
        (h, sum)
    };
    let sum_norm = sum.dot(&sum).sqrt();
    let point = project_into_ball(sum.clone())?;
    debug_assert!(point.norm() <= MAX_NORM);
    Ok(Encoded {
        point,
        cache: EncodeCache {
            ids,
            pre_act,
            sum,
            sum_norm,
        },
    })
}

/// Encodes a sequence into the ball.
pub fn encode_sequence(
    seq: &TokenSequence,
    table: &WordVectorTable,
    layer: &ProjectionLayer,
) -> Result<BallPoint> {
    encode_forward(seq, table, layer).map(|e| e.point)
}

/// Gradients of the projection layer, same shapes as [`ProjectionLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionGrad {
    pub fn zeros(proj_dim: usize, input_dim: usize) -> Self {
        ProjectionGrad {
            weight: Array2::zeros((proj_dim, input_dim)),
            bias: Array1::zeros(proj_dim),
        }
    }

    pub fn zeros_like(layer: &ProjectionLayer) -> Self {
        Self::zeros(layer.output_dim(), layer.input_dim())
    }
}

/// Backpropagates `upstream` (the loss gradient at the encoded ball point)
/// through the ball constraint, the sum and the relu, accumulating into
/// `grads`.
pub fn encode_backward(
    cache: &EncodeCache,
    upstream: ArrayView1<f64>,
    table: &WordVectorTable,
    grads: &mut ProjectionGrad,
) {
    if cache.ids.is_empty() {
        return;
    }
    let norm = cache.sum_norm;
    let grad_sum = if norm > MAX_NORM {
        // d/dy [c y / |y|] = (c / |y|) (I - y y^T / |y|^2)
        let unit = &cache.sum / norm;
        let radial = unit.dot(&upstream);
        (&upstream - &(unit * radial)) * (MAX_NORM / norm)
    } else {
        upstream.to_owned()
    };
    let mut g = cache.pre_act.mapv(|h| if h > 0.0 { 1.0 } else { 0.0 });
    g *= &grad_sum;
    let z = table.matrix.select(Axis(0), &cache.ids);
    general_mat_mul(1.0, &g.t(), &z, 1.0, &mut grads.weight);
    grads.bias += &g.sum_axis(Axis(0));
}
