//! Hyperbolic neural ranking for answer selection.
//!
//! Questions and answers are encoded as neural bag-of-words vectors inside
//! the Poincaré ball, scored by hyperbolic distance and trained with a
//! pairwise hinge loss under AdaGrad.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod objective;
pub mod optimizer;
pub mod synthetic;
pub mod train;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use data::{EncodedCorpus, QaCorpus, SequenceCaps, Split, TrainingTriple};
pub use encoder::{ProjectionLayer, Role, TokenSequence, WordVectorTable};
pub use error::{Error, Result};
pub use eval::{EvalReport, SelectMetric};
pub use geometry::{BallPoint, BALL_EPS, MAX_NORM};
pub use objective::{GradientSet, LossConfig, Model, ModelParams, ScoreLayer, Similarity};
pub use train::{Hyperparams, RunConfig};
pub use vocab::Vocabulary;
