//! Training loop: per-epoch triple generation, mean-loss minibatches,
//! AdaGrad updates and dev-set model selection.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_triples, trainable_questions, EncodedCorpus, MixSampler, SequenceCaps};
use crate::encoder::{ProjectionLayer, WordVectorTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, SelectMetric};
use crate::objective::{
    triple_backward, triple_forward, LossConfig, Model, ModelParams, ScoreLayer, Similarity,
};
use crate::optimizer::AdaGrad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub proj_dim: usize,
    pub margin: f64,
    pub l2: f64,
    pub neg_samples: usize,
    pub caps: SequenceCaps,
    pub similarity: Similarity,
    pub select_metric: SelectMetric,
    pub seed: u64,
    pub riemannian: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 0.05,
            batch_size: 100,
            epochs: 25,
            proj_dim: 300,
            margin: 5.0,
            l2: 1e-5,
            neg_samples: 4,
            caps: SequenceCaps::default(),
            similarity: Similarity::Hyperbolic,
            select_metric: SelectMetric::Map,
            seed: 0,
            riemannian: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.proj_dim == 0 {
            return bad("batch size, epochs and projection dimension must be at least 1".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(2..=8).contains(&self.neg_samples) {
            return bad(format!(
                "negative samples must be in 2..=8, got {}",
                self.neg_samples
            ));
        }
        if self.caps.max_q_len == 0 || self.caps.max_a_len == 0 {
            return bad("sequence caps must be at least 1".into());
        }
        Ok(())
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let mut cfg = LossConfig::new(self.margin, self.similarity)?;
        cfg.riemannian = self.riemannian && self.similarity == Similarity::Hyperbolic;
        Ok(cfg)
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vectors: PathBuf,
    pub checkpoint: PathBuf,
    pub hyper: Hyperparams,
}

/// Fresh model: uniform projection weights, zero bias, `w_f = 1`, `b_f = 0`.
pub fn init_model(table: Arc<WordVectorTable>, hp: &Hyperparams, rng: &mut ChaCha8Rng) -> Model {
    let projection = ProjectionLayer::init(table.dim(), hp.proj_dim, rng);
    Model {
        params: ModelParams {
            projection,
            score: ScoreLayer::default(),
            table,
        },
        similarity: hp.similarity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub num_triples: usize,
    /// Fraction of triples with a non-zero hinge.
    pub active_fraction: f64,
    /// Largest norm of any encoded q, a or a' seen during the epoch.
    pub max_point_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
}

impl From<&EvalReport> for Metrics {
    fn from(r: &EvalReport) -> Self {
        Metrics {
            map: r.map,
            mrr: r.mrr,
            p_at_1: r.p_at_1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stats: EpochStats,
    pub dev: Metrics,
    pub improved: bool,
    pub seconds: f64,
}

/// Stateful trainer over one training corpus.
pub struct Trainer<'a> {
    train: &'a EncodedCorpus,
    sampler: MixSampler,
    model: Model,
    optimizer: AdaGrad,
    loss: LossConfig,
    hp: Hyperparams,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        table: Arc<WordVectorTable>,
        train: &'a EncodedCorpus,
        hp: Hyperparams,
    ) -> Result<Self> {
        hp.validate()?;
        if trainable_questions(train).is_empty() {
            return Err(Error::NoPositives(format!(
                "(every question in the {} split)",
                train.split
            )));
        }
        let sampler = MixSampler::new(train)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let model = init_model(table, &hp, &mut rng);
        Self::with_model(model, train, sampler, hp, rng)
    }

    fn with_model(
        model: Model,
        train: &'a EncodedCorpus,
        sampler: MixSampler,
        hp: Hyperparams,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let optimizer = AdaGrad::new(&model.params, hp.lr, hp.l2)?;
        let loss = hp.loss_config()?;
        Ok(Trainer {
            train,
            sampler,
            model,
            optimizer,
            loss,
            hp,
            rng,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over every (question, correct answer) pair.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.epoch += 1;
        let triples = epoch_triples(
            self.train,
            &self.sampler,
            self.hp.neg_samples,
            &mut self.rng,
        );
        let mut total_loss = 0.0;
        let mut active = 0usize;
        let mut max_norm: f64 = 0.0;
        for (bi, batch) in triples.chunks(self.hp.batch_size).enumerate() {
            let mut grads = self.model.zero_grads();
            for t in batch {
                let fwd = triple_forward(&self.model, t, &self.loss)?;
                max_norm = max_norm
                    .max(fwd.question.point.norm())
                    .max(fwd.positive.point.norm())
                    .max(fwd.negative.point.norm());
                if !fwd.loss.is_finite() {
                    return Err(self.diverged(bi, "non-finite loss"));
                }
                total_loss += fwd.loss;
                if fwd.is_active() {
                    active += 1;
                }
                triple_backward(&self.model, &fwd, &self.loss, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(self.diverged(bi, "non-finite gradient"));
            }
            self.optimizer.step(&mut self.model.params, &grads)?;
            if !self.model.params.is_finite() {
                return Err(self.diverged(bi, "non-finite parameters"));
            }
        }
        let n = triples.len().max(1) as f64;
        Ok(EpochStats {
            mean_loss: total_loss / n,
            num_triples: triples.len(),
            active_fraction: active as f64 / n,
            max_point_norm: max_norm,
        })
    }

    fn diverged(&self, batch: usize, what: &str) -> Error {
        Error::Divergence {
            epoch: self.epoch,
            batch,
            what: what.to_string(),
        }
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub log: Vec<EpochRecord>,
}

/// Trains for `hp.epochs` epochs, evaluating on `dev` (or on the training
/// split when there is none) after each. `on_improve` runs whenever the
/// selection metric strictly improves; `on_epoch` runs after every epoch.
pub fn train(
    table: Arc<WordVectorTable>,
    train_set: &EncodedCorpus,
    dev: Option<&EncodedCorpus>,
    hp: &Hyperparams,
    mut on_improve: impl FnMut(&Model, &EpochRecord) -> Result<()>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(table, train_set, hp.clone())?;
    let select_on = dev.unwrap_or(train_set);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut log = Vec::with_capacity(hp.epochs);
    for _ in 0..hp.epochs {
        let start = Instant::now();
        let stats = trainer.run_epoch()?;
        let report = evaluate(trainer.model(), select_on)?;
        let seconds = start.elapsed().as_secs_f64();
        let score = report.metric(hp.select_metric);
        let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
        let record = EpochRecord {
            epoch: trainer.epochs_done(),
            stats,
            dev: Metrics::from(&report),
            improved,
            seconds,
        };
        log::info!(
            "epoch {} loss {:.4} active {:.3} dev map {:.4} mrr {:.4} p@1 {:.4} ({:.2}s){}",
            record.epoch,
            stats.mean_loss,
            stats.active_fraction,
            report.map,
            report.mrr,
            report.p_at_1,
            seconds,
            if improved { " *" } else { "" }
        );
        if improved {
            on_improve(trainer.model(), &record)?;
            best = Some((score, record.epoch, trainer.model().clone()));
        }
        on_epoch(&record);
        log.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: trainer.into_model(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparams::default().validate().unwrap();
        let hp = Hyperparams {
            neg_samples: 9,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
        let hp = Hyperparams {
            lr: 0.0,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn cosine_disables_riemannian_scaling() {
        let hp = Hyperparams {
            similarity: Similarity::Cosine,
            ..Hyperparams::default()
        };
        let hp = Hyperparams {
            riemannian: true,
            ..hp
        };
        assert!(!hp.loss_config().unwrap().riemannian);
        let hp = Hyperparams {
            similarity: Similarity::Hyperbolic,
            ..hp
        };
        assert!(hp.loss_config().unwrap().riemannian);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = RunConfig {
            train: "a.tsv".into(),
            dev: None,
            test: Some("t.tsv".into()),
            vectors: "v.txt".into(),
            checkpoint: "m.hyqa".into(),
            hyper: Hyperparams {
                select_metric: SelectMetric::PAt1,
                ..Hyperparams::default()
            },
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"p@1\""));
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), cfg);
    }
}
