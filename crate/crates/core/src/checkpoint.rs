//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`, all reals little-endian `f32`:
//!
//! ```text
//! "HYQA" | version | n | d | vocab_size
//! vocab_size x (byte_len | utf-8 bytes)
//! W_p (d x n, row-major) | b_p (d) | w_f | b_f
//! config_len | RunConfig as JSON
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::data::load_word_vectors;
use crate::encoder::{ProjectionLayer, WordVectorTable};
use crate::error::{Error, Result};
use crate::objective::{Model, ModelParams, ScoreLayer};
use crate::train::RunConfig;
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"HYQA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub projection: ProjectionLayer,
    pub score: ScoreLayer,
    pub config: RunConfig,
}

impl Checkpoint {
    /// Snapshot of `model`; parameters are rounded to `f32`.
    pub fn from_model(model: &Model, config: RunConfig) -> Self {
        let p = model.params.rounded_to_f32();
        Checkpoint {
            vocab: model.params.table.vocab().clone(),
            projection: p.projection,
            score: p.score,
            config,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.projection.input_dim()
    }

    pub fn proj_dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, x: usize| out.extend_from_slice(&(x as u32).to_le_bytes());
        let f32le = |out: &mut Vec<u8>, x: f64| out.extend_from_slice(&(x as f32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        u32le(&mut out, self.input_dim());
        u32le(&mut out, self.proj_dim());
        u32le(&mut out, self.vocab.len());
        for w in self.vocab.words() {
            u32le(&mut out, w.len());
            out.extend_from_slice(w.as_bytes());
        }
        for &x in self.projection.weight.iter() {
            f32le(&mut out, x);
        }
        for &x in self.projection.bias.iter() {
            f32le(&mut out, x);
        }
        f32le(&mut out, self.score.weight);
        f32le(&mut out, self.score.bias);
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        u32le(&mut out, cfg.len());
        out.extend_from_slice(&cfg);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |msg: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| err("truncated header"))? != MAGIC {
            return Err(err("bad magic, expected HYQA"));
        }
        let version = r.u32().ok_or_else(|| err("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(err(&format!("unsupported format version {version}")));
        }
        let n = r.u32().ok_or_else(|| err("truncated header"))? as usize;
        let d = r.u32().ok_or_else(|| err("truncated header"))? as usize;
        let vocab_size = r.u32().ok_or_else(|| err("truncated header"))? as usize;
        let mut words = Vec::with_capacity(vocab_size.min(bytes.len()));
        for _ in 0..vocab_size {
            let len = r.u32().ok_or_else(|| err("truncated vocabulary"))? as usize;
            let raw = r.take(len).ok_or_else(|| err("truncated vocabulary"))?;
            let w = std::str::from_utf8(raw).map_err(|_| err("vocabulary entry is not utf-8"))?;
            words.push(w.to_string());
        }
        let vocab = Vocabulary::from_words(words).ok_or_else(|| err("malformed vocabulary"))?;
        let weight = r.f32s(d * n).ok_or_else(|| err("truncated weights"))?;
        let bias = r.f32s(d).ok_or_else(|| err("truncated bias"))?;
        let score = r.f32s(2).ok_or_else(|| err("truncated score layer"))?;
        let cfg_len = r.u32().ok_or_else(|| err("truncated config"))? as usize;
        let cfg = r.take(cfg_len).ok_or_else(|| err("truncated config"))?;
        if r.pos != bytes.len() {
            return Err(err("trailing bytes after config"));
        }
        let config: RunConfig =
            serde_json::from_slice(cfg).map_err(|e| err(&format!("bad config json: {e}")))?;
        let weight = Array2::from_shape_vec((d, n), weight).map_err(|_| err("weight shape"))?;
        let projection =
            ProjectionLayer::new(weight, Array1::from(bias)).map_err(|e| err(&e.to_string()))?;
        if config.hyper.proj_dim != d {
            return Err(err("config projection dimension disagrees with header"));
        }
        Ok(Checkpoint {
            vocab,
            projection,
            score: ScoreLayer {
                weight: score[0],
                bias: score[1],
            },
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // write-then-rename so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Builds a model around `table`, which must share the checkpoint's
    /// vocabulary and input dimension.
    pub fn into_model(self, table: Arc<WordVectorTable>) -> Result<Model> {
        if table.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: table.dim(),
            });
        }
        if table.vocab() != &self.vocab {
            return Err(Error::Config(
                "word-vector table vocabulary differs from checkpoint".into(),
            ));
        }
        Ok(Model {
            params: ModelParams {
                projection: self.projection,
                score: self.score,
                table,
            },
            similarity: self.config.hyper.similarity,
        })
    }

    /// Loads the word vectors for the checkpoint vocabulary and builds the
    /// model.
    pub fn into_model_with_vectors(self, vectors: impl AsRef<Path>) -> Result<Model> {
        let table = load_word_vectors(vectors, self.vocab.clone())?;
        self.into_model(Arc::new(table))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Option<Vec<f64>> {
        let raw = self.take(count.checked_mul(4)?)?;
        Some(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Hyperparams;
    use ndarray::array;

    fn checkpoint() -> Checkpoint {
        let mut vocab = Vocabulary::new();
        vocab.extend(["alpha", "béta"]);
        Checkpoint {
            vocab,
            projection: ProjectionLayer::new(
                array![[0.1, -0.2], [0.3, 0.4], [0.5, 0.6]],
                array![0.0, 0.01, -0.02],
            )
            .unwrap(),
            score: ScoreLayer {
                weight: 1.25,
                bias: -0.5,
            },
            config: RunConfig {
                train: "t.tsv".into(),
                dev: None,
                test: None,
                vectors: "v.txt".into(),
                checkpoint: "m.hyqa".into(),
                hyper: Hyperparams {
                    proj_dim: 3,
                    ..Hyperparams::default()
                },
            },
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = checkpoint();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"HYQA");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.config, c.config);
        for (a, b) in back
            .projection
            .weight
            .iter()
            .zip(c.projection.weight.iter())
        {
            assert_eq!(*a, *b as f32 as f64);
        }
        // a second trip is exact
        assert_eq!(
            Checkpoint::from_bytes(&back.to_bytes(), Path::new("mem")).unwrap(),
            back
        );
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut bytes = checkpoint().to_bytes();
        let e = Checkpoint::from_bytes(b"HYQ", Path::new("x.hyqa")).unwrap_err();
        assert!(e.to_string().contains("x.hyqa"));
        bytes[0] = b'X';
        let e = Checkpoint::from_bytes(&bytes, Path::new("bad.hyqa")).unwrap_err();
        assert!(e.to_string().contains("bad.hyqa") && e.to_string().contains("magic"));
        let good = checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 3], Path::new("m")).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, Path::new("m")).is_err());
    }
}
