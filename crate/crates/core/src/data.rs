//! Corpus ingestion, vocabulary construction, pretrained-vector loading,
//! mix negative sampling and per-epoch triple generation.
//!
//! Corpus files are UTF-8 TSV, one candidate per line:
//! `qid \t question \t answer \t label` with label `0` or `1`.
//! Word-vector files hold `word v1 ... vn` separated by single spaces.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Role, TokenSequence, WordVectorTable};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const DEFAULT_MAX_Q_LEN: usize = 25;
pub const DEFAULT_MAX_A_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub tokens: Vec<String>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub qid: String,
    pub tokens: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl Question {
    pub fn has_positive(&self) -> bool {
        self.candidates.iter().any(|c| c.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaCorpus {
    pub split: Split,
    pub questions: Vec<Question>,
}

impl QaCorpus {
    pub fn new(split: Split) -> Self {
        QaCorpus {
            split,
            questions: Vec::new(),
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.questions.iter().map(|q| q.candidates.len()).sum()
    }

    /// Every token of every question and answer, in file order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.questions.iter().flat_map(|q| {
            q.tokens
                .iter()
                .chain(q.candidates.iter().flat_map(|c| c.tokens.iter()))
                .map(String::as_str)
        })
    }
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses a TSV corpus. Records sharing a qid are grouped under the first
/// occurrence; file order is kept otherwise. Blank lines are skipped.
pub fn parse_qa_tsv<R: Read>(reader: R, source: &str, split: Split) -> Result<QaCorpus> {
    let mut corpus = QaCorpus::new(split);
    let mut by_qid: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg,
        };
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let label = match fields[3].trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(format!("label must be 0 or 1, found {other:?}"))),
        };
        let qid = fields[0];
        let idx = *by_qid.entry(qid.to_string()).or_insert_with(|| {
            corpus.questions.push(Question {
                qid: qid.to_string(),
                tokens: tokenize(fields[1]),
                candidates: Vec::new(),
            });
            corpus.questions.len() - 1
        });
        corpus.questions[idx].candidates.push(Candidate {
            tokens: tokenize(fields[2]),
            label,
        });
    }
    Ok(corpus)
}

pub fn load_qa_tsv(path: impl AsRef<Path>, split: Split) -> Result<QaCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_qa_tsv(file, &path.display().to_string(), split)
}

/// Writes the corpus back in TSV form, tokens joined by single spaces.
pub fn write_qa_tsv<W: Write>(corpus: &QaCorpus, mut out: W) -> std::io::Result<()> {
    for q in &corpus.questions {
        let question = q.tokens.join(" ");
        for c in &q.candidates {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                q.qid,
                question,
                c.tokens.join(" "),
                u8::from(c.label)
            )?;
        }
    }
    Ok(())
}

pub fn save_qa_tsv(corpus: &QaCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_qa_tsv(corpus, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Vocabulary over every token of the given corpora, first-seen order.
pub fn build_vocabulary<'a>(corpora: impl IntoIterator<Item = &'a QaCorpus>) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for c in corpora {
        vocab.extend(c.tokens());
    }
    vocab
}

/// Reads pretrained vectors for the words of `vocab`.
///
/// The dimension comes from the first line and every later line must agree.
/// Only in-vocabulary lines are parsed numerically; vocabulary words absent
/// from the file get zero rows and are marked unknown. The first occurrence
/// of a duplicated word wins.
pub fn parse_word_vectors<R: Read>(
    reader: R,
    source: &str,
    vocab: Vocabulary,
) -> Result<WordVectorTable> {
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let parse_err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.trim_end_matches(' ').split(' ');
        let word = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        match dim {
            None => {
                if values.is_empty() {
                    return Err(parse_err("vector line has no components".into()));
                }
                dim = Some(values.len());
            }
            Some(n) if n != values.len() => {
                return Err(parse_err(format!(
                    "expected {n} components, found {}",
                    values.len()
                )));
            }
            Some(_) => {}
        }
        let Some(id) = vocab.id(word) else { continue };
        if id == crate::vocab::PAD_ID || rows[id as usize].is_some() {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(format!("non-numeric component {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows[id as usize] = Some(parsed);
    }
    let n = dim.unwrap_or(0);
    let mut matrix = Array2::zeros((vocab.len(), n));
    let mut known = vec![false; vocab.len()];
    for (id, row) in rows.into_iter().enumerate() {
        if let Some(row) = row {
            matrix.row_mut(id).assign(&ndarray::Array1::from(row));
            known[id] = true;
        }
    }
    WordVectorTable::new(vocab, matrix, known)
}

pub fn load_word_vectors(path: impl AsRef<Path>, vocab: Vocabulary) -> Result<WordVectorTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(file, &path.display().to_string(), vocab)
}

/// Maximum question and answer lengths in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCaps {
    pub max_q_len: usize,
    pub max_a_len: usize,
}

impl Default for SequenceCaps {
    fn default() -> Self {
        SequenceCaps {
            max_q_len: DEFAULT_MAX_Q_LEN,
            max_a_len: DEFAULT_MAX_A_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCandidate {
    pub answer: TokenSequence,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedQuestion {
    pub qid: String,
    pub question: TokenSequence,
    pub candidates: Vec<EncodedCandidate>,
}

impl EncodedQuestion {
    pub fn positives(&self) -> impl Iterator<Item = &TokenSequence> {
        self.candidates
            .iter()
            .filter(|c| c.label)
            .map(|c| &c.answer)
    }
}

/// A corpus mapped to padded token-id sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub split: Split,
    pub caps: SequenceCaps,
    pub questions: Vec<EncodedQuestion>,
}

impl EncodedCorpus {
    /// Maps tokens through `vocab`; unknown tokens become padding.
    pub fn new(corpus: &QaCorpus, vocab: &Vocabulary, caps: SequenceCaps) -> Self {
        let ids = |tokens: &[String]| {
            tokens
                .iter()
                .map(|t| vocab.id_or_pad(t))
                .collect::<Vec<_>>()
        };
        let questions = corpus
            .questions
            .iter()
            .map(|q| EncodedQuestion {
                qid: q.qid.clone(),
                question: TokenSequence::new(ids(&q.tokens), Role::Question, caps.max_q_len),
                candidates: q
                    .candidates
                    .iter()
                    .map(|c| EncodedCandidate {
                        answer: TokenSequence::new(ids(&c.tokens), Role::Answer, caps.max_a_len),
                        label: c.label,
                    })
                    .collect(),
            })
            .collect();
        EncodedCorpus {
            split: corpus.split,
            caps,
            questions,
        }
    }

    pub fn answer(&self, r: CandidateRef) -> &TokenSequence {
        &self.questions[r.question].candidates[r.candidate].answer
    }
}

/// A question, one of its correct answers and a sampled wrong answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub question: TokenSequence,
    pub positive: TokenSequence,
    pub negative: TokenSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CandidateRef {
    pub question: usize,
    pub candidate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeSource {
    /// A wrong answer listed under the same question.
    Local,
    /// A wrong answer of some other question.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledNegative {
    pub candidate: CandidateRef,
    pub source: NegativeSource,
}

/// Mix negative sampler: half of the draws come from the question's own
/// wrong answers, half from wrong answers of other questions.
#[derive(Debug, Clone)]
pub struct MixSampler {
    local: Vec<Vec<CandidateRef>>,
    global: Vec<CandidateRef>,
}

impl MixSampler {
    pub fn new(corpus: &EncodedCorpus) -> Result<Self> {
        let mut local = Vec::with_capacity(corpus.questions.len());
        let mut global = Vec::new();
        for (qi, q) in corpus.questions.iter().enumerate() {
            let negs: Vec<CandidateRef> = q
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.label)
                .map(|(ci, _)| CandidateRef {
                    question: qi,
                    candidate: ci,
                })
                .collect();
            global.extend_from_slice(&negs);
            local.push(negs);
        }
        if global.is_empty() {
            return Err(Error::NoNegatives);
        }
        Ok(MixSampler { local, global })
    }

    /// Draws `k` negatives for question `question`: `ceil(k/2)` local and
    /// `floor(k/2)` global. Local draws fall back to the global pool when
    /// the question has no wrong answers; global draws fall back to the
    /// local pool when no other question has any.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        question: usize,
        k: usize,
        rng: &mut R,
    ) -> Vec<SampledNegative> {
        let local = &self.local[question];
        let n_local = k.div_ceil(2);
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let want_local = i < n_local;
            if want_local && !local.is_empty() {
                out.push(SampledNegative {
                    candidate: local[rng.random_range(0..local.len())],
                    source: NegativeSource::Local,
                });
            } else if let Some(c) = self.draw_other(question, rng) {
                out.push(SampledNegative {
                    candidate: c,
                    source: NegativeSource::Global,
                });
            } else {
                out.push(SampledNegative {
                    candidate: local[rng.random_range(0..local.len())],
                    source: NegativeSource::Local,
                });
            }
        }
        out
    }

    fn draw_other<R: Rng + ?Sized>(&self, question: usize, rng: &mut R) -> Option<CandidateRef> {
        let own = self.local[question].len();
        if own == self.global.len() {
            return None;
        }
        // the question's own negatives are a contiguous block of `global`
        let start = self.global.partition_point(|c| c.question < question);
        let idx = rng.random_range(0..self.global.len() - own);
        Some(if idx < start {
            self.global[idx]
        } else {
            self.global[idx + own]
        })
    }
}

/// Negatives for question `question`, see [`MixSampler::sample`].
pub fn mix_sample_negatives<R: Rng + ?Sized>(
    sampler: &MixSampler,
    question: usize,
    k: usize,
    rng: &mut R,
) -> Vec<SampledNegative> {
    sampler.sample(question, k, rng)
}

/// Indices of questions that have at least one correct answer.
pub fn trainable_questions(corpus: &EncodedCorpus) -> Vec<usize> {
    corpus
        .questions
        .iter()
        .enumerate()
        .filter(|(_, q)| q.candidates.iter().any(|c| c.label))
        .map(|(i, _)| i)
        .collect()
}

/// One epoch of triples: every (question, correct answer) pair expanded
/// into `k` triples with fresh negatives, then shuffled. Negatives whose
/// tokens equal one of the question's correct answers are dropped.
pub fn epoch_triples<R: Rng + ?Sized>(
    corpus: &EncodedCorpus,
    sampler: &MixSampler,
    k: usize,
    rng: &mut R,
) -> Vec<TrainingTriple> {
    let mut triples = Vec::new();
    for qi in trainable_questions(corpus) {
        let q = &corpus.questions[qi];
        let positives: Vec<&TokenSequence> = q.positives().collect();
        for pos in &positives {
            for neg in sampler.sample(qi, k, rng) {
                let answer = corpus.answer(neg.candidate);
                if positives.iter().any(|p| p.same_tokens(answer)) {
                    continue;
                }
                triples.push(TrainingTriple {
                    question: q.question.clone(),
                    positive: (*pos).clone(),
                    negative: answer.clone(),
                });
            }
        }
    }
    triples.shuffle(rng);
    triples
}
