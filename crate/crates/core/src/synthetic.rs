//! Synthetic hierarchy task used as a capacity check and for benchmarks.
//!
//! A random recursive tree is generated over `nodes` nodes; each node owns a
//! dedicated token. Every internal node becomes a question whose correct
//! answers name its children and whose wrong answers name nodes that are not
//! its descendants. Remaining vocabulary slots are filler words mixed into
//! every text. Word vectors are random Gaussians.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{build_vocabulary, Candidate, QaCorpus, Question, Split};
use crate::encoder::WordVectorTable;
use crate::error::{Error, Result};

pub const QUESTION_MARKER: &str = "which";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub nodes: usize,
    /// Total number of distinct tokens, node tokens included.
    pub vocab_size: usize,
    pub word_dim: usize,
    /// Filler tokens appended to every question and answer.
    pub fillers: usize,
    /// Wrong answers listed per question.
    pub negatives_per_question: usize,
    pub word_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            nodes: 200,
            vocab_size: 500,
            word_dim: 50,
            fillers: 2,
            negatives_per_question: 10,
            word_scale: 0.4,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// `parent[i]` of node `i`; `None` for the root.
    pub parent: Vec<Option<usize>>,
    pub corpus: QaCorpus,
    pub table: Arc<WordVectorTable>,
}

impl SyntheticTask {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        let filler_count = cfg
            .vocab_size
            .checked_sub(cfg.nodes + 1)
            .filter(|&f| f > 0 || cfg.fillers == 0)
            .ok_or_else(|| Error::Config("vocabulary too small for the tree".into()))?;
        if cfg.nodes < 2 {
            return Err(Error::Config("tree needs at least two nodes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let parent: Vec<Option<usize>> = (0..cfg.nodes)
            .map(|i| (i > 0).then(|| rng.random_range(0..i)))
            .collect();
        let mut children = vec![Vec::new(); cfg.nodes];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(i);
            }
        }

        let fillers: Vec<String> = (0..filler_count).map(|i| format!("w{i}")).collect();
        let pick_fillers = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..cfg.fillers)
                .filter_map(|_| fillers.choose(rng).cloned())
                .collect()
        };
        let node_token = |i: usize| format!("node{i}");
        let answer_text: Vec<Vec<String>> = (0..cfg.nodes)
            .map(|i| {
                let mut t = vec![node_token(i)];
                t.extend(pick_fillers(&mut rng));
                t
            })
            .collect();

        let mut corpus = QaCorpus::new(Split::Train);
        for (u, kids) in children.iter().enumerate() {
            if kids.is_empty() {
                continue;
            }
            let descendant = descendants(&children, u);
            let mut others: Vec<usize> = (0..cfg.nodes)
                .filter(|&v| v != u && !descendant[v])
                .collect();
            others.shuffle(&mut rng);
            others.truncate(cfg.negatives_per_question);
            let mut candidates: Vec<Candidate> = kids
                .iter()
                .map(|&c| Candidate {
                    tokens: answer_text[c].clone(),
                    label: true,
                })
                .chain(others.iter().map(|&v| Candidate {
                    tokens: answer_text[v].clone(),
                    label: false,
                }))
                .collect();
            candidates.shuffle(&mut rng);
            let mut tokens = vec![QUESTION_MARKER.to_string(), node_token(u)];
            tokens.extend(pick_fillers(&mut rng));
            corpus.questions.push(Question {
                qid: format!("q{u}"),
                tokens,
                candidates,
            });
        }

        // vocabulary covers every token, used or not
        let mut vocab = build_vocabulary([&corpus]);
        vocab.insert(QUESTION_MARKER);
        for i in 0..cfg.nodes {
            vocab.insert(&node_token(i));
        }
        vocab.extend(fillers.iter().map(String::as_str));

        let normal = Normal::new(0.0, cfg.word_scale).map_err(|e| Error::Config(e.to_string()))?;
        let mut matrix =
            Array2::from_shape_simple_fn((vocab.len(), cfg.word_dim), || normal.sample(&mut rng));
        matrix.row_mut(0).fill(0.0);
        let known = vec![true; vocab.len()];
        let table = WordVectorTable::new(vocab, matrix, known)?;
        Ok(SyntheticTask {
            parent,
            corpus,
            table: Arc::new(table),
        })
    }

    pub fn depth(&self, mut node: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[node] {
            node = p;
            d += 1;
        }
        d
    }
}

fn descendants(children: &[Vec<usize>], root: usize) -> Vec<bool> {
    let mut seen = vec![false; children.len()];
    let mut stack = children[root].clone();
    while let Some(v) = stack.pop() {
        if !seen[v] {
            seen[v] = true;
            stack.extend_from_slice(&children[v]);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_shape() {
        let t = SyntheticTask::generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(t.table.vocab().len(), 501);
        assert_eq!(t.parent.iter().filter(|p| p.is_none()).count(), 1);
        let positives: usize = t
            .corpus
            .questions
            .iter()
            .map(|q| q.candidates.iter().filter(|c| c.label).count())
            .sum();
        assert_eq!(positives, 199);
        for q in &t.corpus.questions {
            let u: usize = q.qid[1..].parse().unwrap();
            for c in &q.candidates {
                let v: usize = c.tokens[0][4..].parse().unwrap();
                let mut anc = Some(v);
                let mut under_u = false;
                while let Some(a) = anc {
                    anc = t.parent[a];
                    if anc == Some(u) {
                        under_u = true;
                    }
                }
                assert_eq!(c.label, t.parent[v] == Some(u));
                if !c.label {
                    assert!(!under_u && v != u);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = SyntheticTask::generate(&SyntheticConfig::default()).unwrap();
        let b = SyntheticTask::generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.table.checksum(), b.table.checksum());
    }
}
