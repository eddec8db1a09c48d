//! Candidate ranking and the MAP / MRR / P@1 metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{EncodedCorpus, EncodedQuestion};
use crate::error::Result;
use crate::objective::{Model, Similarity};

/// Candidate indices ordered best first: ascending scores when lower is
/// better, descending otherwise. Ties keep input order.
pub fn rank_candidates(scores: &[f64], similarity: Similarity) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let lower_first = similarity.lower_is_better();
    order.sort_by(|&i, &j| {
        let o = scores[i].partial_cmp(&scores[j]).unwrap_or(Ordering::Equal);
        if lower_first {
            o
        } else {
            o.reverse()
        }
    });
    order
}

/// Mean over relevant positions `i` of (relevant items in the top `i`) / `i`.
pub fn average_precision(ranked: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn reciprocal_rank(ranked: &[bool]) -> f64 {
    ranked
        .iter()
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn precision_at_1(ranked: &[bool]) -> f64 {
    match ranked.first() {
        Some(true) => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub qid: String,
    pub ranked_labels: Vec<bool>,
    pub ap: f64,
    pub rr: f64,
}

/// Aggregate metrics over the questions that have at least one correct
/// candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub num_questions: usize,
    #[serde(skip)]
    pub per_question: Vec<QuestionResult>,
}

impl EvalReport {
    /// Averages per-question results; questions without a correct candidate
    /// are dropped.
    pub fn from_results(results: Vec<QuestionResult>) -> Self {
        let per_question: Vec<QuestionResult> = results
            .into_iter()
            .filter(|r| r.ranked_labels.iter().any(|&l| l))
            .collect();
        let n = per_question.len();
        let mean = |f: &dyn Fn(&QuestionResult) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_question.iter().map(f).sum::<f64>() / n as f64
            }
        };
        EvalReport {
            map: mean(&|r| r.ap),
            mrr: mean(&|r| r.rr),
            p_at_1: mean(&|r| precision_at_1(&r.ranked_labels)),
            num_questions: n,
            per_question,
        }
    }

    pub fn metric(&self, which: SelectMetric) -> f64 {
        match which {
            SelectMetric::Map => self.map,
            SelectMetric::Mrr => self.mrr,
            SelectMetric::PAt1 => self.p_at_1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Metric used to pick the best epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectMetric {
    #[default]
    #[serde(rename = "map")]
    Map,
    #[serde(rename = "mrr")]
    Mrr,
    #[serde(rename = "p@1")]
    PAt1,
}

impl std::str::FromStr for SelectMetric {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(SelectMetric::Map),
            "mrr" => Ok(SelectMetric::Mrr),
            "p@1" | "p_at_1" => Ok(SelectMetric::PAt1),
            other => Err(crate::Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Scores every candidate of `question` and returns them ranked.
pub fn rank_question(model: &Model, question: &EncodedQuestion) -> Result<Vec<usize>> {
    let q = model.encode(&question.question)?;
    let scores = question
        .candidates
        .iter()
        .map(|c| Ok(model.score_points(&q, &model.encode(&c.answer)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rank_candidates(&scores, model.similarity))
}

pub fn evaluate(model: &Model, corpus: &EncodedCorpus) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(corpus.questions.len());
    for q in &corpus.questions {
        if q.candidates.is_empty() {
            continue;
        }
        let order = rank_question(model, q)?;
        let ranked_labels: Vec<bool> = order.iter().map(|&i| q.candidates[i].label).collect();
        results.push(QuestionResult {
            qid: q.qid.clone(),
            ap: average_precision(&ranked_labels),
            rr: reciprocal_rank(&ranked_labels),
            ranked_labels,
        });
    }
    Ok(EvalReport::from_results(results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ranking_examples() {
        assert_eq!(
            rank_candidates(&[2.0, 0.5, 1.0], Similarity::Hyperbolic),
            [1, 2, 0]
        );
        assert_eq!(
            rank_candidates(&[1.0, 1.0, 1.0], Similarity::Hyperbolic),
            [0, 1, 2]
        );
        assert_eq!(
            rank_candidates(&[1.0, 1.0, 1.0], Similarity::Cosine),
            [0, 1, 2]
        );
        assert_eq!(rank_candidates(&[3.0], Similarity::Hyperbolic), [0]);
        assert_eq!(
            rank_candidates(&[0.2, 0.9, 0.5], Similarity::Cosine),
            [1, 2, 0]
        );
    }

    #[test]
    fn metric_examples() {
        assert_eq!(average_precision(&[true, false]), 1.0);
        assert_eq!(reciprocal_rank(&[true, false]), 1.0);
        assert_eq!(precision_at_1(&[true, false]), 1.0);
        assert_eq!(average_precision(&[false, true]), 0.5);
        assert_eq!(reciprocal_rank(&[false, true]), 0.5);
        assert_eq!(precision_at_1(&[false, true]), 0.0);
        assert_abs_diff_eq!(
            average_precision(&[true, false, true]),
            (1.0 + 2.0 / 3.0) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn all_negative_questions_are_excluded() {
        let mk = |labels: Vec<bool>| QuestionResult {
            qid: "q".into(),
            ap: average_precision(&labels),
            rr: reciprocal_rank(&labels),
            ranked_labels: labels,
        };
        let r = EvalReport::from_results(vec![mk(vec![false, true]), mk(vec![false, false])]);
        assert_eq!(r.num_questions, 1);
        assert_eq!(r.map, 0.5);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(keys.len(), 4);
        for k in ["map", "mrr", "p_at_1", "num_questions"] {
            assert!(keys.contains(&k));
        }
        assert_eq!(EvalReport::from_results(vec![]).map, 0.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant_for_distinct_scores(
            items in prop::collection::hash_set(-1000i32..1000, 1..12).prop_flat_map(|s| {
                let v: Vec<i32> = s.into_iter().collect();
                let n = v.len();
                (Just(v), prop::collection::vec(any::<bool>(), n), Just(()).prop_perturb(move |_, mut rng| {
                    let mut p: Vec<usize> = (0..n).collect();
                    for i in (1..n).rev() { p.swap(i, rng.random_range(0..=i)); }
                    p
                }))
            })
        ) {
            let (scores, labels, perm) = items;
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let ranked = |s: &[f64], l: &[bool]| -> Vec<bool> {
                rank_candidates(s, Similarity::Hyperbolic).into_iter().map(|i| l[i]).collect()
            };
            let base = ranked(&scores, &labels);
            let ps: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let pl: Vec<bool> = perm.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(base, ranked(&ps, &pl));
        }
    }
}
