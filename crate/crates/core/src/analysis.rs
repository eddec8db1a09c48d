//! Post-hoc diagnostics: norm histograms of QA encodings and projected
//! words, word hierarchy levels and raw embedding export.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::EncodedCorpus;
use crate::encoder::{project_word, Role};
use crate::error::{Error, Result};
use crate::objective::Model;
use crate::vocab::PAD_ID;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Question,
    Answer,
    Word,
}

impl Population {
    pub fn as_str(self) -> &'static str {
        match self {
            Population::Question => "question",
            Population::Answer => "answer",
            Population::Word => "word",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

/// Fixed-width histogram with contiguous bins starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormHistogram {
    pub bin_width: f64,
    pub population: Population,
    pub bins: Vec<HistogramBin>,
}

impl NormHistogram {
    pub fn from_norms(norms: &[f64], bin_width: f64, population: Population) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::Config(format!(
                "bin width must be positive, got {bin_width}"
            )));
        }
        let mut counts: Vec<usize> = Vec::new();
        for &n in norms {
            if !n.is_finite() {
                return Err(Error::NonFinite("norm"));
            }
            let b = bin_index(n, bin_width);
            if b >= counts.len() {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        Ok(NormHistogram {
            bin_width,
            population,
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin {
                    lower: i as f64 * bin_width,
                    count,
                })
                .collect(),
        })
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `bin_lower \t count` rows.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for b in &self.bins {
            writeln!(out, "{}\t{}", b.lower, b.count)?;
        }
        Ok(())
    }
}

fn bin_index(norm: f64, bin_width: f64) -> usize {
    (norm.max(0.0) / bin_width).floor() as usize
}

/// 1-based hierarchy level of a norm: `floor(norm / bin_width) + 1`.
pub fn hierarchy_level(norm: f64, bin_width: f64) -> usize {
    bin_index(norm, bin_width) + 1
}

/// Pre-constraint norms of every question and every candidate answer.
pub fn qa_pre_norms(corpus: &EncodedCorpus, model: &Model) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut questions = Vec::with_capacity(corpus.questions.len());
    let mut answers = Vec::new();
    for q in &corpus.questions {
        questions.push(model.encode_forward(&q.question)?.cache.pre_norm());
        for c in &q.candidates {
            answers.push(model.encode_forward(&c.answer)?.cache.pre_norm());
        }
    }
    Ok((questions, answers))
}

/// Histograms of question and answer norms taken before the ball
/// constraint.
pub fn qa_norm_histogram(
    corpus: &EncodedCorpus,
    model: &Model,
    bin_width: f64,
) -> Result<(NormHistogram, NormHistogram)> {
    let (q, a) = qa_pre_norms(corpus, model)?;
    Ok((
        NormHistogram::from_norms(&q, bin_width, Population::Question)?,
        NormHistogram::from_norms(&a, bin_width, Population::Answer)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordLevel {
    pub word: String,
    pub norm: f64,
    pub level: usize,
}

/// Norm of the projected vector and hierarchy level of every vocabulary
/// word (the pad token excluded). Words without a pretrained vector are
/// projected from the zero vector.
pub fn word_hierarchy_levels(model: &Model, bin_width: f64) -> Result<Vec<WordLevel>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let table = &model.params.table;
    let vocab = table.vocab();
    let mut out = Vec::with_capacity(vocab.len().saturating_sub(1));
    for (id, word) in vocab.words().iter().enumerate() {
        if id as u32 == PAD_ID {
            continue;
        }
        let x = project_word(table.row(id as u32), &model.params.projection)?;
        let norm = x.dot(&x).sqrt();
        out.push(WordLevel {
            word: word.clone(),
            norm,
            level: hierarchy_level(norm, bin_width),
        });
    }
    Ok(out)
}

pub fn word_norm_histogram(levels: &[WordLevel], bin_width: f64) -> Result<NormHistogram> {
    let norms: Vec<f64> = levels.iter().map(|w| w.norm).collect();
    NormHistogram::from_norms(&norms, bin_width, Population::Word)
}

/// Words of `tokens` grouped by hierarchy level, in sentence order within a
/// level. Tokens missing from the vocabulary are left out.
pub fn annotate_by_level(
    tokens: &[String],
    model: &Model,
    bin_width: f64,
) -> Result<BTreeMap<usize, Vec<String>>> {
    let table = &model.params.table;
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for t in tokens {
        let Some(id) = table.vocab().id(t) else {
            continue;
        };
        let x = project_word(table.row(id), &model.params.projection)?;
        levels
            .entry(hierarchy_level(x.dot(&x).sqrt(), bin_width))
            .or_default()
            .push(t.clone());
    }
    Ok(levels)
}

/// Writes one row per question and candidate answer:
/// `qid \t role \t x1 \t ... \t xd` with post-constraint coordinates.
pub fn export_embeddings<W: Write>(
    corpus: &EncodedCorpus,
    model: &Model,
    mut out: W,
) -> Result<()> {
    let mut row = |qid: &str, role: Role, coords: &ndarray::Array1<f64>| -> std::io::Result<()> {
        write!(out, "{qid}\t{}", role.as_str())?;
        for x in coords {
            write!(out, "\t{x}")?;
        }
        writeln!(out)
    };
    for q in &corpus.questions {
        let p = model.encode(&q.question)?;
        row(&q.qid, Role::Question, p.coords()).map_err(|e| Error::io("<embeddings>", e))?;
        for c in &q.candidates {
            let p = model.encode(&c.answer)?;
            row(&q.qid, Role::Answer, p.coords()).map_err(|e| Error::io("<embeddings>", e))?;
        }
    }
    Ok(())
}

pub const HISTOGRAM_FILE: &str = "norm_histogram.tsv";
pub const HIERARCHY_FILE: &str = "word_hierarchy.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub histogram: PathBuf,
    pub hierarchy: PathBuf,
    pub embeddings: PathBuf,
    pub question_hist: NormHistogram,
    pub answer_hist: NormHistogram,
    pub word_hist: NormHistogram,
}

/// Writes the three analysis artifacts into `out_dir`.
///
/// The histogram file holds one block per population, each introduced by a
/// `# <population>` line followed by `bin_lower \t count` rows. The
/// hierarchy file has `word \t norm \t level` rows, level written `H<k>`.
pub fn write_analysis(
    corpus: &EncodedCorpus,
    model: &Model,
    bin_width: f64,
    out_dir: &Path,
) -> Result<AnalysisOutput> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (question_hist, answer_hist) = qa_norm_histogram(corpus, model, bin_width)?;
    let levels = word_hierarchy_levels(model, bin_width)?;
    let word_hist = word_norm_histogram(&levels, bin_width)?;

    let histogram = out_dir.join(HISTOGRAM_FILE);
    write_file(&histogram, |w| {
        for h in [&question_hist, &answer_hist, &word_hist] {
            writeln!(w, "# {}", h.population.as_str())?;
            h.write_tsv(&mut *w)?;
        }
        Ok(())
    })?;

    let hierarchy = out_dir.join(HIERARCHY_FILE);
    write_file(&hierarchy, |w| {
        for l in &levels {
            writeln!(w, "{}\t{}\tH{}", l.word, l.norm, l.level)?;
        }
        Ok(())
    })?;

    let embeddings = out_dir.join(EMBEDDINGS_FILE);
    let file = File::create(&embeddings).map_err(|e| Error::io(&embeddings, e))?;
    let mut w = BufWriter::new(file);
    export_embeddings(corpus, model, &mut w).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(&embeddings, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(&embeddings, e))?;

    Ok(AnalysisOutput {
        histogram,
        hierarchy,
        embeddings,
        question_hist,
        answer_hist,
        word_hist,
    })
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
