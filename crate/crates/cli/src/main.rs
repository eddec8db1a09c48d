use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use hyprank::analysis::write_analysis;
use hyprank::data::{build_vocabulary, load_qa_tsv, load_word_vectors, QaCorpus};
use hyprank::eval::evaluate;
use hyprank::train::train;
use hyprank::{
    Checkpoint, EncodedCorpus, Hyperparams, RunConfig, SelectMetric, SequenceCaps, Similarity,
    Split,
};

#[derive(Parser)]
#[command(
    name = "hyprank",
    version,
    about = "Hyperbolic question-answer ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, saving a checkpoint whenever the dev metric improves.
    Train(TrainArgs),
    /// Score a test split with a saved checkpoint and print metrics as JSON.
    Eval(EvalArgs),
    /// Write norm histograms, word hierarchy levels and embeddings.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Word vectors in text format: `word v1 v2 ...` per line.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    #[arg(long, default_value_t = 300)]
    proj_dim: usize,
    #[arg(long, default_value_t = 5.0)]
    margin: f64,
    #[arg(long, default_value_t = 1e-5)]
    l2: f64,
    /// Negatives per positive, 2..=8.
    #[arg(long, default_value_t = 4)]
    neg_samples: usize,
    #[arg(long, default_value_t = hyprank::data::DEFAULT_MAX_Q_LEN)]
    max_q_len: usize,
    #[arg(long, default_value_t = hyprank::data::DEFAULT_MAX_A_LEN)]
    max_a_len: usize,
    /// hyperbolic | cosine
    #[arg(long, default_value = "hyperbolic")]
    similarity: Similarity,
    /// map | mrr | p@1
    #[arg(long, default_value = "map")]
    select_metric: SelectMetric,
    #[arg(long)]
    seed: u64,
    /// Scale gradients at the encoded ball points by the inverse metric.
    #[arg(long)]
    riemannian: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Defaults to the vectors file recorded in the checkpoint.
    #[arg(long)]
    vectors: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus whose questions and answers are analyzed.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
}

impl TrainArgs {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            proj_dim: self.proj_dim,
            margin: self.margin,
            l2: self.l2,
            neg_samples: self.neg_samples,
            caps: SequenceCaps {
                max_q_len: self.max_q_len,
                max_a_len: self.max_a_len,
            },
            similarity: self.similarity,
            select_metric: self.select_metric,
            seed: self.seed,
            riemannian: self.riemannian,
        }
    }
}

fn cmd_train(args: TrainArgs) -> hyprank::Result<()> {
    let hp = args.hyperparams();
    hp.validate()?;
    let train_c = load_qa_tsv(&args.train, Split::Train)?;
    let dev_c = args
        .dev
        .as_ref()
        .map(|p| load_qa_tsv(p, Split::Dev))
        .transpose()?;
    let test_c = args
        .test
        .as_ref()
        .map(|p| load_qa_tsv(p, Split::Test))
        .transpose()?;
    let all: Vec<&QaCorpus> = [Some(&train_c), dev_c.as_ref(), test_c.as_ref()]
        .into_iter()
        .flatten()
        .collect();
    let table = Arc::new(load_word_vectors(&args.vectors, build_vocabulary(all))?);
    let encode = |c: &QaCorpus| EncodedCorpus::new(c, table.vocab(), hp.caps);
    let train_e = encode(&train_c);
    let dev_e = dev_c.as_ref().map(encode);
    if dev_e.is_none() {
        log::warn!("no --dev split given; selecting checkpoints on the training split");
    }

    let config = RunConfig {
        train: args.train.clone(),
        dev: args.dev.clone(),
        test: args.test.clone(),
        vectors: args.vectors.clone(),
        checkpoint: args.checkpoint.clone(),
        hyper: hp.clone(),
    };
    let outcome = train(
        table.clone(),
        &train_e,
        dev_e.as_ref(),
        &hp,
        |model, record| {
            log::info!(
                "saving checkpoint for epoch {} to {}",
                record.epoch,
                args.checkpoint.display()
            );
            Checkpoint::from_model(model, config.clone()).save(&args.checkpoint)
        },
        |record| {
            println!(
                "{}",
                serde_json::to_string(record).expect("epoch record serializes")
            )
        },
    )?;
    log::info!("best epoch {}", outcome.best_epoch);

    if let Some(test_c) = &test_c {
        let report = evaluate(&outcome.best, &encode(test_c))?;
        println!("{}", report.to_json());
    }
    Ok(())
}

fn load_model(
    checkpoint: &Path,
    vectors: Option<&Path>,
) -> hyprank::Result<(hyprank::Model, SequenceCaps)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let caps = ckpt.config.hyper.caps;
    let vectors = vectors
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ckpt.config.vectors.clone());
    Ok((ckpt.into_model_with_vectors(vectors)?, caps))
}

fn cmd_eval(args: EvalArgs) -> hyprank::Result<()> {
    let (model, caps) = load_model(&args.checkpoint, args.vectors.as_deref())?;
    let corpus = load_qa_tsv(&args.test, Split::Test)?;
    let report = evaluate(
        &model,
        &EncodedCorpus::new(&corpus, model.params.table.vocab(), caps),
    )?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> hyprank::Result<()> {
    let (model, caps) = load_model(&args.checkpoint, args.vectors.as_deref())?;
    let corpus = load_qa_tsv(&args.test, Split::Test)?;
    let encoded = EncodedCorpus::new(&corpus, model.params.table.vocab(), caps);
    let out = write_analysis(&encoded, &model, args.bin_width, &args.out_dir)?;
    for path in [&out.histogram, &out.hierarchy, &out.embeddings] {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYPRANK_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
