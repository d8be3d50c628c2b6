use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use triage_cli::bench::{bench_corpus, run_bench, BenchOptions};
use triage_cli::config::{Captioner, PipelineConfig, RankerChoice, TaggerChoice};
use triage_cli::eval::{evaluate, EvalOptions};
use triage_cli::output::OutputSet;
use triage_cli::pipeline::{run_pipeline, write_worklist};
use triage_cli::stages::{
    build_captioner, build_ranker, build_tagger, caption_all, load_data, rank_split, read_jsonl, read_worklist, tag_ids,
};
use triage_cli::UsageError;
use triage_core::corpus::{synth_corpus, write_corpus, Split, SynthConfig};
use triage_core::decode::{train_decoder, DecoderMode, TrainingPool};
use triage_core::metrics::BleuConfig;
use triage_core::tag::{TagAssignment, ThresholdMode};
use triage_core::{train_binary_head, train_tag_head, Checkpoint};

#[derive(Parser)]
#[command(name = "triage", version, about = "Rank, tag and caption radiograph exams")]
struct Cli {
    /// Corpus file (JSONL, one exam per line).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Score and sort the exams of a split into a worklist.
    Rank(RankArgs),
    /// Tag the top of a worklist.
    Tag(TagArgs),
    /// Caption tagged exams.
    Caption(CaptionArgs),
    /// Rank, tag and caption in one run.
    Pipeline(PipelineArgs),
    /// Score stage outputs against the corpus.
    Eval(EvalArgs),
    /// Time ranking and retrieval captioning.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1024)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    tags: usize,
    #[arg(long, default_value_t = 0.5)]
    abnormal_fraction: f64,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TrainTarget {
    Ranker,
    Tagger,
    Decoder,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum PoolArg {
    Abnormal,
    All,
}

#[derive(Args)]
struct TrainArgs {
    target: TrainTarget,
    /// Decoder conditioning mode.
    #[arg(long, default_value = "snt")]
    mode: String,
    /// Decoder training exams.
    #[arg(long, value_enum, default_value = "abnormal")]
    pool: PoolArg,
    /// Learn one threshold per tag or a single shared one.
    #[arg(long, value_enum)]
    thresholds: Option<ThresholdArg>,
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ThresholdArg {
    PerTag,
    Global,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, value_enum)]
    ranker: Option<RankerChoice>,
    /// Binary-head checkpoint; trained on the fly when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Split to rank (default: test).
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Args)]
struct TagArgs {
    /// Worklist JSONL written by `rank`.
    #[arg(long)]
    worklist: PathBuf,
    /// Number of top-ranked exams to tag.
    #[arg(long)]
    k: Option<usize>,
    /// Only exams scoring at least this much are tagged.
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long, value_enum)]
    tagger: Option<TaggerChoice>,
    /// Tag-head checkpoint; trained on the fly when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct CaptionArgs {
    /// Tag JSONL written by `tag`.
    #[arg(long)]
    tags: PathBuf,
    #[arg(long, value_enum)]
    captioner: Option<Captioner>,
    /// Decoder checkpoint for the decode_* captioners.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Number of top-ranked exams to tag and caption.
    #[arg(long)]
    k: Option<usize>,
    /// Only exams scoring at least this much enter the top k.
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long, value_enum)]
    ranker: Option<RankerChoice>,
    #[arg(long, value_enum)]
    tagger: Option<TaggerChoice>,
    #[arg(long, value_enum)]
    captioner: Option<Captioner>,
    #[arg(long)]
    ranker_model: Option<PathBuf>,
    #[arg(long)]
    tagger_model: Option<PathBuf>,
    #[arg(long)]
    decoder_model: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    worklist: PathBuf,
    #[arg(long)]
    tags: Option<PathBuf>,
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Cutoff for the headline nDCG and precision values.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Number of top-ranked abnormal exams scored for tagging F1.
    #[arg(long, default_value_t = 100)]
    f1_k: usize,
    #[arg(long, default_value_t = 1000)]
    bootstrap_samples: usize,
    /// Exams per bootstrap draw; must not exceed the worklist length.
    #[arg(long, default_value_t = 100)]
    bootstrap_size: usize,
    /// Add-one smoothing for higher-order BLEU precisions without matches.
    #[arg(long)]
    bleu_smooth: bool,
    #[arg(long, default_value_t = 1.0)]
    rouge_beta: f64,
    /// Labeler lexicon JSON; the built-in lexicon is used when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 500)]
    n_rank: usize,
    #[arg(long, default_value_t = 100)]
    n_caption: usize,
    #[arg(long, default_value_t = 2000)]
    index_size: usize,
    /// Per-image embedding width of the synthetic bench corpus.
    #[arg(long, default_value_t = 1024)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    ranker_model: Option<PathBuf>,
    #[arg(long)]
    tagger_model: Option<PathBuf>,
}

fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.data.is_some() {
        config.data.clone_from(&cli.data);
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.out.is_some() {
        config.out.clone_from(&cli.out);
    }
    Ok(config)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let config = base_config(cli)?;
    let out = config.out_path()?;
    let corpus = synth_corpus(&SynthConfig {
        seed: config.seed,
        n: args.n,
        d: args.d,
        m: args.m,
        tag_count: args.tags,
        abnormal_fraction: args.abnormal_fraction,
        separation: args.separation,
        noise: args.noise,
        ..SynthConfig::default()
    })?;
    write_corpus(out, &corpus)?;
    println!(
        "wrote {} exams ({} abnormal, {} tags) to {}",
        corpus.len(),
        corpus.exams().iter().filter(|e| e.abnormal()).count(),
        corpus.tag_alphabet().len(),
        out.display()
    );
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut config = base_config(cli)?;
    let out = config.out_path()?.to_path_buf();
    set(&mut config.train.max_epochs, args.epochs);
    set(&mut config.train.lr, args.lr);
    set(&mut config.decoder.train.max_epochs, args.epochs);
    set(&mut config.decoder.train.lr, args.lr);
    if let Some(t) = args.thresholds {
        config.threshold_mode = match t {
            ThresholdArg::PerTag => ThresholdMode::PerTag,
            ThresholdArg::Global => ThresholdMode::Global,
        };
    }
    let corpus = load_data(&config)?;
    let mut outputs = OutputSet::new();
    outputs.track(&out);
    let report = match args.target {
        TrainTarget::Ranker => {
            let (head, report) = train_binary_head(&corpus, &config.train, config.seed)?;
            head.save(&out)?;
            report
        }
        TrainTarget::Tagger => {
            let (head, report) = train_tag_head(&corpus, &config.train, config.threshold_mode, config.seed)?;
            head.save(&out)?;
            report
        }
        TrainTarget::Decoder => {
            let mode: DecoderMode = args.mode.parse().map_err(|e| UsageError::new(format!("{e}")))?;
            let pool = match args.pool {
                PoolArg::Abnormal => TrainingPool::AbnormalOnly,
                PoolArg::All => TrainingPool::AllExams,
            };
            let (decoder, report) = train_decoder(&corpus, mode, pool, &config.decoder, config.seed)?;
            decoder.save(&out)?;
            report
        }
    };
    outputs.commit();
    println!(
        "epochs {} (best {}), train loss {:.6}, val loss {:.6}; checkpoint {}",
        report.epochs_run,
        report.best_epoch,
        report.train_loss,
        report.val_loss,
        out.display()
    );
    Ok(())
}

fn rank(cli: &Cli, args: &RankArgs) -> Result<()> {
    let mut config = base_config(cli)?;
    set(&mut config.ranker, args.ranker);
    set_opt(&mut config.ranker_model, args.model.clone());
    set(&mut config.split, args.split);
    let out = config.out_path()?;
    let corpus = load_data(&config)?;
    let ranker = build_ranker(&config, &corpus)?;
    let worklist = rank_split(ranker.as_ref(), &corpus, config.split)?;
    let mut outputs = OutputSet::new();
    write_worklist(&mut outputs, out, &worklist)?;
    outputs.commit();
    println!(
        "ranked {} exams with {} into {}",
        worklist.len(),
        ranker.name(),
        out.display()
    );
    Ok(())
}

fn tag(cli: &Cli, args: &TagArgs) -> Result<()> {
    let mut config = base_config(cli)?;
    set(&mut config.k, args.k);
    set_opt(&mut config.min_score, args.min_score);
    set(&mut config.tagger, args.tagger);
    set_opt(&mut config.tagger_model, args.model.clone());
    let out = config.out_path()?;
    let corpus = load_data(&config)?;
    let worklist = read_worklist(&args.worklist)?;
    let top = worklist.top_k_gated(config.k, config.min_score);
    let tags = if top.is_empty() {
        Vec::new()
    } else {
        tag_ids(build_tagger(&config, &corpus)?.as_ref(), &corpus, &top)?
    };
    let mut outputs = OutputSet::new();
    outputs.write_jsonl(out, &tags)?;
    outputs.commit();
    println!("tagged {} exams into {}", tags.len(), out.display());
    Ok(())
}

fn caption(cli: &Cli, args: &CaptionArgs) -> Result<()> {
    let mut config = base_config(cli)?;
    set(&mut config.captioner, args.captioner);
    set_opt(&mut config.decoder_model, args.model.clone());
    let out = config.out_path()?;
    let corpus = load_data(&config)?;
    let tags: Vec<TagAssignment> = read_jsonl(&args.tags)?;
    let captions = if tags.is_empty() {
        Vec::new()
    } else {
        caption_all(&build_captioner(&config, &corpus)?, &corpus, &tags)?
    };
    let mut outputs = OutputSet::new();
    outputs.write_jsonl(out, &captions)?;
    outputs.commit();
    println!(
        "captioned {} exams with {} into {}",
        captions.len(),
        config.captioner,
        out.display()
    );
    Ok(())
}

fn pipeline(cli: &Cli, args: &PipelineArgs) -> Result<()> {
    let mut config = base_config(cli)?;
    set(&mut config.k, args.k);
    set_opt(&mut config.min_score, args.min_score);
    set(&mut config.ranker, args.ranker);
    set(&mut config.tagger, args.tagger);
    set(&mut config.captioner, args.captioner);
    set_opt(&mut config.ranker_model, args.ranker_model.clone());
    set_opt(&mut config.tagger_model, args.tagger_model.clone());
    set_opt(&mut config.decoder_model, args.decoder_model.clone());
    let summary = run_pipeline(&config)?;
    println!(
        "ranked {}, tagged {}, captioned {} ({} tag-constrained) -> {}",
        summary.ranked,
        summary.tagged,
        summary.captioned,
        summary.constrained,
        summary.captions.parent().unwrap_or(&summary.captions).display()
    );
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let config = base_config(cli)?;
    let out = config.out_path()?;
    let corpus = load_data(&config)?;
    let mut opts = EvalOptions::new(args.worklist.clone(), config.seed);
    opts.tags.clone_from(&args.tags);
    opts.captions.clone_from(&args.captions);
    opts.k = args.k;
    opts.f1_k = args.f1_k;
    opts.bootstrap.samples = args.bootstrap_samples;
    opts.bootstrap.sample_size = args.bootstrap_size;
    opts.bleu = BleuConfig {
        smooth: args.bleu_smooth,
        ..BleuConfig::default()
    };
    opts.rouge_beta = args.rouge_beta;
    opts.lexicon.clone_from(&args.lexicon);
    let reports = evaluate(&corpus, &opts)?;
    let mut outputs = OutputSet::new();
    outputs.write_json(out, &reports)?;
    outputs.commit();
    for r in &reports {
        println!("{:<20} {:.4}", r.metric, r.value);
    }
    Ok(())
}

fn bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let mut config = base_config(cli)?;
    set_opt(&mut config.ranker_model, args.ranker_model.clone());
    set_opt(&mut config.tagger_model, args.tagger_model.clone());
    let opts = BenchOptions {
        n_rank: args.n_rank,
        n_caption: args.n_caption,
        index_size: args.index_size,
        d: args.d,
        repeats: args.repeats,
        ..BenchOptions::default()
    };
    let corpus = match &config.data {
        Some(_) => load_data(&config)?,
        None => bench_corpus(&opts, config.seed)?,
    };
    let report = run_bench(&corpus, &config, &opts)?;
    println!(
        "rank {} exams (dim {}): {:.4} s ({} exams: {:.4} s)",
        report.n_rank,
        report.embedding_dim,
        report.rank_seconds,
        report.n_rank / 2,
        report.rank_half_seconds
    );
    println!(
        "tag + 1NN+ caption top {} against {} exams: {:.4} s",
        report.n_caption, report.index_size, report.caption_seconds
    );
    println!(
        "reference figures: {:.2} s / {:.2} s. {}",
        report.reference_rank_seconds, report.reference_caption_seconds, report.note
    );
    if let Some(out) = &config.out {
        let mut outputs = OutputSet::new();
        outputs.write_json(out, &report)?;
        outputs.commit();
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Rank(a) => rank(cli, a),
        Command::Tag(a) => tag(cli, a),
        Command::Caption(a) => caption(cli, a),
        Command::Pipeline(a) => pipeline(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Bench(a) => bench(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
