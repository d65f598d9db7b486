//! Command-line interface: `score`, `build`, `answer`, `report`, and
//! `gen-world`, each reading declared inputs and writing declared outputs
//! so stages can be rerun independently.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use convqa_core::metrics::AggregationUnit;
use convqa_core::subsets::{Method, Ordering};

use crate::config::RunConfig;
use crate::convergence::{score_corpus, scores_from_ledger, Scorer};
use crate::corpus::{filter_by_min_hints, load_corpus, save_corpus, Corpus};
use crate::gateway::{Cache, Gateway};
use crate::ledger::read_ledger;
use crate::passages::{build_passages, load_manifest, save_manifest, BuildOptions};
use crate::qa::{answer_passages, AnswerModel, PredictionRow};
use crate::report::{aggregate, warn_empty_cells, write_reports};
use crate::similarity::{similarity_corpus, sims_from_ledger};
use crate::testworld::{generate_world, save_world};

/// Exit code for runs that completed with per-row error records.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "convqa",
    version,
    about = "Score hint convergence, build High/Low-score passages, run few-shot QA, and evaluate EM/P/R/F1"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-hint convergence and question-hint cosine ledgers.
    Score(RunArgs),
    /// Build High-/Low-score passages from the score ledgers.
    Build(RunArgs),
    /// Answer every passage with each configured model.
    Answer(RunArgs),
    /// Aggregate predictions into report.txt / report.csv / report.json.
    Report(RunArgs),
    /// Generate a deterministic synthetic dataset + world fixture.
    GenWorld(GenWorldArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Convergence,
    Cosine,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderingArg {
    Canonical,
    Asc,
    Desc,
}

impl From<OrderingArg> for Ordering {
    fn from(arg: OrderingArg) -> Ordering {
        match arg {
            OrderingArg::Canonical => Ordering::Canonical,
            OrderingArg::Asc => Ordering::Ascending,
            OrderingArg::Desc => Ordering::Descending,
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long, default_value = "convqa.toml")]
    config: PathBuf,
    /// Dataset JSONL; overrides the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Response cache directory; overrides the config.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output directory for ledgers, manifest, and reports.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Selection method(s) for passage construction.
    #[arg(long)]
    method: Option<MethodArg>,
    /// Sentence ordering(s); repeatable.
    #[arg(long = "orderings")]
    orderings: Vec<OrderingArg>,
    /// Subsets per group (the paper-style default is 10).
    #[arg(long)]
    group_size: Option<usize>,
    /// Maximum in-flight provider requests.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Reuse existing ledger rows (default).
    #[arg(long, conflicts_with = "no_resume")]
    resume: bool,
    /// Recompute from scratch, discarding this stage's ledger.
    #[arg(long)]
    no_resume: bool,
    /// Aggregate per question (macro) instead of per passage.
    #[arg(long)]
    per_question: bool,
    /// Seeded subsample: keep this many questions.
    #[arg(long)]
    sample: Option<usize>,
}

impl RunArgs {
    fn load_config(&self) -> anyhow::Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)
            .with_context(|| format!("loading config `{}`", self.config.display()))?;
        if let Some(dataset) = &self.dataset {
            config.dataset = dataset.clone();
        }
        if let Some(cache_dir) = &self.cache_dir {
            config.cache_dir = cache_dir.clone();
        }
        if let Some(out_dir) = &self.out_dir {
            config.out_dir = out_dir.clone();
        }
        if let Some(method) = self.method {
            config.methods = match method {
                MethodArg::Convergence => vec![Method::Convergence],
                MethodArg::Cosine => vec![Method::CosineSimilarity],
                MethodArg::Both => vec![Method::Convergence, Method::CosineSimilarity],
            };
        }
        if !self.orderings.is_empty() {
            let mut orderings: Vec<Ordering> =
                self.orderings.iter().map(|&o| o.into()).collect();
            orderings.dedup();
            config.orderings = orderings;
        }
        if let Some(group_size) = self.group_size {
            config.group_size = group_size;
        }
        if let Some(concurrency) = self.concurrency {
            config.concurrency = concurrency;
        }
        if self.no_resume {
            config.resume = false;
        } else if self.resume {
            config.resume = true;
        }
        if self.per_question {
            config.aggregation = AggregationUnit::PerQuestion;
        }
        if let Some(sample) = self.sample {
            config.sample = Some(sample);
        }
        Ok(config)
    }
}

#[derive(Args, Clone)]
struct GenWorldArgs {
    /// Directory to write corpus.jsonl, world.json, and convqa.toml into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of entities (one question each); capped at the candidate limit.
    #[arg(long, default_value_t = 20)]
    entities: usize,
    /// Unique attributes minted per entity.
    #[arg(long, default_value_t = 3)]
    attributes: usize,
}

/// Load, validate, filter, and optionally subsample the configured corpus.
fn prepare_corpus(config: &RunConfig) -> anyhow::Result<Corpus> {
    let corpus = load_corpus(&config.dataset)
        .with_context(|| format!("loading dataset `{}`", config.dataset.display()))?;
    let options = BuildOptions {
        sizes: config.subset_sizes.clone(),
        group_size: config.group_size,
        methods: config.methods.clone(),
        orderings: config.orderings.clone(),
    };
    let min_hints = options.min_hints();
    let (mut corpus, dropped) = filter_by_min_hints(&corpus, min_hints);
    if dropped > 0 {
        log::warn!(
            "dropped {dropped} question(s) with fewer than {min_hints} hints \
             (too few subsets for two groups of {})",
            config.group_size
        );
    }
    if let Some(n) = config.sample {
        if n < corpus.questions.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut indices: Vec<usize> = (0..corpus.questions.len()).collect();
            indices.shuffle(&mut rng);
            let mut keep: Vec<usize> = indices.into_iter().take(n).collect();
            keep.sort_unstable();
            corpus.questions = keep
                .into_iter()
                .map(|i| corpus.questions[i].clone())
                .collect();
            log::info!("sampled {n} question(s) with seed {}", config.seed);
        }
    }
    anyhow::ensure!(!corpus.questions.is_empty(), "no usable questions in dataset");
    Ok(corpus)
}

fn build_gateway(
    config: &RunConfig,
    provider: &crate::config::ProviderConfig,
    api_key: Option<&str>,
) -> anyhow::Result<Gateway> {
    let provider = provider.build(api_key)?;
    let cache = Cache::new(&config.cache_dir)?;
    Ok(Gateway::new(provider, Some(cache), config.concurrency))
}

fn remove_if_exists(path: &std::path::Path) -> anyhow::Result<()> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e).with_context(|| format!("removing `{}`", path.display())),
    }
}

fn cmd_score(args: &RunArgs) -> anyhow::Result<i32> {
    let config = args.load_config()?;
    let api_key = RunConfig::api_key_from_env();
    config.validate(api_key.as_deref())?;
    let corpus = prepare_corpus(&config)?;
    std::fs::create_dir_all(&config.out_dir)?;

    let convergence_ledger = config.out_dir.join("convergence.jsonl");
    let similarity_ledger = config.out_dir.join("similarity.jsonl");
    if !config.resume {
        remove_if_exists(&convergence_ledger)?;
        remove_if_exists(&similarity_ledger)?;
    }

    let scorer_gateway = build_gateway(&config, &config.scorer, api_key.as_deref())?;
    let scorer = Scorer::new(
        &scorer_gateway,
        config.prompts(),
        config.scorer.chat_params(config.scoring_max_tokens),
    )?;
    let outcome = score_corpus(&scorer, &corpus, &convergence_ledger, config.concurrency)?;
    println!(
        "convergence: {} record(s), {} resumed question(s), {} error row(s) -> {}",
        outcome.records.len(),
        outcome.skipped,
        outcome.errors,
        convergence_ledger.display()
    );

    let embedding_gateway = build_gateway(&config, &config.embedding, api_key.as_deref())?;
    let sims = similarity_corpus(
        &embedding_gateway,
        &config.embedding.embedding_model(),
        &corpus,
        &similarity_ledger,
    )?;
    println!(
        "similarity: {} question(s), {} resumed, {} error row(s) -> {}",
        sims.by_question.len(),
        sims.skipped,
        sims.errors,
        similarity_ledger.display()
    );

    Ok(if outcome.errors + sims.errors > 0 {
        EXIT_PARTIAL
    } else {
        0
    })
}

fn cmd_build(args: &RunArgs) -> anyhow::Result<i32> {
    let config = args.load_config()?;
    config.validate(RunConfig::api_key_from_env().as_deref())?;
    let corpus = prepare_corpus(&config)?;

    let conv = scores_from_ledger(config.out_dir.join("convergence.jsonl"), &corpus)?;
    let sims = sims_from_ledger(config.out_dir.join("similarity.jsonl"), &corpus)?;
    anyhow::ensure!(
        !conv.is_empty() && !sims.is_empty(),
        "score ledgers are missing or empty; run `convqa score` first"
    );

    let options = BuildOptions {
        sizes: config.subset_sizes.clone(),
        group_size: config.group_size,
        methods: config.methods.clone(),
        orderings: config.orderings.clone(),
    };
    let outcome = build_passages(&corpus, &conv, &sims, &options);
    for skip in &outcome.skipped {
        log::warn!("skipping question `{}`: {}", skip.question_id, skip.reason);
    }
    let manifest = config.out_dir.join("passages.jsonl");
    save_manifest(&outcome.passages, &manifest)?;
    println!(
        "built {} passage(s) for {} question(s) -> {}",
        outcome.passages.len(),
        corpus.questions.len() - outcome.skipped.len(),
        manifest.display()
    );
    Ok(0)
}

fn cmd_answer(args: &RunArgs) -> anyhow::Result<i32> {
    let config = args.load_config()?;
    let api_key = RunConfig::api_key_from_env();
    config.validate(api_key.as_deref())?;
    let corpus = prepare_corpus(&config)?;
    let shots = config.shots()?;

    let manifest = config.out_dir.join("passages.jsonl");
    let passages = load_manifest(&manifest)
        .with_context(|| format!("loading manifest `{}`", manifest.display()))?;
    anyhow::ensure!(
        !passages.is_empty(),
        "passage manifest is missing or empty; run `convqa build` first"
    );

    let ledger = config.out_dir.join("predictions.jsonl");
    if !config.resume {
        remove_if_exists(&ledger)?;
    }

    let mut predictions = 0usize;
    let mut errors = 0usize;
    for provider_config in &config.answer {
        let gateway = build_gateway(&config, provider_config, api_key.as_deref())?;
        let model = AnswerModel::new(
            provider_config.model_tag(),
            provider_config.chat_params(config.answer_max_tokens),
        );
        let outcome = answer_passages(
            &gateway,
            &passages,
            &corpus,
            &shots,
            std::slice::from_ref(&model),
            &ledger,
            config.concurrency,
        )?;
        println!(
            "answered {} passage(s) with `{}` ({} resumed, {} error row(s))",
            outcome.predictions.len(),
            model.tag,
            outcome.skipped,
            outcome.errors
        );
        predictions += outcome.predictions.len();
        errors += outcome.errors;
    }
    println!("prediction ledger -> {}", ledger.display());
    if predictions == 0 && errors > 0 {
        anyhow::bail!("every prediction failed; see error rows in the ledger");
    }
    Ok(if errors > 0 { EXIT_PARTIAL } else { 0 })
}

fn cmd_report(args: &RunArgs) -> anyhow::Result<i32> {
    let config = args.load_config()?;
    let corpus = load_corpus(&config.dataset)
        .with_context(|| format!("loading dataset `{}`", config.dataset.display()))?;

    let ledger = config.out_dir.join("predictions.jsonl");
    let rows: Vec<PredictionRow> = read_ledger(&ledger)?;
    let mut predictions = Vec::new();
    let mut error_rows = 0usize;
    for row in rows {
        match row {
            PredictionRow::Prediction(p) => predictions.push(p),
            PredictionRow::Error { .. } => error_rows += 1,
        }
    }
    if error_rows > 0 {
        log::warn!("{error_rows} error row(s) in `{}` were not scored", ledger.display());
    }

    let golds: BTreeMap<String, convqa_core::corpus::GoldAnswer> = corpus
        .questions
        .iter()
        .map(|q| (q.id.clone(), q.answer.clone()))
        .collect();
    let report = aggregate(&predictions, &golds, config.aggregation)?;
    warn_empty_cells(&report);
    write_reports(&report, &config.out_dir)?;
    print!("{}", crate::report::render_text(&report));
    println!(
        "reports -> {}/report.{{txt,csv,json}}",
        config.out_dir.display()
    );
    Ok(0)
}

fn cmd_gen_world(args: &GenWorldArgs) -> anyhow::Result<i32> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating `{}`", args.out.display()))?;
    let (world, corpus) = generate_world(args.seed, args.entities, args.attributes);
    let world_path = args.out.join("world.json");
    let dataset_path = args.out.join("corpus.jsonl");
    save_world(&world, &world_path)?;
    save_corpus(&corpus, &dataset_path)?;

    let config_path = args.out.join("convqa.toml");
    let config_text = format!(
        r#"dataset = "corpus.jsonl"
cache_dir = ".convqa-cache"
out_dir = "out"
seed = {seed}

[scorer]
kind = "world"
model = "world-judge"
world = "world.json"

[embedding]
kind = "hash"
dim = 48
seed = 0

[[answer]]
kind = "world"
model = "world-answerer"
tag = "rule-based"
world = "world.json"
"#,
        seed = args.seed
    );
    std::fs::write(&config_path, config_text)
        .with_context(|| format!("writing `{}`", config_path.display()))?;
    println!(
        "wrote {} question(s), world of {} entities:\n  {}\n  {}\n  {}",
        corpus.questions.len(),
        world.entities.len(),
        dataset_path.display(),
        world_path.display(),
        config_path.display()
    );
    println!("run the pipeline from `{}` with: convqa score && convqa build && convqa answer && convqa report", args.out.display());
    Ok(0)
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Score(args) => cmd_score(args),
        Command::Build(args) => cmd_build(args),
        Command::Answer(args) => cmd_answer(args),
        Command::Report(args) => cmd_report(args),
        Command::GenWorld(args) => cmd_gen_world(args),
    }
}
