//! Subcommand implementations. Every JSON artifact carries the fully
//! resolved run configuration under `"config"`; anything that varies between
//! identical runs (wall-clock time) lives under `"metadata"`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use cgn_core::corpus::{self, BalanceStrategy, CorpusFormat};
use cgn_core::embedding::{load_precomputed, EmbeddingProvider};
use cgn_core::explain::{explain_lines, render_report, ExplainConfig, ReportFormat};
use cgn_core::gcn::{GcnMode, GcnTrainConfig};
use cgn_core::metrics::{cross_validate, evaluate, render_table, CrossValReport, EvalReport};
use cgn_core::models::{DeepTreeConfig, ModelKind, SgdConfig, TreeConfig};
use cgn_core::{fit_pipeline, Corpus, CweClass, PipelineConfig, Snippet, TrainedPipeline};

use crate::{
    BalanceArg, CrossvalArgs, EmbedderArg, EvalArgs, ExplainArgs, Failure, FormatArg, GcnModeArg,
    IngestArgs, ModelArg, PipelineArgs, TrainArgs,
};

type CmdResult = Result<(), Failure>;

#[derive(Debug, Serialize)]
struct RunConfig {
    command: &'static str,
    input: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ingest: Option<IngestConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pipeline: Option<PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    explain: Option<ExplainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<ReportFormat>,
}

impl RunConfig {
    fn new(command: &'static str, input: &Path, seed: u64) -> Self {
        RunConfig {
            command,
            input: input.to_path_buf(),
            output: None,
            model: None,
            seed,
            ingest: None,
            pipeline: None,
            folds: None,
            explain: None,
            format: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct IngestConfig {
    balance: &'static str,
    target: Option<usize>,
    test_fraction: f64,
}

#[derive(Serialize)]
struct Metadata {
    wall_clock_seconds: f64,
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ClassCount {
    class: CweClass,
    count: usize,
}

fn class_counts(c: &Corpus) -> Vec<ClassCount> {
    CweClass::ALL
        .into_iter()
        .map(|class| ClassCount {
            class,
            count: c.count(class),
        })
        .collect()
}

#[derive(Serialize)]
struct IngestSummary {
    config: RunConfig,
    loaded: usize,
    total: usize,
    train: usize,
    test: usize,
    class_counts: Vec<ClassCount>,
    train_class_counts: Vec<ClassCount>,
    test_class_counts: Vec<ClassCount>,
}

pub fn ingest(args: &IngestArgs) -> CmdResult {
    require_file(&args.input, "input")?;
    let raw = corpus::load_corpus(&args.input, CorpusFormat::Csv)?;
    let balanced = match args.balance {
        BalanceArg::Downsample => {
            corpus::balance(&raw, BalanceStrategy::Downsample, args.target, args.seed)?
        }
        BalanceArg::Upsample => {
            corpus::balance(&raw, BalanceStrategy::UpsampleAugment, args.target, args.seed)?
        }
        BalanceArg::None => raw.clone(),
    };
    let (train, test) = corpus::split(&balanced, args.test_fraction, args.seed)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    corpus::save_corpus(&train, args.out.join("train.csv"))?;
    corpus::save_corpus(&test, args.out.join("test.csv"))?;

    let mut config = RunConfig::new("ingest", &args.input, args.seed);
    config.output = Some(args.out.clone());
    config.ingest = Some(IngestConfig {
        balance: match args.balance {
            BalanceArg::Downsample => "downsample",
            BalanceArg::Upsample => "upsample",
            BalanceArg::None => "none",
        },
        target: args.target,
        test_fraction: args.test_fraction,
    });
    let summary = IngestSummary {
        config,
        loaded: raw.len(),
        total: balanced.len(),
        train: train.len(),
        test: test.len(),
        class_counts: class_counts(&balanced),
        train_class_counts: class_counts(&train),
        test_class_counts: class_counts(&test),
    };
    write_json(&args.out.join("summary.json"), &summary)?;

    println!(
        "{} samples loaded, {} after balancing: {} train / {} test",
        raw.len(),
        balanced.len(),
        train.len(),
        test.len()
    );
    for c in &summary.class_counts {
        println!("  {:<10} {}", c.class.name(), c.count);
    }
    Ok(())
}

fn pipeline_config(p: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let kind = if p.embed_file.is_some() {
        EmbedderArg::File
    } else {
        p.embedder
    };
    if kind == EmbedderArg::File && p.embed_file.is_none() {
        return Err(Failure::Usage("--embedder file requires --embed-file".into()));
    }
    let model = match p.model {
        ModelArg::Deeptree => ModelKind::Deeptree,
        ModelArg::Tree => ModelKind::Tree,
        ModelArg::Sgd => ModelKind::Sgd,
    };
    let defaults = PipelineConfig::default();
    let mut config = PipelineConfig {
        embed: cgn_core::embedding::EmbedConfig {
            kind: match kind {
                EmbedderArg::Hash => cgn_core::embedding::EmbedderKind::Hash,
                EmbedderArg::File => cgn_core::embedding::EmbedderKind::File,
            },
            dim: p.dim,
            seed: p.seed,
            source: p.embed_file.clone(),
        },
        gcn: GcnTrainConfig {
            mode: match p.gcn_mode {
                GcnModeArg::Fixed => GcnMode::Fixed,
                GcnModeArg::Trained => GcnMode::Trained,
            },
            out_dim: p.gcn_out_dim,
            learning_rate: p.gcn_lr,
            epochs: p.gcn_epochs,
            l2: p.gcn_l2,
            ..defaults.gcn
        },
        self_loops: p.self_loops,
        model,
        deeptree: DeepTreeConfig {
            tree: TreeConfig {
                max_depth: p.max_depth,
                min_samples_leaf: p.min_samples_leaf,
                seed: p.seed,
            },
            hidden: p.hidden.clone(),
            learning_rate: p.lr.unwrap_or(defaults.deeptree.learning_rate),
            epochs: p.epochs,
            batch_size: p.batch_size,
            seed: p.seed,
        },
        sgd: SgdConfig {
            learning_rate: p.lr.unwrap_or(defaults.sgd.learning_rate),
            epochs: p.epochs,
            seed: p.seed,
        },
    }
    .with_seed(p.seed);
    // a file embedder carries no seed of its own
    if config.embed.source.is_some() {
        config.embed.seed = 0;
    }
    Ok(config)
}

/// Loads the provider once; file embeddings can be large.
fn embedder_for(config: &PipelineConfig) -> anyhow::Result<EmbeddingProvider> {
    match &config.embed.source {
        Some(path) => {
            let provider = load_precomputed(path)
                .with_context(|| format!("loading embeddings from {}", path.display()))?;
            if provider.dim() != config.embed.dim && config.embed.dim != cgn_core::embedding::DEFAULT_DIM {
                return Err(anyhow!(
                    "{} holds {}-dimensional vectors but --dim {} was requested",
                    path.display(),
                    provider.dim(),
                    config.embed.dim
                ));
            }
            Ok(provider)
        }
        None => Ok(EmbeddingProvider::hash(config.embed.dim, config.embed.seed)?),
    }
}

#[derive(Serialize)]
struct ClassifierTrace {
    losses: Vec<f64>,
    final_train_accuracy: f64,
    seed: u64,
}

#[derive(Serialize)]
struct TrainOutput {
    config: RunConfig,
    train_samples: usize,
    gcn_losses: Vec<f64>,
    gcn_head_accuracy: Option<f64>,
    classifier: ClassifierTrace,
    metadata: Metadata,
}

fn default_report_path(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    model.with_file_name(format!("{stem}.report.json"))
}

pub fn train(args: &TrainArgs) -> CmdResult {
    require_file(&args.input, "input")?;
    if let Some(path) = &args.pipeline.embed_file {
        require_file(path, "embedding file")?;
    }
    let mut pipeline_cfg = pipeline_config(&args.pipeline)?;
    let corpus = corpus::load_corpus(&args.input, CorpusFormat::Csv)?;
    let embedder = embedder_for(&pipeline_cfg)?;
    pipeline_cfg.embed.dim = embedder.dim();

    let started = std::time::Instant::now();
    let (pipeline, report) = fit_pipeline(&corpus, embedder, &pipeline_cfg)?;
    let elapsed = started.elapsed().as_secs_f64();

    pipeline.save(&args.out)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&args.out));

    let mut config = RunConfig::new("train", &args.input, args.pipeline.seed);
    config.output = Some(args.out.clone());
    config.pipeline = Some(pipeline.config.clone());
    let output = TrainOutput {
        config,
        train_samples: corpus.len(),
        gcn_losses: report.gcn_losses,
        gcn_head_accuracy: report.gcn_head_accuracy,
        classifier: ClassifierTrace {
            losses: report.classifier.losses,
            final_train_accuracy: report.classifier.final_train_accuracy,
            seed: report.classifier.seed,
        },
        metadata: Metadata {
            wall_clock_seconds: elapsed,
        },
    };
    write_json(&report_path, &output)?;
    println!(
        "trained {:?} on {} samples: train accuracy {:.4}; model {}, report {}",
        pipeline.classifier.kind(),
        corpus.len(),
        output.classifier.final_train_accuracy,
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

fn class_table(report: &EvalReport) -> String {
    let mut out = format!("{:<10} {:>7} {:>8} {:>6} {:>6}\n", "Class", "Support", "Accuracy", "TP", "FN");
    for s in &report.per_class {
        out.push_str(&format!(
            "{:<10} {:>7} {:>8.4} {:>6} {:>6}\n",
            s.class.name(),
            s.support,
            s.accuracy,
            s.tp,
            s.fn_
        ));
    }
    out
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    config: RunConfig,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    require_file(&args.model, "model")?;
    require_file(&args.input, "input")?;
    let pipeline = TrainedPipeline::load(&args.model)?;
    let corpus = corpus::load_corpus(&args.input, CorpusFormat::Csv)?;
    let report = evaluate(&pipeline, &corpus)?;

    let label = format!("{:?}", pipeline.classifier.kind()).to_lowercase();
    print!("{}", render_table(&[(label, report.summary())]));
    println!();
    print!("{}", class_table(&report));

    if let Some(out) = &args.out {
        let mut config = RunConfig::new("eval", &args.input, pipeline.config.deeptree.seed);
        config.output = Some(out.clone());
        config.model = Some(args.model.clone());
        config.pipeline = Some(pipeline.config.clone());
        write_json(
            out,
            &EvalOutput {
                config,
                report: &report,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CrossvalOutput {
    config: RunConfig,
    #[serde(flatten)]
    report: CrossValReport,
    metadata: Metadata,
}

pub fn crossval(args: &CrossvalArgs) -> CmdResult {
    require_file(&args.input, "input")?;
    if let Some(path) = &args.pipeline.embed_file {
        require_file(path, "embedding file")?;
    }
    if args.folds < 2 {
        return Err(Failure::Usage(format!("--folds must be at least 2, got {}", args.folds)));
    }
    let mut pipeline_cfg = pipeline_config(&args.pipeline)?;
    let corpus = corpus::load_corpus(&args.input, CorpusFormat::Csv)?;
    let embedder = embedder_for(&pipeline_cfg)?;
    pipeline_cfg.embed.dim = embedder.dim();

    let started = std::time::Instant::now();
    let report = cross_validate(
        |train: &Corpus, seed| {
            let mut cfg = pipeline_cfg.clone().with_seed(seed);
            let mut provider = embedder.clone();
            if let EmbeddingProvider::Hash { seed: s, .. } = &mut provider {
                *s = seed;
            } else {
                cfg.embed.seed = 0;
            }
            fit_pipeline(train, provider, &cfg).map(|(p, _)| p)
        },
        &corpus,
        args.folds,
        args.pipeline.seed,
    )?;
    let elapsed = started.elapsed().as_secs_f64();

    let mut rows: Vec<(String, _)> = report
        .folds
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("fold {}", i + 1), r.summary()))
        .collect();
    rows.push(("mean".into(), report.mean.clone()));
    rows.push(("stddev".into(), report.stddev.clone()));
    print!("{}", render_table(&rows));

    if let Some(out) = &args.out {
        let mut config = RunConfig::new("crossval", &args.input, args.pipeline.seed);
        config.output = Some(out.clone());
        config.pipeline = Some(pipeline_cfg);
        config.folds = Some(args.folds);
        write_json(
            out,
            &CrossvalOutput {
                config,
                report,
                metadata: Metadata {
                    wall_clock_seconds: elapsed,
                },
            },
        )?;
    }
    Ok(())
}

fn load_snippet(args: &ExplainArgs) -> anyhow::Result<Snippet> {
    match &args.id {
        Some(id) => {
            let corpus = corpus::load_corpus(&args.input, CorpusFormat::Csv)?;
            let sample = corpus
                .get(id)
                .ok_or_else(|| anyhow!("no sample with id {id:?} in {}", args.input.display()))?;
            Ok(Snippet::from_code(sample.id.clone(), &sample.code)?)
        }
        None => {
            let code = fs::read_to_string(&args.input)
                .with_context(|| format!("reading {}", args.input.display()))?;
            let id = args
                .input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Snippet::from_code(id, &code)?)
        }
    }
}

pub fn explain(args: &ExplainArgs) -> CmdResult {
    require_file(&args.model, "model")?;
    require_file(&args.input, "input")?;
    let cfg = ExplainConfig {
        n_perturbations: args.perturbations,
        keep_probability: args.keep_prob,
        kernel_width: args.kernel_width,
        ridge: args.ridge,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let format = match args.format {
        FormatArg::Ansi => ReportFormat::Ansi,
        FormatArg::Html => ReportFormat::Html,
        FormatArg::Json => ReportFormat::Json,
    };

    let pipeline = TrainedPipeline::load(&args.model)?;
    let snippet = load_snippet(args)?;
    let explanation = explain_lines(&pipeline, &snippet, &cfg)?;
    let mut text = render_report(&snippet, &explanation, format)?;

    if format == ReportFormat::Json {
        let mut config = RunConfig::new("explain", &args.input, args.seed);
        config.output = args.out.clone();
        config.model = Some(args.model.clone());
        config.explain = Some(cfg);
        config.format = Some(format);
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(anyhow::Error::from)?;
        value
            .as_object_mut()
            .expect("report is a JSON object")
            .insert("config".into(), serde_json::to_value(&config).map_err(anyhow::Error::from)?);
        text = serde_json::to_string_pretty(&value).map_err(anyhow::Error::from)? + "\n";
    }

    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .context("writing report")?;
        }
    }
    Ok(())
}
