//! Command-line front end. Flags override config-file keys, which override
//! built-in defaults. The feature root is `--features`, else
//! `$TROPE_FEATURE_ROOT`, else `<corpus>/features`.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{BackendKind, ExperimentConfig, Mode};
use crate::corpus::{load_splits, validate_example, ExampleRecord, FeatureStore, SplitKind, SplitSet, Taxonomy};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, render_summary_table, run_crossval, StdKind};
use crate::humaneval::{sample_questions, QuestionRecord};
use crate::manifest::RunManifest;
use crate::stats::{category_stats, length_buckets, multi_category_fraction, render_category_table, StatsMode};
use crate::storyteller::{AnchorBackend, ContextualBackend, PooledTokenBackend};
use crate::synth::{gen_synthetic_corpus, CorpusLayout, SynthStream, SyntheticSpec};
use crate::train::{fit, load_samples, Checkpoint, MetricsLog};
use crate::corpus::Modality;

pub const FEATURE_ROOT_ENV: &str = "TROPE_FEATURE_ROOT";
pub const CHECKPOINT_FILE: &str = "checkpoint.trck";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Parser)]
#[command(name = "trope", version, about = "Trope classification over video features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CorpusArgs {
    /// Corpus directory holding taxonomy.json and splits/.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Feature root; overrides the environment variable.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

impl CorpusArgs {
    fn layout(&self) -> CorpusLayout {
        CorpusLayout::new(&self.corpus)
    }

    fn feature_root(&self) -> PathBuf {
        self.features
            .clone()
            .or_else(|| std::env::var_os(FEATURE_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| self.layout().features())
    }

    fn load(&self) -> Result<(Taxonomy, SplitSet)> {
        let layout = self.layout();
        let taxonomy = Taxonomy::load(layout.taxonomy())?;
        let splits = load_splits(layout.splits(), &taxonomy)?;
        Ok((taxonomy, splits))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatsModeArg {
    PerExample,
    PerTropeMean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StdArg {
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check split files and feature files.
    Validate {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Config whose streams are checked; defaults to the built-in streams.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Duration statistics per category and length buckets.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value = "per-example")]
        mode: StatsModeArg,
        /// Also print median, min, max and both standard deviations.
        #[arg(long)]
        verbose: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 1024)]
        motion_dim: usize,
        #[arg(long, default_value_t = 768)]
        asr_dim: usize,
        #[arg(long, default_value_t = 768)]
        context_dim: usize,
        #[arg(long, default_value_t = 4)]
        min_frames: usize,
        #[arg(long, default_value_t = 12)]
        max_frames: usize,
        #[arg(long, default_value_t = 1.0)]
        margin: f64,
        #[arg(long, default_value_t = 1.0)]
        feature_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one fold and keep the best-validation checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score a checkpoint on one split of a fold.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        fold: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and test all five folds, then summarize.
    Crossval {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Comma-separated modes; defaults to the config's mode.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "population")]
        std: StdArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample multiple-choice questions as JSON lines.
    SampleHumaneval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Stats { .. } => "stats",
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Crossval { .. } => "crossval",
            Command::SampleHumaneval { .. } => "sample-humaneval",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures print `error[<category>]: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut manifest = RunManifest::start(cli.command.name(), argv);
    match execute(cli.command, &mut manifest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn finish(manifest: &mut RunManifest, dir: &Path) -> Result<()> {
    manifest.finish();
    manifest.write(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path, mode: Option<&str>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(name) = mode {
        let mode = Mode::parse(name).ok_or_else(|| Error::Config(format!("unknown mode {name:?}")))?;
        let streams = config.streams.clone();
        config = config.with_mode(mode, &streams);
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// The frozen description encoder named by the config. Relative paths
/// resolve against the corpus directory.
pub fn open_backend(config: &ExperimentConfig, corpus: &Path) -> Result<Box<dyn ContextualBackend>> {
    let layout = CorpusLayout::new(corpus);
    let resolve = |default: PathBuf| match &config.context.path {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => corpus.join(p),
        None => default,
    };
    Ok(match config.context.backend {
        BackendKind::Anchors => Box::new(AnchorBackend::load(resolve(layout.anchors()))?),
        BackendKind::PooledTokens => Box::new(PooledTokenBackend::open(
            resolve(layout.tokens()),
            config.context.dim,
            config.context.pooling,
        )?),
    })
}

fn execute(command: Command, manifest: &mut RunManifest) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let mut print = |s: &str| {
        let _ = stdout.write_all(s.as_bytes());
    };
    match command {
        Command::Validate { corpus, config } => {
            let config = match config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let layout = corpus.layout();
            let taxonomy = Taxonomy::load(layout.taxonomy())?;
            let splits = load_splits(layout.splits(), &taxonomy)?;
            let mut store = FeatureStore::new(corpus.feature_root());
            for s in &config.streams {
                store = store.with_dim(s.modality, s.input_dim);
            }
            let mut problems = Vec::new();
            for e in &splits.examples {
                let record = ExampleRecord::from_example(e, &taxonomy, SplitKind::Train);
                problems.extend(
                    validate_example(&record, &taxonomy)
                        .messages()
                        .into_iter()
                        .map(|m| format!("{}: {m}", e.video_id)),
                );
                for s in &config.streams {
                    if let Err(err) = store.load_feature(&e.video_id, s.modality) {
                        problems.push(format!("{}: {err}", e.video_id));
                    }
                }
            }
            for line in &problems {
                print(&format!("{line}\n"));
            }
            let sizes: Vec<String> = splits.folds.iter().map(|f| f.test.len().to_string()).collect();
            print(&format!(
                "{} examples, {} tropes, test sizes [{}], {} problems\n",
                splits.examples.len(),
                taxonomy.len(),
                sizes.join(", "),
                problems.len()
            ));
            if !problems.is_empty() {
                return Err(Error::Invalid(format!("{} validation problems", problems.len())));
            }
            Ok(())
        }
        Command::Stats {
            corpus,
            mode,
            verbose,
            out,
        } => {
            let (taxonomy, splits) = corpus.load()?;
            let mode = match mode {
                StatsModeArg::PerExample => StatsMode::PerExample,
                StatsModeArg::PerTropeMean => StatsMode::PerTropeMean,
            };
            let rows = category_stats(&splits.examples, &taxonomy, mode)?;
            let buckets = length_buckets(&splits.examples)?;
            let multi = multi_category_fraction(&taxonomy);
            print(&render_category_table(&rows, verbose));
            print(&format!(
                "length buckets: short {:.2}% ({}), median {:.2}% ({}), long {:.2}% ({})\n",
                buckets.short_pct,
                buckets.short_count,
                buckets.median_pct,
                buckets.median_count,
                buckets.long_pct,
                buckets.long_count
            ));
            print(&format!("multi-category tropes: {:.2}%\n", 100.0 * multi));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("stats.json");
                write_json(
                    &path,
                    &serde_json::json!({
                        "categories": rows,
                        "length_buckets": buckets,
                        "multi_category_fraction": multi,
                    }),
                )?;
                manifest.outputs.push(path);
                finish(manifest, &dir)?;
            }
            Ok(())
        }
        Command::GenSynthetic {
            out,
            classes,
            per_class,
            motion_dim,
            asr_dim,
            context_dim,
            min_frames,
            max_frames,
            margin,
            feature_noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_classes: classes,
                examples_per_class: per_class,
                streams: vec![
                    SynthStream {
                        modality: Modality::Motion,
                        dim: motion_dim,
                    },
                    SynthStream {
                        modality: Modality::Asr,
                        dim: asr_dim,
                    },
                ],
                context_dim,
                min_frames,
                max_frames,
                margin,
                feature_noise,
                seed,
            };
            let corpus = gen_synthetic_corpus(&spec, &out)?;
            print(&format!(
                "wrote {} examples over {} tropes to {}\n",
                corpus.splits.examples.len(),
                corpus.taxonomy.len(),
                out.display()
            ));
            manifest.seed = Some(seed);
            manifest.config = Some(serde_json::to_value(&spec).expect("spec serializes"));
            manifest.outputs.push(out.clone());
            finish(manifest, &out)
        }
        Command::Train {
            config,
            corpus,
            fold,
            out,
            seed,
            mode,
        } => {
            let config = load_config(&config, mode.as_deref(), seed)?;
            let (taxonomy, splits) = corpus.load()?;
            let run = splits
                .folds
                .get(fold)
                .ok_or_else(|| Error::Invalid(format!("no fold {fold}")))?;
            let backend = if config.mode.has_storyteller() {
                Some(open_backend(&config, &corpus.corpus)?)
            } else {
                None
            };
            let samples = load_samples(
                &splits.examples,
                &FeatureStore::new(corpus.feature_root()),
                &config,
                backend.as_deref(),
            )?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let metrics_path = out.join(METRICS_FILE);
            let file = std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
            let mut log = MetricsLog::new(std::io::BufWriter::new(file));
            let mut log_err = None;
            let checkpoint = fit(run, &samples, &config, taxonomy.len(), &mut |r| {
                if let Err(e) = log.write(r) {
                    log_err.get_or_insert(e);
                }
            })?;
            drop(log);
            if let Some(e) = log_err {
                return Err(Error::io(&metrics_path, e));
            }
            let ckpt_path = out.join(CHECKPOINT_FILE);
            checkpoint.save(&ckpt_path)?;
            let test = splits.select(run, SplitKind::Test);
            let report = evaluate_split(&checkpoint, &test, &samples, &taxonomy)?;
            let report_path = out.join("report.json");
            write_json(&report_path, &report)?;
            print(&format!(
                "fold {fold}: best epoch {}, val acc {:.4}, test acc {:.4}\n",
                checkpoint.epoch, checkpoint.best_val_accuracy, report.accuracy
            ));
            manifest.seed = Some(config.seed);
            manifest.config = Some(serde_json::to_value(&config).expect("config serializes"));
            manifest.outputs.extend([ckpt_path, metrics_path, report_path]);
            finish(manifest, &out)
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            fold,
            split,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (taxonomy, splits) = corpus.load()?;
            let run = splits
                .folds
                .get(fold)
                .ok_or_else(|| Error::Invalid(format!("no fold {fold}")))?;
            let kind = match split {
                SplitArg::Train => SplitKind::Train,
                SplitArg::Val => SplitKind::Val,
                SplitArg::Test => SplitKind::Test,
            };
            let examples = splits.select(run, kind);
            // Context embeddings are not needed for prediction.
            let mut config = ckpt.config.clone();
            if config.mode.has_storyteller() {
                config.mode = Mode::Baseline;
            }
            let samples = load_samples(&examples, &FeatureStore::new(corpus.feature_root()), &config, None)?;
            let report = evaluate_split(&ckpt, &examples, &samples, &taxonomy)?;
            print(&format!(
                "accuracy {:.4} ({}/{})\n",
                report.accuracy, report.correct, report.total
            ));
            for (c, a) in &report.per_category {
                let acc = a.accuracy().map_or("-".to_string(), |v| format!("{v:.4}"));
                print(&format!("  {:<10} {acc} (n={})\n", c.short_name(), a.count));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("report.json");
                write_json(&path, &report)?;
                manifest.config = Some(serde_json::to_value(&ckpt.config).expect("config serializes"));
                manifest.seed = Some(ckpt.config.seed);
                manifest.outputs.push(path);
                finish(manifest, &dir)?;
            }
            Ok(())
        }
        Command::Crossval {
            config,
            corpus,
            modes,
            seed,
            std,
            out,
        } => {
            let base = load_config(&config, None, seed)?;
            let modes = if modes.is_empty() {
                vec![base.mode]
            } else {
                modes
                    .iter()
                    .map(|m| Mode::parse(m).ok_or_else(|| Error::Config(format!("unknown mode {m:?}"))))
                    .collect::<Result<_>>()?
            };
            let raw_streams = if base.mode == Mode::Oracle {
                ExperimentConfig::default().streams
            } else {
                base.streams.clone()
            };
            let (taxonomy, splits) = corpus.load()?;
            let store = FeatureStore::new(corpus.feature_root());
            let std_kind = match std {
                StdArg::Population => StdKind::Population,
                StdArg::Sample => StdKind::Sample,
            };
            let mut rows = Vec::new();
            let mut records = Vec::new();
            for mode in modes {
                let config = base.with_mode(mode, &raw_streams);
                config.validate()?;
                let backend = if mode.has_storyteller() {
                    Some(open_backend(&config, &corpus.corpus)?)
                } else {
                    None
                };
                let samples = load_samples(&splits.examples, &store, &config, backend.as_deref())?;
                let (folds, summary) = run_crossval(&splits, &samples, &config, &taxonomy, std_kind)?;
                records.push(serde_json::json!({
                    "mode": mode.name(),
                    "config": config,
                    "folds": folds.iter().map(|f| &f.report).map(|r| serde_json::json!({
                        "accuracy": r.accuracy,
                        "correct": r.correct,
                        "total": r.total,
                        "per_category": r.per_category,
                    })).collect::<Vec<_>>(),
                    "summary": summary,
                }));
                if let Some(dir) = &out {
                    let dir = dir.join(mode.name());
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let path = dir.join(METRICS_FILE);
                    let mut log = MetricsLog::new(Vec::new());
                    for f in &folds {
                        for r in &f.log {
                            log.write(r).map_err(|e| Error::io(&path, e))?;
                        }
                    }
                    std::fs::write(&path, log.into_inner()).map_err(|e| Error::io(&path, e))?;
                    manifest.outputs.push(path);
                }
                rows.push((mode.name().to_string(), summary));
            }
            print(&render_summary_table(&rows));
            if let Some(dir) = out {
                let path = dir.join("crossval.json");
                write_json(&path, &records)?;
                manifest.seed = Some(base.seed);
                manifest.config = Some(serde_json::to_value(&base).expect("config serializes"));
                manifest.outputs.push(path);
                finish(manifest, &dir)?;
            }
            Ok(())
        }
        Command::SampleHumaneval {
            corpus,
            n,
            seed,
            out,
        } => {
            let (taxonomy, splits) = corpus.load()?;
            let set = sample_questions(&splits.examples, &taxonomy, n, seed)?;
            let mut text = String::new();
            for q in &set.questions {
                text.push_str(&serde_json::to_string(&QuestionRecord::new(q, &taxonomy)).expect("serializable"));
                text.push('\n');
            }
            for s in &set.shortfalls {
                eprintln!(
                    "warning: {} has only {} same-category distractors",
                    s.video_id, s.same_category
                );
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let path = dir.join("questions.jsonl");
                    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                    manifest.seed = Some(seed);
                    manifest.outputs.push(path);
                    finish(manifest, &dir)
                }
                None => {
                    print(&text);
                    Ok(())
                }
            }
        }
    }
}
