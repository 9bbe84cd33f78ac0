//! Command-line interface: synthetic data generation, standalone sample
//! selection, the full query-train loop, and checkpoint evaluation.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use hssal::baselines::{
    badge_query, bald_query, coreset_query, entropy_query, margin_query, random_query,
    StrategyKind,
};
use hssal::harness::{emit_report, gen_synthetic, run_experiment_detailed, ExperimentConfig,
    SyntheticSpec};
use hssal::hal::{hal_query, HalConfig, InClusterSelection};
use hssal::model::{self, BiasMode, DropoutMode, UncertaintyVector};
use hssal::pool::PoolState;
use hssal::ssl::MaskVariant;
use hssal::{compute_metrics, Error};

#[derive(Parser)]
#[command(name = "hssal", about = "Hierarchical semi-supervised active learning over feature embeddings", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Random,
    Entropy,
    Margin,
    Bald,
    Coreset,
    Badge,
    Hal,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Random => StrategyKind::Random,
            StrategyArg::Entropy => StrategyKind::Entropy,
            StrategyArg::Margin => StrategyKind::Margin,
            StrategyArg::Bald => StrategyKind::Bald,
            StrategyArg::Coreset => StrategyKind::CoreSet,
            StrategyArg::Badge => StrategyKind::Badge,
            StrategyArg::Hal => StrategyKind::Hal,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SslVariantArg {
    /// Supervised-only training.
    None,
    Fixed,
    ClassAdaptive,
    SelfAdaptive,
    SoftGaussian,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InClusterArg {
    SRandom,
    SCentroid,
    SUncertainty,
}

impl From<InClusterArg> for InClusterSelection {
    fn from(v: InClusterArg) -> Self {
        match v {
            InClusterArg::SRandom => InClusterSelection::SRandom,
            InClusterArg::SCentroid => InClusterSelection::SCentroid,
            InClusterArg::SUncertainty => InClusterSelection::SUncertainty,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture feature file.
    GenSynthetic {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        mean_scale: f64,
        #[arg(long, default_value_t = 1.1)]
        cov_scale: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output feature file path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Select samples to annotate from a feature file.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::Hal)]
        strategy: StrategyArg,
        /// Newline-delimited labeled-index file (defaults to an empty
        /// labeled set).
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// Per-sample uncertainty file (one float per line) for HAL.
        #[arg(long)]
        uncertainty: Option<PathBuf>,
        /// Model checkpoint; required by entropy/margin/bald/badge and
        /// used to compute uncertainties for HAL when no file is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        minibatch_size: usize,
        #[arg(long, default_value_t = 3.0)]
        cluster_multiplier: f64,
        #[arg(long, default_value_t = 40)]
        k_neighbors: usize,
        #[arg(long, value_enum, default_value_t = InClusterArg::SUncertainty)]
        in_cluster: InClusterArg,
        #[arg(long, default_value_t = 50)]
        bald_passes: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full multi-round query-train loop.
    RunLoop {
        /// Experiment config JSON; defaults apply for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long, value_enum)]
        ssl_variant: Option<SslVariantArg>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on a feature file.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the raw trainable parameters instead of the EMA shadow.
        #[arg(long, default_value_t = false)]
        raw: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenSynthetic {
            classes,
            dim,
            per_class,
            mean_scale,
            cov_scale,
            noise_rate,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                classes,
                dim,
                per_class,
                mean_scale,
                cov_scale,
                noise_rate,
                seed,
            };
            let (features, labels) = gen_synthetic(&spec)?;
            hssal::io::save_features(&out, &features, &labels)?;
            println!(
                "wrote {} samples x {} dims, {} classes to {}",
                features.n(),
                features.d(),
                labels.classes(),
                out.display()
            );
            Ok(())
        }
        Command::Select {
            features,
            budget,
            strategy,
            labeled,
            uncertainty,
            checkpoint,
            seed,
            minibatch_size,
            cluster_multiplier,
            k_neighbors,
            in_cluster,
            bald_passes,
            out_dir,
        } => select_command(SelectArgs {
            features,
            budget,
            strategy: strategy.into(),
            labeled,
            uncertainty,
            checkpoint,
            seed,
            minibatch_size,
            cluster_multiplier,
            k_neighbors,
            in_cluster: in_cluster.into(),
            bald_passes,
            out_dir,
        }),
        Command::RunLoop {
            config,
            seed,
            strategy,
            ssl_variant,
            out_dir,
        } => {
            let mut cfg: ExperimentConfig = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => ExperimentConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.trial_seed = seed;
            }
            if let Some(strategy) = strategy {
                cfg.strategy = strategy.into();
            }
            if let Some(variant) = ssl_variant {
                match variant {
                    SslVariantArg::None => cfg.ssl_enabled = false,
                    SslVariantArg::Fixed => {
                        cfg.ssl_enabled = true;
                        cfg.ssl.variant = MaskVariant::Fixed;
                    }
                    SslVariantArg::ClassAdaptive => {
                        cfg.ssl_enabled = true;
                        cfg.ssl.variant = MaskVariant::ClassAdaptive;
                    }
                    SslVariantArg::SelfAdaptive => {
                        cfg.ssl_enabled = true;
                        cfg.ssl.variant = MaskVariant::SelfAdaptive;
                    }
                    SslVariantArg::SoftGaussian => {
                        cfg.ssl_enabled = true;
                        cfg.ssl.variant = MaskVariant::SoftGaussian;
                    }
                }
            }
            let (rounds, (params, ema)) = run_experiment_detailed(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            let (csv_path, json_path) = emit_report(&cfg, &rounds, &out_dir)?;
            let ckpt_path = out_dir.join("checkpoint.hsck");
            hssal::io::save_checkpoint(&ckpt_path, &params, &ema)?;
            for r in &rounds {
                println!(
                    "round {} ratio {:.2}%: OA {:.4} AA {:.4} (labeled {})",
                    r.round,
                    r.ratio * 100.0,
                    r.oa,
                    r.aa,
                    r.labeled_size
                );
            }
            println!(
                "reports: {} {} checkpoint: {}",
                csv_path.display(),
                json_path.display(),
                ckpt_path.display()
            );
            Ok(())
        }
        Command::Eval {
            features,
            checkpoint,
            raw,
        } => {
            let (feats, labels) = hssal::io::load_features(&features)?;
            let (params, ema) = hssal::io::load_checkpoint(&checkpoint)?;
            let eval_params = if raw { &params } else { &ema.shadow };
            let preds = model::predict_labels(eval_params, &feats)?;
            let metrics = compute_metrics(&preds, &labels)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
    }
}

struct SelectArgs {
    features: PathBuf,
    budget: usize,
    strategy: StrategyKind,
    labeled: Option<PathBuf>,
    uncertainty: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    seed: u64,
    minibatch_size: usize,
    cluster_multiplier: f64,
    k_neighbors: usize,
    in_cluster: InClusterSelection,
    bald_passes: usize,
    out_dir: PathBuf,
}

#[derive(serde::Serialize)]
struct SelectionReport<'a> {
    strategy: &'static str,
    budget: usize,
    n_total: usize,
    labeled_size: usize,
    seed: u64,
    total_seconds: f64,
    per_batch: &'a [hssal::hal::BatchProvenance],
}

fn select_command(args: SelectArgs) -> Result<(), Error> {
    let (feats, _labels) = hssal::io::load_features(&args.features)?;
    let labeled = match &args.labeled {
        Some(path) => hssal::io::load_indices(path)?,
        None => Vec::new(),
    };
    let pool = PoolState::from_initial_labeled(labeled, feats.n())?;

    let checkpoint = args
        .checkpoint
        .as_ref()
        .map(|p| hssal::io::load_checkpoint(p))
        .transpose()?;
    let ema_params = checkpoint.as_ref().map(|(_, ema)| &ema.shadow);

    let require_model = || {
        ema_params.ok_or_else(|| {
            Error::config(format!(
                "strategy {} requires --checkpoint",
                args.strategy.name()
            ))
        })
    };

    let start = Instant::now();
    let query = match args.strategy {
        StrategyKind::Random => random_query(&pool, args.budget, args.seed)?,
        StrategyKind::CoreSet => coreset_query(&feats, &pool, args.budget)?,
        StrategyKind::Entropy => {
            let probs = model::predict_probs(require_model()?, &feats, DropoutMode::Off)?;
            entropy_query(probs.view(), &pool, args.budget)?
        }
        StrategyKind::Margin => {
            let probs = model::predict_probs(require_model()?, &feats, DropoutMode::Off)?;
            margin_query(probs.view(), &pool, args.budget)?
        }
        StrategyKind::Bald => bald_query(
            require_model()?,
            &feats,
            &pool,
            args.budget,
            args.bald_passes,
            args.seed,
        )?,
        StrategyKind::Badge => badge_query(
            require_model()?,
            &feats,
            &pool,
            args.budget,
            args.seed,
            hssal::spectral::FirstPick::MaxNorm,
        )?,
        StrategyKind::Hal => {
            let u = match &args.uncertainty {
                Some(path) => {
                    let scores = hssal::io::load_scores(path)?;
                    if scores.len() != feats.n() {
                        return Err(Error::config(format!(
                            "uncertainty file has {} entries for {} samples",
                            scores.len(),
                            feats.n()
                        )));
                    }
                    UncertaintyVector::new(scores).map_err(|e| Error::config(e.to_string()))?
                }
                None => {
                    let params = require_model().map_err(|_| {
                        Error::config("hal requires --uncertainty or --checkpoint")
                    })?;
                    model::uncertainty_scores(params, &feats, BiasMode::Include)?
                }
            };
            let cfg = HalConfig {
                minibatch_size: args.minibatch_size,
                cluster_multiplier: args.cluster_multiplier,
                k_neighbors: args.k_neighbors,
                in_cluster: args.in_cluster,
                seed: args.seed,
                ..Default::default()
            };
            hal_query(&feats, &u, &pool, args.budget, &cfg)?
        }
    };
    let total_seconds = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out_dir)?;
    let txt_path = args.out_dir.join("selected.txt");
    hssal::io::save_indices(&txt_path, query.indices())?;
    let report = SelectionReport {
        strategy: args.strategy.name(),
        budget: args.budget,
        n_total: feats.n(),
        labeled_size: pool.labeled().len(),
        seed: args.seed,
        total_seconds,
        per_batch: query.per_batch(),
    };
    let json_path = args.out_dir.join("selection.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "selected {} samples -> {} ({} batches, {:.3}s)",
        query.len(),
        txt_path.display(),
        query.per_batch().len(),
        total_seconds
    );
    Ok(())
}
