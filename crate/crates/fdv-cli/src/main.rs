//! `fdv`: train, verify, evaluate, and inspect writer-dependent offline
//! signature verification models.
//!
//! Every command is deterministic given its inputs, configuration, and
//! seed. The effective seed is taken from `--seed` when given, else the
//! `FDV_SEED` environment variable, else the config file (for `verify`,
//! the model container); it is logged into every output so runs can be
//! reproduced. Exit codes: 0 success, 1 usage error, 2 data or config
//! error, 3 numeric failure.

mod plot;
mod report;

use clap::{Parser, Subcommand};
use fdv_core::config::{resolve_seed, RunConfig, SeedSource};
use fdv_core::dataset::{self, PlanOutcome, ProtocolConfig, SplitPlan};
use fdv_core::eval::{self, EvalReport, SkippedWriter};
use fdv_core::image::{GrayImage, Sample};
use fdv_core::persist::{self, WriterModel};
use fdv_core::preprocess::preprocess;
use fdv_core::seeds;
use fdv_core::synth::{self, CorpusSpec};
use fdv_core::trainer::{train_writer, TrainedWriter, WriterSplit};
use fdv_core::{Error, Result, Scalar};
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "fdv",
    version,
    about = "Writer-dependent offline signature verification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic signature corpus
    GenSynthetic {
        /// Corpus parameters as a TOML file (built-in defaults when omitted)
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output dataset root directory
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing corpus in a nonempty directory
        #[arg(long)]
        force: bool,
    },
    /// Train per-writer models and persist them as .fdv containers
    Train {
        /// Dataset root (writers/<id>/genuine, writers/<id>/skilled)
        #[arg(long)]
        data: PathBuf,
        /// Run configuration TOML file
        #[arg(long)]
        config: PathBuf,
        /// Directory for model containers and telemetry CSVs
        #[arg(long)]
        out: PathBuf,
        /// Train only this writer (default: every writer with enough data)
        #[arg(long)]
        writer: Option<String>,
        /// Worker threads (default: one per CPU)
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the run seed (beats FDV_SEED and the config file)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score one signature image against one writer's model
    Verify {
        /// Trained .fdv model container
        #[arg(long)]
        model: PathBuf,
        /// Signature image (PNG or PGM, 8-bit grayscale)
        #[arg(long)]
        image: PathBuf,
        /// Override the run seed (beats FDV_SEED and the stored seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full evaluation protocol and write reports
    Evaluate {
        /// Dataset root (writers/<id>/genuine, writers/<id>/skilled)
        #[arg(long)]
        data: PathBuf,
        /// Run configuration TOML file
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.json, CSVs, summary.txt, splits.json
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: one per CPU)
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the run seed (beats FDV_SEED and the config file)
        #[arg(long)]
        seed: Option<u64>,
        /// Plan and dump the per-writer splits, then stop before training
        #[arg(long)]
        splits_only: bool,
    },
    /// Scatter-plot one writer's 2-d latent features as a standalone SVG
    LatentPlot {
        /// Dataset root (writers/<id>/genuine, writers/<id>/skilled)
        #[arg(long)]
        data: PathBuf,
        /// Run configuration TOML file (must set [vae] latent_dim = 2)
        #[arg(long)]
        config: PathBuf,
        /// Writer to train and plot
        #[arg(long)]
        writer: String,
        /// Output SVG path
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed (beats FDV_SEED and the config file)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check dataset layout, image readability, and protocol counts
    Validate {
        /// Dataset root (writers/<id>/genuine, writers/<id>/skilled)
        #[arg(long)]
        data: PathBuf,
        /// Run configuration TOML supplying the protocol counts to check
        /// (built-in defaults when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynthetic { spec, out, force } => cmd_gen_synthetic(spec, &out, force),
        Command::Train { data, config, out, writer, jobs, seed } => {
            cmd_train(&data, &config, &out, writer.as_deref(), jobs, seed)
        }
        Command::Verify { model, image, seed } => cmd_verify(&model, &image, seed),
        Command::Evaluate { data, config, out, jobs, seed, splits_only } => {
            cmd_evaluate(&data, &config, &out, jobs, seed, splits_only)
        }
        Command::LatentPlot { data, config, writer, out, seed } => {
            cmd_latent_plot(&data, &config, &writer, &out, seed)
        }
        Command::Validate { data, config } => cmd_validate(&data, config.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

/// Resolve the effective seed from the `--seed` flag, the `FDV_SEED`
/// environment variable, and the fallback (config file or model container).
fn effective_seed(flag: Option<u64>, fallback: u64) -> Result<(u64, SeedSource)> {
    let env = std::env::var("FDV_SEED").ok();
    resolve_seed(flag, env.as_deref(), fallback)
}

fn seed_source_label(source: SeedSource) -> &'static str {
    match source {
        SeedSource::CliFlag => "--seed flag",
        SeedSource::EnvVar => "FDV_SEED environment variable",
        SeedSource::Config => "config file",
    }
}

/// Run `f` on a dedicated thread pool of `jobs` workers, or on the default
/// pool when no count was requested. Worker count never affects results;
/// it only changes wall-clock time.
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(Error::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Select the plans to operate on: all of them, or the one writer asked
/// for. Asking for a writer that is unknown or was skipped is an error.
fn select_plans(
    outcome: &PlanOutcome,
    writer: Option<&str>,
    data: &Path,
) -> Result<Vec<SplitPlan>> {
    match writer {
        None => {
            if outcome.plans.is_empty() {
                return Err(Error::Data(
                    "no writer has enough signatures for the configured protocol".into(),
                ));
            }
            Ok(outcome.plans.clone())
        }
        Some(id) => {
            if let Some(plan) = outcome.plans.iter().find(|p| p.writer_id == id) {
                return Ok(vec![plan.clone()]);
            }
            if let Some(s) = outcome.skipped.iter().find(|s| s.writer_id == id) {
                return Err(Error::Data(format!(
                    "writer {id:?} cannot be used: {}",
                    s.reason
                )));
            }
            Err(Error::Data(format!(
                "writer {id:?} not found in dataset {}",
                data.display()
            )))
        }
    }
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("json encode failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct SplitsDoc<'a> {
    seed: u64,
    seed_source: SeedSource,
    protocol: &'a ProtocolConfig,
    plans: &'a [SplitPlan],
    skipped: &'a [SkippedWriter],
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    seed: u64,
    seed_source: SeedSource,
    report: &'a EvalReport,
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

fn cmd_gen_synthetic(spec_path: Option<PathBuf>, out: &Path, force: bool) -> Result<()> {
    let spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            toml::from_str::<CorpusSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => CorpusSpec::default(),
    };
    spec.validate()?;
    synth::gen_corpus(&spec, out, force)?;
    println!(
        "generated {} writers x ({} genuine + {} skilled) at {}x{} px (seed {}) under {}",
        spec.n_writers,
        spec.genuine_per_writer,
        spec.skilled_per_writer,
        spec.canvas_w,
        spec.canvas_h,
        spec.seed,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(
    data: &Path,
    config: &Path,
    out: &Path,
    writer: Option<&str>,
    jobs: Option<usize>,
    seed_flag: Option<u64>,
) -> Result<()> {
    let cfg = load_run_config(config)?;
    let (seed, source) = effective_seed(seed_flag, cfg.seed)?;
    let layout = dataset::scan(data)?;
    let outcome = dataset::plan_splits(&layout, &cfg.protocol)?;
    let plans = select_plans(&outcome, writer, data)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits: Vec<WriterSplit<Scalar>> = dataset::load_splits(data, &plans, &cfg.preprocess)?;

    let vae_cfg = cfg.vae_config();
    let train_cfg = cfg.train_config(seed);
    let svm_cfg = cfg.svm;
    let trained: Vec<TrainedWriter<Scalar>> = with_jobs(jobs, || {
        splits
            .par_iter()
            .map(|split| train_writer(split, &vae_cfg, &train_cfg, &svm_cfg))
            .collect::<Result<Vec<_>>>()
    })?;

    println!("seed {seed} (from {})", seed_source_label(source));
    for t in trained {
        let model_path = out.join(format!("{}.fdv", t.writer_id));
        let telemetry_path = out.join(format!("{}_telemetry.csv", t.writer_id));
        report::write_atomic(&telemetry_path, report::telemetry_csv(&t.telemetry).as_bytes())?;
        let converged = t.svm.converged();
        let passes = t.svm_passes;
        let model = WriterModel {
            writer_id: t.writer_id.clone(),
            seed,
            preprocess: cfg.preprocess,
            train: train_cfg.clone(),
            svm_cfg,
            vae: t.vae,
            svm: t.svm,
            svm_passes: passes,
        };
        persist::save_model(&model, &model_path)?;
        println!(
            "trained {}: {} rounds, classifier {} after {} passes -> {}",
            t.writer_id,
            train_cfg.rounds,
            if converged { "converged" } else { "hit the pass limit" },
            passes,
            model_path.display()
        );
    }
    if writer.is_none() {
        for s in &outcome.skipped {
            println!("skipped {}: {}", s.writer_id, s.reason);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerifyOut<'a> {
    score: f64,
    decision: &'a str,
    seed: u64,
}

fn cmd_verify(model_path: &Path, image_path: &Path, seed_flag: Option<u64>) -> Result<()> {
    let model: WriterModel<Scalar> = persist::load_model(model_path)?;
    let (seed, _) = effective_seed(seed_flag, model.seed)?;
    let gray = GrayImage::load(image_path)?;
    let norm = preprocess::<Scalar>(&gray, &model.preprocess)?;
    let mut rng = seeds::feature_stream(seed, norm.values());
    let features = model.vae.extract_features(norm.values(), &mut rng)?;
    let score = model.svm.decision_value(&features)?;
    let decision = if score >= 0.0 { "genuine" } else { "forgery" };
    let line = serde_json::to_string(&VerifyOut { score, decision, seed })
        .map_err(|e| Error::Data(format!("json encode failed: {e}")))?;
    println!("{line}");
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn cmd_evaluate(
    data: &Path,
    config: &Path,
    out: &Path,
    jobs: Option<usize>,
    seed_flag: Option<u64>,
    splits_only: bool,
) -> Result<()> {
    let cfg = load_run_config(config)?;
    let (seed, source) = effective_seed(seed_flag, cfg.seed)?;
    let layout = dataset::scan(data)?;
    let outcome = dataset::plan_splits(&layout, &cfg.protocol)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits_doc = SplitsDoc {
        seed,
        seed_source: source,
        protocol: &cfg.protocol,
        plans: &outcome.plans,
        skipped: &outcome.skipped,
    };
    let splits_path = out.join("splits.json");
    report::write_atomic(&splits_path, json_pretty(&splits_doc)?.as_bytes())?;

    println!("seed {seed} (from {})", seed_source_label(source));
    if splits_only {
        println!(
            "split plan: {} writers, {} skipped -> {}",
            outcome.plans.len(),
            outcome.skipped.len(),
            splits_path.display()
        );
        return Ok(());
    }

    let splits: Vec<WriterSplit<Scalar>> =
        dataset::load_splits(data, &outcome.plans, &cfg.preprocess)?;
    let vae_cfg = cfg.vae_config();
    let train_cfg = cfg.train_config(seed);
    let report = with_jobs(jobs, || {
        eval::run_protocol(&splits, outcome.skipped, &vae_cfg, &train_cfg, &cfg.svm)
    })?;

    let doc = ReportDoc { seed, seed_source: source, report: &report };
    report::write_atomic(&out.join("report.json"), json_pretty(&doc)?.as_bytes())?;
    report::write_atomic(&out.join("writers.csv"), report::writers_csv(&report).as_bytes())?;
    report::write_atomic(&out.join("scores.csv"), report::scores_csv(&report).as_bytes())?;
    let summary = report::summary_text(seed, seed_source_label(source), &report);
    report::write_atomic(&out.join("summary.txt"), summary.as_bytes())?;

    println!(
        "evaluated {} writers ({} skipped)",
        report.writers.len(),
        report.skipped.len()
    );
    for (label, agg) in [
        ("all", &report.per_writer_mean_all),
        ("skilled", &report.per_writer_mean_skilled),
        ("random", &report.per_writer_mean_random),
    ] {
        if let Some(a) = agg {
            println!(
                "per-writer mean EER vs {label} forgeries: {:.4}% (stddev {:.4}%, n={})",
                100.0 * a.mean,
                100.0 * a.stddev,
                a.n
            );
        }
    }
    println!("reports written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// latent-plot
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PlotOut<'a> {
    writer_id: &'a str,
    separation: f64,
    seed: u64,
}

fn cmd_latent_plot(
    data: &Path,
    config: &Path,
    writer: &str,
    out: &Path,
    seed_flag: Option<u64>,
) -> Result<()> {
    let cfg = load_run_config(config)?;
    if cfg.vae.latent_dim != 2 {
        return Err(Error::Config(format!(
            "latent-plot needs latent_dim = 2 so each feature vector is itself a plot \
             coordinate, but the config sets latent_dim = {}; train a dedicated 2-d \
             model (set latent_dim = 2 under [vae]) to draw this diagnostic",
            cfg.vae.latent_dim
        )));
    }
    let (seed, _) = effective_seed(seed_flag, cfg.seed)?;
    let layout = dataset::scan(data)?;
    let outcome = dataset::plan_splits(&layout, &cfg.protocol)?;
    let plans = select_plans(&outcome, Some(writer), data)?;
    let splits: Vec<WriterSplit<Scalar>> = dataset::load_splits(data, &plans, &cfg.preprocess)?;
    let split = &splits[0];

    let vae_cfg = cfg.vae_config();
    let train_cfg = cfg.train_config(seed);
    let trained = train_writer(split, &vae_cfg, &train_cfg, &cfg.svm)?;

    let features = |pools: &[&[Sample<Scalar>]]| -> Result<Vec<Vec<Scalar>>> {
        let mut acc = Vec::new();
        for pool in pools {
            for sample in *pool {
                let values = sample.image.values();
                let mut rng = seeds::feature_stream(seed, values);
                acc.push(trained.vae.extract_features(values, &mut rng)?);
            }
        }
        Ok(acc)
    };
    let genuine = features(&[&split.genuine_train, &split.genuine_test])?;
    let skilled = features(&[&split.skilled_test])?;
    let random = features(&[&split.random_forgeries, &split.random_test])?;

    let nonempty: Vec<Vec<Vec<Scalar>>> = [&genuine, &skilled, &random]
        .into_iter()
        .filter(|g| !g.is_empty())
        .cloned()
        .collect();
    let separation = eval::separation_score(&nonempty)?;

    let groups = [
        ("genuine", &genuine),
        ("skilled", &skilled),
        ("random", &random),
    ];
    let svg = plot::scatter_svg(&format!("writer {writer}: 2-d latent features"), &groups);
    report::write_atomic(out, svg.as_bytes())?;

    let line = serde_json::to_string(&PlotOut { writer_id: writer, separation, seed })
        .map_err(|e| Error::Data(format!("json encode failed: {e}")))?;
    println!("{line}");
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(data: &Path, config: Option<&Path>) -> Result<()> {
    let protocol = match config {
        Some(p) => load_run_config(p)?.protocol,
        None => ProtocolConfig::default(),
    };
    let layout = dataset::scan(data)?;
    let check = dataset::check_dataset(&layout, &protocol)?;

    println!("{:<16} {:>8} {:>8}", "writer", "genuine", "skilled");
    let mut genuine = 0usize;
    let mut skilled = 0usize;
    for row in &check.inventory {
        println!("{:<16} {:>8} {:>8}", row.writer_id, row.n_genuine, row.n_skilled);
        genuine += row.n_genuine;
        skilled += row.n_skilled;
    }
    println!(
        "{} writers, {} genuine + {} skilled images, all readable",
        check.inventory.len(),
        genuine,
        skilled
    );
    for w in &check.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
