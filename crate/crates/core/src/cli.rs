//! Command-line front end. The `tnt` binary only forwards to [`run`].
//!
//! Every command writes `resolved_config.toml` into the output directory.
//! Running again with `--config <out>/resolved_config.toml --workers 1`
//! reproduces every report byte for byte.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::conditioner::TextEmbedder;
use crate::config::{stage_seed, RunConfig};
use crate::datagen::save_dataset;
use crate::encoder::EncoderParams;
use crate::episodes::{episode_rng, sample_episode};
use crate::error::{Error, Result};
use crate::evaluator::{query_size_sweep, render_table, EvalProtocol, MetricsReport};
use crate::model::{ModelState, Trainable, Variant};
use crate::nn::Linear;
use crate::pipeline::{run_ablation, Workspace};
use crate::trainer::{gradient_check, CurveRecord};

#[derive(Debug, Parser)]
#[command(name = "tnt", version, about = "Text-conditioned transductive few-shot video classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults describe the synthetic benchmark.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    workers: usize,
    /// Output directory (overrides `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.episodes=3000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write it as JSON lines.
    GenerateData,
    /// Pretrain the encoder on the base classes.
    Pretrain,
    /// Meta-train `train.variant` with the encoder frozen.
    MetaTrain,
    /// Evaluate a model on the test classes.
    Evaluate,
    /// Train and evaluate every variant in `ablate.variants`.
    Ablate,
    /// Evaluate across `sweep.query_sizes`.
    Sweep,
    /// Compare analytic gradients with finite differences.
    Gradcheck,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 2 for usage or configuration errors,
/// 1 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32> {
    let cfg = resolve(cli)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let snapshot = cfg.out.join("resolved_config.toml");
    fs::write(&snapshot, cfg.to_toml_string()?).map_err(|e| Error::io(&snapshot, e))?;
    let workers = cli.workers;
    match cli.command {
        Command::GenerateData => generate_data(&cfg),
        Command::Pretrain => pretrain(&cfg),
        Command::MetaTrain => meta_train(&cfg, workers),
        Command::Evaluate => evaluate(&cfg, workers),
        Command::Ablate => ablate(&cfg, workers),
        Command::Sweep => sweep(&cfg, workers),
        Command::Gradcheck => gradcheck(&cfg),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn report_record(report: &MetricsReport, keep_episodes: bool) -> MetricsReport {
    if keep_episodes {
        report.clone()
    } else {
        report.summary()
    }
}

fn generate_data(cfg: &RunConfig) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    let path = cfg.out.join("dataset.jsonl");
    save_dataset(&ws.dataset, &path)?;
    println!(
        "wrote {} instances of {} classes (T = {}, D = {}) to {}",
        ws.dataset.len(),
        ws.dataset.classes().len(),
        ws.dataset.frame_count(),
        ws.dataset.frame_dim(),
        path.display()
    );
    Ok(0)
}

fn pretrain_and_save(cfg: &RunConfig, ws: &Workspace) -> Result<EncoderParams> {
    let (encoder, curve) = ws.pretrain(cfg)?;
    let mut model = ws.init_model(cfg, Variant::InductiveBaseline)?;
    model.params.encoder = encoder.clone();
    model.trainable = Trainable::BACKBONE;
    save_checkpoint(&model, cfg.out.join("backbone.json"))?;
    write_jsonl(&cfg.out.join("pretrain_curve.jsonl"), &curve)?;
    if let Some(last) = curve.last() {
        println!(
            "pretrained {} epochs: loss {:.4}, train accuracy {:.2}%",
            last.step,
            last.mean_loss,
            100.0 * last.accuracy
        );
    }
    Ok(encoder)
}

fn pretrain(cfg: &RunConfig) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    pretrain_and_save(cfg, &ws)?;
    println!("wrote {}", cfg.out.join("backbone.json").display());
    Ok(0)
}

/// The backbone from `train.backbone`, or a freshly pretrained one.
fn backbone(cfg: &RunConfig, ws: &Workspace) -> Result<EncoderParams> {
    match &cfg.train.backbone {
        Some(path) => {
            let model = load_checkpoint(path)?;
            let expected = ws.init_model(cfg, Variant::InductiveBaseline)?;
            if model.config.encoder != expected.config.encoder {
                return Err(Error::Config(format!(
                    "backbone {} was trained with a different encoder configuration",
                    path.display()
                )));
            }
            Ok(model.params.encoder)
        }
        None => pretrain_and_save(cfg, ws),
    }
}

fn train_and_save(cfg: &RunConfig, ws: &Workspace, variant: Variant, workers: usize) -> Result<ModelState> {
    let encoder = backbone(cfg, ws)?;
    let (model, curve) = ws.meta_train(cfg, &encoder, variant, cfg.train.k_shot, workers)?;
    save_checkpoint(&model, cfg.out.join("model.json"))?;
    write_jsonl(&cfg.out.join("train_curve.jsonl"), &curve)?;
    let val = ws.evaluate_val(&model, &cfg.validation_protocol(variant), workers)?;
    write_jsonl(&cfg.out.join("validation.jsonl"), &[val.summary()])?;
    let window = curve.len().min(20);
    let mean = |c: &[CurveRecord]| c.iter().map(|r| r.mean_loss).sum::<f64>() / c.len().max(1) as f64;
    println!(
        "meta-trained {variant} for {} steps: loss {:.4} -> {:.4}; validation {:.2} ± {:.2}%",
        curve.len(),
        mean(&curve[..window]),
        mean(&curve[curve.len() - window..]),
        val.mean_accuracy,
        val.ci95
    );
    Ok(model)
}

fn meta_train(cfg: &RunConfig, workers: usize) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    train_and_save(cfg, &ws, cfg.train.variant, workers)?;
    println!("wrote {}", cfg.out.join("model.json").display());
    Ok(0)
}

/// The model from `eval.checkpoint`, or one trained for `eval.variant`.
fn eval_model(cfg: &RunConfig, ws: &Workspace, workers: usize) -> Result<ModelState> {
    match &cfg.eval.checkpoint {
        Some(path) => load_checkpoint(path),
        None => train_and_save(cfg, ws, cfg.eval.variant, workers),
    }
}

fn evaluate(cfg: &RunConfig, workers: usize) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    let model = eval_model(cfg, &ws, workers)?;
    let report = ws.evaluate_test(&model, &cfg.eval_protocol(), workers)?;
    write_jsonl(&cfg.out.join("eval.jsonl"), &[report_record(&report, cfg.eval.per_episode)])?;
    let table = render_table(std::slice::from_ref(&report));
    write_text(&cfg.out.join("eval.txt"), &table)?;
    print!("{table}");
    Ok(0)
}

#[derive(Serialize)]
struct AblationRecord<'a> {
    variant: Variant,
    k_shot: usize,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

fn ablate(cfg: &RunConfig, workers: usize) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    let encoder = backbone(cfg, &ws)?;
    let rows = run_ablation(&ws, cfg, &encoder, workers)?;
    let reports: Vec<MetricsReport> = rows.iter().map(|r| report_record(&r.report, cfg.eval.per_episode)).collect();
    let records: Vec<AblationRecord<'_>> = rows
        .iter()
        .zip(&reports)
        .map(|(r, report)| AblationRecord {
            variant: r.variant,
            k_shot: r.k_shot,
            report,
        })
        .collect();
    write_jsonl(&cfg.out.join("ablation.jsonl"), &records)?;
    let table = render_table(&reports);
    write_text(&cfg.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(0)
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    query_size: usize,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

fn sweep(cfg: &RunConfig, workers: usize) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    let model = eval_model(cfg, &ws, workers)?;
    let protocol = EvalProtocol {
        variant: model.variant,
        ..cfg.eval_protocol()
    };
    let curve = query_size_sweep(
        &model,
        &ws.dataset,
        &ws.split.test_classes,
        &ws.embedder,
        &cfg.sweep.query_sizes,
        &protocol,
        workers,
    )?;
    let reports: Vec<MetricsReport> = curve.iter().map(|(_, r)| report_record(r, cfg.eval.per_episode)).collect();
    let records: Vec<SweepRecord<'_>> = curve
        .iter()
        .zip(&reports)
        .map(|((b, _), report)| SweepRecord { query_size: *b, report })
        .collect();
    write_jsonl(&cfg.out.join("sweep.jsonl"), &records)?;
    let table = render_table(&reports);
    write_text(&cfg.out.join("sweep.txt"), &table)?;
    print!("{table}");
    Ok(0)
}

/// Small model for finite-difference checks, with a random FiLM head. Text
/// is embedded with [`gradcheck_embedder`].
pub fn gradcheck_model(cfg: &RunConfig, ws: &Workspace, variant: Variant) -> Result<ModelState> {
    let g = &cfg.gradcheck;
    let mut small = cfg.clone();
    small.encoder.stage_dims = g.stage_dims.clone();
    small.encoder.output_dim = g.output_dim;
    small.conditioner.task_dim = g.task_dim;
    small.conditioner.hidden_dim = g.hidden_dim;
    small.conditioner.video_stage_dims = vec![g.task_dim];
    let cfg_model = small.model_config(variant, ws.dataset.frame_dim(), g.text_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "gradcheck/init"));
    let mut model = ModelState::init(cfg_model, variant, &mut rng)?;
    if let Some(c) = model.params.conditioner.as_mut() {
        let out = &mut c.film_generator.output;
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "gradcheck/film"));
        out.weight = Linear::random(out.input_dim(), out.output_dim(), g.film_init_scale, &mut rng).weight;
    }
    model.trainable = Trainable {
        encoder: true,
        conditioner: true,
        attention: true,
    };
    Ok(model)
}

pub fn gradcheck_embedder(cfg: &RunConfig) -> Result<TextEmbedder> {
    TextEmbedder::hashed(cfg.gradcheck.text_dim)
}

#[derive(Serialize)]
struct GradcheckRecord {
    episode: usize,
    max_relative_error: f64,
    checked: usize,
    skipped: usize,
    worst_tensor: Option<String>,
}

fn gradcheck(cfg: &RunConfig) -> Result<i32> {
    let ws = Workspace::prepare(cfg)?;
    let variant = cfg.train.variant;
    let model = gradcheck_model(cfg, &ws, variant)?;
    let embedder = gradcheck_embedder(cfg)?;
    let g = &cfg.gradcheck;
    let seed = stage_seed(cfg.seed, "gradcheck");
    let mut records = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..g.episodes {
        let ep = sample_episode(
            &ws.dataset,
            &ws.split.train_classes,
            cfg.train.n_way,
            cfg.train.k_shot,
            g.query_size,
            &mut episode_rng(seed, i as u64),
        )?;
        let report = gradient_check(&model, &ep, &embedder, &g.options(seed.wrapping_add(i as u64)))?;
        worst = worst.max(report.max_relative_error);
        records.push(GradcheckRecord {
            episode: i,
            max_relative_error: report.max_relative_error,
            checked: report.checked,
            skipped: report.skipped,
            worst_tensor: report.worst.map(|w| w.tensor),
        });
    }
    write_jsonl(&cfg.out.join("gradcheck.jsonl"), &records)?;
    let checked: usize = records.iter().map(|r| r.checked).sum();
    let pass = worst <= g.tolerance;
    println!(
        "gradcheck {variant}: max relative error {worst:.3e} over {checked} coordinates ({})",
        if pass { "ok" } else { "FAILED" }
    );
    Ok(if pass { 0 } else { 1 })
}
