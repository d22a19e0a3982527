//! Evaluates one transductive model at several query-set sizes.

use tnt::config::RunConfig;
use tnt::evaluator::query_size_sweep;
use tnt::model::Variant;
use tnt::pipeline::Workspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let overrides: Vec<String> = [
        "train.episodes=1500",
        "train.k_shot=5",
        "eval.k_shot=5",
        "eval.n_episodes=150",
    ]
    .map(String::from)
    .to_vec();
    let cfg = RunConfig::from_toml_str("", &overrides)?;
    let ws = Workspace::prepare(&cfg)?;
    let (encoder, _) = ws.pretrain(&cfg)?;
    let (model, _) = ws.meta_train(&cfg, &encoder, Variant::Tnt, 5, 0)?;

    let sweep = query_size_sweep(
        &model,
        &ws.dataset,
        &ws.split.test_classes,
        &ws.embedder,
        &cfg.sweep.query_sizes,
        &cfg.eval_protocol(),
        0,
    )?;
    for (b, report) in sweep {
        println!("B = {b:>3}: {:.2} ± {:.2} %", report.mean_accuracy, report.ci95);
    }
    Ok(())
}
