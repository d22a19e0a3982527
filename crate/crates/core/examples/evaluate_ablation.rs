//! Trains every model variant from one pretrained encoder and evaluates them
//! on the same test episodes.

use tnt::config::RunConfig;
use tnt::evaluator::render_table;
use tnt::pipeline::{run_ablation, Workspace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let overrides: Vec<String> = [
        "train.episodes=1500",
        "eval.n_episodes=150",
        "ablate.k_shots=[1]",
    ]
    .map(String::from)
    .to_vec();
    let cfg = RunConfig::from_toml_str("", &overrides)?;
    let ws = Workspace::prepare(&cfg)?;
    let (encoder, _) = ws.pretrain(&cfg)?;

    let rows = run_ablation(&ws, &cfg, &encoder, 0)?;
    let reports: Vec<_> = rows.iter().map(|r| r.report.clone()).collect();
    print!("{}", render_table(&reports));
    Ok(())
}
