//! Compares analytic episode-loss gradients with central finite differences
//! for every model variant.

use tnt::cli::{gradcheck_embedder, gradcheck_model};
use tnt::config::{stage_seed, RunConfig};
use tnt::episodes::{episode_rng, sample_episode};
use tnt::model::Variant;
use tnt::pipeline::Workspace;
use tnt::trainer::gradient_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml_str(
        "",
        &["data.synthetic.n_classes=20".into(), "data.synthetic.instances_per_class=10".into(),
          "split.train=10".into(), "split.val=5".into(), "split.test=5".into()],
    )?;
    let ws = Workspace::prepare(&cfg)?;
    let embedder = gradcheck_embedder(&cfg)?;
    let gc = &cfg.gradcheck;

    for variant in Variant::ALL {
        let model = gradcheck_model(&cfg, &ws, variant)?;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in 0..gc.episodes as u64 {
            let mut rng = episode_rng(stage_seed(cfg.seed, "gradcheck"), i);
            let ep = sample_episode(&ws.dataset, &ws.split.train_classes, 5, 2, gc.query_size, &mut rng)?;
            let report = gradient_check(&model, &ep, &embedder, &gc.options(i))?;
            worst = worst.max(report.max_relative_error);
            checked += report.checked;
        }
        println!("{:<20} {checked:>4} coordinates, max relative error {worst:.2e}", variant.name());
    }
    Ok(())
}
