//! Both training stages on a reduced benchmark: supervised encoder
//! pretraining on the base classes, then episodic training of the
//! conditioner and attention with the encoder frozen. The trained model is
//! saved, reloaded and evaluated on the test classes.

use tnt::checkpoint::{load_checkpoint, save_checkpoint};
use tnt::config::RunConfig;
use tnt::model::Variant;
use tnt::pipeline::Workspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let overrides: Vec<String> = [
        "train.episodes=1500",
        "eval.n_episodes=200",
    ]
    .map(String::from)
    .to_vec();
    let cfg = RunConfig::from_toml_str("", &overrides)?;
    let ws = Workspace::prepare(&cfg)?;

    let (encoder, curve) = ws.pretrain(&cfg)?;
    for r in &curve {
        println!("pretrain step {:>5}: loss {:.3}, accuracy {:.3}", r.step, r.mean_loss, r.accuracy);
    }

    let (model, curve) = ws.meta_train(&cfg, &encoder, Variant::Tnt, cfg.train.k_shot, 0)?;
    let first = &curve[0];
    let last = curve.last().unwrap();
    println!("meta-train: loss {:.3} -> {:.3} over {} records", first.mean_loss, last.mean_loss, curve.len());
    println!("encoder unchanged by stage two: {}", model.params.encoder == encoder);

    let path = std::env::temp_dir().join("tnt_example_model.json");
    save_checkpoint(&model, &path)?;
    let model = load_checkpoint(&path)?;
    let report = ws.evaluate_test(&model, &cfg.eval_protocol(), 0)?;
    println!(
        "{}: {:.2} ± {:.2} % over {} test episodes (checkpoint {})",
        model.variant.name(),
        report.mean_accuracy,
        report.ci95,
        report.n_episodes,
        path.display()
    );
    Ok(())
}
