//! Generates a small synthetic multimodal dataset, writes it as JSON lines and
//! reads it back.
//!
//! cargo run --example generate_dataset -- [out.jsonl]

use tnt::datagen::{generate_dataset, load_dataset, save_dataset, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec {
        n_classes: 10,
        instances_per_class: 6,
        ..SyntheticSpec::default()
    };
    let ds = generate_dataset(&spec)?;
    println!(
        "{} instances, {} classes, {} frames of width {}",
        ds.len(),
        ds.classes().len(),
        ds.frame_count(),
        ds.frame_dim()
    );
    for inst in ds.instances().iter().step_by(spec.instances_per_class).take(4) {
        println!("  {:<12} {:<8} \"{}\"", inst.instance_id, inst.class_id, inst.text);
    }

    let path = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tnt_example_dataset.jsonl"));
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    println!("wrote {} and reloaded it: identical = {}", path.display(), back == ds);
    Ok(())
}
