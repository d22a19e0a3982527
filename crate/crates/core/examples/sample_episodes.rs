//! Splits classes into train/val/test and samples reproducible N-way K-shot
//! episodes from the test classes.

use tnt::datagen::{generate_dataset, SyntheticSpec};
use tnt::episodes::{episode_rng, episode_seed, make_class_split, sample_episode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&SyntheticSpec {
        n_classes: 20,
        instances_per_class: 10,
        ..SyntheticSpec::default()
    })?;
    let split = make_class_split(ds.classes(), (12, 3, 5), 7)?;
    println!(
        "split: {} train / {} val / {} test classes",
        split.train_classes.len(),
        split.val_classes.len(),
        split.test_classes.len()
    );

    for index in 0..3 {
        let mut rng = episode_rng(42, index);
        let ep = sample_episode(&ds, &split.test_classes, 5, 2, 10, &mut rng)?;
        println!("episode {index} (seed {:#018x}): classes {:?}", episode_seed(42, index), ep.classes);
        for (inst, label) in &ep.support {
            println!("  support {label} {:<10} \"{}\"", inst.instance_id, inst.text);
        }
        println!("  query labels {:?}", ep.query_labels());
    }

    // Same seed and index, same episode.
    let a = sample_episode(&ds, &split.test_classes, 5, 2, 10, &mut episode_rng(42, 1))?;
    let b = sample_episode(&ds, &split.test_classes, 5, 2, 10, &mut episode_rng(42, 1))?;
    let ids = |e: &tnt::episodes::Episode<'_>| e.query.iter().map(|(i, _)| i.instance_id.clone()).collect::<Vec<_>>();
    println!("resampled episode 1 matches: {}", ids(&a) == ids(&b));
    Ok(())
}
