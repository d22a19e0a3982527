//! Dataset generation, the line-delimited file format and the lookup embedder.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{array, Array1};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnt::conditioner::{embed_texts, TextEmbedder};
use tnt::datagen::{generate_dataset, load_dataset, save_dataset, MultimodalDataset, SyntheticSpec};
use tnt::episodes::sample_episode;
use tnt::error::Error;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
    path
}

#[test]
fn benchmark_file_has_header_plus_one_line_per_instance() {
    let ds = generate_dataset(&SyntheticSpec::default()).unwrap();
    assert_eq!(ds.len(), 3000);
    assert_eq!(ds.classes().len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3001);
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn empty_dataset_writes_only_the_header() {
    let ds = MultimodalDataset::new(2, 3, Vec::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    save_dataset(&ds, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(load_dataset(&path).unwrap().is_empty());
}

#[test]
fn hand_written_file_loads_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        &dir,
        "two.jsonl",
        r#"{"format_version":1,"frame_count":2,"frame_dim":2}
{"instance_id":"a/0","class_id":"put_down","text":"put plate down","frames":[[0.5,-1.0],[2.25,0.0]]}
{"instance_id":"b/0","class_id":"open_up","text":"open jar up","frames":[[1e-3,4.0],[-7.5,0.125]]}
"#,
    );
    let ds = load_dataset(&path).unwrap();
    assert_eq!(ds.len(), 2);
    let a = &ds.instances()[0];
    assert_eq!((a.instance_id.as_str(), a.class_id.as_str(), a.text.as_str()), ("a/0", "put_down", "put plate down"));
    assert_eq!(a.frames, array![[0.5, -1.0], [2.25, 0.0]]);
    assert_eq!(ds.instances()[1].frames, array![[1e-3, 4.0], [-7.5, 0.125]]);
    assert_eq!(ds.class_members("open_up"), &[1]);
}

#[test]
fn differing_frame_widths_are_a_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        &dir,
        "bad.jsonl",
        r#"{"format_version":1,"frame_count":1,"frame_dim":2}
{"instance_id":"a","class_id":"x","text":"put cup down","frames":[[1.0,2.0]]}
{"instance_id":"b","class_id":"x","text":"put cup down","frames":[[1.0,2.0,3.0]]}
"#,
    );
    match load_dataset(&path) {
        Err(Error::DimensionMismatch { instance, .. }) => assert_eq!(instance, "b"),
        other => panic!("expected a dimension mismatch, got {other:?}"),
    }
}

#[test]
fn malformed_record_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "junk.jsonl", "{\"format_version\":1,\"frame_count\":1,\"frame_dim\":1}\nnot json\n");
    match load_dataset(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn noun(text: &str) -> &str {
    text.rsplit(' ').next().unwrap()
}

fn frame_distance(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    (a - b).mapv(|x| x * x).sum().sqrt()
}

#[test]
fn shared_nouns_mean_closer_frames() {
    let ds = generate_dataset(&SyntheticSpec {
        n_classes: 10,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for class in ds.classes() {
        let members = ds.class_members(class);
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                let (a, b) = (&ds.instances()[i], &ds.instances()[j]);
                let d = frame_distance(&a.frames, &b.frames);
                if noun(&a.text) == noun(&b.text) {
                    same.push(d);
                } else {
                    diff.push(d);
                }
            }
        }
    }
    assert!(same.len() >= 100 && diff.len() >= 100, "{} / {}", same.len(), diff.len());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&same) < mean(&diff), "{} vs {}", mean(&same), mean(&diff));
}

#[test]
fn low_noise_classes_are_separable_by_centroids() {
    let ds = generate_dataset(&SyntheticSpec {
        n_classes: 20,
        instances_per_class: 20,
        noise_scale: 0.1,
        object_scale: 0.3,
        class_residual_scale: 0.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut correct, mut total) = (0, 0);
    for _ in 0..50 {
        let ep = sample_episode(&ds, ds.classes(), 5, 5, 50, &mut rng).unwrap();
        let mean_frame = |f: &ndarray::Array2<f64>| f.mean_axis(ndarray::Axis(0)).unwrap();
        let mut centroids = vec![Array1::<f64>::zeros(ds.frame_dim()); 5];
        for (inst, l) in &ep.support {
            centroids[*l] = &centroids[*l] + &(mean_frame(&inst.frames) / 5.0);
        }
        for (inst, l) in &ep.query {
            let m = mean_frame(&inst.frames);
            let best = (0..5)
                .min_by(|&a, &b| {
                    let da = (&m - &centroids[a]).mapv(|x| x * x).sum();
                    let db = (&m - &centroids[b]).mapv(|x| x * x).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            correct += usize::from(best == *l);
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    assert!(acc > 0.9, "nearest-centroid accuracy {acc}");
}

#[test]
fn lookup_embedder_returns_the_stored_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        &dir,
        "lookup.jsonl",
        r#"{"text":"put plate down","vector":[0.25,-1.5,3.0]}
{"text":"place aubergine onto pan","vector":[1e-9,0.0,-2.0]}
"#,
    );
    let emb = TextEmbedder::load_lookup(&path).unwrap();
    assert_eq!(emb.dim(), 3);
    let m = embed_texts(&["put plate down", "place aubergine onto pan"], &emb).unwrap();
    assert_eq!(m, array![[0.25, -1.5, 3.0], [1e-9, 0.0, -2.0]]);
    match embed_texts(&["put plate up"], &emb) {
        Err(Error::LookupMiss(text)) => assert_eq!(text, "put plate up"),
        other => panic!("expected a lookup miss, got {other:?}"),
    }
}

#[test]
fn lookup_file_with_mixed_widths_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "mixed.jsonl", "{\"text\":\"a\",\"vector\":[1.0]}\n{\"text\":\"b\",\"vector\":[1.0,2.0]}\n");
    assert!(matches!(TextEmbedder::load_lookup(&path), Err(Error::Parse { line: 2, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_datasets_round_trip(
        n_classes in 1usize..6,
        per_class in 1usize..4,
        frames in 1usize..4,
        dim in 1usize..5,
        variants in 1usize..4,
        noise in 0.0f64..3.0,
        info in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec {
            n_classes,
            instances_per_class: per_class,
            frame_count: frames,
            frame_dim: dim,
            latent_dim: 3,
            n_object_variants: variants,
            noise_scale: noise,
            text_informativeness: info,
            seed,
            ..SyntheticSpec::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        prop_assert_eq!(&ds, &generate_dataset(&spec).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), ds.clone());

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in ds.instances() {
            *counts.entry(inst.class_id.as_str()).or_default() += 1;
        }
        prop_assert_eq!(counts.len(), n_classes);
        prop_assert!(counts.values().all(|&c| c == per_class));
    }
}
