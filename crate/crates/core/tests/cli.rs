//! The `tnt` command line, driven through `cli::run`.

use std::path::Path;

use tnt::checkpoint::load_checkpoint;
use tnt::cli::run;
use tnt::datagen::load_dataset;

/// Settings small enough for every command to finish in seconds.
const SMALL: &[&str] = &[
    "data.synthetic.n_classes=20",
    "data.synthetic.instances_per_class=15",
    "split.train=10",
    "split.val=5",
    "split.test=5",
    "encoder.stage_dims=[16]",
    "encoder.output_dim=16",
    "pretrain.epochs=2",
    "train.episodes=32",
    "validation.n_episodes=5",
    "eval.n_episodes=20",
    "sweep.query_sizes=[5,10]",
    "ablate.variants=[\"inductive_baseline\",\"tnt\"]",
    "ablate.k_shots=[1]",
];

fn tnt(command: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut args: Vec<String> = vec!["tnt".into(), command.into(), "--out".into(), out.display().to_string()];
    for s in SMALL.iter().chain(extra) {
        if s.starts_with("--") {
            args.push(s.to_string());
        } else {
            args.push("--set".into());
            args.push(s.to_string());
        }
    }
    run(args)
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn usage_and_configuration_errors_exit_with_two() {
    assert_eq!(run(["tnt", "train-everything"]), 2);
    assert_eq!(run(["tnt"]), 2);
    assert_eq!(run(["tnt", "evaluate", "--workers", "many"]), 2);
    assert_eq!(run(["tnt", "--help"]), 0);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(["tnt", "gradcheck", "--out", out, "--set", "train.no_such_key=1"]), 2);
    assert_eq!(run(["tnt", "gradcheck", "--out", out, "--set", "train.episodes"]), 2);
    assert_eq!(run(["tnt", "gradcheck", "--out", out, "--set", "eval.query_size=7"]), 2);
    assert_eq!(run(["tnt", "gradcheck", "--out", out, "--set", "split.val=3"]), 2);
    assert_eq!(run(["tnt", "gradcheck", "--out", out, "--config", "/nonexistent/run.toml"]), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepisodes = \"lots\"\n").unwrap();
    assert_eq!(run(["tnt", "gradcheck", "--out", out, "--config", bad.to_str().unwrap()]), 2);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let code = tnt("evaluate", dir.path(), &["eval.checkpoint=\"/nonexistent/model.json\""]);
    assert_eq!(code, 1);
}

#[test]
fn gradcheck_passes_on_the_default_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(["tnt", "gradcheck", "--out", out]), 0);
    let text = String::from_utf8(read(dir.path().join("gradcheck.jsonl"))).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["max_relative_error"].as_f64().unwrap() <= 1e-4, "{line}");
    }
    assert!(dir.path().join("resolved_config.toml").exists());
}

#[test]
fn generate_data_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tnt("generate-data", dir.path(), &[]), 0);
    let ds = load_dataset(dir.path().join("dataset.jsonl")).unwrap();
    assert_eq!((ds.len(), ds.classes().len()), (300, 20));
}

#[test]
fn staged_workflow_reuses_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pretrain");
    assert_eq!(tnt("pretrain", &pre, &[]), 0);
    let backbone = pre.join("backbone.json");
    assert_eq!(read(pre.join("pretrain_curve.jsonl")).iter().filter(|&&b| b == b'\n').count(), 2);

    let meta = dir.path().join("meta");
    let set_backbone = format!("train.backbone=\"{}\"", backbone.display());
    assert_eq!(tnt("meta-train", &meta, &[&set_backbone]), 0);
    let model = load_checkpoint(meta.join("model.json")).unwrap();
    assert_eq!(model.params.encoder, load_checkpoint(&backbone).unwrap().params.encoder);
    assert!(meta.join("validation.jsonl").exists());
    assert!(meta.join("train_curve.jsonl").exists());

    let eval = dir.path().join("eval");
    let set_ckpt = format!("eval.checkpoint=\"{}\"", meta.join("model.json").display());
    assert_eq!(tnt("evaluate", &eval, &[&set_ckpt]), 0);
    let record: serde_json::Value = serde_json::from_slice(&read(eval.join("eval.jsonl"))).unwrap();
    assert_eq!(record["n_episodes"], 20);
    assert!(record.get("per_episode").is_none());

    let sweep = dir.path().join("sweep");
    assert_eq!(tnt("sweep", &sweep, &[&set_ckpt]), 0);
    assert_eq!(String::from_utf8(read(sweep.join("sweep.jsonl"))).unwrap().lines().count(), 2);

    let ablate = dir.path().join("ablate");
    assert_eq!(tnt("ablate", &ablate, &[&set_backbone]), 0);
    let rows = String::from_utf8(read(ablate.join("ablation.jsonl"))).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.contains("\"variant\":\"tnt\""));

    // A backbone trained with other encoder dimensions is a configuration error.
    assert_eq!(tnt("meta-train", &dir.path().join("bad"), &[&set_backbone, "encoder.output_dim=8"]), 2);
}

#[test]
fn rerunning_from_the_snapshot_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(tnt("evaluate", &first, &["--workers=1", "--seed=5", "eval.per_episode=true"]), 0);

    let second = dir.path().join("second");
    let snapshot = first.join("resolved_config.toml");
    let code = run([
        "tnt",
        "evaluate",
        "--workers",
        "1",
        "--config",
        snapshot.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for file in ["eval.jsonl", "eval.txt", "model.json", "train_curve.jsonl", "backbone.json"] {
        assert_eq!(read(first.join(file)), read(second.join(file)), "{file}");
    }
    // The snapshot differs only in the output directory.
    let a = String::from_utf8(read(&snapshot)).unwrap();
    let b = String::from_utf8(read(second.join("resolved_config.toml"))).unwrap();
    assert_eq!(a.replace(first.to_str().unwrap(), "OUT"), b.replace(second.to_str().unwrap(), "OUT"));
}
