use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use exprgan::datagen::{DatasetSpec, IntensityRange};
use exprgan::networks::ArchitectureSpec;
use exprgan::trainer::{Preset, TrainConfig};
use exprgan::CodeLayout;

fn exprgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exprgan")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = exprgan(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn line_value<'a>(stdout: &'a str, prefix: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .unwrap_or_else(|| panic!("no {prefix:?} line in {stdout}"))
        .trim()
}

#[test]
fn every_subcommand_documents_its_flags() {
    let cases: &[(&[&str], &[&str])] = &[
        (&["make-data"], &["--preset", "--config", "--seed", "--out", "--identities", "--per-cell", "--resolution", "--ingest", "--class-names"]),
        (&["train"], &["--preset", "--config", "--stages", "--stage", "--resume", "--deterministic", "--seed", "--out", "--data", "--epochs", "--batch-size", "--learning-rate"]),
        (&["config"], &["--preset", "--config"]),
        (&["apply", "edit"], &["--checkpoint", "--out", "--seed", "--input", "--magnitude"]),
        (&["apply", "sweep"], &["--checkpoint", "--out", "--seed", "--input", "--class"]),
        (&["apply", "transfer"], &["--checkpoint", "--out", "--seed", "--source", "--target"]),
        (&["apply", "generate"], &["--checkpoint", "--out", "--seed", "--class", "--count", "-n"]),
        (&["apply", "augment-exp"], &["--checkpoint", "--out", "--seed", "--data", "--test-fraction", "--split-seed", "--counts", "--preset", "--epochs"]),
        (&["apply", "retrieve"], &["--checkpoint", "--out", "--seed", "--data", "--test-fraction", "--split-seed", "--space", "-k", "--split", "--same-identity"]),
        (&["apply", "export-features"], &["--checkpoint", "--out", "--seed", "--data", "--test-fraction", "--split-seed", "--split"]),
    ];
    for (cmd, flags) in cases {
        let mut args = cmd.to_vec();
        args.push("--help");
        let help = ok(&args);
        for f in *flags {
            assert!(help.contains(f), "{cmd:?} --help lacks {f}:\n{help}");
        }
    }
    let reference = ok(&["reference"]);
    assert!(reference.contains("## `exprgan apply retrieve`"));
    assert!(reference.contains("stage_epochs"));
}

#[test]
fn config_layers_file_and_preset() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    fs::write(&file, "preset = \"paper\"\nseed = 11\n[optimizer]\nbatch_size = 8\n").unwrap();
    let from_file: TrainConfig = toml::from_str(&ok(&["config", "--config", s(&file)])).unwrap();
    assert_eq!(from_file.preset, Preset::Paper);
    assert_eq!((from_file.seed, from_file.optimizer.batch_size), (11, 8));
    assert_eq!(from_file.stage_epochs, [100; 3]);
    // an explicit flag outranks the file
    let flagged: TrainConfig = toml::from_str(&ok(&["config", "--preset", "desk", "--config", s(&file)])).unwrap();
    assert_eq!(flagged.preset, Preset::Desk);
    assert_eq!(flagged.seed, 11);
    fs::write(&file, "no_such_key = 1\n").unwrap();
    assert!(!exprgan(&["config", "--config", s(&file)]).status.success());
}

#[test]
fn make_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let stdout = ok(&["make-data", "--preset", "desk", "--seed", "7", "--identities", "3", "--per-cell", "2", "--resolution", "32", "--out", s(&out)]);
        (out, line_value(&stdout, "checksum").to_string())
    };
    let (a, sum_a) = run("a");
    let (_, sum_b) = run("b");
    assert_eq!(sum_a, sum_b);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("dataset-seed7.json")).unwrap()).unwrap();
    assert_eq!(summary["images"], 18);
    assert_eq!(summary["identities"], 3);
    assert_eq!(summary["classes"], 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("make-data-seed7.run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "make-data");
    assert_eq!(manifest["seeds"]["master"], 7);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 18 + 2);
    let (_, other) = {
        let out = dir.path().join("c");
        let stdout = ok(&["make-data", "--seed", "8", "--identities", "3", "--per-cell", "2", "--resolution", "32", "--out", s(&out)]);
        (out, line_value(&stdout, "checksum").to_string())
    };
    assert_ne!(sum_a, other);
}

#[test]
fn desk_dataset_has_twenty_identities_and_three_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("desk");
    let stdout = ok(&["make-data", "--preset", "desk", "--seed", "7", "--out", s(&out)]);
    assert!(stdout.contains("1800 images (20 identities x 3 classes)"), "{stdout}");
    let records = exprgan::datagen::read_manifest(&out).unwrap();
    let files = fs::read_dir(out.join("images")).unwrap().count();
    assert_eq!((records.len(), files), (1800, 1800));
}

#[test]
fn ingest_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = exprgan(&["make-data", "--ingest", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    fs::create_dir_all(empty.join("laughing/p1")).unwrap();
    let out = exprgan(&["make-data", "--ingest", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("laughing"));
}

#[test]
fn ingest_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("faces");
    for (class, person) in [("smile", "ann"), ("frown", "ann"), ("smile", "bob")] {
        let d = root.join(class).join(person);
        fs::create_dir_all(&d).unwrap();
        image::RgbImage::from_pixel(40, 30, image::Rgb([200, 10, 10])).save(d.join("0.png")).unwrap();
    }
    let out = dir.path().join("ingested");
    ok(&["make-data", "--ingest", s(&root), "--class-names", "smile,frown", "--resolution", "16", "--out", s(&out)]);
    let data = exprgan::datagen::read_dataset(&out, 2).unwrap();
    assert_eq!(data.len(), 3);
    assert!(data.iter().all(|im| im.resolution == 16));
}

fn tiny_config_file(dir: &Path) -> PathBuf {
    let mut c = TrainConfig::preset(Preset::Desk);
    c.data.synthetic = DatasetSpec {
        n_identities: 4,
        images_per_identity_per_class: 2,
        classes: 3,
        resolution: 32,
        intensity: IntensityRange { min: 0.3, max: 1.0 },
        seed: 0,
    };
    c.data.test_fraction = 0.25;
    c.stage_epochs = [2, 2, 1];
    c.optimizer.batch_size = 4;
    c.feature_net.batch_size = 4;
    c.feature_net.max_epochs = 2;
    c.expression_classifier.batch_size = 4;
    c.expression_classifier.max_epochs = 1;
    c.checkpoint_every = 0;
    c.architecture = Some(ArchitectureSpec::tiny(CodeLayout::new(3, 5).unwrap(), 3));
    let path = dir.join("tiny.toml");
    fs::write(&path, c.to_toml()).unwrap();
    path
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
    run: PathBuf,
    final_checksum: String,
}

/// One tiny deterministic curriculum shared by the apply tests.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = tiny_config_file(&root);
        let run = root.join("run");
        let stdout = ok(&["train", "--config", s(&config), "--stages", "1,2,3", "--deterministic", "--seed", "5", "--out", s(&run)]);
        let final_checksum = stdout
            .lines()
            .find_map(|l| l.split(" checksum ").nth(1))
            .expect("final checksum line")
            .to_string();
        ok(&["make-data", "--config", s(&config), "--seed", "5", "--out", s(&root.join("data"))]);
        Trained {
            _dir: dir,
            root,
            run,
            final_checksum,
        }
    })
}

#[test]
fn train_writes_three_checkpoints_and_a_loss_log() {
    let t = trained();
    for k in 1..=3 {
        assert!(t.run.join(format!("stage{k}/params.safetensors")).exists());
    }
    let log = fs::read_to_string(t.run.join("losses.jsonl")).unwrap();
    assert!(log.lines().count() > 0);
    let manifests: Vec<_> = fs::read_dir(&t.run)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("train-") && n.ends_with("-seed5.run.json"))
        .collect();
    assert_eq!(manifests.len(), 1);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.run.join(&manifests[0])).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(m["config"]["deterministic"], true);
    assert!(m["seeds"]["stage1"].is_u64());
}

#[test]
fn deterministic_training_repeats_bitwise() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config_file(dir.path());
    let stdout = ok(&["train", "--config", s(&config), "--deterministic", "--seed", "5", "--out", s(&dir.path().join("again"))]);
    let checksum = stdout.lines().find_map(|l| l.split(" checksum ").nth(1)).unwrap();
    assert_eq!(checksum, t.final_checksum);
}

#[test]
fn later_stage_without_prerequisite_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config_file(dir.path());
    let out = exprgan(&["train", "--config", s(&config), "--stage", "3", "--out", s(&dir.path().join("fresh"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage 3 requires the stage 2 checkpoint"), "{err}");
}

fn first_image(t: &Trained) -> PathBuf {
    let data = t.root.join("data");
    data.join(&exprgan::datagen::read_manifest(&data).unwrap()[0].path)
}

#[test]
fn sweep_grid_has_level_and_neutral_columns() {
    let t = trained();
    let out = t.root.join("sweep");
    let ckpt = t.run.join("final");
    ok(&["apply", "sweep", "--checkpoint", s(&ckpt), "--class", "0", "--input", s(&first_image(t)), "--out", s(&out)]);
    let name = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .find(|n| n.ends_with("-seed0-class0.png.captions.json"))
        .unwrap();
    assert!(name.starts_with("sweep-"));
    let caps: exprgan::apps::GridCaptions = serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap();
    assert_eq!((caps.rows, caps.cols), (1, 6));
    assert_eq!(caps.col_captions.last().unwrap(), "neutral");
}

#[test]
fn generate_is_reproducible() {
    let t = trained();
    let ckpt = t.run.join("final");
    let run = |name: &str| {
        let out = t.root.join(name);
        ok(&["apply", "generate", "--checkpoint", s(&ckpt), "--class", "2", "-n", "50", "--seed", "1", "--out", s(&out)]);
        let dir = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).find(|p| p.is_dir()).unwrap();
        let mut files: Vec<_> = fs::read_dir(dir.join("images")).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let a = run("gen-a");
    assert_eq!(a.len(), 50);
    assert_eq!(a, run("gen-b"));
}

#[test]
fn retrieve_writes_one_row_per_query() {
    let t = trained();
    let out = t.root.join("retrieve");
    let stdout = ok(&[
        "apply", "retrieve", "--checkpoint", s(&t.run.join("final")), "--data", s(&t.root.join("data")),
        "--space", "c", "-k", "1", "--split", "all", "--out", s(&out),
    ]);
    let queries: usize = line_value(&stdout, "").split(' ').next().unwrap().parse().unwrap();
    assert_eq!(queries, 24);
    let csv = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|e| e == "csv")).unwrap();
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + queries);
    // never matched against its own identity
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_ne!(f[1], f[5]);
    }
}

#[test]
fn remaining_applications_write_artifacts_and_manifests() {
    let t = trained();
    let ckpt = t.run.join("final");
    let out = t.root.join("misc");
    let img = first_image(t);
    let data = t.root.join("data");
    ok(&["apply", "edit", "--checkpoint", s(&ckpt), "--input", s(&img), "--magnitude", "0.5", "--out", s(&out)]);
    ok(&["apply", "transfer", "--checkpoint", s(&ckpt), "--source", s(&img), "--target", s(&img), "--out", s(&out)]);
    ok(&["apply", "export-features", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out)]);
    let stdout = ok(&[
        "apply", "augment-exp", "--checkpoint", s(&ckpt), "--data", s(&data), "--counts", "0,6", "--epochs", "1",
        "--test-fraction", "0.25", "--seed", "5", "--out", s(&out),
    ]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("synthetic")).count(), 2);
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    for prefix in ["edit-", "transfer-", "features-", "augment-"] {
        let run = names.iter().find(|n| n.starts_with(prefix) && n.ends_with(".run.json")).unwrap_or_else(|| panic!("{prefix} manifest"));
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(run)).unwrap()).unwrap();
        assert!(m["input_checkpoint_id"].is_string());
        for o in m["outputs"].as_array().unwrap() {
            assert!(Path::new(o["path"].as_str().unwrap()).exists());
            assert_eq!(o["sha256"].as_str().unwrap().len(), 64);
        }
    }
    let features = names.iter().find(|n| n.starts_with("features-") && n.ends_with(".csv")).unwrap();
    assert_eq!(fs::read_to_string(out.join(features)).unwrap().lines().count(), 1 + 24);
}

#[test]
fn incompatible_checkpoint_version_is_reported() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("old");
    fs::create_dir(&ckpt).unwrap();
    for f in ["metadata.json", "params.safetensors"] {
        fs::copy(t.run.join("final").join(f), ckpt.join(f)).unwrap();
    }
    let meta = fs::read_to_string(ckpt.join("metadata.json")).unwrap();
    fs::write(ckpt.join("metadata.json"), meta.replace("exprgan-checkpoint/1", "exprgan-checkpoint/0")).unwrap();
    let out = exprgan(&["apply", "generate", "--checkpoint", s(&ckpt), "--class", "0", "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checkpoint format version exprgan-checkpoint/0 is incompatible"), "{err}");
}
