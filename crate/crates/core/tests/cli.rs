use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agri_contrast::cli::RunManifest;
use agri_contrast::evalsuite::{AblationTable, MetricReport};
use agri_contrast::fieldstore::TileManifest;

const SMALL: &str = r#"
preset = "desk"

[data.synthetic]
fields = 4

[pretrain]
batch_size = 4

[eval_data]
train_fields = 4
val_fields = 2
segmentation_fields = 4
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_agri-contrast"));
    c.env_remove("AGRI_CONTRAST_SEED").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_scenes(dir: &Path) -> PathBuf {
    let scenes = dir.join("scenes");
    let out = run(&["synth", "--out", s(&scenes), "--fields", "2", "--flights", "3", "--size", "70", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    scenes
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["tile", "--input", "x", "--out", "y", "--tile-size", "0"])), 2);
    assert_eq!(code(&run(&["pretrain", "--method", "simclr"])), 2);
    assert_eq!(code(&run(&["pretrain", "--resume", s(&dir.path().join("missing.tar"))])), 2);
    assert_eq!(code(&run(&["plot", "--out", s(&dir.path().join("p.svg"))])), 2);
    assert_eq!(code(&run(&["eval", "probe", "--preset", "nope"])), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[pretrain]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(&run(&["pretrain", "--config", s(&bad)])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn tile_is_deterministic_and_counts_tiles() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth_scenes(dir.path());
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let r = run(&["tile", "--input", s(&scenes), "--tile-size", "32", "--out", s(&out)]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        manifests.push(std::fs::read(out.join("manifest.csv")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    let m = TileManifest::read_from(&manifests[0][..]).unwrap();
    // 2 fields x 3 flights, floor(70/32)^2 tiles each
    assert_eq!(m.len(), 2 * 3 * 4);
    let first = &m.entries[0];
    let a = std::fs::read(dir.path().join("a/rgb").join(format!("{}.png", first.tile_uri))).unwrap();
    let b = std::fs::read(dir.path().join("b/rgb").join(format!("{}.png", first.tile_uri))).unwrap();
    assert_eq!(a, b);

    let custom = dir.path().join("m.csv");
    let r = run(&["tile", "--input", s(&scenes), "--tile-size", "64", "--out", s(&dir.path().join("c")), "--manifest", s(&custom)]);
    assert_eq!(code(&r), 0);
    assert_eq!(TileManifest::load(&custom).unwrap().len(), 6);
}

#[test]
fn temco_on_unpaired_tiles_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let r = run(&["synth", "--out", s(&scenes), "--fields", "1", "--flights", "1", "--size", "64"]);
    assert_eq!(code(&r), 0);
    let tiles = dir.path().join("tiles");
    assert_eq!(code(&run(&["tile", "--input", s(&scenes), "--tile-size", "64", "--out", s(&tiles)])), 0);
    let cfg = dir.path().join("tiles.toml");
    std::fs::write(
        &cfg,
        format!("[data]\nsource = \"tiles\"\nmanifest = {:?}\n", tiles.join("manifest.csv").to_str().unwrap()),
    )
    .unwrap();
    let out = dir.path().join("run");
    let r = run(&["pretrain", "--method", "temco", "--config", s(&cfg), "--steps", "1", "--out", s(&out)]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
    let r = run(&["pretrain", "--method", "moco", "--config", s(&cfg), "--steps", "1", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn pretrain_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let common = ["pretrain", "--method", "moco_pixpro", "--config", s(&cfg), "--steps", "6", "--seed", "3"];
    let r = bin().args(common).args(["--out", s(&full)]).output().unwrap();
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let r = bin().args(common).args(["--out", s(&part), "--stop-after", "2"]).output().unwrap();
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let ck = part.join("checkpoint.tar");
    let r = run(&["pretrain", "--resume", s(&ck), "--out", s(&part)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read(full.join("checkpoint.tar")).unwrap(), std::fs::read(&ck).unwrap());

    let metrics = std::fs::read_to_string(part.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    let m = RunManifest::load(&full.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 3);
    assert!(m.artifacts.contains_key("checkpoint"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let r = bin()
        .env("AGRI_CONTRAST_SEED", "11")
        .args(["pretrain", "--method", "moco", "--config", s(&cfg), "--steps", "1", "--out", s(&out)])
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    assert_eq!(RunManifest::load(&out.join("manifest.json")).unwrap().seed, 11);
}

#[test]
fn eval_protocols_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let eval = |mode: &str, extra: &[&str], out: &Path| {
        let mut c = bin();
        c.args(["eval", mode, "--config", s(&cfg), "--epochs", "1", "--out", s(out)]).args(extra);
        c.output().unwrap()
    };

    let probe_dir = dir.path().join("probe");
    let r = eval("probe", &["--protocol", "linear", "--fraction", "0.5"], &probe_dir);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = MetricReport::load(&probe_dir.join("report.json")).unwrap();
    assert_eq!(report.label_fraction, 0.5);
    assert!(report.weights.starts_with("random"));
    assert!(report.top1_accuracy.is_some());

    assert_eq!(code(&eval("probe", &["--protocol", "svm"], &dir.path().join("x"))), 2);
    assert_eq!(code(&eval("probe", &["--no-freeze"], &dir.path().join("x"))), 2);
    assert_eq!(code(&eval("finetune", &["--freeze"], &dir.path().join("x"))), 2);
    assert_eq!(code(&eval("probe", &["--fraction", "1.5"], &dir.path().join("x"))), 2);

    let seg_dir = dir.path().join("seg");
    let r = eval("segment", &["--protocol", "fine_grained", "--no-freeze"], &seg_dir);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let seg = MetricReport::load(&seg_dir.join("report.json")).unwrap();
    assert!(seg.mean_iou.is_some());
    assert!(!seg.encoder_frozen);

    let svg = dir.path().join("fig.svg");
    let r = run(&["plot", s(&probe_dir.join("report.json")), s(&seg_dir.join("report.json")), "--out", s(&svg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn eval_with_pretrained_weights_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run_dir = dir.path().join("run");
    let r = run(&["pretrain", "--method", "temco", "--config", s(&cfg), "--steps", "2", "--out", s(&run_dir)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let out = dir.path().join("probe");
    let r = run(&["eval", "probe", "--config", s(&cfg), "--epochs", "1", "--weights", s(&run_dir), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(MetricReport::load(&out.join("report.json")).unwrap().weights.contains("sha256="));
    let r = run(&["eval", "probe", "--config", s(&cfg), "--weights", s(&dir.path().join("nothing.tar")), "--out", s(&out)]);
    assert_ne!(code(&r), 0);

    let ab = dir.path().join("ablate");
    let r = run(&[
        "ablate", "--config", s(&cfg), "--counts", "2,4", "--fractions", "1.0", "--seeds", "0", "--steps", "2", "--out", s(&ab),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let table = AblationTable::load(&ab.join("ablation.csv")).unwrap();
    assert_eq!(table.rows.len(), 2);
    let r = run(&["ablate", "--config", s(&cfg), "--counts", "2,40", "--steps", "1", "--out", s(&ab)]);
    assert_eq!(code(&r), 2);
    let svg = dir.path().join("ab.svg");
    assert_eq!(code(&run(&["plot", s(&ab.join("ablation.csv")), "--out", s(&svg)])), 0);
}
