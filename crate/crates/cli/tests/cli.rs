use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texsur_core::corpus::{scene, write_pgm16, SceneKind};

fn texsur(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texsur"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = texsur(dir, args);
    assert!(
        out.status.success(),
        "texsur {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const PIPELINE: &str = r#"
seed = 5
out_dir = "run"
[corpus]
synthetic = { count = 2, size = 128 }
[extract]
n = 40
[sample]
n = 3
"#;

const FAST: &str = r#"
[synthesis]
max_iters = 3
[codec]
max_iters = 2
"#;

#[test]
fn pipeline_then_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("p.toml"), PIPELINE).unwrap();
    fs::write(d.join("fast.toml"), FAST).unwrap();
    ok(d, &["run", "p.toml"]);
    for f in ["manifest.json", "ensemble.tpv", "model.msm", "model.tsq", "samples.tpv", "run.json"] {
        assert!(d.join("run").join(f).exists(), "{f} missing");
    }
    let first = fs::read(d.join("run/model.msm")).unwrap();
    ok(d, &["run", "p.toml"]);
    assert_eq!(first, fs::read(d.join("run/model.msm")).unwrap(), "rerun changed the model");

    let model = "run/model.msm";
    ok(d, &["--config", "fast.toml", "sample", "--model", model, "--n", "2", "--out", "s.tpv"]);
    let text = ok(
        d,
        &["--config", "fast.toml", "synthesize", "--params", "s.tpv", "--index", "1", "--out", "t.png"],
    );
    assert!(text.contains("64x64"), "{text}");
    ok(d, &["pca-report", "--model", model, "--out", "pca.json"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("pca.json")).unwrap()).unwrap();
    assert_eq!(report["dim"], 655);

    ok(
        d,
        &[
            "compare", "--reference", model, "--candidate", model, "--basis", "soc", "--kmax", "10",
            "--true-mean", "--out", "c.csv",
        ],
    );
    let csv = fs::read_to_string(d.join("c.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "k,kld,kld_true_mean");
    assert_eq!(rows.len(), 11);
    for row in &rows[1..] {
        let cols: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!(cols.iter().all(|v| v.abs() < 1e-9), "{row}");
    }
}

#[test]
fn encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("p.toml"), PIPELINE).unwrap();
    fs::write(d.join("fast.toml"), FAST).unwrap();
    ok(d, &["run", "p.toml"]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    write_pgm16(d.join("img.pgm"), &scene(SceneKind::PinkNoise, 128, &mut rng)).unwrap();

    let fast = ["--config", "fast.toml"];
    let coded = [&fast[..], &["encode", "img.pgm", "--model", "run/model.msm", "--out", "img.tsc", "--report", "rate.json"]].concat();
    ok(d, &coded);
    let rate: serde_json::Value = serde_json::from_slice(&fs::read(d.join("rate.json")).unwrap()).unwrap();
    let bytes = fs::metadata(d.join("img.tsc")).unwrap().len();
    assert_eq!(rate["total_bits"], 8 * bytes);

    let decode = |out: &str| {
        let args = [&fast[..], &["decode", "img.tsc", "--model", "run/model.msm", "--out", "d.png", "--pgm", out]].concat();
        ok(d, &args);
        fs::read(d.join(out)).unwrap()
    };
    assert_eq!(decode("a.pgm"), decode("b.pgm"), "decode is not deterministic");
}

#[test]
fn extract_writes_patches_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    write_pgm16(d.join("a.pgm"), &scene(SceneKind::DeadLeaves, 128, &mut rng)).unwrap();
    ok(d, &["--seed", "4", "extract", "a.pgm", "--n", "6", "--size", "32", "--out-dir", "pat"]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("pat/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["retained"].as_array().unwrap().len(), 6);
    assert_eq!(m["config"]["seed"], 4);
    assert_eq!(fs::read_dir(d.join("pat")).unwrap().count(), 7);
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.toml"), "out_dir = \"o\"\n[corpus]\n[extract]\nn = 4\n").unwrap();
    let out = texsur(d, &["run", "empty.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[corpus]"));
    let out = texsur(d, &["decode", "missing.tsc", "--model", "missing.msm", "--out", "x.png"]);
    assert!(!out.status.success());
    let out = texsur(d, &["compare", "--reference", "a", "--candidate", "b", "--basis", "bogus", "--out", "c"]);
    assert!(!out.status.success());
}
