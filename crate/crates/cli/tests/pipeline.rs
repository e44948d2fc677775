use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gestalt_core::archive;
use gestalt_core::vit::{init_untrained, ViTConfig};

const TINY: &str = r#"
seed = 3

[model]
name = "tiny"

[model.vit]
patch_size = 32
n_layers = 3
n_heads = 4
width = 32
mlp_ratio = 2

[data]
patch_size = 32
blobs = { count = 4 }
curves = { count = 4 }
binding = { shape = "blob", train = 10, test = 5 }

[probe]
pairs_per_image = 8

[probe.train]
epochs = 3
batch_size = 32

[continuity]
t_values = [-8, 0, 8]
max_targets = 3

[ablation]
k = 2
n_controls = 20
"#;

fn gestalt(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gestalt")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn with_config(dir: &Path, toml: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, toml).unwrap();
    p
}

fn run_ok(cfg: &Path, out: &Path, cmd: &str) {
    let (code, err) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), cmd]);
    assert_eq!(code, 0, "{err}");
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = with_config(dir.path(), "[data]\nblobs = { count = 0 }\n");
    let (code, err) = gestalt(&["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "generate"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("blobs.count"), "{err}");

    let (code, _) = gestalt(&["--config", "/nonexistent/cfg.toml", "generate"]);
    assert_eq!(code, 2);
    let (code, _) = gestalt(&["--jobs", "0", "--out", out.to_str().unwrap(), "generate"]);
    assert_eq!(code, 2);
    let cfg = with_config(dir.path(), "[ablation]\nk = 5\nlayers = [0]\n[probe]\nlayers = [0, 99]\n");
    let (code, _) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "generate"]);
    assert_eq!(code, 0);
    let (code, err) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "activations"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = with_config(
        dir.path(),
        &format!("{TINY}\n[[data.ingested]]\nimage = \"/nonexistent/a.png\"\nmask = \"/nonexistent/a_mask.png\"\n"),
    );
    let (code, err) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "generate"]);
    assert_eq!(code, 3, "{err}");

    // A later stage without its inputs.
    let cfg = with_config(dir.path(), TINY);
    let fresh = dir.path().join("fresh");
    let (code, _) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", fresh.to_str().unwrap(), "probe"]);
    assert_eq!(code, 3);

    // A held lock.
    fs::create_dir_all(&fresh).unwrap();
    fs::write(fresh.join(".gestalt.lock"), "").unwrap();
    let (code, err) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", fresh.to_str().unwrap(), "generate"]);
    assert_eq!(code, 3);
    assert!(err.contains("locked"), "{err}");
}

#[test]
fn non_finite_weights_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let vit = ViTConfig { patch_size: 32, n_layers: 2, n_heads: 2, width: 8, mlp_ratio: 2, ..ViTConfig::vit_b(32) };
    let model = init_untrained(1, vit).unwrap();
    let mut tensors = model.tensors().clone();
    let t = tensors.get_mut("blocks.0.attn.q.weight").unwrap();
    t.data_mut()[0] = f32::NAN;
    let path = dir.path().join("w.safetensors");
    archive::write(&path, &tensors, &model.metadata()).unwrap();
    let cfg = with_config(
        dir.path(),
        &format!(
            "[model]\nsource = \"archive\"\narchive = \"{}\"\npreset = \"vit-b/32\"\n[model.vit]\npatch_size = 32\nn_layers = 2\nn_heads = 2\nwidth = 8\nmlp_ratio = 2\n[data]\nblobs = {{ count = 2 }}\ncurves = {{ count = 2 }}\nbinding = {{ shape = \"blob\", train = 2, test = 2 }}\n",
            path.display()
        ),
    );
    let out = dir.path().join("out");
    run_ok(&cfg, &out, "generate");
    let (code, err) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "continuity"]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn generate_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), TINY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok(&cfg, &a, "generate");
    let (code, _) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--jobs", "2", "generate"]);
    assert_eq!(code, 0);
    assert_eq!(tree(&a.join("data")), tree(&b.join("data")));
    let (code, _) = gestalt(&["--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "4", "generate"]);
    assert_eq!(code, 0);
    assert_ne!(tree(&a.join("data")), tree(&c.join("data")));
    let manifest = fs::read_to_string(a.join("data/object_train/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
}

#[test]
fn full_run_outputs_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), TINY);
    let out = dir.path().join("out");
    run_ok(&cfg, &out, "all");

    for f in [
        "probe/probe_accuracy.csv",
        "probe/training_log.csv",
        "probe/probe_accuracy.svg",
        "probe/object_layer02.safetensors",
        "activations/scrambled_location_test.safetensors",
        "continuity/summary.csv",
        "continuity/correlations.csv",
        "ablation/head_means.safetensors",
        "ablation/selectivity.svg",
        "report/summary.txt",
        "report/summary.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let acc = csv_rows(&out.join("probe/probe_accuracy.csv"));
    assert_eq!(acc.len(), 3 * 4);
    assert_eq!(acc.iter().filter(|r| r[1] == "majority").count(), 3);
    let controls = csv_rows(&out.join("ablation/controls.csv"));
    for l in 0..3 {
        assert_eq!(controls.iter().filter(|r| r[0] == l.to_string()).count(), 20);
    }
    let runs = csv_rows(&out.join("ablation/runs.csv"));
    assert_eq!(runs.len(), 3 * 3 * 21);
    for dataset in ["blobs", "curves"] {
        let n = fs::read_dir(out.join(format!("continuity/tuning/{dataset}"))).unwrap().count();
        assert_eq!(n, 10);
    }

    // Nothing reruns; a tampered output forces its stage to rerun.
    let before = tree(&out);
    run_ok(&cfg, &out, "all");
    let strip = |t: Vec<(String, Vec<u8>)>| t.into_iter().filter(|(n, _)| n != "run_manifest.json").collect::<Vec<_>>();
    assert_eq!(strip(tree(&out)), strip(before.clone()));
    fs::write(out.join("report/summary.txt"), "tampered").unwrap();
    run_ok(&cfg, &out, "report");
    assert_ne!(fs::read_to_string(out.join("report/summary.txt")).unwrap(), "tampered");
    assert_eq!(strip(tree(&out)), strip(before));
}

#[test]
fn zero_k_gives_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), &TINY.replace("k = 2", "k = 0"));
    let out = dir.path().join("out");
    run_ok(&cfg, &out, "all");
    let runs = csv_rows(&out.join("ablation/runs.csv"));
    assert!(!runs.is_empty());
    for r in &runs {
        assert_eq!(r[3], "", "heads");
        assert_eq!(r[4], r[5], "baseline vs ablated");
        assert_eq!(r[6].parse::<f64>().unwrap(), 0.0);
    }
    let controls = csv_rows(&out.join("ablation/controls.csv"));
    assert_eq!(controls.len(), 3 * 20);
}

#[test]
fn heatmap_covers_every_head_of_a_twelve_by_twelve_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(
        dir.path(),
        &TINY
            .replace("n_layers = 3", "n_layers = 12")
            .replace("n_heads = 4", "n_heads = 12")
            .replace("width = 32", "width = 24")
            .replace("blobs = { count = 4 }", "blobs = { count = 2 }")
            .replace("curves = { count = 4 }", "curves = { count = 2 }"),
    );
    let out = dir.path().join("out");
    run_ok(&cfg, &out, "generate");
    run_ok(&cfg, &out, "continuity");
    let svg = fs::read_to_string(out.join("continuity/blobs_s0.svg")).unwrap();
    assert_eq!(svg.matches("class=\"cell\"").count(), 144);
    assert_eq!(csv_rows(&out.join("continuity/curves_s0.csv")).len(), 144);
}
