//! End-to-end tests of the `fdv` binary: exit codes, output files,
//! determinism across reruns and thread counts, and seed precedence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fdv() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fdv"));
    // Isolate tests from any ambient seed override.
    c.env_remove("FDV_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn fdv")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process had no exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const CORPUS_SPEC: &str = "\
n_writers = 3
genuine_per_writer = 8
skilled_per_writer = 3
jitter_genuine = 0.010
jitter_skilled = 0.035
canvas_w = 48
canvas_h = 32
seed = 0
";

/// Small, fast run: 8x12 inputs, one hidden layer, a handful of rounds.
fn config_toml(latent_dim: usize, seed: u64) -> String {
    format!(
        "\
schema_version = 1
seed = {seed}

[preprocess]
side_h = 8
side_w = 12

[vae]
hidden_dims = [16]
latent_dim = {latent_dim}
kl_weight = 1.0

[train]
eta1 = 1e-3
eta2 = 1e-3
margin = 1.0
rounds = 4
batch_size = 4
optimizer = \"adam\"

[protocol]
train_genuine_per_writer = 5
"
    )
}

/// Generates the 3-writer corpus into `dir/corpus` and returns its root.
fn gen_corpus(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.toml");
    fs::write(&spec, CORPUS_SPEC).unwrap();
    let root = dir.join("corpus");
    let out = run(fdv()
        .arg("gen-synthetic")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&root));
    assert_eq!(code(&out), 0, "gen-synthetic failed: {}", text(&out.stderr));
    root
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

/// Every file under `root` (relative path -> bytes), for whole-tree
/// determinism comparisons.
fn dir_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                acc.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

fn json_value(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("bad json {e}: {s}"))
}

#[test]
fn help_and_version_exit_zero() {
    let out = run(fdv().arg("--help"));
    assert_eq!(code(&out), 0);
    assert!(text(&out.stdout).contains("fdv"));
    let out = run(fdv().arg("--version"));
    assert_eq!(code(&out), 0);
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = run(&mut fdv());
    assert_eq!(code(&out), 1);
    let out = run(fdv().arg("no-such-command"));
    assert_eq!(code(&out), 1);
}

#[test]
fn gen_synthetic_is_deterministic_and_guards_overwrites() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, CORPUS_SPEC).unwrap();

    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for dest in [&out_a, &out_b] {
        let out = run(fdv()
            .arg("gen-synthetic")
            .arg("--spec")
            .arg(&spec)
            .arg("--out")
            .arg(dest));
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    }
    assert_eq!(dir_snapshot(&out_a), dir_snapshot(&out_b), "same spec, same bytes");

    // A nonempty target is refused without --force and replaced with it.
    let out = run(fdv()
        .arg("gen-synthetic")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&out_a));
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("--force"), "{}", text(&out.stderr));
    let out = run(fdv()
        .arg("gen-synthetic")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&out_a)
        .arg("--force"));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert_eq!(dir_snapshot(&out_a), dir_snapshot(&out_b));
}

#[test]
fn validate_reports_the_inventory() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let out = run(fdv().arg("validate").arg("--data").arg(&root));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(
        stdout.contains("3 writers, 24 genuine + 9 skilled images, all readable"),
        "unexpected validate output: {stdout}"
    );
}

#[test]
fn validate_rejects_a_corrupt_image() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let bad = root.join("writers/w002/genuine/g03.png");
    fs::write(&bad, b"this is not a png").unwrap();
    let out = run(fdv().arg("validate").arg("--data").arg(&root));
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("g03.png"), "{}", text(&out.stderr));
}

#[test]
fn config_with_unknown_keys_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let mut bad = config_toml(3, 1);
    bad.push_str("\nmystery_knob = 7\n");
    let config = write_config(tmp.path(), "bad.toml", &bad);
    let out = run(fdv()
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("eval")));
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("mystery_knob"), "{}", text(&out.stderr));
}

#[test]
fn train_is_deterministic_and_verify_agrees_with_it() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 1));

    let models_a = tmp.path().join("models_a");
    let models_b = tmp.path().join("models_b");
    for dest in [&models_a, &models_b] {
        let out = run(fdv()
            .arg("train")
            .arg("--data")
            .arg(&root)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(dest));
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        let stdout = text(&out.stdout);
        assert!(stdout.contains("seed 1 (from config file)"), "{stdout}");
        assert!(stdout.contains("trained w001:"), "{stdout}");
    }
    for id in ["w001", "w002", "w003"] {
        let a = fs::read(models_a.join(format!("{id}.fdv"))).unwrap();
        let b = fs::read(models_b.join(format!("{id}.fdv"))).unwrap();
        assert_eq!(a, b, "{id}.fdv differs between identical runs");
        let telemetry =
            fs::read_to_string(models_a.join(format!("{id}_telemetry.csv"))).unwrap();
        assert!(
            telemetry.starts_with("round,loss_vae,loss_fd,"),
            "telemetry header: {}",
            telemetry.lines().next().unwrap_or("")
        );
        assert_eq!(telemetry.lines().count(), 5, "header + one row per round");
    }

    // verify on a training genuine image: exit 0, well-formed JSON, and the
    // same score when repeated.
    let model = models_a.join("w001.fdv");
    let image = root.join("writers/w001/genuine/g00.png");
    let mut scores = Vec::new();
    for _ in 0..2 {
        let out = run(fdv()
            .arg("verify")
            .arg("--model")
            .arg(&model)
            .arg("--image")
            .arg(&image));
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        let v = json_value(&text(&out.stdout));
        assert!(v["score"].is_f64() || v["score"].is_i64(), "score in {v}");
        let decision = v["decision"].as_str().unwrap();
        assert!(decision == "genuine" || decision == "forgery", "{decision}");
        assert_eq!(v["seed"].as_u64(), Some(1), "defaults to the model seed");
        scores.push(v["score"].as_f64().unwrap());
    }
    assert_eq!(scores[0], scores[1], "verify must be deterministic");
}

#[test]
fn train_rejects_an_unknown_writer() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 1));
    let out = run(fdv()
        .arg("train")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("models"))
        .arg("--writer")
        .arg("w042"));
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("not found"), "{}", text(&out.stderr));
}

#[test]
fn evaluate_is_identical_across_reruns_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 1));

    let eval_a = tmp.path().join("eval_a");
    let eval_b = tmp.path().join("eval_b");
    let out = run(fdv()
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&eval_a));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let out = run(fdv()
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&eval_b)
        .arg("--jobs")
        .arg("2"));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));

    let snap_a = dir_snapshot(&eval_a);
    let snap_b = dir_snapshot(&eval_b);
    for name in ["splits.json", "report.json", "writers.csv", "scores.csv", "summary.txt"] {
        assert!(snap_a.contains_key(name), "missing {name}");
        assert_eq!(snap_a[name], snap_b[name], "{name} differs with --jobs 2");
    }
}

#[test]
fn evaluate_scores_match_verify_scores() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 1));

    let eval_dir = tmp.path().join("eval");
    let out = run(fdv()
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&eval_dir));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));

    let models = tmp.path().join("models");
    let out = run(fdv()
        .arg("train")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&models));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));

    // Compare a handful of rows spread over writers and classes.
    let scores = fs::read_to_string(eval_dir.join("scores.csv")).unwrap();
    let rows: Vec<&str> = scores.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows.iter().step_by(rows.len().div_ceil(6).max(1)) {
        let cols: Vec<&str> = row.split(',').collect();
        let (writer, image_id, score_csv) = (cols[0], cols[1], cols[3]);
        let out = run(fdv()
            .arg("verify")
            .arg("--model")
            .arg(models.join(format!("{writer}.fdv")))
            .arg("--image")
            .arg(root.join(image_id)));
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        let v = json_value(&text(&out.stdout));
        let score_csv: f64 = score_csv.parse().unwrap();
        assert_eq!(
            v["score"].as_f64().unwrap(),
            score_csv,
            "verify and evaluate disagree on {writer} {image_id}"
        );
    }
}

#[test]
fn seed_precedence_flag_env_config() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 5));

    let splits_of = |dir: &Path| -> serde_json::Value {
        json_value(&fs::read_to_string(dir.join("splits.json")).unwrap())
    };

    // Config seed by default.
    let d = tmp.path().join("s_config");
    let out = run(fdv()
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&d)
        .arg("--splits-only"));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("split plan: 3 writers, 0 skipped"));
    let v = splits_of(&d);
    assert_eq!(v["seed"].as_u64(), Some(5));
    assert_eq!(v["seed_source"].as_str(), Some("config"));

    // Environment overrides the config.
    let d = tmp.path().join("s_env");
    let out = run(fdv()
        .env("FDV_SEED", "7")
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&d)
        .arg("--splits-only"));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let v = splits_of(&d);
    assert_eq!(v["seed"].as_u64(), Some(7));
    assert_eq!(v["seed_source"].as_str(), Some("env_var"));

    // The flag beats both.
    let d = tmp.path().join("s_flag");
    let out = run(fdv()
        .env("FDV_SEED", "7")
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&d)
        .arg("--splits-only")
        .arg("--seed")
        .arg("9"));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let v = splits_of(&d);
    assert_eq!(v["seed"].as_u64(), Some(9));
    assert_eq!(v["seed_source"].as_str(), Some("cli_flag"));

    // A malformed environment seed is a usage error.
    let out = run(fdv()
        .env("FDV_SEED", "bogus")
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("s_bad"))
        .arg("--splits-only"));
    assert_eq!(code(&out), 1);
    assert!(text(&out.stderr).contains("FDV_SEED"), "{}", text(&out.stderr));
}

#[test]
fn jobs_zero_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 1));
    let out = run(fdv()
        .arg("evaluate")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("eval"))
        .arg("--jobs")
        .arg("0"));
    assert_eq!(code(&out), 1);
    assert!(text(&out.stderr).contains("--jobs"), "{}", text(&out.stderr));
}

#[test]
fn latent_plot_draws_three_groups_deterministically() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config2d.toml", &config_toml(2, 1));

    let svg_a = tmp.path().join("a.svg");
    let svg_b = tmp.path().join("b.svg");
    let mut lines = Vec::new();
    for dest in [&svg_a, &svg_b] {
        let out = run(fdv()
            .arg("latent-plot")
            .arg("--data")
            .arg(&root)
            .arg("--config")
            .arg(&config)
            .arg("--writer")
            .arg("w001")
            .arg("--out")
            .arg(dest));
        assert_eq!(code(&out), 0, "{}", text(&out.stderr));
        lines.push(text(&out.stdout));
    }
    assert_eq!(lines[0], lines[1], "latent-plot must be deterministic");
    let v = json_value(&lines[0]);
    assert_eq!(v["writer_id"].as_str(), Some("w001"));
    assert!(v["separation"].as_f64().unwrap() > 0.0);

    let svg = fs::read_to_string(&svg_a).unwrap();
    assert_eq!(fs::read_to_string(&svg_b).unwrap(), svg);
    assert!(svg.starts_with("<svg"), "not an svg: {}", &svg[..40.min(svg.len())]);
    for label in ["genuine (", "skilled (", "random ("] {
        assert!(svg.contains(label), "legend is missing {label:?}");
    }
}

#[test]
fn latent_plot_requires_a_two_dimensional_latent() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config3d.toml", &config_toml(3, 1));
    let out = run(fdv()
        .arg("latent-plot")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--writer")
        .arg("w001")
        .arg("--out")
        .arg(tmp.path().join("plot.svg")));
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("latent_dim"), "{}", text(&out.stderr));
}

#[test]
fn corrupt_model_containers_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let root = gen_corpus(tmp.path());
    let config = write_config(tmp.path(), "config.toml", &config_toml(3, 1));
    let models = tmp.path().join("models");
    let out = run(fdv()
        .arg("train")
        .arg("--data")
        .arg(&root)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&models)
        .arg("--writer")
        .arg("w001"));
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));

    let model = models.join("w001.fdv");
    let image = root.join("writers/w001/genuine/g00.png");
    let pristine = fs::read(&model).unwrap();

    // Overwrite one aligned payload float with NaN bytes: the loader must
    // refuse non-finite parameters.
    let header_len = u32::from_le_bytes(pristine[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    let mut tampered = pristine.clone();
    let slot = payload_start + 8 * (((tampered.len() - payload_start) / 8) / 2);
    tampered[slot..slot + 8].fill(0xFF);
    let bad = tmp.path().join("tampered.fdv");
    fs::write(&bad, &tampered).unwrap();
    let out = run(fdv().arg("verify").arg("--model").arg(&bad).arg("--image").arg(&image));
    assert_eq!(code(&out), 2, "non-finite parameters must be refused");
    assert!(text(&out.stderr).contains("non-finite"), "{}", text(&out.stderr));

    // Damaged magic bytes are refused.
    let mut bad_magic = pristine.clone();
    bad_magic[0] = b'X';
    fs::write(&bad, &bad_magic).unwrap();
    let out = run(fdv().arg("verify").arg("--model").arg(&bad).arg("--image").arg(&image));
    assert_eq!(code(&out), 2, "bad magic must be refused");

    // Truncation is also refused.
    fs::write(&bad, &pristine[..pristine.len() / 3]).unwrap();
    let out = run(fdv().arg("verify").arg("--model").arg(&bad).arg("--image").arg(&image));
    assert_eq!(code(&out), 2, "truncated container must be refused");

    // A missing image path is a data error.
    let out = run(fdv()
        .arg("verify")
        .arg("--model")
        .arg(&model)
        .arg("--image")
        .arg(root.join("writers/w001/genuine/nope.png")));
    assert_eq!(code(&out), 2);
}
