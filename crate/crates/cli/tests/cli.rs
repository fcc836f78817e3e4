use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hkge::geometry::{exp0, hyp_distance, mobius_add, Curvature};
use hkge::model::{CurvatureMode, Model, ParamGroup};
use serde_json::Value;
use tempfile::TempDir;

fn hkge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hkge(args);
    assert!(
        out.status.success(),
        "hkge {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_split(dir: &Path, name: &str, triples: &[(String, &str, String)]) {
    let text: String = triples.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
    fs::write(dir.join(name), text).unwrap();
}

/// Depth-5 binary tree (31 nodes) with both edge directions, split 80/10/10
/// by a fixed interleaving.
fn toy_dataset(root: &Path) -> PathBuf {
    let dir = root.join("toy");
    fs::create_dir_all(&dir).unwrap();
    let mut all = Vec::new();
    for child in 1..31 {
        let parent = (child - 1) / 2;
        all.push((format!("n{parent}"), "parent_of", format!("n{child}")));
        all.push((format!("n{child}"), "child_of", format!("n{parent}")));
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, t) in all.into_iter().enumerate() {
        match i % 20 {
            3 | 16 => valid.push(t),
            7 | 10 => test.push(t),
            _ => train.push(t),
        }
    }
    write_split(&dir, "train.txt", &train);
    write_split(&dir, "valid.txt", &valid);
    write_split(&dir, "test.txt", &test);
    dir
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_toy(tmp: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    train_toy_seeded(tmp, name, "7", extra)
}

fn train_toy_seeded(tmp: &TempDir, name: &str, seed: &str, extra: &[&str]) -> PathBuf {
    let data = toy_dataset(tmp.path());
    let out = tmp.path().join(name);
    let mut args = vec![
        "train",
        "--dataset-dir",
        path_str(&data),
        "--out-dir",
        path_str(&out),
        "--dim",
        "8",
        "--epochs",
        "5",
        "--seed",
        seed,
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn load_model(path: &Path) -> Model {
    Model::read_checkpoint(&mut fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn train_writes_checkpoint_log_and_config() {
    let tmp = TempDir::new().unwrap();
    let out = train_toy(&tmp, "run", &[]);
    for f in ["checkpoint.hkge", "metrics.csv", "config.json", "summary.json", "entities.tsv", "relations.tsv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(csv_rows(&out.join("metrics.csv")).len(), 5);

    let cfg = read_json(&out.join("config.json"));
    assert_eq!(cfg["command"], "train");
    assert_eq!(cfg["model"]["dim"], 8);
    assert_eq!(cfg["train"]["epochs"], 5);
    assert_eq!(cfg["train"]["seed"], 7);

    let model = load_model(&out.join("checkpoint.hkge"));
    assert_eq!(model.dim(), 8);
    assert_eq!(model.n_entities(), 31);
    assert_eq!(model.n_relations(), 4);

    // nothing but the declared outputs: no stray temporary checkpoint files
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["checkpoint.hkge", "config.json", "entities.tsv", "metrics.csv", "relations.tsv", "summary.json"]
    );
}

#[test]
fn missing_dataset_dir_is_named_in_the_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("no_such_dataset");
    let out = hkge(&["train", "--dataset-dir", path_str(&missing), "--out-dir", path_str(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_dataset"));
}

#[test]
fn odd_dimension_is_rejected_before_any_output() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let out_dir = tmp.path().join("o");
    let out = hkge(&["train", "--dataset-dir", path_str(&data), "--out-dir", path_str(&out_dir), "--dim", "7"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains('7'));
    assert!(!out_dir.exists());
}

#[test]
fn eval_reproduces_best_validation_metrics() {
    let tmp = TempDir::new().unwrap();
    let out = train_toy(&tmp, "run", &[]);
    let best = read_json(&out.join("summary.json"))["best_valid"].clone();

    ok(&["eval", "--config", path_str(&out.join("config.json"))]);
    let rows = csv_rows(&out.join("eval_valid/metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "valid");
    let field = |i: usize| rows[0][i].parse::<f64>().unwrap();
    assert_eq!(field(2), best["mrr"].as_f64().unwrap());
    assert_eq!(field(3), best["h1"].as_f64().unwrap());
    assert_eq!(field(4), best["h3"].as_f64().unwrap());
    assert_eq!(field(5), best["h10"].as_f64().unwrap());

    // the logged validation row of the best epoch agrees as well
    let best_epoch = read_json(&out.join("summary.json"))["best_epoch"].as_u64().unwrap();
    let log = csv_rows(&out.join("metrics.csv"));
    let logged = log.iter().find(|r| r[0].parse::<u64>().unwrap() == best_epoch).unwrap();
    assert_eq!(logged[3].parse::<f64>().unwrap(), field(2));
}

#[test]
fn eval_is_repeatable_from_config_and_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let out = train_toy(&tmp, "run", &[]);
    let cfg = path_str(&out.join("config.json")).to_owned();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = ok(&["eval", "--config", &cfg, "--split", "test", "--per-relation", "--out-dir", path_str(&a)]);
    let second = ok(&["eval", "--config", &cfg, "--split", "test", "--per-relation", "--out-dir", path_str(&b)]);
    for f in ["metrics.csv", "per_relation.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let strip = |o: &Output| String::from_utf8_lossy(&o.stdout).lines().filter(|l| !l.starts_with("wrote")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&first), strip(&second));

    let per_rel = csv_rows(&a.join("per_relation.csv"));
    let names: Vec<&str> = per_rel.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(names, ["child_of", "parent_of"]);
    let eval_cfg = read_json(&a.join("config.json"));
    assert_eq!(eval_cfg["command"], "eval");
    assert_eq!(eval_cfg["split"], "test");
}

#[test]
fn eval_rejects_corrupt_magic() {
    let tmp = TempDir::new().unwrap();
    let out = train_toy(&tmp, "run", &[]);
    let ckpt = out.join("checkpoint.hkge");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    fs::write(&ckpt, bytes).unwrap();
    let data = tmp.path().join("toy");
    let res = hkge(&["eval", "--checkpoint", path_str(&ckpt), "--dataset-dir", path_str(&data)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("checkpoint"));
}

#[test]
fn eval_rejects_vocabulary_mismatch() {
    let tmp = TempDir::new().unwrap();
    let out = train_toy(&tmp, "run", &[]);
    // a checkpoint without vocab files next to it, scored on a larger dataset
    let lone = tmp.path().join("lone");
    fs::create_dir_all(&lone).unwrap();
    fs::copy(out.join("checkpoint.hkge"), lone.join("checkpoint.hkge")).unwrap();
    let other = tmp.path().join("other");
    fs::create_dir_all(&other).unwrap();
    let tri = |h: &str, t: &str| (h.to_owned(), "r", t.to_owned());
    write_split(&other, "train.txt", &[tri("a", "b"), tri("b", "c")]);
    write_split(&other, "valid.txt", &[tri("a", "c")]);
    write_split(&other, "test.txt", &[tri("c", "a")]);
    let res = hkge(&["eval", "--checkpoint", path_str(&lone.join("checkpoint.hkge")), "--dataset-dir", path_str(&other)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("entities"));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = TempDir::new().unwrap();
    let a = train_toy(&tmp, "a", &[]);
    let b = train_toy(&tmp, "b", &[]);
    for f in ["checkpoint.hkge", "metrics.csv", "summary.json", "entities.tsv", "relations.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = train_toy_seeded(&tmp, "c", "8", &[]);
    assert_ne!(fs::read(a.join("checkpoint.hkge")).unwrap(), fs::read(c.join("checkpoint.hkge")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let file = tmp.path().join("base.json");
    fs::write(
        &file,
        r#"{"model": {"dim": 4, "curvature_mode": "relation"}, "train": {"epochs": 9, "lr": 0.01}}"#,
    )
    .unwrap();
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--config",
        path_str(&file),
        "--dataset-dir",
        path_str(&data),
        "--out-dir",
        path_str(&out),
        "--epochs",
        "2",
    ]);
    let cfg = read_json(&out.join("config.json"));
    assert_eq!(cfg["model"]["dim"], 4);
    assert_eq!(cfg["model"]["curvature_mode"], "relation");
    assert_eq!(cfg["train"]["epochs"], 2);
    assert_eq!(cfg["train"]["lr"], 0.01);
    assert_eq!(csv_rows(&out.join("metrics.csv")).len(), 2);
    let model = load_model(&out.join("checkpoint.hkge"));
    assert_eq!(model.dim(), 4);
    assert_eq!(model.config().curvature_mode, CurvatureMode::PerRelation);
}

#[test]
fn ablation_grid_has_six_rows_with_configs() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let out = tmp.path().join("ab");
    ok(&["ablate", "--dataset-dir", path_str(&data), "--out-dir", path_str(&out), "--dim", "4", "--epochs", "2"]);
    let rows = csv_rows(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 6);
    let expected = [
        ("true", "false", "fixed"),
        ("false", "true", "fixed"),
        ("true", "true", "fixed"),
        ("true", "false", "attention"),
        ("false", "true", "attention"),
        ("true", "true", "attention"),
    ];
    for (row, (inter, intra, mode)) in rows.iter().zip(expected) {
        assert_eq!((&row[1], &row[2], &row[3]), (inter, intra, mode));
        let cfg: Value = serde_json::from_str(&row[13]).unwrap();
        assert_eq!(cfg["model"]["use_inter_level"].as_bool().unwrap().to_string(), inter);
        assert_eq!(cfg["model"]["curvature_mode"], mode);
        assert_eq!(cfg["train"]["epochs"], 2);
        assert!(row[5].parse::<f64>().unwrap() > 0.0);
        assert!(row[9].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn curvature_sweep_has_four_modes() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&[
        "ablate",
        "--dataset-dir",
        path_str(&data),
        "--out-dir",
        path_str(&out),
        "--dim",
        "4",
        "--epochs",
        "2",
        "--curvature-sweep",
    ]);
    let modes: Vec<String> = csv_rows(&out.join("ablation.csv")).iter().map(|r| r[3].to_owned()).collect();
    assert_eq!(modes, ["fixed", "global", "relation", "attention"]);
}

#[test]
fn stripped_model_is_a_plain_hyperbolic_translation() {
    let tmp = TempDir::new().unwrap();
    let out = train_toy(
        &tmp,
        "plain",
        &["--curvature-mode", "fixed", "--no-inter-level", "--no-intra-level"],
    );
    let model = load_model(&out.join("checkpoint.hkge"));
    let p = model.params();
    let c = Curvature::new(1.0).unwrap();
    let mut worst = 0f64;
    for h in 0..model.n_entities() {
        for r in 0..model.n_relations() {
            let head = exp0(p[ParamGroup::EntityEmb].row(h), c).unwrap();
            let trans = exp0(p[ParamGroup::Translation].row(r), c).unwrap();
            let anchor = mobius_add(&head, &trans, c).unwrap();
            for t in 0..model.n_entities() {
                let tail = exp0(p[ParamGroup::EntityEmb].row(t), c).unwrap();
                let d = hyp_distance(&anchor, &tail, c).unwrap();
                let expected =
                    -d * d + p[ParamGroup::EntityBias].row(h)[0] + p[ParamGroup::EntityBias].row(t)[0];
                let got = model.score(h, r, t).unwrap();
                worst = worst.max((got - expected).abs() / expected.abs().max(1.0));
            }
        }
    }
    assert!(worst <= 1e-12, "worst relative deviation {worst:e}");
}

fn chain_dataset(root: &Path) -> PathBuf {
    let dir = root.join("chain");
    fs::create_dir_all(&dir).unwrap();
    let e = |h: &str, r: &'static str, t: &str| (h.to_owned(), r, t.to_owned());
    write_split(&dir, "train.txt", &[e("a", "next", "b"), e("b", "next", "c"), e("c", "next", "d")]);
    write_split(&dir, "valid.txt", &[]);
    write_split(&dir, "test.txt", &[]);
    dir
}

#[test]
fn analyze_chain_gives_one_hierarchical_row() {
    let tmp = TempDir::new().unwrap();
    let data = chain_dataset(tmp.path());
    let out = tmp.path().join("an");
    ok(&["analyze", "--dataset-dir", path_str(&data), "--out-dir", path_str(&out), "--samples", "200"]);
    let rows = csv_rows(&out.join("hierarchy.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "next");
    assert_eq!((&rows[0][1], &rows[0][2]), ("4", "3"));
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn analyze_named_subset_and_unknown_relation() {
    let tmp = TempDir::new().unwrap();
    let data = toy_dataset(tmp.path());
    let out = tmp.path().join("an");
    ok(&["analyze", "--dataset-dir", path_str(&data), "--out-dir", path_str(&out), "--relations", "parent_of", "--samples", "100"]);
    let rows = csv_rows(&out.join("hierarchy.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "parent_of");

    let all = tmp.path().join("all");
    ok(&["analyze", "--dataset-dir", path_str(&data), "--out-dir", path_str(&all), "--samples", "100"]);
    assert_eq!(csv_rows(&all.join("hierarchy.csv")).len(), 2);

    let bad = tmp.path().join("bad");
    let res = hkge(&["analyze", "--dataset-dir", path_str(&data), "--out-dir", path_str(&bad), "--relations", "parent_of,made_up"]);
    assert!(!res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("made_up") && l.contains("ERROR")), "{stdout}");
    assert_eq!(csv_rows(&bad.join("hierarchy.csv")).len(), 1);
}
