use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dgfilter::model::load_checkpoint;
use dgfilter_cli::config::{Section, CONFIG_KEYS, SUBCOMMAND_SECTIONS};

const SMALL: &str = r#"
seed = 5
[phantom]
thorough = ["P0", "P3"]
partial = ["P1"]
[sample]
n_clouds = 8
n_points = 128
[network]
widths = [8, 8, 16]
head_hidden = 16
k = 8
[train]
max_epochs = 2
[filter]
n_clouds = 8
n_points = 192
"#;

fn dgfilter(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgfilter"))
        .current_dir(dir)
        .args(["--quiet"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_phantom_writes_seven_manifests_reproducibly() {
    let ws = workspace();
    let out = ok(dgfilter(ws.path(), &["gen-phantom", "--out", "a"]));
    ok(dgfilter(ws.path(), &["gen-phantom", "--out", "b"]));
    let manifests: Vec<_> = fs::read_dir(ws.path().join("a"))
        .unwrap()
        .filter_map(|e| e.unwrap().file_name().into_string().ok())
        .filter(|n| n.ends_with(".manifest.json"))
        .collect();
    assert_eq!(manifests.len(), 7);
    for id in ["P0-thorough", "P3-thorough", "P1-partial", "P3-partial"] {
        assert!(out.contains(id), "{id} missing from summary:\n{out}");
    }
    assert_eq!(files(&ws.path().join("a")), files(&ws.path().join("b")));

    let dataset: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path().join("a/dataset.json")).unwrap()).unwrap();
    assert_eq!(dataset["seed"], 0);
    assert_eq!(dataset["rng"], "chacha8");
    assert_eq!(dataset["scans"].as_array().unwrap().len(), 7);
}

#[test]
fn gen_phantom_seed_changes_output() {
    let ws = workspace();
    ok(dgfilter(ws.path(), &["gen-phantom", "--out", "a", "--thorough", "P1", "--partial", ""]));
    ok(dgfilter(ws.path(), &["--seed", "1", "gen-phantom", "--out", "b", "--thorough", "P1", "--partial", ""]));
    let read = |d: &str| fs::read(ws.path().join(d).join("P1-thorough.csv")).unwrap();
    assert_ne!(read("a"), read("b"));
}

#[test]
fn summary_table_as_csv() {
    let ws = workspace();
    let out = ok(dgfilter(ws.path(), &["--csv", "gen-phantom", "--thorough", "P2", "--partial", ""]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "scan,position,kind,frames,points,femur,patella,tibia,artifacts,floaters");
    assert!(lines[1].starts_with("P2-thorough,P2,thorough,"));
    assert_eq!(lines.len(), 2);
}

#[test]
fn usage_errors_exit_2() {
    let ws = workspace();
    let cases: &[&[&str]] = &[
        &["gen-phantom", "--thorough", "", "--partial", ""],
        &["gen-phantom", "--thorough", "P7"],
        &["kprob"],
        &["frobnicate"],
        &["filter", "--vote-rule", "sometimes"],
    ];
    for args in cases {
        assert_eq!(code(&dgfilter(ws.path(), args)), 2, "{args:?}");
    }
}

#[test]
fn config_errors_exit_2() {
    let ws = workspace();
    fs::write(ws.path().join("typo.toml"), "[train]\nmax_epoch = 3\n").unwrap();
    fs::write(ws.path().join("bad.toml"), "[filter]\nk = 0\n").unwrap();
    fs::write(ws.path().join("fmt.toml"), "[paths]\ncloud_format = \"xyz\"\n").unwrap();
    let o = dgfilter(ws.path(), &["--config", "typo.toml", "kprob", "--p", "0.1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_epoch"));
    assert_eq!(code(&dgfilter(ws.path(), &["--config", "fmt.toml", "gen-phantom"])), 2);
    ok(dgfilter(ws.path(), &["--config", "small.toml", "gen-phantom"]));
    assert_eq!(code(&dgfilter(ws.path(), &["--config", "bad.toml", "filter"])), 2);
}

#[test]
fn io_errors_exit_4() {
    let ws = workspace();
    fs::write(ws.path().join("plain"), "x").unwrap();
    assert_eq!(code(&dgfilter(ws.path(), &["gen-phantom", "--out", "plain/sub"])), 4);
    assert_eq!(code(&dgfilter(ws.path(), &["train", "--data", "missing"])), 4);
    assert_eq!(code(&dgfilter(ws.path(), &["--config", "nope.toml", "eval"])), 4);
    assert_eq!(code(&dgfilter(ws.path(), &["eval", "--overlays", "missing"])), 4);
}

#[test]
fn every_subcommand_documents_its_config_keys() {
    let ws = workspace();
    let mut covered = Vec::new();
    for (name, sections) in SUBCOMMAND_SECTIONS {
        let help = ok(dgfilter(ws.path(), &[name, "--help"]));
        for &section in sections {
            if section != Section::Root {
                assert!(help.contains(&format!("[{}]", section.name())), "{name} help lacks [{}]", section.name());
            }
            for (_, key, doc) in CONFIG_KEYS.iter().filter(|(s, ..)| *s == section) {
                assert!(help.contains(key) && help.contains(doc), "{name} help lacks {key}");
            }
            covered.push(section);
        }
    }
    for (section, key, _) in CONFIG_KEYS {
        assert!(covered.contains(section), "{key} is documented by no subcommand");
    }
}

#[test]
fn eval_reproduces_reference_precisions() {
    let ws = workspace();
    let out = ok(dgfilter(ws.path(), &["eval", "--reference-counts"]));
    let pct: Vec<&str> = out.lines().skip(1).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(pct, ["98.4", "97.0", "99.2", "98.2"]);
    let csv = ok(dgfilter(ws.path(), &["--csv", "eval", "--reference-counts"]));
    assert!(csv.contains("P2,200,194,0.970000,97.0"));
    assert!(csv.ends_with("mean,,,0.981946,98.2\n"));
}

#[test]
fn kprob_outputs() {
    let ws = workspace();
    let zero = ok(dgfilter(ws.path(), &["--csv", "kprob", "--p", "0.3", "--k", "0"]));
    assert_eq!(zero.lines().nth(1).unwrap().rsplit(',').next().unwrap(), "1.0");
    let none = ok(dgfilter(ws.path(), &["--csv", "kprob", "--p", "0"]));
    assert_eq!(none.lines().nth(1).unwrap().rsplit(',').next().unwrap(), "0.0");
    let solved = ok(dgfilter(ws.path(), &["--csv", "kprob", "--target", "0.9695"]));
    let row: Vec<&str> = solved.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[1..4], ["1024", "20", "500"]);
    let p: f64 = row[0].parse().unwrap();
    assert!((0.02..0.06).contains(&p), "{p}");
    assert!((row[4].parse::<f64>().unwrap() - 0.9695).abs() < 5e-4);
    assert_eq!(code(&dgfilter(ws.path(), &["kprob", "--p", "1.5"])), 3);
}

fn run_pipeline(dir: &Path) {
    ok(dgfilter(dir, &["--config", "small.toml", "gen-phantom"]));
    ok(dgfilter(dir, &["--config", "small.toml", "train"]));
    ok(dgfilter(dir, &["--config", "small.toml", "filter"]));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let (a, b) = (workspace(), workspace());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let run_a = files(&a.path().join("run"));
    assert!(run_a.iter().any(|(p, _)| p.ends_with("model.ckpt")));
    assert!(run_a.iter().any(|(p, _)| p.ends_with("P1-partial.report.json")));
    assert_eq!(run_a, files(&b.path().join("run")));
}

#[test]
fn pipeline_end_to_end() {
    let ws = workspace();
    let dir = ws.path();
    run_pipeline(dir);

    let metrics = fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,train_loss,val_loss,accuracy,"));

    let (_, meta) = load_checkpoint(&dir.join("run/model.ckpt")).unwrap();
    assert_eq!(meta["seed"], "5");
    assert_eq!(meta["rng"], "chacha8");
    assert_eq!(meta["scans"], "P0-thorough,P3-thorough");
    let root = dir.to_str().unwrap();
    assert!(meta.values().all(|v| !v.contains(root) && !v.contains("data/")), "{meta:?}");

    let reports = ok(dgfilter(dir, &["--config", "small.toml", "invert"]));
    assert!(reports.lines().nth(1).unwrap().starts_with("P1"));
    assert!(dir.join("run/overlays/P1-partial").is_dir());
    let eval = ok(dgfilter(dir, &["--config", "small.toml", "eval"]));
    assert_eq!(eval.lines().nth(1), reports.lines().nth(1));

    let single = ok(dgfilter(
        dir,
        &[
            "--config",
            "small.toml",
            "invert",
            "--report",
            "run/filter/P1-partial.report.json",
            "--manifest",
            "data/P1-partial.manifest.json",
            "--out",
            "single",
        ],
    ));
    assert_eq!(single, reports);

    let batches = ok(dgfilter(
        dir,
        &["--config", "small.toml", "sample", "--cloud", "data/P1-partial.csv", "--out", "batches"],
    ));
    assert_eq!(batches.lines().count(), 4);
    assert!(dir.join("batches/batches.json").is_file());
    assert!(dir.join("batches/batch_0007.csv").is_file());
}

#[test]
fn filter_rejects_mismatched_or_corrupt_inputs() {
    let ws = workspace();
    let dir = ws.path();
    run_pipeline(dir);
    let base = ["--config", "small.toml", "filter", "--out", "x"];
    let with = |extra: &[&str]| dgfilter(dir, &[&base[..], extra].concat());

    let o = with(&["--cloud", "data/P1-partial.csv", "--manifest", "data/P0-thorough.manifest.json"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    ok(with(&["--cloud", "data/P1-partial.csv", "--manifest", "data/P1-partial.manifest.json"]));

    let mut ckpt = fs::read(dir.join("run/model.ckpt")).unwrap();
    let mid = ckpt.len() / 2;
    ckpt[mid] ^= 1;
    fs::write(dir.join("flipped.ckpt"), &ckpt).unwrap();
    assert_eq!(code(&with(&["--checkpoint", "flipped.ckpt"])), 5);

    fs::write(dir.join("bad.csv"), "x,y\n1,2\n").unwrap();
    assert_eq!(code(&with(&["--cloud", "bad.csv"])), 5);
}

#[test]
fn any_rule_override_deletes_at_least_as_much() {
    let ws = workspace();
    let dir = ws.path();
    run_pipeline(dir);
    ok(dgfilter(dir, &["--config", "small.toml", "filter", "--vote-rule", "any", "--out", "any"]));
    let deleted = |p: &str| -> Vec<u64> {
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(p)).unwrap()).unwrap();
        r["deleted"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect()
    };
    let majority = deleted("run/filter/P1-partial.report.json");
    let any = deleted("any/P1-partial.report.json");
    assert!(majority.iter().all(|i| any.contains(i)));
}
