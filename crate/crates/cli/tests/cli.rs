use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpgcrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpgcrf")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, name: &str, pattern: &str, n: usize, seed: u64) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_string();
    let out = dpgcrf(&["synth", "--pattern", pattern, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", &p]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

/// Trains a tiny model in `dir` and returns the checkpoint path.
fn trained(dir: &Path) -> String {
    synth(dir, "train.jsonl", "mixed", 12, 1);
    synth(dir, "dev.jsonl", "mixed", 4, 2);
    let config = "train = \"train.jsonl\"\ndev = \"dev.jsonl\"\noutput = \"ckpt\"\n\
                  d_model = 8\nlayers = 1\nff_dim = 16\nhead_hidden = 8\nepochs = 2\nseed = 4\nlearning_rate = 0.01\n";
    fs::write(dir.join("run.toml"), config).unwrap();
    let out = dpgcrf(&["train", "--config", dir.join("run.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("best F"));
    dir.join("ckpt").to_str().unwrap().to_string()
}

#[test]
fn synth_is_seeded_and_stats_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", "reply", 5, 3);
    let b = synth(dir.path(), "b.jsonl", "reply", 5, 3);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 5);

    let out = dpgcrf(&["stats", "--data", &a, "--pairs"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("snippets 5"), "{text}");
    // Every consecutive pair in the reply pattern is an initial-drop pair.
    assert!(text.contains("initial pronoun pairs 35"), "{text}");
    assert!(text.contains("from\\to,"));
}

#[test]
fn train_eval_predict_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let dev = dir.path().join("dev.jsonl");
    let dev = dev.to_str().unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("ckpt/train_log.jsonl")).unwrap().lines().count(), 2);

    let out = dpgcrf(&["eval", "--model", &ckpt, "--data", dev, "--json"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let f1 = report["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let again = dpgcrf(&["eval", "--model", &ckpt, "--data", dev, "--json"]);
    assert_eq!(stdout(&out), stdout(&again));

    let pred = dir.path().join("pred.jsonl");
    let out = dpgcrf(&["predict", "--model", &ckpt, "--data", dev, "--out", pred.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let lines: Vec<serde_json::Value> = fs::read_to_string(&pred)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for turn in lines.iter().flat_map(|r| r["turns"].as_array().unwrap()) {
        assert_eq!(turn["predicted"].as_array().unwrap().len(), turn["tokens"].as_array().unwrap().len());
    }
    // Prediction output is itself a valid corpus.
    assert_eq!(code(&dpgcrf(&["stats", "--data", pred.to_str().unwrap()])), 0);

    for which in ["vertical", "horizontal"] {
        let out = dpgcrf(&["export-transitions", "--model", &ckpt, "--which", which]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        assert_eq!(text.lines().count(), 18, "{text}");
        assert!(!text.lines().next().unwrap().contains("None"));
        let out = dpgcrf(&["export-transitions", "--model", &ckpt, "--which", which, "--include-none"]);
        assert_eq!(stdout(&out).lines().count(), 19);
    }

    let att = dir.path().join("att");
    let out = dpgcrf(&[
        "export-attention",
        "--model",
        &ckpt,
        "--data",
        dev,
        "--snippet",
        "mixed-0#0",
        "--utterance",
        "2",
        "--out-dir",
        att.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(&att).unwrap().collect();
    assert_eq!(files.len(), 2);
    let csv = fs::read_to_string(att.join("attention_l0_h0.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let sum: f64 = row.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn gradcheck_passes_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "train.jsonl", "reply", 1, 5);
    let mut conv: serde_json::Value =
        serde_json::from_str(fs::read_to_string(dir.path().join("train.jsonl")).unwrap().trim()).unwrap();
    conv["turns"].as_array_mut().unwrap().truncate(3);
    fs::write(dir.path().join("train.jsonl"), format!("{conv}\n")).unwrap();
    let config = "train = \"train.jsonl\"\nd_model = 4\nheads = 1\nlayers = 1\nff_dim = 4\nhead_hidden = 4\nseed = 1\n";
    fs::write(dir.path().join("g.toml"), config).unwrap();
    let out = dpgcrf(&["gradcheck", "--config", dir.path().join("g.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("crf.a2"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    // Usage errors.
    assert_eq!(code(&dpgcrf(&["eval", "--model", "x"])), 1);
    assert_eq!(code(&dpgcrf(&["synth", "--pattern", "nope", "--n", "1"])), 1);
    fs::write(dir.path().join("bad.toml"), "train = \"t.jsonl\"\nno_such_key = 1\n").unwrap();
    assert_eq!(code(&dpgcrf(&["train", "--config", dir.path().join("bad.toml").to_str().unwrap()])), 1);
    assert_eq!(code(&dpgcrf(&["--help"])), 0);

    // Data errors.
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&dpgcrf(&["stats", "--data", missing.to_str().unwrap()])), 2);
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"id\": \"x\", \"turns\": [}\n").unwrap();
    assert_eq!(code(&dpgcrf(&["stats", "--data", broken.to_str().unwrap()])), 2);

    let ckpt = trained(dir.path());
    let dev = dir.path().join("dev.jsonl");
    let labels = dir.path().join("labels.txt");
    fs::write(&labels, "None\n我\n你\n").unwrap();
    let out = dpgcrf(&["eval", "--model", &ckpt, "--data", dev.to_str().unwrap(), "--labels", labels.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
    let out = dpgcrf(&["export-attention", "--model", &ckpt, "--data", dev.to_str().unwrap(), "--snippet", "nope", "--utterance", "0"]);
    assert_eq!(code(&out), 2);

    // Numeric failure: poison one emission-head bias in the checkpoint.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&ckpt).join("manifest.json")).unwrap()).unwrap();
    let entry = manifest["params"].as_array().unwrap().iter().find(|p| p["name"] == "head.b1").unwrap();
    let blob = Path::new(&ckpt).join(entry["file"].as_str().unwrap());
    let mut bytes = fs::read(&blob).unwrap();
    bytes[..8].copy_from_slice(&f64::NAN.to_le_bytes());
    fs::write(&blob, bytes).unwrap();
    let out = dpgcrf(&["eval", "--model", &ckpt, "--data", dev.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
