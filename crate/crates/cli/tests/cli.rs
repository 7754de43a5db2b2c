use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sentvec"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(ok(args).trim()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic two-topic corpus, already preprocessed.
fn corpus(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for i in 0..300u32 {
        let topic = if i % 2 == 0 { "alpha" } else { "omega" };
        let words: Vec<String> = (0..8).map(|j| format!("{topic}{}", (i * 7 + j * 13) % 40)).collect();
        text.push_str(&words.join(" "));
        text.push('\n');
    }
    let p = dir.join("corpus.txt");
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: [&str; 12] = [
    "--dim", "10", "--epochs", "2", "--min-count", "1", "--bucket", "200", "--quiet", "--seed", "5", "--exact-math",
];

fn train_model(dir: &Path, name: &str) -> PathBuf {
    let input = corpus(dir);
    let out = dir.join(name);
    let mut args = vec!["train", "--input", s(&input), "--output", s(&out)];
    args.extend(SMALL);
    ok(&args);
    out
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(run(&[]).status.code(), Some(1));
    let o = run(&["info", "--no-such-flag", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(&["--help"]);
    for sub in [
        "prep", "vocab", "train", "embed", "sim", "eval-sim", "train-reg", "eval-reg", "train-clf", "eval-clf", "info",
    ] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bsvm");
    assert_eq!(run(&["info", s(&missing)]).status.code(), Some(2));
    let junk = dir.path().join("junk.bsvm");
    std::fs::write(&junk, b"not a model at all").unwrap();
    let o = run(&["info", s(&junk)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: "));
    let input = corpus(dir.path());
    let out = dir.path().join("m.bsvm");
    let o = run(&["train", "--input", s(&input), "--output", s(&out), "--dim", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn single_worker_training_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_model(dir.path(), "a.bsvm");
    let b = train_model(dir.path(), "b.bsvm");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.bsvm.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "train");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["train_config"]["dim"], 10);
    let digest = manifest["inputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn train_progress_format() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus(dir.path());
    let out = dir.path().join("m.bsvm");
    let o = run(&[
        "train", "--input", s(&input), "--output", s(&out), "--dim", "4", "--min-count", "1", "--bucket", "50",
        "--progress-interval", "500", "--epochs", "1",
    ]);
    assert!(o.status.success());
    let err = stderr(&o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("tokens=")).collect();
    assert!(!lines.is_empty(), "{err}");
    for l in lines {
        let parts: Vec<&str> = l.split(' ').collect();
        assert_eq!(parts.len(), 3, "{l}");
        assert!(parts[1].starts_with("lr=") && parts[2].starts_with("loss="), "{l}");
        parts[0][7..].parse::<u64>().unwrap();
        parts[1][3..].parse::<f64>().unwrap();
        parts[2][5..].parse::<f64>().unwrap();
    }
}

#[test]
fn info_reports_header() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_model(dir.path(), "m.bsvm");
    let h = json(&["info", s(&m)]);
    assert_eq!(h["dim"], 10);
    assert_eq!(h["bucket_count"], 200);
    assert_eq!(h["ngram_order"], 2);
    assert_eq!(h["vocab_size"], 80);
    assert_eq!(h["train_config"]["seed"], 5);
    let pretty = ok(&["info", s(&m), "--pretty"]);
    assert!(pretty.lines().any(|l| l.starts_with("dim ") && l.ends_with(" 10")));
}

#[test]
fn embed_preserves_line_count_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_model(dir.path(), "m.bsvm");
    let input = "alpha1 alpha2\n\nomega3, omega5!\nnever seen\nalpha1 alpha2\n";
    let mut child = bin()
        .args(["embed", "--model", s(&m)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5);
    for l in &lines {
        assert_eq!(l.split(' ').count(), 10);
    }
    assert_eq!(lines[0], lines[4]);
    assert!(lines[1].split(' ').all(|x| x == "0"));
    assert!(lines[3].split(' ').all(|x| x == "0"));

    let flag = ok(&["embed", "--model", s(&m), "--sentence", "alpha1 alpha2", "--sentence", "omega3, omega5!"]);
    let flag: Vec<&str> = flag.lines().collect();
    assert_eq!(flag, [lines[0], lines[2]]);
    let v: Vec<f32> = flag[0].split(' ').map(|x| x.parse().unwrap()).collect();
    assert!(v.iter().any(|&x| x != 0.0));
}

#[test]
fn sim_of_sentence_with_itself_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_model(dir.path(), "m.bsvm");
    let out = ok(&["sim", "--model", s(&m), "--s1", "alpha3 alpha9", "--s2", "alpha3 alpha9"]);
    let x: f64 = out.trim().parse().unwrap();
    assert!((x - 1.0).abs() < 1e-9, "{x}");
    let out = ok(&["sim", "--model", s(&m), "--s1", "unknownword", "--s2", "alpha3"]);
    assert_eq!(out.trim(), "0.0");
}

#[test]
fn config_file_fills_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[train]\ndim = 6\nepochs = 1\nmin_count = 1\nbucket = 64\nquiet = true\ninput = [{:?}]\n\n[info]\npretty = false\n",
            s(&input)
        ),
    )
    .unwrap();
    let a = dir.path().join("a.bsvm");
    ok(&["--config", s(&cfg), "train", "--output", s(&a)]);
    assert_eq!(json(&["info", s(&a)])["dim"], 6);

    let b = dir.path().join("b.bsvm");
    ok(&["train", "--config", s(&cfg), "--output", s(&b), "--dim", "4"]);
    let h = json(&["info", s(&b)]);
    assert_eq!(h["dim"], 4);
    assert_eq!(h["bucket_count"], 64);

    // a list flag on the command line replaces the configured list
    let other = dir.path().join("other.txt");
    std::fs::write(&other, "zeta zeta eta\n").unwrap();
    let c = dir.path().join("c.bsvm");
    ok(&["--config", s(&cfg), "train", "--output", s(&c), "--input", s(&other)]);
    assert_eq!(json(&["info", s(&c)])["vocab_size"], 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "dim = 3\n").unwrap();
    assert_eq!(run(&["--config", s(&bad), "info", s(&a)]).status.code(), Some(1));
    std::fs::write(&bad, "[nope]\nx = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&bad), "info", s(&a)]).status.code(), Some(1));
}

#[test]
fn prep_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    std::fs::write(&raw, "The CRAF gene is essential. It binds RAS in cells!\n\nSecond doc here.\n").unwrap();
    let out = dir.path().join("prep.txt");
    let stats = json(&["prep", "--input", s(&raw), "--output", s(&out)]);
    assert_eq!(stats["documents"], 2);
    assert_eq!(stats["sentences"], 3);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "craf gene essential\nbinds ras cells\nsecond doc\n");
    assert!(dir.path().join("prep.txt.manifest.json").exists());

    let voc = dir.path().join("vocab.tsv");
    let v = json(&["vocab", "--input", s(&out), "--output", s(&voc), "--min-count", "1"]);
    assert_eq!(v["vocab_size"], 8);
    assert_eq!(v["total_tokens"], 8);
    let tsv = std::fs::read_to_string(&voc).unwrap();
    assert_eq!(tsv.lines().count(), 8);
    assert!(tsv.lines().all(|l| l.ends_with("\t1")));
}

fn pairs(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::new();
    for i in 0..n {
        let same = i % 2 == 0;
        let b = if same { "alpha" } else { "omega" };
        let score = if same { 4.0 + (i % 3) as f64 * 0.3 } else { 0.5 + (i % 4) as f64 * 0.2 };
        text.push_str(&format!("alpha{} alpha{}\t{b}{} {b}{}\t{score}\n", i % 40, (i + 3) % 40, (i + 5) % 40, (i + 9) % 40));
    }
    let p = dir.join("pairs.tsv");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn similarity_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_model(dir.path(), "m.bsvm");
    let p = pairs(dir.path(), 40);
    let r = json(&["eval-sim", "--model", s(&m), "--pairs", s(&p), "--folds", "4"]);
    assert_eq!(r["n"], 40);
    assert_eq!(r["folds"].as_array().unwrap().len(), 4);
    assert!(r["pearson"].as_f64().unwrap().abs() <= 1.0);

    let report = dir.path().join("sim.json");
    ok(&["eval-sim", "--model", s(&m), "--pairs", s(&p), "--report", s(&report), "--pretty"]);
    let saved: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(saved["n"], 40);
    assert!(dir.path().join("sim.json.manifest.json").exists());

    let net = dir.path().join("reg.sreg");
    let hyper = ["--epochs", "5", "--batch", "4"];
    let mut args = vec!["train-reg", "--model", s(&m), "--pairs", s(&p), "--output", s(&net)];
    args.extend(hyper);
    let t = json(&args);
    assert_eq!(t["n_train"], 32);
    assert_eq!(t["n_val"], 8);
    assert!(dir.path().join("reg.sreg.manifest.json").exists());

    let e = json(&["eval-reg", "--model", s(&m), "--pairs", s(&p), "--net", s(&net)]);
    assert_eq!(e["n"], 40);
    assert!(e["pearson"].is_number());

    let mut args = vec!["eval-reg", "--model", s(&m), "--pairs", s(&p), "--folds", "4"];
    args.extend(hyper);
    let cv = json(&args);
    assert_eq!(cv["protocol"], "cv");
    assert_eq!(cv["folds"].as_array().unwrap().len(), 4);

    let mut args = vec!["eval-reg", "--model", s(&m), "--pairs", s(&p), "--test", s(&p)];
    args.extend(hyper);
    assert_eq!(json(&args)["protocol"], "fixed");
}

#[test]
fn classifier_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_model(dir.path(), "m.bsvm");
    let mut text = String::new();
    for i in 0..50 {
        let label = i % 3;
        text.push_str(&format!("alpha{} marker{label} alpha{} .\t{label}\n", i % 40, (i * 3) % 40));
    }
    let data = dir.path().join("clf.tsv");
    std::fs::write(&data, text).unwrap();
    let net = dir.path().join("c.sclf");
    let small = ["--embed-dim", "8", "--filters", "6", "--dense", "8", "--max-epochs", "3", "--batch", "8"];
    let mut args = vec!["train-clf", "--data", s(&data), "--model", s(&m), "--output", s(&net)];
    args.extend(small);
    let r = json(&args);
    assert_eq!(r["sizes"]["train"], 30);
    assert_eq!(r["sizes"]["dev"], 10);
    assert_eq!(r["sizes"]["test"], 10);
    assert!(r["dev"]["f1"].is_number());
    assert!(dir.path().join("c.sclf.manifest.json").exists());

    let e = json(&["eval-clf", "--net", s(&net), "--data", s(&data), "--model", s(&m), "--split", "dev"]);
    let keys: Vec<&String> = e.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["f1", "precision", "recall"]);
    assert_eq!(e["f1"], r["dev"]["f1"]);

    // sentence vectors needed but no model given
    let o = run(&["eval-clf", "--net", s(&net), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let mut args = vec!["train-clf", "--data", s(&data), "--output", s(&net)];
    args.extend(small);
    assert_eq!(run(&args).status.code(), Some(1));

    let plain = dir.path().join("p.sclf");
    let mut args = vec!["train-clf", "--data", s(&data), "--no-sentvec", "--output", s(&plain)];
    args.extend(small);
    ok(&args);
    let e = json(&["eval-clf", "--net", s(&plain), "--data", s(&data)]);
    assert!((0.0..=1.0).contains(&e["f1"].as_f64().unwrap()));
}

#[test]
fn embed_output_round_trips_to_core_vectors() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/small.bsvm");
    let model = sentvec::EmbeddingModel::load(&golden).unwrap();
    let cfg = sentvec::prep::PrepConfig::default();
    let sentences = ["The CRAF kinase drives tumor growth.", "antibody (antigen) response", "xyz"];
    let mut args = vec!["embed", "--model", s(&golden)];
    for x in &sentences {
        args.extend(["--sentence", x]);
    }
    let out = ok(&args);
    for (line, x) in out.lines().zip(sentences) {
        let got: Vec<u32> = line.split(' ').map(|t| t.parse::<f32>().unwrap().to_bits()).collect();
        let want: Vec<u32> = model
            .sentence_vector(&sentvec::prep::prepare_sentence(x, &cfg))
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(got, want, "{x}");
    }
}
