use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sentvec::classifier::{self, ConvNet, LabeledSentence, Metrics};
use sentvec::prep::{prepare_line, prepare_sentence, PrepConfig};
use sentvec::regressor::{self, Protocol, RegressionNet};
use sentvec::sts::{self, load_pairs};
use sentvec::{similarity, EmbeddingModel};

use crate::args::*;
use crate::config::UsageError;
use crate::manifest::{write_atomic, RunClock};

pub fn dispatch(command: &Command) -> Result<()> {
    let clock = RunClock::start();
    let name = command.name();
    match command {
        Command::Prep(a) => prep(a, name, &clock),
        Command::Vocab(a) => vocab(a, name, &clock),
        Command::Train(a) => train(a, name, &clock),
        Command::Embed(a) => embed(a),
        Command::Sim(a) => sim(a),
        Command::EvalSim(a) => eval_sim(a, name, &clock),
        Command::TrainReg(a) => train_reg(a, name, &clock),
        Command::EvalReg(a) => eval_reg(a, name, &clock),
        Command::TrainClf(a) => train_clf(a, name, &clock),
        Command::EvalClf(a) => eval_clf(a, name, &clock),
        Command::Info(a) => info(a),
    }
}

fn load_model(path: &Path) -> Result<EmbeddingModel> {
    EmbeddingModel::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

/// Stream into a temporary sibling of `path`, renamed into place on success.
fn write_streamed(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    let mut w = BufWriter::new(file);
    let result = body(&mut w).and_then(|_| {
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    });
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) if a.iter().any(|x| x.is_object()) => {
            a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out))
        }
        Value::Number(n) => out.push((prefix.to_string(), match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.4}"),
            _ => n.to_string(),
        })),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Two-column table of every leaf in a JSON report.
pub fn pretty_table(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

/// Print a report on stdout and write it to `--report` (with a manifest).
fn emit<C: Serialize>(
    report: &impl Serialize,
    opts: &ReportOpts,
    name: &str,
    clock: &RunClock,
    config: &C,
    inputs: &[&Path],
    seed: Option<u64>,
) -> Result<()> {
    let value = serde_json::to_value(report)?;
    let mut stdout = io::stdout().lock();
    if opts.pretty {
        stdout.write_all(pretty_table(&value).as_bytes())?;
    } else {
        writeln!(stdout, "{value}")?;
    }
    stdout.flush()?;
    if let Some(path) = &opts.report {
        let mut json = serde_json::to_vec_pretty(&value)?;
        json.push(b'\n');
        write_atomic(path, &json).with_context(|| format!("cannot write {}", path.display()))?;
        clock
            .manifest(name, config, inputs, vec![path.clone()], seed)?
            .write_for(path)?;
    }
    Ok(())
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string(v)?)?;
    Ok(())
}

fn paths(v: &[PathBuf]) -> Vec<&Path> {
    v.iter().map(PathBuf::as_path).collect()
}

fn prep(a: &PrepArgs, name: &str, clock: &RunClock) -> Result<()> {
    let cfg = a.prep.to_config()?;
    let (mut documents, mut sentences, mut tokens) = (0u64, 0u64, 0u64);
    write_streamed(&a.output, |w| {
        for input in &a.input {
            let f = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
            for line in BufReader::new(f).lines() {
                let line = line.with_context(|| format!("reading {}", input.display()))?;
                if line.trim().is_empty() {
                    continue;
                }
                documents += 1;
                for rec in prepare_line(&line, a.granularity, &cfg, None) {
                    sentences += 1;
                    tokens += rec.tokens.len() as u64;
                    writeln!(w, "{}", rec.tokens.join(" "))?;
                }
            }
        }
        Ok(())
    })?;
    clock
        .manifest(name, a, &paths(&a.input), vec![a.output.clone()], None)?
        .write_for(&a.output)?;
    print_json(&json!({"documents": documents, "sentences": sentences, "tokens": tokens}))
}

fn vocab(a: &VocabArgs, name: &str, clock: &RunClock) -> Result<()> {
    let vocab = sentvec::train::corpus_vocab(&a.input, a.min_count, a.t)?;
    write_streamed(&a.output, |w| {
        for (word, count) in vocab.words().iter().zip(vocab.counts()) {
            writeln!(w, "{word}\t{count}")?;
        }
        Ok(())
    })?;
    clock
        .manifest(name, a, &paths(&a.input), vec![a.output.clone()], None)?
        .write_for(&a.output)?;
    print_json(&json!({
        "vocab_size": vocab.len(),
        "total_tokens": vocab.total_tokens(),
        "min_count": a.min_count,
    }))
}

fn train(a: &TrainArgs, name: &str, clock: &RunClock) -> Result<()> {
    let config = a.train_config();
    config.validate()?;
    let quiet = a.quiet;
    let progress = move |p: &sentvec::train::Progress| {
        if !quiet {
            eprintln!("tokens={} lr={:.6} loss={:.6}", p.tokens, p.lr, p.loss);
        }
    };
    let (model, report) = sentvec::train::train_with_progress(&a.input, &config, &progress)?;
    model
        .save(&a.output)
        .with_context(|| format!("cannot write {}", a.output.display()))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        args: &'a TrainArgs,
        train_config: &'a sentvec::TrainConfig,
    }
    let resolved = Resolved {
        args: a,
        train_config: &config,
    };
    clock
        .manifest(name, &resolved, &paths(&a.input), vec![a.output.clone()], Some(a.seed))?
        .write_for(&a.output)?;
    print_json(&json!({
        "output": a.output,
        "vocab_size": model.vocab().len(),
        "tokens_processed": report.tokens_processed,
        "examples": report.examples,
        "epoch_losses": report.epoch_losses,
        "seconds": report.seconds,
    }))
}

fn vector_line(v: &[f32]) -> String {
    let mut s = String::with_capacity(v.len() * 12);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&x.to_string());
    }
    s
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = a.prep.to_config()?;
    let mut out = BufWriter::new(io::stdout().lock());
    let mut one = |s: &str| -> Result<()> {
        let v = model.sentence_vector(&prepare_sentence(s, &cfg));
        writeln!(out, "{}", vector_line(&v))?;
        Ok(())
    };
    if a.sentence.is_empty() {
        for line in io::stdin().lock().lines() {
            one(&line.context("reading standard input")?)?;
        }
    } else {
        for s in &a.sentence {
            one(s)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sim(a: &SimArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = a.prep.to_config()?;
    let u = model.sentence_vector(&prepare_sentence(&a.s1, &cfg));
    let v = model.sentence_vector(&prepare_sentence(&a.s2, &cfg));
    println!("{:?}", similarity(&u, &v));
    Ok(())
}

fn eval_sim(a: &EvalSimArgs, name: &str, clock: &RunClock) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = a.prep.to_config()?;
    let pairs = load_pairs(&a.pairs)?;
    let report = match a.folds {
        Some(k) => sts::evaluate_unsupervised_folds(&model, &pairs, &cfg, k, a.seed)?,
        None => sts::evaluate_unsupervised(&model, &pairs, &cfg)?,
    };
    emit(&report, &a.report, name, clock, a, &[&a.model, &a.pairs], Some(a.seed))
}

fn train_reg(a: &TrainRegArgs, name: &str, clock: &RunClock) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = a.prep.to_config()?;
    let hyper = a.hyper.hyper();
    hyper.validate()?;
    let pairs = load_pairs(&a.pairs)?;
    let (train, val) = match &a.val {
        Some(p) => (pairs, load_pairs(p)?),
        None => {
            let all: Vec<usize> = (0..pairs.len()).collect();
            let (t, v) = regressor::holdout_split(&all, hyper.seed, 0)?;
            (pairs.subset(&t), pairs.subset(&v))
        }
    };
    let (net, fit) = regressor::train_regressor(&train, &val, &model, &cfg, &hyper)?;
    net.save(&a.output)
        .with_context(|| format!("cannot write {}", a.output.display()))?;
    let mut inputs: Vec<&Path> = vec![&a.model, &a.pairs];
    inputs.extend(a.val.as_deref());
    clock
        .manifest(name, a, &inputs, vec![a.output.clone()], Some(hyper.seed))?
        .write_for(&a.output)?;
    let report = json!({
        "output": a.output,
        "n_train": train.len(),
        "n_val": val.len(),
        "fit": fit,
    });
    emit(&report, &a.report, name, clock, a, &inputs, Some(hyper.seed))
}

fn eval_reg(a: &EvalRegArgs, name: &str, clock: &RunClock) -> Result<()> {
    let model = load_model(&a.model)?;
    let cfg = a.prep.to_config()?;
    let hyper = a.hyper.hyper();
    let pairs = load_pairs(&a.pairs)?;
    let mut inputs: Vec<&Path> = vec![&a.model, &a.pairs];
    let report = if let Some(net_path) = &a.net {
        inputs.push(net_path);
        let net = RegressionNet::load(net_path).with_context(|| format!("cannot load {}", net_path.display()))?;
        let samples = regressor::pair_samples(&model, &pairs, &cfg)?;
        let pred = net.predict_all(&samples);
        let gold: Vec<f64> = samples.iter().map(|s| s.target).collect();
        json!({
            "dataset": pairs.name,
            "protocol": "pretrained",
            "n": samples.len(),
            "pearson": sts::pearson(&pred, &gold)?,
            "mse": net.mse(&samples),
        })
    } else {
        let protocol = match &a.test {
            Some(p) => {
                inputs.push(p);
                Protocol::FixedSplit { test: load_pairs(p)? }
            }
            None => Protocol::CrossValidation {
                k: a.folds,
                seed: hyper.seed,
            },
        };
        serde_json::to_value(regressor::evaluate_supervised(&pairs, &model, &cfg, &hyper, &protocol)?)?
    };
    emit(&report, &a.report, name, clock, a, &inputs, Some(hyper.seed))
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledSentence>> {
    classifier::load_labeled(path).with_context(|| format!("cannot load {}", path.display()))
}

fn score(
    net: &ConvNet,
    items: &[LabeledSentence],
    model: Option<&EmbeddingModel>,
    cfg: &PrepConfig,
    threshold: f64,
) -> Result<Metrics> {
    let encoded = classifier::encode_all(net, items, model, cfg)?;
    Ok(classifier::evaluate(net, &encoded, threshold)?)
}

fn train_clf(a: &TrainClfArgs, name: &str, clock: &RunClock) -> Result<()> {
    let cfg = a.prep.to_config()?;
    let arch = a.clf.arch();
    let hyper = a.clf.hyper();
    hyper.validate()?;
    let mut inputs: Vec<&Path> = Vec::new();
    let (train, dev, test) = if let Some(data) = &a.data {
        inputs.push(data);
        let items = load_labeled(data)?;
        let (tr, dv, te) = classifier::split_dataset(&items, hyper.seed);
        (tr, dv, Some(te))
    } else {
        let (Some(tr), Some(dv)) = (&a.train, &a.dev) else {
            return Err(UsageError("give --data or both --train and --dev".into()).into());
        };
        inputs.extend([tr.as_path(), dv.as_path()]);
        inputs.extend(a.test.as_deref());
        let test = a.test.as_deref().map(load_labeled).transpose()?;
        (load_labeled(tr)?, load_labeled(dv)?, test)
    };
    let model = match (&a.model, arch.use_sentvec) {
        (Some(p), true) => {
            inputs.push(p);
            Some(load_model(p)?)
        }
        (None, true) => return Err(UsageError("--model is required unless --no-sentvec is given".into()).into()),
        (_, false) => None,
    };
    let vectors = match &a.word_vectors {
        Some(p) => {
            inputs.push(p);
            Some(classifier::load_word_vectors(p).with_context(|| format!("cannot load {}", p.display()))?)
        }
        None => None,
    };
    let (net, fit) =
        classifier::train_classifier(&train, &dev, model.as_ref(), &cfg, &arch, &hyper, vectors.as_ref())?;
    net.save(&a.output)
        .with_context(|| format!("cannot write {}", a.output.display()))?;
    clock
        .manifest(name, a, &inputs, vec![a.output.clone()], Some(hyper.seed))?
        .write_for(&a.output)?;
    let dev_metrics = score(&net, &dev, model.as_ref(), &cfg, hyper.threshold)?;
    let test_metrics = test
        .as_ref()
        .map(|t| score(&net, t, model.as_ref(), &cfg, hyper.threshold))
        .transpose()?;
    let report = json!({
        "output": a.output,
        "sizes": {"train": train.len(), "dev": dev.len(), "test": test.as_ref().map(Vec::len)},
        "epochs_run": fit.epochs_run,
        "best_epoch": fit.best_epoch,
        "best_dev_loss": fit.best_dev_loss,
        "dev": dev_metrics,
        "test": test_metrics,
    });
    emit(&report, &a.report, name, clock, a, &inputs, Some(hyper.seed))
}

fn eval_clf(a: &EvalClfArgs, name: &str, clock: &RunClock) -> Result<()> {
    let cfg = a.prep.to_config()?;
    let net = ConvNet::load(&a.net).with_context(|| format!("cannot load {}", a.net.display()))?;
    let mut inputs: Vec<&Path> = vec![&a.net, &a.data];
    let model = match &a.model {
        Some(p) => {
            inputs.push(p);
            Some(load_model(p)?)
        }
        None => None,
    };
    let items = load_labeled(&a.data)?;
    let items = match a.split {
        None => items,
        Some(which) => {
            let (tr, dv, te) = classifier::split_dataset(&items, a.seed);
            match which {
                Split::Train => tr,
                Split::Dev => dv,
                Split::Test => te,
            }
        }
    };
    let metrics = score(&net, &items, model.as_ref(), &cfg, a.threshold)?;
    emit(&metrics, &a.report, name, clock, a, &inputs, Some(a.seed))
}

fn info(a: &InfoArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let h = model.header();
    let v = json!({
        "format_version": h.format_version,
        "dim": h.dim,
        "vocab_size": h.vocab_size,
        "bucket_count": h.bucket_count,
        "ngram_order": h.ngram_order,
        "train_config": h.train_config,
    });
    if a.pretty {
        print!("{}", pretty_table(&v));
        Ok(())
    } else {
        print_json(&v)
    }
}
