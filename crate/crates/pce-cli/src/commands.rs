use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde_json::json;

use pce_core::data::{load_dataset, save_dataset, save_metrics, stratified_split, Dataset, PceLabel, Splits, FIXATIONS_FILE, LABELS_FILE, STIMULI_FILE};
use pce_core::encoding::{amplify, exposure_bias, token_aoi_map, transition_matrix, AoiMatrix};
use pce_core::evaluation::{ablation_table, evaluate, naive_baseline, AblationVariant, EvalReport, NaiveBaseline, TABLE_VARIANTS};
use pce_core::llm::{run_incontext_eval, CompletionClient, HttpClient, IncontextOptions, MockClient};
use pce_core::models::{load_model, FeatureProvider, ModelKind, Prepared};
use pce_core::synth::{generate, generate_features, load_features, FeatureStore, FEATURES_INDEX};
use pce_core::training::{self, golds, grid_csv, grid_search, PreparedSplits, TrainConfig};

use crate::config::RunConfig;
use crate::{usage, CliError};

const CHECKPOINT_DIR: &str = "checkpoint";

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

struct Data {
    dataset: Dataset,
    features: Option<FeatureStore>,
}

impl Data {
    fn load(cfg: &RunConfig) -> Result<Data, CliError> {
        let dir = cfg.data_dir()?;
        for f in [FIXATIONS_FILE, LABELS_FILE, STIMULI_FILE] {
            if !dir.join(f).is_file() {
                return Err(usage(format!("{} has no {f}", dir.display())));
            }
        }
        let dataset = load_dataset(&dir.join(FIXATIONS_FILE), &dir.join(LABELS_FILE), &dir.join(STIMULI_FILE))?;
        let features = if dir.join(FEATURES_INDEX).is_file() {
            Some(load_features(dir)?)
        } else {
            None
        };
        Ok(Data { dataset, features })
    }

    fn splits(&self, cfg: &RunConfig) -> anyhow::Result<Splits> {
        Ok(stratified_split(&self.dataset, cfg.split_fractions(), cfg.seed)?)
    }

    fn prepare(&self, splits: &Splits, kind: ModelKind, lambda: f64) -> anyhow::Result<PreparedSplits> {
        let provider = self.features.as_ref().map(|f| f as &dyn FeatureProvider);
        PreparedSplits::new(splits, provider, kind, lambda)
            .with_context(|| format!("preparing inputs for {kind}; does the data directory hold features?"))
    }
}

fn naive_for(train: &Prepared) -> anyhow::Result<NaiveBaseline> {
    naive_baseline(&golds(train)).context("empty training split")
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = generate(&cfg.generator)?;
    let features = generate_features(&cfg.generator, &ds, cfg.seed)?;
    create_out(out)?;
    save_dataset(&ds, out)?;
    features.save(out)?;
    write_json(&out.join("run_config.json"), &cfg.echo())?;
    let mut counts = [0usize; 3];
    for s in ds.samples() {
        counts[s.label.code()] += 1;
    }
    println!(
        "wrote {} samples ({} yes, {} no, {} unclear) over {} stimuli to {}",
        ds.len(),
        counts[0],
        counts[1],
        counts[2],
        ds.stimuli().len(),
        out.display()
    );
    Ok(())
}

fn scored(report: EvalReport, cfg: &RunConfig, split: &str, naive: &NaiveBaseline, extra: serde_json::Value) -> EvalReport {
    report.with_config(json!({
        "run": cfg.echo(),
        "split": split,
        "naive_class": naive.class,
        "extra": extra,
    }))
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = Data::load(cfg)?;
    let splits = data.splits(cfg)?;
    let inputs = data.prepare(&splits, cfg.train.kind, cfg.train.model.lambda)?;
    create_out(out)?;
    let (model, mut report) = training::train(&cfg.train, &inputs, Some(&out.join(CHECKPOINT_DIR)))?;
    report.checkpoint = Some(CHECKPOINT_DIR.into());
    fs::write(out.join("train_log.jsonl"), report.log_lines())?;
    write_json(&out.join("train_report.json"), &json!({ "run": cfg.echo(), "report": report }))?;

    let test_golds = golds(&inputs.test);
    let preds = model.predict_all(&inputs.test)?;
    let naive = naive_for(&inputs.train)?;
    let naive_report = evaluate(&naive.predict_n(test_golds.len()), &test_golds, cfg.protocol)?;
    let metrics = evaluate(&preds, &test_golds, cfg.protocol)?;
    println!(
        "{}: best epoch {} (val macro-F1 {:.4}); test {} macro-F1 {:.4}, accuracy {:.4}; naive macro-F1 {:.4}",
        cfg.train.kind,
        report.best_epoch,
        report.best_val_macro_f1,
        cfg.protocol,
        metrics.macro_f1,
        metrics.accuracy,
        naive_report.macro_f1
    );
    let extra = json!({ "naive_macro_f1": naive_report.macro_f1, "naive_accuracy": naive_report.accuracy });
    save_metrics(&scored(metrics, cfg, "test", &naive, extra), &out.join("test_metrics.json"))?;
    Ok(())
}

pub fn grid(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = Data::load(cfg)?;
    let splits = data.splits(cfg)?;
    let inputs = data.prepare(&splits, cfg.train.kind, cfg.train.model.lambda)?;
    let results = grid_search(&cfg.train, &cfg.grids, &inputs);
    create_out(out)?;
    fs::write(out.join("grid.csv"), grid_csv(&results))?;
    write_json(&out.join("grid.json"), &json!({ "run": cfg.echo(), "results": results }))?;
    let failed = results.iter().filter(|r| r.failure.is_some()).count();
    println!("{} cells, {} failed", results.len(), failed);
    if let Some(best) = results.first().filter(|r| r.failure.is_none()) {
        let c = &best.cell;
        println!(
            "best: lr {} ff {} emb {} batch {} (val macro-F1 {:.4})",
            c.lr,
            c.ff_dim,
            c.emb_dim,
            c.batch_size,
            best.val_macro_f1.unwrap_or(0.0)
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, split: &str, out: &Path) -> Result<(), CliError> {
    if !checkpoint.is_dir() {
        return Err(usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let data = Data::load(cfg)?;
    let (model, seed) = load_model(checkpoint)?;
    let splits = data.splits(cfg)?;
    let inputs = data.prepare(&splits, model.kind(), model.config().lambda)?;
    let part = match split {
        "train" => &inputs.train,
        "val" => &inputs.val,
        "test" => &inputs.test,
        other => return Err(usage(format!("unknown split {other:?}, expected train, val or test"))),
    };
    let g = golds(part);
    let naive = naive_for(&inputs.train)?;
    let report = evaluate(&model.predict_all(part)?, &g, cfg.protocol)?;
    println!(
        "{} on {split} ({}): macro-F1 {:.4}, accuracy {:.4}, {} of {} samples scored",
        model.kind(),
        cfg.protocol,
        report.macro_f1,
        report.accuracy,
        report.n_evaluated,
        report.n_total
    );
    let extra = json!({ "model": model.kind(), "checkpoint_seed": seed });
    create_out(out)?;
    save_metrics(&scored(report, cfg, split, &naive, extra), &out.join("metrics.json"))?;
    Ok(())
}

fn variant_config(v: &AblationVariant, base: &TrainConfig) -> TrainConfig {
    let kind = match v.model {
        "LSTM" => ModelKind::Lstm,
        "Transformer" => ModelKind::Transformer,
        _ => ModelKind::Ensemble,
    };
    let mut cfg = TrainConfig { kind, ..base.clone() };
    cfg.model.use_participant = v.user;
    cfg
}

pub fn ablation(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = Data::load(cfg)?;
    let splits = data.splits(cfg)?;
    let mut results = Vec::new();
    let mut test_golds: Vec<PceLabel> = Vec::new();
    let mut naive = None;
    for v in &TABLE_VARIANTS {
        let tc = variant_config(v, &cfg.train);
        let inputs = data.prepare(&splits, tc.kind, tc.model.lambda)?;
        let (model, _) = training::train(&tc, &inputs, None)?;
        results.push((*v, model.predict_all(&inputs.test)?));
        test_golds = golds(&inputs.test);
        naive = Some(naive_for(&inputs.train)?);
        eprintln!("trained {} (user {})", v.model, v.user);
    }
    let naive = naive.context("no variants")?;
    let table = ablation_table(&naive, &test_golds, &results)?;
    create_out(out)?;
    fs::write(out.join("ablation.csv"), table.to_csv())?;
    write_json(&out.join("ablation.json"), &json!({ "run": cfg.echo(), "table": table }))?;
    print!("{}", table.to_text());
    Ok(())
}

pub fn incontext(cfg: &RunConfig, mock: Option<&str>, out: &Path) -> Result<(), CliError> {
    let data = Data::load(cfg)?;
    let splits = data.splits(cfg)?;
    let client: Box<dyn CompletionClient> = match mock {
        Some(text) => Box::new(MockClient::constant(text)),
        None => Box::new(HttpClient::from_env(cfg.llm.clone())?),
    };
    create_out(out)?;
    let opts = IncontextOptions {
        parallelism: cfg.parallelism,
        protocol: cfg.protocol,
        transcript: Some(out.join("transcript.jsonl")),
    };
    let run = run_incontext_eval(&splits.test, Some(&splits.train), cfg.setup, client.as_ref(), &opts)?;
    let failed: Vec<_> = run
        .failed
        .iter()
        .map(|&i| {
            let r = &run.records[i];
            json!({ "participant_id": r.participant_id, "stimulus_id": r.stimulus_id, "error": r.error })
        })
        .collect();
    let provenance = json!({
        "run": cfg.echo(),
        "split": "test",
        "setup": cfg.setup,
        "mock": mock.is_some(),
        "failed": failed,
    });
    let Some(report) = run.report else {
        write_json(&out.join("incontext_failures.json"), &provenance)?;
        let first = run.records.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return Err(anyhow::anyhow!("all {} requests failed; first error: {first}", run.records.len()).into());
    };
    println!(
        "{} setup, {}: macro-F1 {:.4}, accuracy {:.4}; {} unparseable, {} failed of {}",
        cfg.setup,
        cfg.protocol,
        report.macro_f1,
        report.accuracy,
        report.unparseable_total(),
        run.failed.len(),
        run.records.len()
    );
    save_metrics(&report.with_config(provenance), &out.join("incontext_metrics.json"))?;
    Ok(())
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn matrix_block(out: &mut String, labels: &[String], value: impl Fn(usize, usize) -> f64) {
    let n = labels.len();
    let width = labels.iter().map(String::len).max().unwrap_or(1).max(4);
    let _ = write!(out, "{:width$}", "");
    for l in labels {
        let _ = write!(out, " {l:>width$}");
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        let _ = write!(out, "{l:width$}");
        for j in 0..n {
            let _ = write!(out, " {:>width$}", format_number(value(i, j)));
        }
        out.push('\n');
    }
}

fn nested(m: &AoiMatrix) -> String {
    let rows: Vec<String> = m
        .rows()
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format_number(*v)).collect::<Vec<_>>().join(",")))
        .collect();
    format!("[{}]", rows.join(","))
}

pub fn inspect(cfg: &RunConfig, index: usize) -> Result<(), CliError> {
    let data = Data::load(cfg)?;
    let ds = &data.dataset;
    let sample = ds
        .samples()
        .get(index)
        .ok_or_else(|| usage(format!("sample {index} out of range; the dataset has {}", ds.len())))?;
    let lambda = cfg.train.model.lambda;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "sample {index}: participant {}, stimulus {}, label {}",
        sample.participant_id, sample.stimulus_id, sample.label
    );
    out.push_str("\nfixations\n");
    for f in sample.sequence.fixations() {
        let _ = writeln!(out, "{:>4}  {:<20} ({}, {})  {:.2} ms", f.index, f.aoi.as_str(), f.x, f.y, f.duration_ms);
    }
    let t = transition_matrix(&sample.sequence);
    let labels: Vec<String> = t.order().iter().map(|a| a.to_string()).collect();
    out.push_str("\ntransition matrix\n");
    matrix_block(&mut out, &labels, |i, j| f64::from(t.get(i, j)));
    let amp = amplify(&t, lambda)?;
    let _ = writeln!(out, "\namplified (lambda {})", format_number(lambda));
    matrix_block(&mut out, &labels, |i, j| amp.get(i, j));
    let _ = writeln!(out, "amplified = {}", nested(&amp));

    if let Some(st) = ds.stimulus(&sample.stimulus_id) {
        let bias = exposure_bias(&sample.sequence, st, lambda)?;
        let map = token_aoi_map(st);
        let words = st.caption_tokens();
        let mut names = vec!["[cls]".to_string()];
        names.extend(words.iter().map(|w| w.text.clone()));
        names.extend(st.regions.iter().map(|r| format!("<{}>", r.aoi)));
        let n = map.len();
        out.push_str("\ntoken bias\n");
        matrix_block(&mut out, &names[..n.min(names.len())], |i, j| bias.data()[i * n + j]);
    }
    print!("{out}");
    Ok(())
}
