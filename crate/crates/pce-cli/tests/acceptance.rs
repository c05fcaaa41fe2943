//! Acceptance run: every criterion prints one PASS or FAIL line with its
//! measurement and wall time. With `PCE_ACCEPTANCE_STRICT` set the run exits
//! nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pce_core::data::*;
use pce_core::encoding::{amplify, transition_matrix, transition_matrix_counted};
use pce_core::evaluation::{evaluate, naive_baseline, EvalReport, Protocol};
use pce_core::llm::*;
use pce_core::models::*;
use pce_core::numerics::gradcheck::{op_case, relative_error, OP_NAMES};
use pce_core::numerics::Graph;
use pce_core::synth::{generate, generate_features, FeatureStore, GeneratorConfig};
use pce_core::training::{golds, train, PreparedSplits, TrainConfig};

use PceLabel::{No, Unclear, Yes};

type Outcome = Result<String, String>;

const SEED: u64 = 11;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../pce-core/tests")
}

fn fixture(name: &str) -> Dataset {
    let dir = core_dir().join("fixtures").join(name);
    load_dataset(&dir.join(FIXATIONS_FILE), &dir.join(LABELS_FILE), &dir.join(STIMULI_FILE)).unwrap()
}

struct Corpus {
    splits: Splits,
    features: FeatureStore,
}

fn corpus(signal: f64) -> Corpus {
    let cfg = GeneratorConfig {
        seed: SEED,
        signal_strength: signal,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    let features = generate_features(&cfg, &ds, SEED).unwrap();
    let splits = stratified_split(&ds, (0.8, 0.1, 0.1), SEED).unwrap();
    Corpus { splits, features }
}

fn planted() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| corpus(1.0))
}

fn naive_reports(splits: &Splits) -> (EvalReport, EvalReport) {
    let naive = naive_baseline(&splits.train.labels()).unwrap();
    let test = splits.test.labels();
    let preds = naive.predict_n(test.len());
    (
        evaluate(&preds, &test, Protocol::ThreeClass).unwrap(),
        evaluate(&preds, &test, Protocol::TwoClass).unwrap(),
    )
}

fn c1_amplify() -> Outcome {
    let ds = fixture("ewcx");
    let seq = &ds.samples()[0].sequence;
    let t0 = Instant::now();
    let a = amplify(&transition_matrix(seq), 5.0).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    let want = vec![
        vec![0.0, 5.0, 0.0, 0.0],
        vec![5.0, 0.0, 5.0, 5.0],
        vec![0.0, 5.0, 0.0, 5.0],
        vec![0.0, 5.0, 5.0, 0.0],
    ];
    ensure(a.rows() == want, format!("got {:?}", a.rows()))?;
    ensure(took < Duration::from_millis(1), format!("amplify took {took:?}"))?;
    Ok(format!("exact match in {took:?}"))
}

fn c2_pgmt_identity() -> Outcome {
    let cfg = GeneratorConfig {
        n_samples: 50,
        seed: SEED,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    let fs = generate_features(&cfg, &ds, SEED).unwrap();
    let inputs = Prepared::new(&ds, Some(&fs), Some(0.0)).unwrap();
    let mc = ModelConfig {
        lambda: 0.0,
        ..Default::default()
    }
    .fit_to(&inputs);
    let batch: Vec<usize> = (0..inputs.len()).collect();
    let bits = |net: &MultimodalTransformer| -> Vec<u64> {
        let mut g = Graph::new();
        let z = net.logits(&mut g, &inputs, &batch).unwrap();
        g.value(z).iter().map(|v| v.to_bits()).collect()
    };
    for seed in 0..3 {
        let content = MultimodalTransformer::new(&mc, false, seed).unwrap();
        let pgmt = MultimodalTransformer::new(&mc, true, seed).unwrap();
        ensure(
            content.store.trainable_count() == pgmt.store.trainable_count(),
            "parameter counts differ",
        )?;
        ensure(bits(&content) == bits(&pgmt), format!("outputs differ for parameter seed {seed}"))?;
    }
    Ok(format!("{} samples x 3 parameter sets bit-identical", inputs.len()))
}

fn model_loss(net: &dyn Network, inputs: &Prepared, batch: &[usize]) -> f64 {
    let mut g = Graph::new();
    let z = net.logits(&mut g, inputs, batch).unwrap();
    let targets: Vec<usize> = batch.iter().map(|&i| inputs.samples[i].label).collect();
    let l = g.cross_entropy(z, &targets).unwrap();
    g.value(l)[0]
}

fn model_gradcheck<N: Network + Clone>(net: &N, inputs: &Prepared, batch: &[usize], per_param: usize) -> f64 {
    let grads = {
        let mut g = Graph::new();
        let z = net.logits(&mut g, inputs, batch).unwrap();
        let targets: Vec<usize> = batch.iter().map(|&i| inputs.samples[i].label).collect();
        let l = g.cross_entropy(z, &targets).unwrap();
        g.backward(l).unwrap();
        g.param_grads().unwrap()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for id in net.store().ids().collect::<Vec<_>>() {
        let len = net.store().get(id).len();
        let step = (len / per_param).max(1);
        for j in (0..len).step_by(step).take(per_param) {
            let orig = net.store().get(id).data()[j];
            probe.store_mut().get_mut(id).data_mut()[j] = orig + h;
            let plus = model_loss(&probe, inputs, batch);
            probe.store_mut().get_mut(id).data_mut()[j] = orig - h;
            let minus = model_loss(&probe, inputs, batch);
            probe.store_mut().get_mut(id).data_mut()[j] = orig;
            let analytic = grads.get(id).map_or(0.0, |g| g[j]);
            worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * h)));
        }
    }
    worst
}

fn c3_gradients() -> Outcome {
    let mut worst_op = 0.0f64;
    for op in OP_NAMES {
        for seed in 0..20 {
            let err = op_case(op, seed).map_err(|e| format!("{op} seed {seed}: {e}"))?;
            ensure(err < 1e-4, format!("{op} seed {seed}: relative error {err:.3e}"))?;
            worst_op = worst_op.max(err);
        }
    }
    let mut worst_model = 0.0f64;
    for seed in 0..5 {
        let cfg = GeneratorConfig {
            n_participants: 12,
            n_stimuli: 10,
            n_samples: 20,
            mean_fixations: 6.0,
            feature_dim_text: 10,
            feature_dim_image: 14,
            seed,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let fs = generate_features(&cfg, &ds, seed).unwrap();
        for (kind, lambda) in [(ModelKind::Lstm, None), (ModelKind::Transformer, None), (ModelKind::Pgmt, Some(500.0))] {
            let inputs = Prepared::new(&ds, Some(&fs), lambda).unwrap();
            let mc = ModelConfig {
                n_heads: 2,
                n_layers: 2,
                ff_dim: 8,
                emb_dim: 4,
                model_dim: 6,
                lstm_hidden: 5,
                ..Default::default()
            }
            .fit_to(&inputs);
            let batch = [0, 3, 7];
            let err = match kind {
                ModelKind::Lstm => model_gradcheck(&PerceptionLstm::new(&mc, seed).unwrap(), &inputs, &batch, 10),
                _ => model_gradcheck(&MultimodalTransformer::new(&mc, kind == ModelKind::Pgmt, seed).unwrap(), &inputs, &batch, 10),
            };
            ensure(err < 1e-4, format!("{kind} seed {seed}: relative error {err:.3e}"))?;
            worst_model = worst_model.max(err);
        }
    }
    Ok(format!(
        "{} ops x 20 seeds, max rel err {worst_op:.2e}; lstm/transformer/pgmt x 5 seeds, max {worst_model:.2e}",
        OP_NAMES.len()
    ))
}

fn c4_naive() -> Outcome {
    let (three, two) = naive_reports(&planted().splits);
    ensure((three.macro_f1 - 0.268).abs() <= 0.02, format!("3-class macro-F1 {:.4}", three.macro_f1))?;
    ensure((two.accuracy - 0.770).abs() <= 0.02, format!("2-class accuracy {:.4}", two.accuracy))?;
    Ok(format!(
        "3-class macro-F1 {:.4}, 2-class accuracy {:.4} on {} test samples",
        three.macro_f1, two.accuracy, three.n_total
    ))
}

fn oracle(preds: &[PceLabel], golds: &[PceLabel], protocol: Protocol) -> (f64, f64, Vec<f64>) {
    let kept: Vec<(PceLabel, PceLabel)> = preds
        .iter()
        .zip(golds)
        .filter(|(_, g)| protocol == Protocol::ThreeClass || **g != Unclear)
        .map(|(p, g)| (*p, *g))
        .collect();
    let classes: &[PceLabel] = match protocol {
        Protocol::ThreeClass => &[Yes, No, Unclear],
        Protocol::TwoClass => &[Yes, No],
    };
    let mut f1s = Vec::new();
    for &c in classes {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for &(p, g) in &kept {
            if p == c && g == c {
                tp += 1.0;
            } else if p == c {
                fp += 1.0;
            } else if g == c {
                fn_ += 1.0;
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        f1s.push(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        });
    }
    let acc = kept.iter().filter(|(p, g)| p == g).count() as f64 / kept.len() as f64;
    (acc, f1s.iter().sum::<f64>() / f1s.len() as f64, f1s)
}

fn c5_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut compared = 0;
    for set in 0..200 {
        let n = rng.gen_range(1..40);
        let golds: Vec<PceLabel> = (0..n).map(|_| PceLabel::ALL[rng.gen_range(0..3)]).collect();
        let preds: Vec<PceLabel> = (0..n).map(|_| PceLabel::ALL[rng.gen_range(0..3)]).collect();
        let certain: Vec<Prediction> = preds.iter().map(|&l| Prediction::certain(l)).collect();
        for protocol in [Protocol::ThreeClass, Protocol::TwoClass] {
            if protocol == Protocol::TwoClass && golds.iter().all(|g| *g == Unclear) {
                ensure(evaluate(&certain, &golds, protocol).is_err(), "empty 2-class set must error")?;
                continue;
            }
            let r = evaluate(&certain, &golds, protocol).map_err(|e| e.to_string())?;
            let (acc, f1, per) = oracle(&preds, &golds, protocol);
            let got: Vec<f64> = r.per_class.iter().map(|c| c.f1).collect();
            ensure(
                r.accuracy == acc && r.macro_f1 == f1 && got == per,
                format!("set {set} {protocol}: {} / {} vs {acc} / {f1}", r.accuracy, r.macro_f1),
            )?;
            compared += 1;
        }
    }
    Ok(format!("200 sets, {compared} protocol evaluations exactly equal"))
}

fn planted_config(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        kind,
        lr: 1e-4,
        batch_size: 128,
        max_epochs: 30,
        seed: SEED,
        model: ModelConfig {
            n_heads: 6,
            n_layers: 6,
            ff_dim: 32,
            emb_dim: 32,
            lambda: 500.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Test-split 3-class macro-F1 minus the naive baseline's, per kind.
fn margins(c: &Corpus) -> Result<(f64, Vec<(ModelKind, f64)>), String> {
    let naive = naive_reports(&c.splits).0.macro_f1;
    let mut out = Vec::new();
    for kind in [ModelKind::Lstm, ModelKind::Pgmt, ModelKind::Ensemble] {
        let t0 = Instant::now();
        let cfg = planted_config(kind);
        let inputs = PreparedSplits::new(&c.splits, Some(&c.features), kind, cfg.model.lambda).map_err(|e| e.to_string())?;
        let (model, _) = train(&cfg, &inputs, None).map_err(|e| format!("{kind}: {e}"))?;
        let preds = model.predict_all(&inputs.test).map_err(|e| e.to_string())?;
        let r = evaluate(&preds, &golds(&inputs.test), Protocol::ThreeClass).map_err(|e| e.to_string())?;
        eprintln!("    {kind}: test macro-F1 {:.4} ({:.0?})", r.macro_f1, t0.elapsed());
        out.push((kind, r.macro_f1 - naive));
    }
    Ok((naive, out))
}

fn describe(naive: f64, m: &[(ModelKind, f64)]) -> String {
    let parts: Vec<String> = m.iter().map(|(k, d)| format!("{k} {:+.4}", d)).collect();
    format!("naive {naive:.4}; margins {}", parts.join(", "))
}

fn c6_planted_signal() -> Outcome {
    let (naive, m) = margins(planted())?;
    let text = describe(naive, &m);
    ensure(m.iter().all(|(_, d)| *d >= 0.10), text.clone())?;
    Ok(text)
}

fn c7_no_signal() -> Outcome {
    let (naive, m) = margins(&corpus(0.0))?;
    let text = describe(naive, &m);
    ensure(m.iter().all(|(_, d)| *d <= 0.05), text.clone())?;
    Ok(text)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c8_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 11, "generator": {"n_samples": 1000},
            "train": {"kind": "pgmt", "max_epochs": 2, "model": {"ff_dim": 32}}}"#,
    )
    .map_err(|e| e.to_string())?;
    // both runs use the same paths so echoed configs agree too
    let work = tmp.path().join("run");
    let pce = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_pce")).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), format!("pce {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&work);
        let (data, trained, evald) = (work.join("data"), work.join("train"), work.join("eval"));
        pce(&["gen", "--config", &s(&cfg), "--out", &s(&data)])?;
        pce(&["train", "--config", &s(&cfg), "--data", &s(&data), "--out", &s(&trained)])?;
        pce(&[
            "eval",
            "--config",
            &s(&cfg),
            "--data",
            &s(&data),
            "--checkpoint",
            &s(&trained.join("checkpoint")),
            "--out",
            &s(&evald),
        ])?;
        snapshots.push(files(&work));
    }
    ensure(snapshots[0] == snapshots[1], "artifacts differ between runs")?;
    let bytes: usize = snapshots[0].iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical across two runs", snapshots[0].len()))
}

fn c9_transition_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pool: Vec<String> = ["a", "b", "c", "d", "e"]
        .iter()
        .flat_map(|l| [format!("vis_{l}"), format!("txt_{l}")])
        .chain(["off".to_string()])
        .collect();
    for case in 0..1000 {
        let k = rng.gen_range(1..=pool.len());
        let alphabet: Vec<String> = pool.choose_multiple(&mut rng, k).cloned().collect();
        let len = rng.gen_range(1..40);
        let aois: Vec<String> = (0..len).map(|_| alphabet.choose(&mut rng).unwrap().clone()).collect();
        let fx = aois
            .iter()
            .enumerate()
            .map(|(i, a)| Fixation {
                index: i as u32 + 1,
                aoi: AoiId::parse(a).unwrap(),
                x: 1.0,
                y: 1.0,
                duration_ms: 100.0,
            })
            .collect();
        let seq = FixationSequence::new("p", "s", fx).unwrap();
        let t = transition_matrix(&seq);
        let tc = transition_matrix_counted(&seq);
        let mut order: Vec<&String> = Vec::new();
        for a in &aois {
            if !order.contains(&a) {
                order.push(a);
            }
        }
        ensure(t.size() == order.len(), format!("case {case}: size"))?;
        for (i, from) in order.iter().enumerate() {
            for (j, to) in order.iter().enumerate() {
                let count = aois.windows(2).filter(|w| &w[0] == *from && &w[1] == *to).count() as u32;
                ensure(
                    t.get(i, j) == u32::from(count > 0) && tc.get(i, j) == count,
                    format!("case {case}: entry ({i},{j})"),
                )?;
            }
        }
        let lambda: f64 = rng.gen_range(0.0..1000.0);
        let a = amplify(&t, lambda).unwrap();
        let unit = amplify(&t, 1.0).unwrap();
        for i in 0..t.size() {
            for j in 0..t.size() {
                ensure(a.get(i, j) == a.get(j, i), format!("case {case}: asymmetric"))?;
                ensure(a.get(i, j) == lambda * unit.get(i, j), format!("case {case}: not linear in lambda"))?;
            }
        }
    }
    Ok("1000 sequences match the pair scan; symmetry and scaling exact".into())
}

fn c10_overfit() -> Outcome {
    let cfg = GeneratorConfig {
        n_samples: 120,
        seed: SEED,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    let fs = generate_features(&cfg, &ds, SEED).unwrap();
    let splits = stratified_split(&ds, (0.8, 0.1, 0.1), SEED).unwrap();
    let mut lines = Vec::new();
    for kind in ModelKind::ALL {
        let t0 = Instant::now();
        let tc = TrainConfig {
            kind,
            lr: 1e-2,
            batch_size: 1,
            max_epochs: 200,
            seed: SEED,
            allow_off_grid: true,
            ..Default::default()
        };
        let full = PreparedSplits::new(&splits, Some(&fs), kind, tc.model.lambda).map_err(|e| e.to_string())?;
        let mut one = full.train.clone();
        one.samples.truncate(1);
        let inputs = PreparedSplits {
            train: one.clone(),
            val: one.clone(),
            test: one,
        };
        let (_, report) = train(&tc, &inputs, None).map_err(|e| format!("{kind}: {e}"))?;
        let hit = report.epochs.iter().position(|e| e.train_loss < 1e-2);
        let took = t0.elapsed();
        let last = report.epochs.last().map_or(f64::NAN, |e| e.train_loss);
        let step = hit.ok_or_else(|| format!("{kind}: loss still {last:.3e} after 200 steps"))? + 1;
        ensure(took < Duration::from_secs(60), format!("{kind}: took {took:?}"))?;
        lines.push(format!("{kind} step {step}"));
    }
    Ok(format!("loss < 1e-2 at {}", lines.join(", ")))
}

fn c11_prompts() -> Outcome {
    let ds = fixture("ewcx");
    let demo_ds = fixture("ewcx_demo");
    for setup in Setup::ALL {
        let demo = (setup == Setup::OneShot).then(|| Demo {
            sample: &demo_ds.samples()[0],
            stimulus: demo_ds.stimulus("2407890").unwrap(),
        });
        let rendered = build_prompt(&ds.samples()[0], ds.stimulus("2412873").unwrap(), setup, demo)
            .map_err(|e| e.to_string())?
            .render();
        let golden = std::fs::read_to_string(core_dir().join(format!("golden/prompt_{setup}.txt"))).map_err(|e| e.to_string())?;
        ensure(rendered == golden, format!("{setup} prompt differs from its golden file"))?;
    }
    let table = [
        ("yes", Verdict::Yes),
        ("Yes, the caption mentions them.", Verdict::Yes),
        ("UNCLEAR", Verdict::Unclear),
        ("No.", Verdict::No),
        ("**No**", Verdict::No),
        ("answer:\nyes", Verdict::Yes),
        ("I know: yes", Verdict::Yes),
        ("not sure, unclear; no", Verdict::Unclear),
        ("the wall is visible", Verdict::Unparseable),
        ("yesterday nobody knew", Verdict::Unparseable),
        ("", Verdict::Unparseable),
    ];
    for (raw, want) in table {
        ensure(parse_verdict(raw) == want, format!("parse_verdict({raw:?}) = {:?}", parse_verdict(raw)))?;
    }
    let splits = &planted().splits;
    let (three, two) = naive_reports(splits);
    let client = MockClient::constant("yes");
    for (protocol, want) in [(Protocol::ThreeClass, &three), (Protocol::TwoClass, &two)] {
        let opts = IncontextOptions {
            protocol,
            ..Default::default()
        };
        let run = run_incontext_eval(&splits.test, None, Setup::Fixations, &client, &opts).map_err(|e| e.to_string())?;
        let got = run.report.ok_or("every request failed")?;
        ensure(
            got.macro_f1 == want.macro_f1 && got.accuracy == want.accuracy && got.confusion == want.confusion,
            format!("{protocol}: mock {:.4}/{:.4} vs naive {:.4}/{:.4}", got.macro_f1, got.accuracy, want.macro_f1, want.accuracy),
        )?;
    }
    Ok(format!("3 goldens, {} verdict rules, mock run equals naive on both protocols", table.len()))
}

fn c12_grid() -> Outcome {
    use pce_core::training::{grid_search, Grids};
    let cfg = GeneratorConfig {
        n_samples: 200,
        seed: SEED,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    let fs = generate_features(&cfg, &ds, SEED).unwrap();
    let splits = stratified_split(&ds, (0.8, 0.1, 0.1), SEED).unwrap();
    let base = TrainConfig {
        max_epochs: 1,
        seed: SEED,
        ..Default::default()
    };
    let inputs = PreparedSplits::new(&splits, Some(&fs), base.kind, base.model.lambda).map_err(|e| e.to_string())?;
    let results = grid_search(&base, &Grids::default(), &inputs);
    ensure(results.len() == 144, format!("{} cells", results.len()))?;
    let failed = results.iter().filter(|r| r.failure.is_some()).count();
    ensure(failed == 0, format!("{failed} failed cells"))?;
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    ensure(ranks == (1..=144).collect::<Vec<_>>(), "ranks are not 1..=144")?;
    let scores: Vec<f64> = results.iter().map(|r| r.val_macro_f1.unwrap()).collect();
    ensure(scores.windows(2).all(|w| w[0] >= w[1]), "cells not ranked by validation macro-F1")?;
    Ok(format!("144 ranked {} cells, best val macro-F1 {:.4}", base.kind, scores[0]))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("amplify worked example", 1, c1_amplify),
        ("pgmt at zero weight equals the content transformer", 10, c2_pgmt_identity),
        ("gradient suite", 120, c3_gradients),
        ("naive baseline arithmetic", 5, c4_naive),
        ("metric oracle equivalence", 5, c5_metric_oracle),
        ("planted signal is learned", 15 * 60, c6_planted_signal),
        ("no signal, no gain", 15 * 60, c7_no_signal),
        ("cli determinism", 5 * 60, c8_determinism),
        ("transition matrix oracle", 5, c9_transition_oracle),
        ("overfit one sample", 4 * 60, c10_overfit),
        ("prompt snapshots and mock run", 5, c11_prompts),
        ("grid completeness", 10 * 60, c12_grid),
    ];
    let only: Vec<usize> = std::env::var("PCE_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    // shared corpus generation is not charged to whichever criterion happens to need it first
    if only.is_empty() || only.iter().any(|i| [4, 6, 11].contains(i)) {
        let t0 = Instant::now();
        planted();
        eprintln!("generated the planted-signal corpus in {:.1?}", t0.elapsed());
    }
    let mut failures = 0;
    let t_all = Instant::now();
    for (i, (name, budget_s, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t0.elapsed();
        let budget = if n == 1 { Duration::from_secs(1) } else { Duration::from_secs(*budget_s) };
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; over the {budget:?} budget")),
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{took:.1?}]");
            }
        }
    }
    println!("{failures} failed, total {:.1?}", t_all.elapsed());
    if failures > 0 && std::env::var_os("PCE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
