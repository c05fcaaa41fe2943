use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pce_core::data::*;
use pce_core::evaluation::{evaluate, naive_baseline, Protocol};
use pce_core::llm::*;
use pce_core::synth::{generate, GeneratorConfig};

fn fixture(name: &str) -> Dataset {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    load_dataset(&dir.join(FIXATIONS_FILE), &dir.join(LABELS_FILE), &dir.join(STIMULI_FILE)).unwrap()
}

fn golden_path(setup: Setup) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/prompt_{setup}.txt"))
}

fn ewcx_prompt(setup: Setup) -> PromptBundle {
    let ds = fixture("ewcx");
    let demo_ds = fixture("ewcx_demo");
    let sample = &ds.samples()[0];
    let demo = (setup == Setup::OneShot).then(|| Demo {
        sample: &demo_ds.samples()[0],
        stimulus: demo_ds.stimulus("2407890").unwrap(),
    });
    build_prompt(sample, ds.stimulus("2412873").unwrap(), setup, demo).unwrap()
}

#[test]
fn prompts_match_golden_files() {
    for setup in Setup::ALL {
        let rendered = ewcx_prompt(setup).render();
        let path = golden_path(setup);
        if std::env::var_os("PCE_UPDATE_GOLDEN").is_some() {
            std::fs::write(&path, &rendered).unwrap();
        }
        let golden = std::fs::read_to_string(&path).unwrap();
        assert_eq!(rendered, golden, "{setup}");
        assert_eq!(ewcx_prompt(setup), ewcx_prompt(setup));
    }
}

#[test]
fn prompt_contents_follow_the_setup() {
    let zero = ewcx_prompt(Setup::ZeroShot);
    assert!(zero.user_text.contains(QUESTION));
    assert!(zero.user_text.contains("a wall behind the rock"));
    assert!(!zero.user_text.contains(" ms)") && !zero.system_text.contains(" ms)"));
    assert!(!zero.render().contains("EWCX"));

    let fix = ewcx_prompt(Setup::Fixations);
    assert!(fix.user_text.contains("1. vis_wall (100.00 ms)"));
    assert!(fix.user_text.contains("3. off (212.40 ms)"));
    assert_eq!(fix.attachments.len(), 1);

    let one = ewcx_prompt(Setup::OneShot);
    assert!(one.system_text.contains("a dog asleep on a red sofa"));
    assert!(one.system_text.contains("Answer: yes"));
    assert_eq!(one.system_text.matches("Answer:").count(), 1);
    assert_eq!(one.user_text, fix.user_text.replace("attachment 1", "attachment 2"));
    assert_eq!(one.attachments.iter().map(|a| a.stimulus_id.as_str()).collect::<Vec<_>>(), ["2407890", "2412873"]);
    for b in [&zero, &fix, &one] {
        assert!(b.user_text.contains("yes, no or unclear"));
    }
}

#[test]
fn demo_rules_are_enforced() {
    let ds = fixture("ewcx");
    let demo_ds = fixture("ewcx_demo");
    let sample = &ds.samples()[0];
    let st = ds.stimulus("2412873").unwrap();
    let mut other = demo_ds.samples()[0].clone();
    other.participant_id = "ABCD".into();
    other.sequence.participant_id = "ABCD".into();
    let demo_st = demo_ds.stimulus("2407890").unwrap();
    let err = build_prompt(sample, st, Setup::OneShot, Some(Demo { sample: &other, stimulus: demo_st })).unwrap_err();
    assert!(matches!(err, LlmError::DemoParticipant { .. }));
    assert!(build_prompt(sample, st, Setup::OneShot, None).is_err());
    let good = Demo {
        sample: &demo_ds.samples()[0],
        stimulus: demo_st,
    };
    assert!(build_prompt(sample, st, Setup::Fixations, Some(good)).is_err());
    assert!(build_prompt(sample, demo_st, Setup::ZeroShot, None).is_err());
}

fn synthetic(seed: u64, n: usize) -> Dataset {
    generate(&GeneratorConfig {
        n_participants: 40,
        n_stimuli: 30,
        n_samples: n,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn zero_shot_prompts_ignore_the_participant() {
    let ds = synthetic(1, 300);
    let mut by_stimulus: HashMap<&str, Vec<PromptBundle>> = HashMap::new();
    for s in ds.samples() {
        let b = build_prompt(s, ds.stimulus(&s.stimulus_id).unwrap(), Setup::ZeroShot, None).unwrap();
        by_stimulus.entry(&s.stimulus_id).or_default().push(b);
    }
    assert!(by_stimulus.values().any(|v| v.len() > 1));
    for v in by_stimulus.values() {
        assert!(v.windows(2).all(|w| w[0] == w[1] && w[0].hash() == w[1].hash()));
    }
}

#[test]
fn oracle_client_scores_perfectly() {
    let ds = synthetic(2, 200);
    let answers: HashMap<String, PceLabel> = ds
        .samples()
        .iter()
        .map(|s| {
            let b = build_prompt(s, ds.stimulus(&s.stimulus_id).unwrap(), Setup::Fixations, None).unwrap();
            (b.user_text, s.label)
        })
        .collect();
    let client = MockClient::new(move |b| Ok(format!("{}.", answers[&b.user_text].as_str().to_uppercase())));
    let run = run_incontext_eval(&ds, None, Setup::Fixations, &client, &IncontextOptions::default()).unwrap();
    assert_eq!(run.report.as_ref().unwrap().accuracy, 1.0);
    assert_eq!(run.report.as_ref().unwrap().macro_f1, 1.0);
    assert!(run.failed.is_empty());
}

#[test]
fn always_yes_matches_the_naive_baseline() {
    let ds = synthetic(3, 1000);
    let golds: Vec<PceLabel> = ds.samples().iter().map(|s| s.label).collect();
    let naive = naive_baseline(&golds).unwrap();
    assert_eq!(naive.class, PceLabel::Yes);
    let preds = naive.predict_n(golds.len());
    let client = MockClient::constant("Yes");
    for protocol in [Protocol::ThreeClass, Protocol::TwoClass] {
        let opts = IncontextOptions {
            protocol,
            ..Default::default()
        };
        let run = run_incontext_eval(&ds, None, Setup::ZeroShot, &client, &opts).unwrap();
        let want = evaluate(&preds, &golds, protocol).unwrap();
        assert_eq!(run.report.as_ref().unwrap().accuracy, want.accuracy);
        assert_eq!(run.report.as_ref().unwrap().macro_f1, want.macro_f1);
    }
}

#[test]
fn transcript_replay_reproduces_the_report() {
    let ds = synthetic(4, 150);
    let (train, test) = {
        let s = stratified_split(&ds, (0.6, 0.0, 0.4), 1).unwrap();
        (s.train, s.test)
    };
    let words = ["yes", "No, it does not", "unclear", "the wall"];
    let client = MockClient::new(move |b| {
        let k = b.hash().bytes().map(usize::from).sum::<usize>() % words.len();
        Ok(words[k].to_string())
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logs/transcript.jsonl");
    let opts = IncontextOptions {
        transcript: Some(path.clone()),
        ..Default::default()
    };
    let run = run_incontext_eval(&test, Some(&train), Setup::OneShot, &client, &opts).unwrap();
    assert_eq!(run.records.len(), test.len());

    let read = read_transcript(&path).unwrap();
    assert_eq!(read, run.records);
    assert_eq!(replay(&read, Protocol::ThreeClass).unwrap(), run.report.clone().unwrap());
    assert!(read.iter().enumerate().all(|(i, r)| r.index == i));
    let scored: Vec<_> = read.iter().filter(|r| !r.failed()).collect();
    assert!(scored.iter().all(|r| r.demo_stimulus_id.is_some() && r.prompt_sha256.as_ref().unwrap().len() == 64));
    assert!(read.iter().any(|r| r.verdict == Some(Verdict::Unparseable)));
    assert_eq!(run.report.as_ref().unwrap().unparseable_total(), read.iter().filter(|r| r.verdict == Some(Verdict::Unparseable)).count());

    // a rerun writes the same transcript byte for byte
    let first = std::fs::read(&path).unwrap();
    run_incontext_eval(&test, Some(&train), Setup::OneShot, &client, &opts).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn transport_failures_are_reported_separately() {
    let ds = synthetic(5, 60);
    let client = MockClient::new(|b| {
        if b.user_text.len() % 3 == 0 {
            Err(LlmError::Transport {
                attempts: 4,
                reason: "connection refused".into(),
            })
        } else {
            Ok("no".into())
        }
    });
    let run = run_incontext_eval(&ds, None, Setup::Fixations, &client, &IncontextOptions::default()).unwrap();
    assert!(!run.failed.is_empty() && run.failed.len() < ds.len());
    assert_eq!(run.report.as_ref().unwrap().n_total, ds.len() - run.failed.len());
    for &i in &run.failed {
        let r = &run.records[i];
        assert!(r.error.as_deref().unwrap().contains("connection refused"));
        assert!(r.raw_response.is_none());
    }
    let no_demo = run_incontext_eval(&ds, None, Setup::OneShot, &client, &IncontextOptions::default()).unwrap();
    assert_eq!(no_demo.failed.len(), ds.len());
    assert!(no_demo.report.is_none());
}
