use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::{build_prompt, parse_verdict, CompletionClient, Demo, LlmError, Setup, Verdict};
use crate::data::{Dataset, PceLabel, PceSample};
use crate::evaluation::{evaluate_labels, EvalReport, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncontextOptions {
    /// Requests in flight at once.
    pub parallelism: usize,
    pub protocol: Protocol,
    /// Line-delimited JSON transcript, written in sample order.
    pub transcript: Option<PathBuf>,
}

impl Default for IncontextOptions {
    fn default() -> Self {
        IncontextOptions {
            parallelism: 4,
            protocol: Protocol::ThreeClass,
            transcript: None,
        }
    }
}

/// One line of the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub index: usize,
    pub participant_id: String,
    pub stimulus_id: String,
    pub demo_stimulus_id: Option<String>,
    pub setup: Setup,
    pub prompt_sha256: Option<String>,
    pub raw_response: Option<String>,
    /// `None` when the request failed.
    pub verdict: Option<Verdict>,
    pub gold: PceLabel,
    pub error: Option<String>,
}

impl TranscriptRecord {
    pub fn failed(&self) -> bool {
        self.verdict.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncontextRun {
    /// Scores of every sample whose request went through; `None` when every request failed.
    pub report: Option<EvalReport>,
    pub records: Vec<TranscriptRecord>,
    /// Indices of samples whose request failed.
    pub failed: Vec<usize>,
}

/// Same participant, different stimulus, first in dataset order.
fn find_demo<'a>(pool: &'a Dataset, sample: &PceSample) -> Option<&'a PceSample> {
    pool.samples()
        .iter()
        .find(|d| d.participant_id == sample.participant_id && d.stimulus_id != sample.stimulus_id)
}

fn query(
    index: usize,
    sample: &PceSample,
    split: &Dataset,
    demos: Option<&Dataset>,
    setup: Setup,
    client: &dyn CompletionClient,
) -> TranscriptRecord {
    let mut rec = TranscriptRecord {
        index,
        participant_id: sample.participant_id.clone(),
        stimulus_id: sample.stimulus_id.clone(),
        demo_stimulus_id: None,
        setup,
        prompt_sha256: None,
        raw_response: None,
        verdict: None,
        gold: sample.label,
        error: None,
    };
    let outcome = (|| {
        let stimulus = split
            .stimulus(&sample.stimulus_id)
            .ok_or_else(|| format!("unknown stimulus {}", sample.stimulus_id))?;
        let demo = if setup == Setup::OneShot {
            let pool = demos.ok_or("one-shot needs a demonstration pool")?;
            let d = find_demo(pool, sample).ok_or_else(|| format!("no demonstration for participant {}", sample.participant_id))?;
            rec.demo_stimulus_id = Some(d.stimulus_id.clone());
            let st = pool.stimulus(&d.stimulus_id).ok_or("demonstration stimulus missing")?;
            Some(Demo { sample: d, stimulus: st })
        } else {
            None
        };
        let bundle = build_prompt(sample, stimulus, setup, demo).map_err(|e| e.to_string())?;
        rec.prompt_sha256 = Some(bundle.hash());
        client.send(&bundle).map_err(|e| e.to_string())
    })();
    match outcome {
        Ok(raw) => {
            rec.verdict = Some(parse_verdict(&raw));
            rec.raw_response = Some(raw);
        }
        Err(e) => rec.error = Some(e),
    }
    rec
}

/// Scores transcript records; failed requests are left out, unparseable verdicts count as errors.
pub fn replay(records: &[TranscriptRecord], protocol: Protocol) -> Result<EvalReport, LlmError> {
    let ok: Vec<&TranscriptRecord> = records.iter().filter(|r| !r.failed()).collect();
    let preds: Vec<Option<PceLabel>> = ok.iter().map(|r| r.verdict.and_then(Verdict::label)).collect();
    let golds: Vec<PceLabel> = ok.iter().map(|r| r.gold).collect();
    Ok(evaluate_labels(&preds, &golds, protocol)?)
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, LlmError> {
    let bad = |reason: String| LlmError::Transcript {
        path: path.display().to_string(),
        reason,
    };
    let file = File::open(path).map_err(|e| bad(e.to_string()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| bad(e.to_string()))?;
            serde_json::from_str(&l).map_err(|e| bad(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Sends one request per sample of `split` with bounded parallelism and scores
/// the parsed verdicts. One-shot demonstrations are drawn from `demos`.
pub fn run_incontext_eval(
    split: &Dataset,
    demos: Option<&Dataset>,
    setup: Setup,
    client: &dyn CompletionClient,
    opts: &IncontextOptions,
) -> Result<IncontextRun, LlmError> {
    let samples = split.samples();
    let mut writer = match &opts.transcript {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Some(BufWriter::new(File::create(p)?))
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, samples.len().max(1));
    let (tx, rx) = mpsc::channel();
    let mut records = Vec::with_capacity(samples.len());
    let mut io_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= samples.len() {
                    break;
                }
                if tx.send(query(i, &samples[i], split, demos, setup, client)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        for rec in rx {
            pending.insert(rec.index, rec);
            while let Some(rec) = pending.remove(&records.len()) {
                if let (Some(w), None) = (writer.as_mut(), &io_error) {
                    let line = serde_json::to_string(&rec).expect("record serializes");
                    if let Err(e) = writeln!(w, "{line}") {
                        io_error = Some(e);
                    }
                }
                records.push(rec);
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    let failed: Vec<usize> = records.iter().filter(|r| r.failed()).map(|r| r.index).collect();
    let report = if failed.len() == records.len() {
        None
    } else {
        Some(replay(&records, opts.protocol)?)
    };
    Ok(IncontextRun { report, records, failed })
}
