//! In-context evaluation of chat-completion models: prompt construction for the
//! zero-shot, fixation and one-shot setups, verdict parsing and a batch runner.

mod client;
mod run;

pub use client::{CompletionClient, HttpClient, HttpConfig, MockClient, TOKEN_ENV};
pub use run::{read_transcript, replay, run_incontext_eval, IncontextOptions, IncontextRun, TranscriptRecord};

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{PceLabel, PceSample, Stimulus};

pub const QUESTION: &str = "Does the caption mention the central entities in the image?";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("the {setup} setup {problem}")]
    Demo { setup: Setup, problem: &'static str },
    #[error("demonstration belongs to participant {demo}, not {sample}")]
    DemoParticipant { sample: String, demo: String },
    #[error("stimulus {got} does not match sample stimulus {want}")]
    StimulusMismatch { want: String, got: String },
    #[error("request failed after {attempts} attempt(s): {reason}")]
    Transport { attempts: usize, reason: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("client configuration: {0}")]
    Config(String),
    #[error("transcript {path}: {reason}")]
    Transcript { path: String, reason: String },
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    #[serde(rename = "zero")]
    ZeroShot,
    #[serde(rename = "fix")]
    Fixations,
    #[serde(rename = "one")]
    OneShot,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::ZeroShot, Setup::Fixations, Setup::OneShot];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::ZeroShot => "zero",
            Setup::Fixations => "fix",
            Setup::OneShot => "one",
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "zero-shot" => Ok(Setup::ZeroShot),
            "fix" | "fixations" => Ok(Setup::Fixations),
            "one" | "one-shot" => Ok(Setup::OneShot),
            _ => Err(format!("unknown setup {s:?}, expected zero, fix or one")),
        }
    }
}

/// Image slot of a prompt; the harness passes stimuli by reference only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub stimulus_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub setup: Setup,
    pub system_text: String,
    pub user_text: String,
    /// Demonstration image first (one-shot only), then the queried stimulus.
    pub attachments: Vec<ImageRef>,
}

impl PromptBundle {
    /// Plain-text rendering used for snapshots and debugging.
    pub fn render(&self) -> String {
        let mut out = format!("[setup]\n{}\n\n[system]\n{}\n[user]\n{}\n[attachments]\n", self.setup, self.system_text, self.user_text);
        for (i, a) in self.attachments.iter().enumerate() {
            let _ = writeln!(out, "image {}: stimulus {}", i + 1, a.stimulus_id);
        }
        out
    }

    /// Hex SHA-256 of the rendered prompt.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

/// A demonstration of the same participant's behavior on another stimulus.
#[derive(Debug, Clone, Copy)]
pub struct Demo<'a> {
    pub sample: &'a PceSample,
    pub stimulus: &'a Stimulus,
}

const ANSWER_FORMAT: &str = "Answer with exactly one word: yes, no or unclear.";

fn fixation_lines(out: &mut String, sample: &PceSample) {
    out.push_str("Fixations in viewing order (AOI, duration):\n");
    for f in sample.sequence.fixations() {
        let _ = writeln!(out, "{}. {} ({:.2} ms)", f.index, f.aoi, f.duration_ms);
    }
}

fn stimulus_block(out: &mut String, stimulus: &Stimulus, image_slot: usize) {
    let _ = writeln!(out, "Image: attachment {image_slot}");
    let _ = writeln!(out, "Caption: \"{}\"", stimulus.caption);
}

fn check_stimulus(sample: &PceSample, stimulus: &Stimulus) -> Result<(), LlmError> {
    if sample.stimulus_id != stimulus.stimulus_id {
        return Err(LlmError::StimulusMismatch {
            want: sample.stimulus_id.clone(),
            got: stimulus.stimulus_id.clone(),
        });
    }
    Ok(())
}

/// Builds the prompt for one sample. `demo` is required for [`Setup::OneShot`]
/// and rejected otherwise; it must come from the same participant.
pub fn build_prompt(sample: &PceSample, stimulus: &Stimulus, setup: Setup, demo: Option<Demo<'_>>) -> Result<PromptBundle, LlmError> {
    check_stimulus(sample, stimulus)?;
    match (setup, demo) {
        (Setup::OneShot, None) => return Err(LlmError::Demo { setup, problem: "needs a demonstration" }),
        (Setup::ZeroShot | Setup::Fixations, Some(_)) => {
            return Err(LlmError::Demo { setup, problem: "takes no demonstration" })
        }
        (_, Some(d)) => {
            check_stimulus(d.sample, d.stimulus)?;
            if d.sample.participant_id != sample.participant_id {
                return Err(LlmError::DemoParticipant {
                    sample: sample.participant_id.clone(),
                    demo: d.sample.participant_id.clone(),
                });
            }
        }
        _ => {}
    }

    let mut system = String::new();
    system.push_str("A study participant viewed an image together with a caption and was then asked:\n");
    let _ = writeln!(system, "\"{QUESTION}\"");
    system.push_str("The participant answered yes, no or unclear. Predict the answer this participant gave.\n");
    if setup != Setup::ZeroShot {
        system.push_str(
            "You also receive the participant's eye fixations. AOIs starting with vis_ are image regions, \
             AOIs starting with txt_ are caption words, and off is anything else.\n",
        );
    }
    let mut attachments = Vec::new();
    if let Some(d) = demo {
        system.push_str("\nExample of this participant's behavior on another stimulus:\n");
        stimulus_block(&mut system, d.stimulus, 1);
        fixation_lines(&mut system, d.sample);
        let _ = writeln!(system, "Answer: {}", d.sample.label);
        attachments.push(ImageRef {
            stimulus_id: d.stimulus.stimulus_id.clone(),
        });
    }

    let mut user = String::new();
    stimulus_block(&mut user, stimulus, attachments.len() + 1);
    if setup != Setup::ZeroShot {
        fixation_lines(&mut user, sample);
    }
    let _ = writeln!(user, "Question: {QUESTION}");
    let _ = writeln!(user, "{ANSWER_FORMAT}");
    attachments.push(ImageRef {
        stimulus_id: stimulus.stimulus_id.clone(),
    });

    Ok(PromptBundle {
        setup,
        system_text: system,
        user_text: user,
        attachments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Unclear,
    Unparseable,
}

impl Verdict {
    pub fn label(self) -> Option<PceLabel> {
        match self {
            Verdict::Yes => Some(PceLabel::Yes),
            Verdict::No => Some(PceLabel::No),
            Verdict::Unclear => Some(PceLabel::Unclear),
            Verdict::Unparseable => None,
        }
    }
}

impl From<PceLabel> for Verdict {
    fn from(label: PceLabel) -> Self {
        match label {
            PceLabel::Yes => Verdict::Yes,
            PceLabel::No => Verdict::No,
            PceLabel::Unclear => Verdict::Unclear,
        }
    }
}

/// First whole word of `raw` that reads yes, no or unclear, ignoring case.
pub fn parse_verdict(raw: &str) -> Verdict {
    raw.split(|c: char| !c.is_alphanumeric())
        .find_map(|w| PceLabel::parse(w).filter(|_| !w.is_empty()))
        .map_or(Verdict::Unparseable, Verdict::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rules() {
        let table = [
            ("Yes, the caption mentions them.", Verdict::Yes),
            ("UNCLEAR", Verdict::Unclear),
            ("the wall is visible", Verdict::Unparseable),
            ("", Verdict::Unparseable),
            ("No.", Verdict::No),
            ("I know: yes", Verdict::Yes),
            ("not sure, unclear; no", Verdict::Unclear),
            ("yesterday nobody knew", Verdict::Unparseable),
            ("**No**", Verdict::No),
            ("answer:\nyes", Verdict::Yes),
        ];
        for (raw, want) in table {
            assert_eq!(parse_verdict(raw), want, "{raw:?}");
        }
    }

    #[test]
    fn setup_names_round_trip() {
        for s in Setup::ALL {
            assert_eq!(s.as_str().parse::<Setup>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("two".parse::<Setup>().is_err());
    }
}
