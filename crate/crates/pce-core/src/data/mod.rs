//! Domain types for fixation data, stimuli and labelled samples.

mod io;
mod split;

pub use io::{load_dataset, load_metrics, save_dataset, save_metrics, FIXATIONS_FILE, LABELS_FILE, STIMULI_FILE};
pub use split::{stratified_split, Splits};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: column `{column}`: {message}")]
    Row {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{file}: {message}")]
    File { file: String, message: String },
    #[error("no samples")]
    NoSamples,
    #[error("stimulus ids referenced but not defined: {0:?}")]
    MissingStimuli(Vec<String>),
    #[error("fixations without a label: {0:?}")]
    MissingLabels(Vec<String>),
    #[error("labels without fixations: {0:?}")]
    MissingFixations(Vec<String>),
    #[error("duplicate sample for participant {participant} and stimulus {stimulus}")]
    DuplicatePair { participant: String, stimulus: String },
    #[error("invalid AOI symbol `{0}`")]
    InvalidAoi(String),
    #[error("invalid fixation sequence ({participant}, {stimulus}): {reason}")]
    InvalidSequence {
        participant: String,
        stimulus: String,
        reason: String,
    },
    #[error("invalid stimulus {id}: {reason}")]
    InvalidStimulus { id: String, reason: String },
    #[error("split: {0}")]
    Split(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vis,
    Txt,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Vis => "vis",
            Modality::Txt => "txt",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Vis => Modality::Txt,
            Modality::Txt => Modality::Vis,
        }
    }
}

/// Symbolic area of interest: `vis_<label>`, `txt_<label>`, or `off`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AoiId(String);

pub const OFF: &str = "off";

fn valid_label(label: &str) -> bool {
    !label.is_empty() && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl AoiId {
    /// Strict parse of the canonical form.
    pub fn parse(s: &str) -> Result<AoiId, DataError> {
        if s == OFF {
            return Ok(AoiId::off());
        }
        match s.split_once('_') {
            Some(("vis" | "txt", label)) if valid_label(label) => Ok(AoiId(s.to_string())),
            _ => Err(DataError::InvalidAoi(s.to_string())),
        }
    }

    /// Lenient form used by the loader: accepts `wall_vis`, `wall_text`, `Vis_Wall`,
    /// `text_wall` and the canonical order. Empty or unrecognised cells become `off`.
    pub fn normalize(raw: &str) -> AoiId {
        let s: String = raw
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let pick = |m: Modality, label: &str| valid_label(label).then(|| AoiId::new(m, label));
        let parsed = if let Some(l) = s.strip_prefix("vis_") {
            pick(Modality::Vis, l)
        } else if let Some(l) = s.strip_prefix("txt_").or_else(|| s.strip_prefix("text_")) {
            pick(Modality::Txt, l)
        } else if let Some(l) = s.strip_suffix("_vis") {
            pick(Modality::Vis, l)
        } else if let Some(l) = s.strip_suffix("_txt").or_else(|| s.strip_suffix("_text")) {
            pick(Modality::Txt, l)
        } else {
            None
        };
        parsed.unwrap_or_else(AoiId::off)
    }

    pub fn new(modality: Modality, label: &str) -> AoiId {
        AoiId(format!("{}_{}", modality.prefix(), label))
    }

    pub fn off() -> AoiId {
        AoiId(OFF.to_string())
    }

    pub fn is_off(&self) -> bool {
        self.0 == OFF
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn modality(&self) -> Option<Modality> {
        match self.0.split_once('_') {
            Some(("vis", _)) => Some(Modality::Vis),
            Some(("txt", _)) => Some(Modality::Txt),
            _ => None,
        }
    }

    /// The part after the modality prefix (`wall` for `vis_wall`); `off` for the off symbol.
    pub fn label(&self) -> &str {
        self.0.split_once('_').map_or(&self.0, |(_, l)| l)
    }

    /// The same label in the other modality.
    pub fn counterpart(&self) -> Option<AoiId> {
        self.modality().map(|m| AoiId::new(m.other(), self.label()))
    }
}

impl TryFrom<String> for AoiId {
    type Error = DataError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AoiId::parse(&s)
    }
}

impl From<AoiId> for String {
    fn from(a: AoiId) -> String {
        a.0
    }
}

impl fmt::Display for AoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    /// 1-based position in the sequence.
    pub index: u32,
    pub aoi: AoiId,
    pub x: f64,
    pub y: f64,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationSequence {
    pub participant_id: String,
    pub stimulus_id: String,
    fixations: Vec<Fixation>,
}

impl FixationSequence {
    pub fn new(participant_id: &str, stimulus_id: &str, fixations: Vec<Fixation>) -> Result<Self, DataError> {
        let err = |reason: String| DataError::InvalidSequence {
            participant: participant_id.to_string(),
            stimulus: stimulus_id.to_string(),
            reason,
        };
        if fixations.is_empty() {
            return Err(err("empty sequence".into()));
        }
        for (i, f) in fixations.iter().enumerate() {
            if f.index as usize != i + 1 {
                return Err(err(format!("fixation index {} at position {}", f.index, i + 1)));
            }
            if !(f.duration_ms > 0.0 && f.duration_ms.is_finite()) {
                return Err(err(format!("fixation {} has non-positive duration", f.index)));
            }
            if !(f.x >= 0.0 && f.y >= 0.0 && f.x.is_finite() && f.y.is_finite()) {
                return Err(err(format!("fixation {} has negative coordinates", f.index)));
            }
        }
        Ok(FixationSequence {
            participant_id: participant_id.to_string(),
            stimulus_id: stimulus_id.to_string(),
            fixations,
        })
    }

    pub fn fixations(&self) -> &[Fixation] {
        &self.fixations
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn aois(&self) -> impl Iterator<Item = &AoiId> {
        self.fixations.iter().map(|f| &f.aoi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PceLabel {
    Yes = 0,
    No = 1,
    Unclear = 2,
}

impl PceLabel {
    pub const ALL: [PceLabel; 3] = [PceLabel::Yes, PceLabel::No, PceLabel::Unclear];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<PceLabel> {
        PceLabel::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PceLabel::Yes => "yes",
            PceLabel::No => "no",
            PceLabel::Unclear => "unclear",
        }
    }

    pub fn parse(s: &str) -> Option<PceLabel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(PceLabel::Yes),
            "no" => Some(PceLabel::No),
            "unclear" => Some(PceLabel::Unclear),
            _ => None,
        }
    }
}

impl fmt::Display for PceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub aoi: AoiId,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Region {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Character range `[start, end)` of a caption covered by a text AOI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSpan {
    pub aoi: AoiId,
    pub start: usize,
    pub end: usize,
}

/// Whitespace-delimited caption word with character offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub stimulus_id: String,
    pub caption: String,
    pub image_w: f64,
    pub image_h: f64,
    pub regions: Vec<Region>,
    pub caption_spans: Vec<CaptionSpan>,
}

impl Stimulus {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |reason: String| DataError::InvalidStimulus {
            id: self.stimulus_id.clone(),
            reason,
        };
        for r in &self.regions {
            if r.aoi.modality() != Some(Modality::Vis) {
                return Err(err(format!("region AOI {} is not visual", r.aoi)));
            }
            let inside = r.x >= 0.0 && r.y >= 0.0 && r.w > 0.0 && r.h > 0.0 && r.x + r.w <= self.image_w && r.y + r.h <= self.image_h;
            if !inside {
                return Err(err(format!("region {} lies outside the image", r.aoi)));
            }
        }
        let len = self.caption.chars().count();
        for s in &self.caption_spans {
            if s.aoi.modality() != Some(Modality::Txt) {
                return Err(err(format!("caption span AOI {} is not textual", s.aoi)));
            }
            if s.start >= s.end || s.end > len {
                return Err(err(format!("caption span {} [{}, {}) outside caption of length {len}", s.aoi, s.start, s.end)));
            }
        }
        Ok(())
    }

    pub fn caption_tokens(&self) -> Vec<CaptionToken> {
        let mut out = Vec::new();
        let mut current: Option<(usize, String)> = None;
        for (i, ch) in self.caption.chars().enumerate() {
            if ch.is_whitespace() {
                if let Some((start, text)) = current.take() {
                    out.push(CaptionToken { end: start + text.chars().count(), text, start });
                }
            } else {
                current.get_or_insert_with(|| (i, String::new())).1.push(ch);
            }
        }
        if let Some((start, text)) = current {
            out.push(CaptionToken { end: start + text.chars().count(), text, start });
        }
        out
    }

    /// Regions whose area is at least half of the largest region's.
    pub fn central_regions(&self) -> Vec<usize> {
        let max = self.regions.iter().map(Region::area).fold(0.0, f64::max);
        (0..self.regions.len()).filter(|&i| self.regions[i].area() >= 0.5 * max).collect()
    }

    /// Whether a caption span names the same label as the region.
    pub fn is_mentioned(&self, region: usize) -> bool {
        let label = self.regions[region].aoi.label();
        self.caption_spans.iter().any(|s| s.aoi.label() == label)
    }

    /// Fraction of central regions that have a matching caption span.
    pub fn mention_fraction(&self) -> f64 {
        let central = self.central_regions();
        if central.is_empty() {
            return 0.0;
        }
        central.iter().filter(|&&i| self.is_mentioned(i)).count() as f64 / central.len() as f64
    }

    pub fn region_of(&self, aoi: &AoiId) -> Option<&Region> {
        self.regions.iter().find(|r| &r.aoi == aoi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceSample {
    pub participant_id: String,
    pub stimulus_id: String,
    pub sequence: FixationSequence,
    pub label: PceLabel,
}

impl PceSample {
    pub fn new(sequence: FixationSequence, label: PceLabel) -> Self {
        PceSample {
            participant_id: sequence.participant_id.clone(),
            stimulus_id: sequence.stimulus_id.clone(),
            sequence,
            label,
        }
    }
}

/// Bijection between symbols and dense indices, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&i) = self.index.get(symbol) {
            return i;
        }
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), self.symbols.len() - 1);
        self.symbols.len() - 1
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Labelled samples, the stimuli they reference, and their vocabularies.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<PceSample>,
    stimuli: BTreeMap<String, Stimulus>,
    aoi_vocab: Vocab,
    participant_vocab: Vocab,
}

impl Dataset {
    /// Builds vocabularies in first-occurrence order and checks pair uniqueness
    /// and stimulus references.
    pub fn new(samples: Vec<PceSample>, stimuli: BTreeMap<String, Stimulus>) -> Result<Self, DataError> {
        if samples.is_empty() {
            return Err(DataError::NoSamples);
        }
        let mut seen = HashSet::new();
        let mut missing = Vec::new();
        let mut aoi_vocab = Vocab::new();
        let mut participant_vocab = Vocab::new();
        for s in &samples {
            if s.sequence.participant_id != s.participant_id || s.sequence.stimulus_id != s.stimulus_id {
                return Err(DataError::InvalidSequence {
                    participant: s.participant_id.clone(),
                    stimulus: s.stimulus_id.clone(),
                    reason: "sequence ids differ from sample ids".into(),
                });
            }
            if !seen.insert((s.participant_id.as_str(), s.stimulus_id.as_str())) {
                return Err(DataError::DuplicatePair {
                    participant: s.participant_id.clone(),
                    stimulus: s.stimulus_id.clone(),
                });
            }
            if !stimuli.contains_key(&s.stimulus_id) && !missing.contains(&s.stimulus_id) {
                missing.push(s.stimulus_id.clone());
            }
            participant_vocab.insert(&s.participant_id);
            for a in s.sequence.aois() {
                aoi_vocab.insert(a.as_str());
            }
        }
        if !missing.is_empty() {
            return Err(DataError::MissingStimuli(missing));
        }
        for st in stimuli.values() {
            st.validate()?;
        }
        Ok(Dataset {
            samples,
            stimuli,
            aoi_vocab,
            participant_vocab,
        })
    }

    pub fn samples(&self) -> &[PceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stimuli(&self) -> &BTreeMap<String, Stimulus> {
        &self.stimuli
    }

    pub fn stimulus(&self, id: &str) -> Option<&Stimulus> {
        self.stimuli.get(id)
    }

    pub fn aoi_vocab(&self) -> &Vocab {
        &self.aoi_vocab
    }

    pub fn participant_vocab(&self) -> &Vocab {
        &self.participant_vocab
    }

    pub fn labels(&self) -> Vec<PceLabel> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.samples {
            c[s.label.code()] += 1;
        }
        c
    }

    pub fn find(&self, participant: &str, stimulus: &str) -> Option<&PceSample> {
        self.samples
            .iter()
            .find(|s| s.participant_id == participant && s.stimulus_id == stimulus)
    }

    /// Subset in the given order, sharing this dataset's vocabularies and stimuli.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            stimuli: self.stimuli.clone(),
            aoi_vocab: self.aoi_vocab.clone(),
            participant_vocab: self.participant_vocab.clone(),
        }
    }
}
