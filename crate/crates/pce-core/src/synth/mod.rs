//! Seeded generator of synthetic stimuli, participants, fixation sequences and
//! labels with a tunable amount of planted, participant-specific signal.

mod features;
mod words;

pub use features::{generate_features, image_key, load_features, text_key, FeatureStore, FEATURES_BIN, FEATURES_INDEX};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Gumbel, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    AoiId, CaptionSpan, DataError, Dataset, Fixation, FixationSequence, Modality, PceLabel, PceSample, Region, Stimulus,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("feature store: {0}")]
    Features(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_participants: usize,
    pub n_stimuli: usize,
    pub n_samples: usize,
    pub mean_fixations: f64,
    /// Target shares of Yes, No, Unclear.
    pub class_probs: [f64; 3],
    /// 0 makes labels and gaze independent of everything; 1 removes label noise.
    pub signal_strength: f64,
    pub feature_dim_text: usize,
    pub feature_dim_image: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_participants: 109,
            n_stimuli: 153,
            n_samples: 5400,
            mean_fixations: 27.42,
            class_probs: [0.674, 0.201, 0.125],
            signal_strength: 1.0,
            feature_dim_text: 768,
            feature_dim_image: 2048,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        let sum: f64 = self.class_probs.iter().sum();
        if self.class_probs.iter().any(|p| !(*p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class_probs {:?} must be positive and sum to 1", self.class_probs));
        }
        if !(self.mean_fixations >= 2.0 && self.mean_fixations.is_finite()) {
            return bad(format!("mean_fixations {} must be at least 2", self.mean_fixations));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad(format!("signal_strength {} must lie in [0, 1]", self.signal_strength));
        }
        if self.n_participants == 0 || self.n_stimuli == 0 || self.n_samples == 0 {
            return bad("participant, stimulus and sample counts must be positive".into());
        }
        if self.n_samples > self.n_participants * self.n_stimuli {
            return bad(format!(
                "{} samples exceed the {} unique participant/stimulus pairs",
                self.n_samples,
                self.n_participants * self.n_stimuli
            ));
        }
        if self.n_participants > 26usize.pow(4) || self.n_stimuli > 9_000_000 {
            return bad("too many participants or stimuli for the id scheme".into());
        }
        if self.feature_dim_text == 0 || self.feature_dim_image == 0 {
            return bad("feature dimensions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    /// Logit offsets added to Yes, No, Unclear.
    pub label_bias: [f64; 3],
    /// Propensity for jumps between the image and the caption.
    pub crossmodal_rate: f64,
    /// Propensity for leaving all AOIs.
    pub off_rate: f64,
}

/// Weight of the stimulus term in the label logits.
const MENTION_WEIGHT: f64 = 3.0;
/// Spread of participant label offsets.
const LABEL_BIAS_SD: f64 = 1.0;
/// At full signal, chance of jumping to the counterpart AOI, per label.
const MATCH_JUMP: [f64; 3] = [0.6, 0.1, 0.3];
/// At full signal, extra chance of looking away, per label.
const OFF_BOOST: [f64; 3] = [0.0, 0.15, 0.08];
const RETURN_FROM_OFF: f64 = 0.7;
const IMAGE_W: f64 = 1024.0;
const IMAGE_H: f64 = 768.0;
/// Caption text sits in a band below the image.
const CAPTION_Y: f64 = 800.0;
const CHAR_W: f64 = 11.0;

/// Independent RNG stream for `(seed, purpose, index)`.
pub(crate) fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Stimulus-level label features: per class, how much the mention fraction favours it.
fn mention_scores(f: f64) -> [f64; 3] {
    [2.0 * f - 1.0, 1.0 - 2.0 * f, 1.0 - (2.0 * f - 1.0).abs()]
}

fn participant_ids(cfg: &GeneratorConfig) -> Vec<String> {
    let mut rng = stream(cfg.seed, "participant-ids", 0);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(cfg.n_participants);
    while out.len() < cfg.n_participants {
        let id: String = (0..4).map(|_| (b'A' + rng.gen_range(0..26u8)) as char).collect();
        if seen.insert(id.clone()) {
            out.push(id);
        }
    }
    out
}

pub fn participant_profiles(cfg: &GeneratorConfig) -> Vec<ParticipantProfile> {
    let ids = participant_ids(cfg);
    let normal = Normal::new(0.0, LABEL_BIAS_SD).expect("positive sd");
    ids.into_iter()
        .enumerate()
        .map(|(i, participant_id)| {
            let mut rng = stream(cfg.seed, "participant", i as u64);
            ParticipantProfile {
                participant_id,
                label_bias: [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)],
                crossmodal_rate: rng.gen_range(0.15..0.35),
                off_rate: rng.gen_range(0.05..0.15),
            }
        })
        .collect()
}

fn random_region(rng: &mut ChaCha8Rng, noun: &str) -> Region {
    let w = rng.gen_range(60.0..480.0f64).round();
    let h = rng.gen_range(60.0..360.0f64).round();
    Region {
        aoi: AoiId::new(Modality::Vis, noun),
        x: rng.gen_range(0.0..IMAGE_W - w).round(),
        y: rng.gen_range(0.0..IMAGE_H - h).round(),
        w,
        h,
    }
}

fn make_stimulus(cfg: &GeneratorConfig, index: usize, id: String) -> Stimulus {
    let mut rng = stream(cfg.seed, "stimulus", index as u64);
    let n_regions = rng.gen_range(3..=5);
    let nouns: Vec<&str> = words::NOUNS.choose_multiple(&mut rng, n_regions + 1).copied().collect();
    let regions: Vec<Region> = nouns[..n_regions].iter().map(|n| random_region(&mut rng, n)).collect();

    // each region is named with probability one half; at least one is always named
    let mut named: Vec<&str> = nouns[..n_regions].iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if named.is_empty() {
        named.push(nouns[rng.gen_range(0..n_regions)]);
    }
    if rng.gen_bool(0.3) {
        named.push(nouns[n_regions]);
    }
    named.shuffle(&mut rng);

    let mut caption = String::new();
    let mut spans = Vec::new();
    for (k, noun) in named.iter().enumerate() {
        if k > 0 {
            caption.push(' ');
            caption.push_str(words::CONNECTORS.choose(&mut rng).copied().unwrap_or("and"));
            caption.push(' ');
        }
        caption.push_str(if k == 0 { "a " } else { "the " });
        if rng.gen_bool(0.5) {
            caption.push_str(words::ADJECTIVES.choose(&mut rng).copied().unwrap_or("small"));
            caption.push(' ');
        }
        let start = caption.chars().count();
        let text = noun.replace('_', " ");
        caption.push_str(&text);
        spans.push(CaptionSpan {
            aoi: AoiId::new(Modality::Txt, noun),
            start,
            end: start + text.chars().count(),
        });
    }
    Stimulus {
        stimulus_id: id,
        caption,
        image_w: IMAGE_W,
        image_h: IMAGE_H,
        regions,
        caption_spans: spans,
    }
}

fn stimulus_ids(cfg: &GeneratorConfig) -> Vec<String> {
    let mut rng = stream(cfg.seed, "stimulus-ids", 0);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(cfg.n_stimuli);
    while out.len() < cfg.n_stimuli {
        let id = rng.gen_range(1_000_000u32..10_000_000).to_string();
        if seen.insert(id.clone()) {
            out.push(id);
        }
    }
    out
}

/// Position of a fixation on an AOI: inside the region box, or on the caption words.
fn coordinates(rng: &mut ChaCha8Rng, stimulus: &Stimulus, aoi: &AoiId) -> (f64, f64) {
    if let Some(r) = stimulus.region_of(aoi) {
        return (rng.gen_range(r.x..r.x + r.w).round(), rng.gen_range(r.y..r.y + r.h).round());
    }
    if let Some(s) = stimulus.caption_spans.iter().find(|s| &s.aoi == aoi) {
        let x0 = 40.0 + CHAR_W * s.start as f64;
        let x1 = 40.0 + CHAR_W * s.end as f64;
        return (rng.gen_range(x0..x1).round(), (CAPTION_Y + rng.gen_range(-8.0..8.0f64)).round());
    }
    (rng.gen_range(0.0..IMAGE_W).round(), rng.gen_range(0.0..CAPTION_Y + 40.0).round())
}

struct Walk {
    vis: Vec<AoiId>,
    txt: Vec<AoiId>,
}

impl Walk {
    fn new(stimulus: &Stimulus) -> Self {
        Walk {
            vis: stimulus.regions.iter().map(|r| r.aoi.clone()).collect(),
            txt: stimulus.caption_spans.iter().map(|s| s.aoi.clone()).collect(),
        }
    }

    fn pool(&self, m: Modality) -> &[AoiId] {
        match m {
            Modality::Vis => &self.vis,
            Modality::Txt => &self.txt,
        }
    }

    fn any(&self, rng: &mut ChaCha8Rng) -> AoiId {
        let k = rng.gen_range(0..self.vis.len() + self.txt.len());
        if k < self.vis.len() {
            self.vis[k].clone()
        } else {
            self.txt[k - self.vis.len()].clone()
        }
    }

    /// Two-state walk: on an AOI the viewer may look away, jump to the same concept
    /// in the other modality, switch modality, or move within the modality.
    fn run(&self, rng: &mut ChaCha8Rng, len: usize, profile: &ParticipantProfile, label: PceLabel, s: f64) -> Vec<AoiId> {
        let off_p = (profile.off_rate + s * OFF_BOOST[label.code()]).min(0.95);
        let match_p = s * MATCH_JUMP[label.code()];
        let mut out = Vec::with_capacity(len);
        let mut cur = self.pool(Modality::Vis).choose(rng).cloned().unwrap_or_else(|| self.any(rng));
        out.push(cur.clone());
        while out.len() < len {
            cur = match cur.modality() {
                None => {
                    if rng.gen_bool(RETURN_FROM_OFF) {
                        self.any(rng)
                    } else {
                        AoiId::off()
                    }
                }
                Some(m) => {
                    let counterpart = cur.counterpart().filter(|c| self.pool(m.other()).contains(c));
                    if rng.gen_bool(off_p) {
                        AoiId::off()
                    } else if counterpart.is_some() && rng.gen_bool(match_p) {
                        counterpart.unwrap_or_else(AoiId::off)
                    } else if rng.gen_bool(profile.crossmodal_rate) && !self.pool(m.other()).is_empty() {
                        self.pool(m.other()).choose(rng).cloned().unwrap_or_else(AoiId::off)
                    } else {
                        self.pool(m).choose(rng).cloned().unwrap_or_else(AoiId::off)
                    }
                }
            };
            out.push(cur.clone());
        }
        out
    }
}

fn sample_pairs(cfg: &GeneratorConfig) -> Vec<(usize, usize)> {
    let mut rng = stream(cfg.seed, "pairs", 0);
    let total = cfg.n_participants * cfg.n_stimuli;
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, total, cfg.n_samples).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| (k / cfg.n_stimuli, k % cfg.n_stimuli)).collect()
}

fn shares(parts: &[[f64; 3]], b: &[f64; 3]) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for p in parts {
        counts[argmax(&[p[0] + b[0], p[1] + b[1], p[2] + b[2]])] += 1;
    }
    counts.map(|c| c as f64 / parts.len() as f64)
}

/// Class offsets `b` such that argmax labels reproduce `target` shares over the given
/// per-sample logit parts. Each share is monotone in its own offset, so the offsets of
/// No and Unclear are bisected in turn with Yes pinned at zero.
fn calibrate(parts: &[[f64; 3]], target: &[f64; 3]) -> [f64; 3] {
    let mut b = [0.0, (target[1] / target[0]).ln(), (target[2] / target[0]).ln()];
    for _ in 0..30 {
        for k in 1..3 {
            let (mut lo, mut hi) = (-60.0, 60.0);
            for _ in 0..60 {
                b[k] = 0.5 * (lo + hi);
                if shares(parts, &b)[k] < target[k] {
                    lo = b[k];
                } else {
                    hi = b[k];
                }
            }
        }
        let got = shares(parts, &b);
        if (0..3).all(|k| (got[k] - target[k]).abs() < 1.0 / parts.len() as f64) {
            break;
        }
    }
    b
}

fn argmax(v: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if v[k] > v[best] {
            best = k;
        }
    }
    best
}

/// Generates a dataset. Equal configs give identical datasets regardless of thread count.
pub fn generate(cfg: &GeneratorConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let s = cfg.signal_strength;
    let profiles = participant_profiles(cfg);
    let stimuli: Vec<Stimulus> = stimulus_ids(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, id)| make_stimulus(cfg, i, id))
        .collect();
    let scores: Vec<[f64; 3]> = stimuli.iter().map(|st| mention_scores(st.mention_fraction())).collect();
    let pairs = sample_pairs(cfg);

    let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");
    let parts: Vec<[f64; 3]> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(p, st))| {
            let mut rng = stream(cfg.seed, "label-noise", i as u64);
            let prof = &profiles[p];
            let mut out = [0.0; 3];
            for k in 0..3 {
                let noise: f64 = gumbel.sample(&mut rng);
                out[k] = s * (MENTION_WEIGHT * scores[st][k] + prof.label_bias[k]) + (1.0 - s) * noise;
            }
            out
        })
        .collect();
    let b = calibrate(&parts, &cfg.class_probs);
    let labels: Vec<PceLabel> = parts
        .iter()
        .map(|p| PceLabel::ALL[argmax(&[p[0] + b[0], p[1] + b[1], p[2] + b[2]])])
        .collect();

    // geometric number of extra fixations beyond the minimum of two
    let extra = Geometric::new(1.0 / (cfg.mean_fixations - 1.0)).map_err(|e| SynthError::Config(e.to_string()))?;
    let duration = LogNormal::new(150f64.ln(), 0.45).expect("valid log-normal");
    let samples: Vec<Result<PceSample, DataError>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(p, st))| {
            let mut rng = stream(cfg.seed, "gaze", i as u64);
            let stimulus = &stimuli[st];
            let len = 2 + extra.sample(&mut rng) as usize;
            let aois = Walk::new(stimulus).run(&mut rng, len, &profiles[p], labels[i], s);
            let fixations = aois
                .into_iter()
                .enumerate()
                .map(|(k, aoi)| {
                    let (x, y) = coordinates(&mut rng, stimulus, &aoi);
                    let d: f64 = duration.sample(&mut rng);
                    Fixation {
                        index: k as u32 + 1,
                        aoi,
                        x,
                        y,
                        duration_ms: ((d * 100.0).round() / 100.0).max(0.01),
                    }
                })
                .collect();
            let seq = FixationSequence::new(&profiles[p].participant_id, &stimulus.stimulus_id, fixations)?;
            Ok(PceSample::new(seq, labels[i]))
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;

    let used: std::collections::HashSet<usize> = pairs.iter().map(|&(_, st)| st).collect();
    let stimuli: BTreeMap<String, Stimulus> = stimuli
        .into_iter()
        .enumerate()
        .filter(|(i, _)| used.contains(i))
        .map(|(_, st)| (st.stimulus_id.clone(), st))
        .collect();
    Ok(Dataset::new(samples, stimuli)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_hits_target_shares() {
        let mut rng = stream(1, "t", 0);
        let parts: Vec<[f64; 3]> = (0..3000).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let target = [0.674, 0.201, 0.125];
        let b = calibrate(&parts, &target);
        let mut c = [0usize; 3];
        for p in &parts {
            c[argmax(&[p[0] + b[0], p[1] + b[1], p[2] + b[2]])] += 1;
        }
        for k in 0..3 {
            assert!((c[k] as f64 / 3000.0 - target[k]).abs() < 0.01, "{c:?}");
        }
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream(3, "x", 0).gen();
        assert_eq!(a, stream(3, "x", 0).gen::<u64>());
        assert_ne!(a, stream(3, "x", 1).gen::<u64>());
        assert_ne!(a, stream(3, "y", 0).gen::<u64>());
        assert_ne!(a, stream(4, "x", 0).gen::<u64>());
    }

    #[test]
    fn stimuli_are_valid() {
        let cfg = GeneratorConfig::default();
        for (i, id) in stimulus_ids(&cfg).into_iter().enumerate().take(50) {
            let st = make_stimulus(&cfg, i, id);
            st.validate().unwrap();
            assert!(!st.caption_spans.is_empty());
            for span in &st.caption_spans {
                let text: String = st.caption.chars().skip(span.start).take(span.end - span.start).collect();
                assert_eq!(text.replace(' ', "_"), span.aoi.label());
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = GeneratorConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.class_probs = [0.5, 0.5, 0.1];
        assert!(cfg.validate().is_err());
        let cfg = GeneratorConfig {
            n_samples: 7,
            n_participants: 2,
            n_stimuli: 3,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(SynthError::Config(_))));
        let cfg = GeneratorConfig {
            mean_fixations: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
