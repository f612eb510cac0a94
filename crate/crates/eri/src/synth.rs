//! Synthetic benchmark with planted sparse events.
//!
//! Each sample is background noise with `k` event frames; an event adds
//! `amp · signature` to the features at its frame in both streams. Labels
//! saturate with the strongest event: y_e = 1 − exp(−max_amp · w_e / τ),
//! so intensity is controlled by a few frames rather than the sequence
//! average — exactly the situation where pooling strategy matters.

use crate::data::{Dataset, FeatureSequence, Modality, Sample, Split};
use crate::error::{EriError, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-emotion saturation weights; distinct so outputs are not redundant.
const EMOTION_WEIGHTS: [f64; 7] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.45];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub k_events: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    pub noise_sigma: f64,
    pub tau: f64,
    /// Event signal gain per stream; lets one stream carry a weaker copy.
    pub visual_gain: f64,
    pub audio_gain: f64,
    /// Feature-ablation mode (requires the fused 546-column visual layout):
    /// the three visual column blocks and the audio stream each carry an
    /// independent amplitude component with equal signal energy, and the
    /// label depends on all four, so every block is informative.
    pub block_structured: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2500,
            t_min: 200,
            t_max: 300,
            d_v: 8,
            d_a: 8,
            k_events: 3,
            amp_min: 0.5,
            amp_max: 4.0,
            noise_sigma: 0.3,
            tau: 2.0,
            visual_gain: 1.0,
            audio_gain: 1.0,
            block_structured: false,
            train_frac: 0.8,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0
            || self.t_min == 0
            || self.t_max < self.t_min
            || self.d_v == 0
            || self.d_a == 0
            || self.k_events == 0
        {
            return Err(EriError::Config(format!("degenerate synth config: {self:?}")));
        }
        if self.t_min < self.k_events {
            return Err(EriError::Config(format!(
                "cannot place {} events in {} frames",
                self.k_events, self.t_min
            )));
        }
        if !(self.amp_min > 0.0 && self.amp_max >= self.amp_min && self.tau > 0.0) {
            return Err(EriError::Config("amplitudes and tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_frac)
            || !(0.0..=1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac > 1.0
        {
            return Err(EriError::Config("split fractions must sum to at most 1".into()));
        }
        Ok(())
    }
}

/// Ground-truth event placement for one generated sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub split: Split,
    pub frames: Vec<usize>,
    pub amplitudes: Vec<f64>,
    pub labels: Vec<f64>,
}

pub fn event_label(max_amp: f64, tau: f64) -> Vec<f64> {
    EMOTION_WEIGHTS
        .iter()
        .map(|w| 1.0 - (-max_amp * w / tau).exp())
        .collect()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn split_for(i: usize, n: usize, cfg: &SynthConfig) -> Split {
    let n_train = (n as f64 * cfg.train_frac).round() as usize;
    let n_val = (n as f64 * cfg.val_frac).round() as usize;
    if i < n_train {
        Split::Train
    } else if i < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Deterministic generation: the dataset is a pure function of the config.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, Vec<EventRecord>)> {
    cfg.validate()?;
    let mut sig_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe5e7_15da_9b1c_22d0);
    // unit-normalized event signatures, fixed across the dataset
    let signature = |d: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| gauss(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / norm * (d as f64).sqrt()).collect()
    };
    let mut sig_v = signature(cfg.d_v, &mut sig_rng);
    let sig_a = signature(cfg.d_a, &mut sig_rng);
    let visual_blocks = [
        crate::data::RESNET_COLS,
        crate::data::AU_OCC_COLS,
        crate::data::AU_INT_COLS,
    ];
    if cfg.block_structured {
        if cfg.d_v != crate::data::FUSED_VISUAL_DIM {
            return Err(EriError::Config(format!(
                "block_structured generation needs d_v={}, got {}",
                crate::data::FUSED_VISUAL_DIM,
                cfg.d_v
            )));
        }
        // Equal signal energy per visual block, concentrated on the first
        // few columns of each block: a pattern diffused over all 512 ResNet
        // columns is not learnable from a few hundred samples, which would
        // mask the block-dropping effect this mode exists to measure.
        const ACTIVE_COLS: usize = 8;
        let total: f64 = sig_v.iter().map(|v| v * v).sum();
        let target = (total / visual_blocks.len() as f64).sqrt();
        for range in visual_blocks.clone() {
            let keep = range.start..range.start + ACTIVE_COLS.min(range.len());
            let norm =
                sig_v[keep.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in range {
                sig_v[c] = if keep.contains(&c) {
                    sig_v[c] * target / norm
                } else {
                    0.0
                };
            }
        }
    }

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut events = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x51a2,
        );
        let t = rng.gen_range(cfg.t_min..=cfg.t_max);
        // distinct event frames
        let mut frames: Vec<usize> = Vec::with_capacity(cfg.k_events);
        while frames.len() < cfg.k_events {
            let f = rng.gen_range(0..t);
            if !frames.contains(&f) {
                frames.push(f);
            }
        }
        frames.sort_unstable();

        // In block-structured mode each of the four feature blocks (three
        // visual + audio) carries an independent amplitude draw and the
        // label depends on the mean of the per-block maxima, so dropping
        // any block strictly lowers the attainable score. Otherwise a
        // single draw feeds every feature and the label tracks its max.
        let n_channels = if cfg.block_structured { 4 } else { 1 };
        let channel_amps: Vec<Vec<f64>> = (0..n_channels)
            .map(|_| {
                (0..cfg.k_events)
                    .map(|_| rng.gen_range(cfg.amp_min..=cfg.amp_max))
                    .collect()
            })
            .collect();
        let channel_max =
            |ch: &[f64]| ch.iter().cloned().fold(f64::MIN, f64::max);
        let drive = channel_amps.iter().map(|ch| channel_max(ch)).sum::<f64>()
            / n_channels as f64;
        let labels = event_label(drive, cfg.tau);
        // representative per-event amplitude for the ground-truth log
        let amplitudes: Vec<f64> = (0..cfg.k_events)
            .map(|e| {
                channel_amps.iter().map(|ch| ch[e]).sum::<f64>() / n_channels as f64
            })
            .collect();

        let noise = |d: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..t * d).map(|_| cfg.noise_sigma * gauss(rng)).collect()
        };
        let plant = |data: &mut [f64], d: usize, cols: std::ops::Range<usize>,
                     sig: &[f64], amps: &[f64], gain: f64| {
            for (f, a) in frames.iter().zip(amps) {
                for c in cols.clone() {
                    data[f * d + c] += gain * a * sig[c];
                }
            }
        };
        let mut vdata = noise(cfg.d_v, &mut rng);
        let mut adata = noise(cfg.d_a, &mut rng);
        if cfg.block_structured {
            for (b, range) in visual_blocks.iter().enumerate() {
                plant(&mut vdata, cfg.d_v, range.clone(), &sig_v, &channel_amps[b], cfg.visual_gain);
            }
            plant(&mut adata, cfg.d_a, 0..cfg.d_a, &sig_a, &channel_amps[3], cfg.audio_gain);
        } else {
            plant(&mut vdata, cfg.d_v, 0..cfg.d_v, &sig_v, &channel_amps[0], cfg.visual_gain);
            plant(&mut adata, cfg.d_a, 0..cfg.d_a, &sig_a, &channel_amps[0], cfg.audio_gain);
        }
        let visual = FeatureSequence {
            modality: Modality::Visual,
            data: Tensor::new(t, cfg.d_v, vdata).unwrap(),
            valid: vec![true; t],
        };
        let audio = FeatureSequence {
            modality: Modality::Audio,
            data: Tensor::new(t, cfg.d_a, adata).unwrap(),
            valid: vec![true; t],
        };

        let id = format!("synth{i:05}");
        let split = split_for(i, cfg.n_samples, cfg);
        events.push(EventRecord {
            id: id.clone(),
            split,
            frames: frames.clone(),
            amplitudes,
            labels: labels.clone(),
        });
        samples.push(Sample {
            id,
            visual,
            audio,
            label: labels,
            split,
        });
    }
    Ok((Dataset { samples }, events))
}

pub fn write_events_json(path: &Path, events: &[EventRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(events)
        .map_err(|e| EriError::Data(format!("serializing events: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_events_json(path: &Path) -> Result<Vec<EventRecord>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EriError::Data(format!("parsing {}: {e}", path.display())))
}

/// Fraction of the top-k attention frames that land within ±1 frame of a
/// planted event.
pub fn attention_event_overlap(attention: &[f64], event_frames: &[usize], k: usize) -> Result<f64> {
    if k == 0 || attention.len() < k {
        return Err(EriError::Argument(format!(
            "top-{k} of {} attention weights",
            attention.len()
        )));
    }
    let mut idx: Vec<usize> = (0..attention.len()).collect();
    idx.sort_by(|&a, &b| attention[b].partial_cmp(&attention[a]).unwrap().then(a.cmp(&b)));
    let hits = idx[..k]
        .iter()
        .filter(|&&f| {
            event_frames
                .iter()
                .any(|&e| f + 1 >= e && f <= e + 1)
        })
        .count();
    Ok(hits as f64 / k as f64)
}

/// Expected overlap for uniformly random frame picks: each of the k events
/// covers up to 3 frames of a T-frame sequence.
pub fn chance_overlap(k_events: usize, t: usize) -> f64 {
    ((3 * k_events) as f64 / t as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            n_samples: 20,
            t_min: 12,
            t_max: 20,
            d_v: 4,
            d_a: 3,
            k_events: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = tiny_cfg();
        let (d1, e1) = generate(&cfg).unwrap();
        let (d2, e2) = generate(&cfg).unwrap();
        assert_eq!(d1.samples.len(), d2.samples.len());
        for (a, b) in d1.samples.iter().zip(&d2.samples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.visual.data, b.visual.data);
            assert_eq!(a.audio.data, b.audio.data);
            assert_eq!(a.label, b.label);
        }
        assert_eq!(e1.len(), e2.len());
        for (a, b) in e1.iter().zip(&e2) {
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.amplitudes, b.amplitudes);
        }
        let (d3, _) = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(d1.samples[0].visual.data, d3.samples[0].visual.data);
    }

    #[test]
    fn events_are_in_range_and_labels_match_formula() {
        let cfg = tiny_cfg();
        let (ds, events) = generate(&cfg).unwrap();
        for (s, e) in ds.samples.iter().zip(&events) {
            let t = s.visual.data.rows();
            assert!(t >= cfg.t_min && t <= cfg.t_max);
            assert_eq!(s.audio.data.rows(), t);
            assert_eq!(e.frames.len(), cfg.k_events);
            assert!(e.frames.iter().all(|&f| f < t));
            let max_amp = e.amplitudes.iter().cloned().fold(f64::MIN, f64::max);
            assert!(max_amp >= cfg.amp_min && max_amp <= cfg.amp_max);
            let expect = event_label(max_amp, cfg.tau);
            assert_eq!(s.label, expect);
            assert!(s.label.iter().all(|&y| y > 0.0 && y < 1.0));
        }
    }

    #[test]
    fn labels_increase_with_amplitude() {
        let lo = event_label(0.5, 2.0);
        let hi = event_label(3.0, 2.0);
        for (a, b) in lo.iter().zip(&hi) {
            assert!(b > a);
        }
        // weights are distinct, so emotions differ
        let l = event_label(1.0, 2.0);
        for w in l.windows(2) {
            assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn split_fractions_are_respected() {
        let cfg = SynthConfig {
            n_samples: 100,
            train_frac: 0.7,
            val_frac: 0.2,
            ..tiny_cfg()
        };
        let (ds, _) = generate(&cfg).unwrap();
        let count = |sp: Split| ds.split(sp).count();
        assert_eq!(count(Split::Train), 70);
        assert_eq!(count(Split::Val), 20);
        assert_eq!(count(Split::Test), 10);
    }

    #[test]
    fn event_frames_carry_the_signal() {
        // the event frame should have much larger norm than background
        let cfg = SynthConfig {
            noise_sigma: 0.1,
            amp_min: 3.0,
            amp_max: 3.0,
            k_events: 1,
            ..tiny_cfg()
        };
        let (ds, events) = generate(&cfg).unwrap();
        for (s, e) in ds.samples.iter().zip(&events) {
            let norm = |r: usize| -> f64 {
                s.visual.data.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            let ev = e.frames[0];
            for r in 0..s.visual.data.rows() {
                if r != ev {
                    assert!(norm(ev) > norm(r), "event frame {ev} not dominant over {r}");
                }
            }
        }
    }

    #[test]
    fn block_balance_splits_signal_energy_evenly() {
        let cfg = SynthConfig {
            n_samples: 2,
            d_v: crate::data::FUSED_VISUAL_DIM,
            d_a: 4,
            t_min: 6,
            t_max: 8,
            k_events: 1,
            noise_sigma: 0.0,
            amp_min: 1.0,
            amp_max: 1.0,
            block_structured: true,
            ..SynthConfig::default()
        };
        let (ds, events) = generate(&cfg).unwrap();
        let s = &ds.samples[0];
        let row = s.visual.data.row(events[0].frames[0]);
        let energy = |r: std::ops::Range<usize>| row[r].iter().map(|v| v * v).sum::<f64>();
        let (a, b, c) = (
            energy(crate::data::RESNET_COLS),
            energy(crate::data::AU_OCC_COLS),
            energy(crate::data::AU_INT_COLS),
        );
        assert!((a - b).abs() < 1e-9 && (b - c).abs() < 1e-9, "{a} {b} {c}");

        // rejected off the fused layout
        let bad = SynthConfig {
            d_v: 8,
            block_structured: true,
            ..cfg
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn overlap_hand_cases() {
        // attention peaked exactly on events
        let mut attn = vec![0.0; 10];
        attn[2] = 0.5;
        attn[7] = 0.4;
        assert_eq!(attention_event_overlap(&attn, &[2, 7], 2).unwrap(), 1.0);
        // ±1 tolerance
        assert_eq!(attention_event_overlap(&attn, &[3, 6], 2).unwrap(), 1.0);
        // one hit one miss
        assert_eq!(attention_event_overlap(&attn, &[2], 2).unwrap(), 0.5);
        // no events near the peaks
        assert_eq!(attention_event_overlap(&attn, &[5], 2).unwrap(), 0.0);
        assert!(attention_event_overlap(&attn, &[1], 0).is_err());
    }

    #[test]
    fn chance_rate_formula() {
        assert!((chance_overlap(3, 250) - 9.0 / 250.0).abs() < 1e-15);
        assert_eq!(chance_overlap(10, 12), 1.0);
    }

    #[test]
    fn events_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.json");
        let (_, events) = generate(&tiny_cfg()).unwrap();
        write_events_json(&path, &events).unwrap();
        let back = load_events_json(&path).unwrap();
        assert_eq!(back.len(), events.len());
        assert_eq!(back[3].frames, events[3].frames);
    }
}
