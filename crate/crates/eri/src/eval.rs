//! Pearson correlation scoring, dataset evaluation with invalid-sample
//! substitution, and the feature-ablation harness.

use crate::data::{
    apply_training_filter, combo_dims, filter_valid_frames, select_feature_combo, Dataset,
    FeatureCombo, PreparedSample, Split,
};
use crate::error::{EriError, Result};
use crate::model::{EriModel, ModelConfig, EMOTIONS};
use crate::optim::TrainConfig;
use crate::train::train_model;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pearson correlation coefficient. Returns 0 when either input has zero
/// variance (a constant sequence carries no correlation signal).
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EriError::Argument(format!(
            "pcc needs two equal-length series of at least 2 points, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Per-output PCC across samples plus their unweighted mean.
/// Rows are samples; every row must have the same arity.
pub fn mean_pcc(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if preds.len() != labels.len() || preds.len() < 2 {
        return Err(EriError::Argument(format!(
            "mean_pcc needs at least 2 matched rows, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let k = preds[0].len();
    for row in preds.iter().chain(labels) {
        if row.len() != k {
            return Err(EriError::Argument("ragged rows in mean_pcc".into()));
        }
    }
    let mut per = Vec::with_capacity(k);
    for e in 0..k {
        let p: Vec<f64> = preds.iter().map(|r| r[e]).collect();
        let y: Vec<f64> = labels.iter().map(|r| r[e]).collect();
        per.push(pcc(&p, &y)?);
    }
    let mean = per.iter().sum::<f64>() / k as f64;
    Ok((per, mean))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_emotion: Vec<EmotionScore>,
    pub mean_pcc: f64,
    pub l2_loss: f64,
    pub n_samples: usize,
    /// Samples with no valid visual frames, scored with the mean prediction
    /// of the valid samples.
    pub n_substituted: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmotionScore {
    pub emotion: String,
    pub pcc: f64,
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for s in &self.per_emotion {
            out.push_str(&format!("{:<22} {:+.4}\n", s.emotion, s.pcc));
        }
        out.push_str(&format!("{:<22} {:+.4}\n", "mean", self.mean_pcc));
        out.push_str(&format!(
            "samples: {} ({} substituted), l2: {:.6}\n",
            self.n_samples, self.n_substituted, self.l2_loss
        ));
        out
    }
}

fn all_true(n: usize) -> Vec<bool> {
    vec![true; n]
}

/// Inference for one prepared sample; visual frames marked invalid are
/// dropped first. Returns `None` when the model needs visual input but the
/// sample has no valid visual frame.
pub fn predict_sample(model: &EriModel, sample: &PreparedSample) -> Result<Option<Vec<f64>>> {
    let visual = sample.visual.as_ref().map(|s| filter_valid_frames(s).0);
    if model.config.use_visual {
        match &visual {
            Some(v) if v.is_empty() => return Ok(None),
            Some(_) => {}
            None => {
                return Err(EriError::Argument(format!(
                    "sample {} lacks the visual stream the model expects",
                    sample.id
                )))
            }
        }
    }
    let vmask = visual.as_ref().map(|s| all_true(s.len()));
    let amask = sample.audio.as_ref().map(|s| all_true(s.len()));
    let video = if model.config.use_visual {
        visual.as_ref().map(|s| (&s.data, vmask.as_deref().unwrap()))
    } else {
        None
    };
    let audio = if model.config.use_audio {
        match &sample.audio {
            Some(s) => Some((&s.data, amask.as_deref().unwrap())),
            None => {
                return Err(EriError::Argument(format!(
                    "sample {} lacks the audio stream the model expects",
                    sample.id
                )))
            }
        }
    } else {
        None
    };
    let (pred, _, _) = model.predict(video, audio)?;
    Ok(Some(pred.intensities))
}

/// Score a model over a set of samples. Samples whose visual stream has no
/// valid frames cannot be run; they are kept in the score with the mean
/// prediction of the samples that could be run.
pub fn evaluate(model: &EriModel, samples: &[PreparedSample]) -> Result<EvalReport> {
    if samples.len() < 2 {
        return Err(EriError::Argument(format!(
            "evaluation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let k = model.config.output_dim;
    let mut preds: Vec<Option<Vec<f64>>> = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(predict_sample(model, s)?);
    }
    let valid: Vec<&Vec<f64>> = preds.iter().flatten().collect();
    if valid.is_empty() {
        return Err(EriError::Eval("no sample produced a prediction".into()));
    }
    let mut fallback = vec![0.0; k];
    for p in &valid {
        for (f, v) in fallback.iter_mut().zip(p.iter()) {
            *f += v;
        }
    }
    for f in &mut fallback {
        *f /= valid.len() as f64;
    }
    let n_substituted = preds.iter().filter(|p| p.is_none()).count();
    let rows: Vec<Vec<f64>> = preds
        .into_iter()
        .map(|p| p.unwrap_or_else(|| fallback.clone()))
        .collect();
    let labels: Vec<Vec<f64>> = samples.iter().map(|s| s.label.clone()).collect();
    let (per, mean) = mean_pcc(&rows, &labels)?;
    let l2 = crate::train::l2_loss(&rows, &labels)?;
    let names: Vec<String> = if k == EMOTIONS.len() {
        EMOTIONS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|i| format!("output{i}")).collect()
    };
    Ok(EvalReport {
        per_emotion: names
            .into_iter()
            .zip(per)
            .map(|(emotion, pcc)| EmotionScore { emotion, pcc })
            .collect(),
        mean_pcc: mean,
        l2_loss: l2,
        n_samples: samples.len(),
        n_substituted,
    })
}

pub fn write_attention_csv(path: &Path, weights: &[f64]) -> Result<()> {
    let mut out = String::from("frame,weight\n");
    for (i, w) in weights.iter().enumerate() {
        out.push_str(&format!("{i},{w}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── ablation harness ────────────────────────────────────────────────

/// Rows of the single-modality / pairwise feature comparison.
pub fn single_and_pairwise_combos() -> Vec<(&'static str, FeatureCombo)> {
    let c = |resnet, au, audio| FeatureCombo {
        resnet,
        au_occurrence: au,
        au_intensity: au,
        audio,
    };
    vec![
        ("Only audio", c(false, false, true)),
        ("Only AU", c(false, true, false)),
        ("Only ResNet18", c(true, false, false)),
        ("ResNet18 + AU", c(true, true, false)),
        ("ResNet18 + audio", c(true, false, true)),
        ("ResNet18 + AU + audio", c(true, true, true)),
    ]
}

/// Rows of the AU-variant comparison; each keeps ResNet and audio and varies
/// which AU columns join the visual stream.
pub fn au_variant_combos() -> Vec<(&'static str, FeatureCombo)> {
    let c = |occ, int| FeatureCombo {
        resnet: true,
        au_occurrence: occ,
        au_intensity: int,
        audio: true,
    };
    vec![
        ("AU occurrence", c(true, false)),
        ("AU intensity", c(false, true)),
        ("AU occurrence + intensity", c(true, true)),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub combo: String,
    pub seed_means: Vec<f64>,
    pub mean_pcc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub single_and_pairwise: Vec<AblationRow>,
    pub au_variants: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let table = |rows: &[AblationRow], title: &str, out: &mut String| {
            out.push_str(title);
            out.push('\n');
            for r in rows {
                out.push_str(&format!("  {:<28} {:+.4}  (seeds:", r.label, r.mean_pcc));
                for m in &r.seed_means {
                    out.push_str(&format!(" {m:+.4}"));
                }
                out.push_str(")\n");
            }
        };
        table(
            &self.single_and_pairwise,
            "feature streams, single and combined:",
            &mut out,
        );
        table(&self.au_variants, "AU feature variants:", &mut out);
        out
    }
}

fn combo_name(c: &FeatureCombo) -> String {
    let mut parts = Vec::new();
    if c.resnet {
        parts.push("resnet");
    }
    if c.au_occurrence {
        parts.push("au_occurrence");
    }
    if c.au_intensity {
        parts.push("au_intensity");
    }
    if c.audio {
        parts.push("audio");
    }
    parts.join(",")
}

/// Train one model per (combo, seed) and score it on the evaluation split.
/// `template` carries the architecture; stream dims and flags are derived
/// from each combo.
pub fn run_ablation(
    dataset: &Dataset,
    template: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    min_valid_frames: usize,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(EriError::Argument("ablation needs at least one seed".into()));
    }
    let mut filtered = dataset.clone();
    apply_training_filter(&mut filtered, min_valid_frames);
    let eval_split = if filtered.split(Split::Test).next().is_some() {
        Split::Test
    } else {
        Split::Val
    };

    let run_table = |combos: Vec<(&'static str, FeatureCombo)>| -> Result<Vec<AblationRow>> {
        combos
            .into_iter()
            .map(|(label, combo)| {
                let train: Vec<PreparedSample> = filtered
                    .split(Split::Train)
                    .map(|s| {
                        select_feature_combo(s, combo)
                            .map(|p| PreparedSample {
                                visual: p.visual.map(|v| filter_valid_frames(&v).0),
                                ..p
                            })
                    })
                    .collect::<Result<_>>()?;
                let eval: Vec<PreparedSample> = filtered
                    .split(eval_split)
                    .map(|s| select_feature_combo(s, combo))
                    .collect::<Result<_>>()?;
                if train.is_empty() || eval.len() < 2 {
                    return Err(EriError::Data(format!(
                        "combo {label}: {} train / {} eval samples",
                        train.len(),
                        eval.len()
                    )));
                }
                let dims = combo_dims(&train[0]);
                let seed_means = seeds
                    .iter()
                    .map(|&seed| {
                        let config = ModelConfig {
                            visual_dim: dims.visual_dim.unwrap_or(0).max(1),
                            audio_dim: dims.audio_dim.unwrap_or(0).max(1),
                            use_visual: dims.visual_dim.is_some(),
                            use_audio: dims.audio_dim.is_some(),
                            seed,
                            ..template.clone()
                        };
                        let mut model = EriModel::init(config)?;
                        let cfg = TrainConfig {
                            seed,
                            ..train_cfg.clone()
                        };
                        train_model(&mut model, &train, &cfg, None, None)?;
                        Ok(evaluate(&model, &eval)?.mean_pcc)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let mean_pcc = seed_means.iter().sum::<f64>() / seed_means.len() as f64;
                Ok(AblationRow {
                    label: label.to_string(),
                    combo: combo_name(&combo),
                    seed_means,
                    mean_pcc,
                })
            })
            .collect()
    };

    Ok(AblationReport {
        seeds: seeds.to_vec(),
        single_and_pairwise: run_table(single_and_pairwise_combos())?,
        au_variants: run_table(au_variant_combos())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pcc_known_values() {
        // perfectly linear
        assert!((pcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // hand-computed: a = [0,1,2,3], b = [1,0,2,5] → r = 7/√(5·14)
        let r = pcc(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.0, 2.0, 5.0]).unwrap();
        assert!((r - 7.0 / (5.0f64 * 14.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pcc_degenerate_cases() {
        assert_eq!(pcc(&[1.0, 1.0, 1.0], &[0.0, 2.0, 5.0]).unwrap(), 0.0);
        assert_eq!(pcc(&[0.0, 2.0], &[3.0, 3.0]).unwrap(), 0.0);
        assert!(pcc(&[1.0], &[1.0]).is_err());
        assert!(pcc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pcc_is_invariant_to_positive_affine_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = pcc(&a, &b).unwrap();
        let shifted: Vec<f64> = a.iter().map(|v| 3.5 * v - 2.0).collect();
        assert!((pcc(&shifted, &b).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = a.iter().map(|v| -2.0 * v).collect();
        assert!((pcc(&flipped, &b).unwrap() + base).abs() < 1e-12);
    }

    #[test]
    fn mean_pcc_averages_per_output_scores() {
        // output 0 perfectly correlated, output 1 anti-correlated
        let preds = vec![vec![0.1, 0.9], vec![0.2, 0.8], vec![0.3, 0.7]];
        let labels = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let (per, mean) = mean_pcc(&preds, &labels).unwrap();
        assert!((per[0] - 1.0).abs() < 1e-12);
        assert!((per[1] + 1.0).abs() < 1e-12);
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn table_shapes() {
        assert_eq!(single_and_pairwise_combos().len(), 6);
        assert_eq!(au_variant_combos().len(), 3);
        // final row of each table is the full feature set
        assert_eq!(single_and_pairwise_combos()[5].1, FeatureCombo::full());
        assert_eq!(au_variant_combos()[2].1, FeatureCombo::full());
        for (_, c) in au_variant_combos() {
            assert!(c.resnet && c.audio);
        }
    }
}
