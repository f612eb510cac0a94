//! Feature-matrix files (FMX), dataset manifests, validity filtering,
//! ablation feature selection, and label normalization.
//!
//! The fused visual layout is fixed: columns [0, 512) ResNet holistic
//! features, [512, 529) AU occurrence, [529, 546) AU intensity.

use crate::error::{EriError, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub const RESNET_COLS: std::ops::Range<usize> = 0..512;
pub const AU_OCC_COLS: std::ops::Range<usize> = 512..529;
pub const AU_INT_COLS: std::ops::Range<usize> = 529..546;
pub const FUSED_VISUAL_DIM: usize = 546;
pub const AUDIO_DIM: usize = 1024;

// ── FMX binary format ───────────────────────────────────────────────
//
// bytes "FMX1", u32 LE rows, u32 LE cols, u8 has_mask,
// rows×cols f32 LE row-major, then (if has_mask) rows bytes of 0/1.

const FMX_MAGIC: &[u8; 4] = b"FMX1";

/// Disk-facing feature matrix; stored as f32 so round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FmxMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

impl FmxMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, mask: Option<Vec<bool>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EriError::Argument(format!(
                "fmx payload length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(m) = &mask {
            if m.len() != rows {
                return Err(EriError::Argument(format!(
                    "fmx mask length {} does not match {} rows",
                    m.len(),
                    rows
                )));
            }
        }
        Ok(FmxMatrix {
            rows,
            cols,
            data,
            mask,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .unwrap()
    }
}

pub fn write_fmx(path: &Path, m: &FmxMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(13 + m.data.len() * 4 + m.rows);
    out.extend_from_slice(FMX_MAGIC);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    out.push(m.mask.is_some() as u8);
    for v in &m.data {
        if !v.is_finite() {
            return Err(EriError::Data(format!(
                "refusing to write non-finite value to {}",
                path.display()
            )));
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(mask) = &m.mask {
        out.extend(mask.iter().map(|&b| b as u8));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_fmx(path: &Path) -> Result<FmxMatrix> {
    let pstr = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let fail = |offset: usize, msg: String| EriError::Format {
        path: pstr.clone(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 13 {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[0..4] != FMX_MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let has_mask = match bytes[12] {
        0 => false,
        1 => true,
        b => return Err(fail(12, format!("bad mask flag {b}"))),
    };
    let payload = rows * cols * 4;
    let expected = 13 + payload + if has_mask { rows } else { 0 };
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("expected {expected} bytes for {rows}x{cols}, found {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[13..13 + payload].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(13 + i * 4, format!("non-finite entry {v}")));
        }
        data.push(v);
    }
    let mask = if has_mask {
        Some(
            bytes[13 + payload..]
                .iter()
                .map(|&b| b != 0)
                .collect::<Vec<bool>>(),
        )
    } else {
        None
    };
    FmxMatrix::new(rows, cols, data, mask)
}

// ── domain types ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
}

#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub data: Tensor,
    pub valid: Vec<bool>,
}

impl FeatureSequence {
    pub fn from_fmx(modality: Modality, m: &FmxMatrix) -> Self {
        let valid = match (&m.mask, modality) {
            (Some(mask), _) => mask.clone(),
            // audio has no validity concept; missing masks default to valid
            (None, _) => vec![true; m.rows],
        };
        FeatureSequence {
            modality,
            data: m.to_tensor(),
            valid,
        }
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }
}

/// Drop rows with valid=false, preserving order. Returns the filtered
/// sequence and the number of removed rows.
pub fn filter_valid_frames(seq: &FeatureSequence) -> (FeatureSequence, usize) {
    let keep = seq.valid_count();
    let removed = seq.len() - keep;
    if removed == 0 {
        return (seq.clone(), 0);
    }
    let cols = seq.data.cols();
    let mut data = Vec::with_capacity(keep * cols);
    for (r, &v) in seq.valid.iter().enumerate() {
        if v {
            data.extend_from_slice(seq.data.row(r));
        }
    }
    (
        FeatureSequence {
            modality: seq.modality,
            data: Tensor::new(keep, cols, data).unwrap(),
            valid: vec![true; keep],
        },
        removed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub visual: FeatureSequence,
    pub audio: FeatureSequence,
    /// Normalized to [0, 1].
    pub label: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScale {
    Unit,
    Hundred,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub visual: String,
    pub audio: String,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub label_scale: LabelScale,
    pub samples: Vec<ManifestRecord>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EriError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| EriError::Data(format!(
        "bad manifest {}: {e}",
        path.display()
    )))
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| EriError::Data(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Map raw labels into [0, 1]. `unit` labels pass through; `hundred`
/// labels divide by 100. Out-of-range entries name the sample.
pub fn normalize_labels(raw: &[f64], scale: LabelScale, sample_id: &str) -> Result<Vec<f64>> {
    if raw.len() != 7 {
        return Err(EriError::Data(format!(
            "sample {sample_id}: expected 7 labels, found {}",
            raw.len()
        )));
    }
    let hi = match scale {
        LabelScale::Unit => 1.0,
        LabelScale::Hundred => 100.0,
    };
    let mut out = Vec::with_capacity(7);
    for (i, &v) in raw.iter().enumerate() {
        if !v.is_finite() || v < 0.0 || v > hi {
            return Err(EriError::Data(format!(
                "sample {sample_id}: label[{i}] = {v} outside [0, {hi}]"
            )));
        }
        out.push((v / hi).clamp(0.0, 1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Load every sample referenced by the manifest. Paths are resolved
/// relative to the manifest's directory. Loading order follows the
/// manifest record order.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(manifest_path)?;
    let base: PathBuf = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        if !seen.insert(rec.id.clone()) {
            return Err(EriError::Data(format!("duplicate sample id {}", rec.id)));
        }
        let vis_path = base.join(&rec.visual);
        let aud_path = base.join(&rec.audio);
        for p in [&vis_path, &aud_path] {
            if !p.exists() {
                return Err(EriError::Data(format!(
                    "sample {}: referenced file {} does not exist",
                    rec.id,
                    p.display()
                )));
            }
        }
        let visual = FeatureSequence::from_fmx(Modality::Visual, &load_fmx(&vis_path)?);
        let audio = FeatureSequence::from_fmx(Modality::Audio, &load_fmx(&aud_path)?);
        let label = normalize_labels(&rec.labels, manifest.label_scale, &rec.id)?;
        samples.push(Sample {
            id: rec.id.clone(),
            visual,
            audio,
            label,
            split: rec.split,
        });
    }
    Ok(Dataset { samples })
}

/// Write every sample as a pair of FMX files plus a manifest, the layout
/// [`load_dataset`] reads back. Labels are stored unit-scaled.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let to_fmx = |seq: &FeatureSequence| -> Result<FmxMatrix> {
            let mask = seq.valid.iter().any(|&v| !v).then(|| seq.valid.clone());
            FmxMatrix::new(
                seq.data.rows(),
                seq.data.cols(),
                seq.data.data().iter().map(|&v| v as f32).collect(),
                mask,
            )
        };
        let visual = format!("{}.visual.fmx", s.id);
        let audio = format!("{}.audio.fmx", s.id);
        write_fmx(&dir.join(&visual), &to_fmx(&s.visual)?)?;
        write_fmx(&dir.join(&audio), &to_fmx(&s.audio)?)?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            split: s.split,
            visual,
            audio,
            labels: s.label.clone(),
        });
    }
    save_manifest(
        &dir.join("manifest.json"),
        &Manifest {
            version: 1,
            label_scale: LabelScale::Unit,
            samples: records,
        },
    )
}

/// Minimum valid visual frames for a training sample to be kept.
pub const MIN_TRAIN_VALID_FRAMES: usize = 50;

/// Remove training samples with fewer than `min_valid` valid visual frames
/// (use [`MIN_TRAIN_VALID_FRAMES`] for real recordings). Val/test samples
/// are never removed (they are substituted at evaluation). Returns the
/// removed sample ids.
pub fn apply_training_filter(dataset: &mut Dataset, min_valid: usize) -> Vec<String> {
    let mut removed = Vec::new();
    dataset.samples.retain(|s| {
        let drop = s.split == Split::Train && s.visual.valid_count() < min_valid;
        if drop {
            removed.push(s.id.clone());
        }
        !drop
    });
    removed
}

// ── ablation feature selection ──────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureCombo {
    pub resnet: bool,
    pub au_occurrence: bool,
    pub au_intensity: bool,
    pub audio: bool,
}

impl FeatureCombo {
    pub fn full() -> Self {
        FeatureCombo {
            resnet: true,
            au_occurrence: true,
            au_intensity: true,
            audio: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.resnet || self.au_occurrence || self.au_intensity || self.audio)
    }

    pub fn has_visual(&self) -> bool {
        self.resnet || self.au_occurrence || self.au_intensity
    }

    fn all_visual(&self) -> bool {
        self.resnet && self.au_occurrence && self.au_intensity
    }

    /// Column ranges of the fused 546-wide layout selected by this combo.
    pub fn visual_columns(&self) -> Vec<std::ops::Range<usize>> {
        let mut cols = Vec::new();
        if self.resnet {
            cols.push(RESNET_COLS);
        }
        if self.au_occurrence {
            cols.push(AU_OCC_COLS);
        }
        if self.au_intensity {
            cols.push(AU_INT_COLS);
        }
        cols
    }

    /// Visual width after slicing the fused layout.
    pub fn visual_dim(&self) -> usize {
        self.visual_columns().iter().map(|r| r.len()).sum()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut combo = FeatureCombo {
            resnet: false,
            au_occurrence: false,
            au_intensity: false,
            audio: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "resnet" => combo.resnet = true,
                "au_occurrence" => combo.au_occurrence = true,
                "au_intensity" => combo.au_intensity = true,
                "audio" => combo.audio = true,
                other => {
                    return Err(EriError::Config(format!(
                        "unknown feature {other} (expected resnet, au_occurrence, au_intensity, audio)"
                    )))
                }
            }
        }
        if combo.is_empty() {
            return Err(EriError::Config("empty feature combo".into()));
        }
        Ok(combo)
    }
}

/// A sample after feature selection: streams the model will actually see.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub visual: Option<FeatureSequence>,
    pub audio: Option<FeatureSequence>,
    pub label: Vec<f64>,
    pub split: Split,
}

/// Stream dims implied by a combo for a given dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComboDims {
    pub visual_dim: Option<usize>,
    pub audio_dim: Option<usize>,
}

/// Slice a sample's visual matrix to the requested feature columns and
/// drop the audio stream when the combo excludes it. Partial visual combos
/// require the fused 546-column layout; the full visual set passes any
/// width through unchanged (synthetic data uses arbitrary widths).
pub fn select_feature_combo(sample: &Sample, combo: FeatureCombo) -> Result<PreparedSample> {
    if combo.is_empty() {
        return Err(EriError::Config("empty feature combo".into()));
    }
    let visual = if combo.has_visual() {
        if combo.all_visual() {
            Some(sample.visual.clone())
        } else {
            let d = sample.visual.data.cols();
            if d != FUSED_VISUAL_DIM {
                return Err(EriError::Config(format!(
                    "sample {}: partial visual combos need the fused {FUSED_VISUAL_DIM}-column layout, file has {d}",
                    sample.id
                )));
            }
            let ranges = combo.visual_columns();
            let width: usize = ranges.iter().map(|r| r.len()).sum();
            let rows = sample.visual.data.rows();
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                let row = sample.visual.data.row(r);
                for range in &ranges {
                    data.extend_from_slice(&row[range.clone()]);
                }
            }
            Some(FeatureSequence {
                modality: Modality::Visual,
                data: Tensor::new(rows, width, data).unwrap(),
                valid: sample.visual.valid.clone(),
            })
        }
    } else {
        None
    };
    let audio = combo.audio.then(|| sample.audio.clone());
    Ok(PreparedSample {
        id: sample.id.clone(),
        visual,
        audio,
        label: sample.label.clone(),
        split: sample.split,
    })
}

pub fn combo_dims(sample: &PreparedSample) -> ComboDims {
    ComboDims {
        visual_dim: sample.visual.as_ref().map(|v| v.data.cols()),
        audio_dim: sample.audio.as_ref().map(|a| a.data.cols()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: usize, cols: usize, valid: Vec<bool>) -> FeatureSequence {
        let data = (0..rows * cols).map(|i| i as f64).collect();
        FeatureSequence {
            modality: Modality::Visual,
            data: Tensor::new(rows, cols, data).unwrap(),
            valid,
        }
    }

    #[test]
    fn fmx_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        let m = FmxMatrix::new(3, 2, vec![1.5, -2.25, 0.1, 1e-7, 3e8, -0.0], Some(vec![true, false, true])).unwrap();
        write_fmx(&path, &m).unwrap();
        let back = load_fmx(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn fmx_truncated_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmx");
        let m = FmxMatrix::new(10, 546, vec![0.5; 10 * 546], None).unwrap();
        write_fmx(&path, &m).unwrap();
        // chop off the last row
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 546 * 4]).unwrap();
        match load_fmx(&path) {
            Err(EriError::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn fmx_nan_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.fmx");
        let m = FmxMatrix::new(1, 2, vec![1.0, 2.0], None).unwrap();
        write_fmx(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[13..17].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_fmx(&path) {
            Err(EriError::Format { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn fmx_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.fmx");
        std::fs::write(&path, b"NOPE\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_fmx(&path), Err(EriError::Format { offset: 0, .. })));
    }

    #[test]
    fn filter_valid_keeps_order_and_is_idempotent() {
        let s = seq(3, 2, vec![true, false, true]);
        let (f, removed) = filter_valid_frames(&s);
        assert_eq!(removed, 1);
        assert_eq!(f.len(), 2);
        assert_eq!(f.data.row(0), s.data.row(0));
        assert_eq!(f.data.row(1), s.data.row(2));
        let (f2, removed2) = filter_valid_frames(&f);
        assert_eq!(removed2, 0);
        assert_eq!(f2.data, f.data);
    }

    #[test]
    fn filter_all_valid_is_identity_and_all_invalid_is_empty() {
        let s = seq(4, 3, vec![true; 4]);
        let (f, removed) = filter_valid_frames(&s);
        assert_eq!(removed, 0);
        assert_eq!(f.data, s.data);
        let s = seq(4, 3, vec![false; 4]);
        let (f, removed) = filter_valid_frames(&s);
        assert_eq!(removed, 4);
        assert!(f.is_empty());
    }

    fn sample_with_valid(id: &str, split: Split, n_valid: usize, n_total: usize) -> Sample {
        let mut valid = vec![true; n_valid];
        valid.extend(vec![false; n_total - n_valid]);
        Sample {
            id: id.into(),
            visual: seq(n_total, 4, valid),
            audio: seq(3, 5, vec![true; 3]),
            label: vec![0.5; 7],
            split,
        }
    }

    #[test]
    fn training_filter_boundary_at_50() {
        let mut ds = Dataset {
            samples: vec![
                sample_with_valid("a", Split::Train, 49, 60),
                sample_with_valid("b", Split::Train, 50, 60),
                sample_with_valid("c", Split::Test, 0, 10),
                sample_with_valid("d", Split::Val, 3, 10),
            ],
        };
        let removed = apply_training_filter(&mut ds, MIN_TRAIN_VALID_FRAMES);
        assert_eq!(removed, vec!["a".to_string()]);
        let ids: Vec<&str> = ds.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "d"]);
    }

    #[test]
    fn normalize_label_scales() {
        let raw = [50.0, 0.0, 100.0, 25.0, 75.0, 10.0, 90.0];
        let out = normalize_labels(&raw, LabelScale::Hundred, "s").unwrap();
        assert_eq!(out[0], 0.5);
        assert_eq!(out[2], 1.0);
        let raw = [0.455, 0.0, 1.0, 0.25, 0.75, 0.1, 0.9];
        let out = normalize_labels(&raw, LabelScale::Unit, "s").unwrap();
        assert_eq!(out[0], 0.455);
        // out of range
        let raw = [150.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let err = normalize_labels(&raw, LabelScale::Hundred, "vid42").unwrap_err();
        assert!(err.to_string().contains("vid42"));
    }

    fn fused_sample() -> Sample {
        let rows = 3;
        let mut data = Vec::new();
        for r in 0..rows {
            for c in 0..FUSED_VISUAL_DIM {
                data.push((r * 1000 + c) as f64);
            }
        }
        Sample {
            id: "f".into(),
            visual: FeatureSequence {
                modality: Modality::Visual,
                data: Tensor::new(rows, FUSED_VISUAL_DIM, data).unwrap(),
                valid: vec![true; rows],
            },
            audio: seq(4, AUDIO_DIM, vec![true; 4]),
            label: vec![0.1; 7],
            split: Split::Train,
        }
    }

    #[test]
    fn combo_slicing_dims() {
        let s = fused_sample();
        let full = select_feature_combo(&s, FeatureCombo::full()).unwrap();
        assert_eq!(combo_dims(&full).visual_dim, Some(546));
        assert_eq!(combo_dims(&full).audio_dim, Some(AUDIO_DIM));

        let au_only = FeatureCombo { resnet: false, au_occurrence: true, au_intensity: true, audio: false };
        let p = select_feature_combo(&s, au_only).unwrap();
        assert_eq!(combo_dims(&p).visual_dim, Some(34));
        assert_eq!(combo_dims(&p).audio_dim, None);
        // first AU column of row 1 is fused column 512
        assert_eq!(p.visual.as_ref().unwrap().data.at(1, 0), (1000 + 512) as f64);

        let resnet_only = FeatureCombo { resnet: true, au_occurrence: false, au_intensity: false, audio: false };
        let p = select_feature_combo(&s, resnet_only).unwrap();
        assert_eq!(combo_dims(&p).visual_dim, Some(512));

        let audio_only = FeatureCombo { resnet: false, au_occurrence: false, au_intensity: false, audio: true };
        let p = select_feature_combo(&s, audio_only).unwrap();
        assert!(p.visual.is_none());
        assert_eq!(combo_dims(&p).audio_dim, Some(AUDIO_DIM));
    }

    #[test]
    fn combo_columns_partition_the_fused_layout() {
        let resnet = FeatureCombo { resnet: true, au_occurrence: false, au_intensity: false, audio: false };
        let au = FeatureCombo { resnet: false, au_occurrence: true, au_intensity: true, audio: false };
        let mut cover = vec![false; FUSED_VISUAL_DIM];
        for range in resnet.visual_columns().into_iter().chain(au.visual_columns()) {
            for c in range {
                assert!(!cover[c], "column {c} covered twice");
                cover[c] = true;
            }
        }
        assert!(cover.iter().all(|&b| b));
        assert_eq!(resnet.visual_dim() + au.visual_dim(), FUSED_VISUAL_DIM);
    }

    #[test]
    fn empty_combo_is_config_error() {
        let s = fused_sample();
        let none = FeatureCombo { resnet: false, au_occurrence: false, au_intensity: false, audio: false };
        assert!(select_feature_combo(&s, none).is_err());
        assert!(FeatureCombo::parse("").is_err());
        assert!(FeatureCombo::parse("bogus").is_err());
        assert_eq!(FeatureCombo::parse("resnet,audio").unwrap(), FeatureCombo { resnet: true, au_occurrence: false, au_intensity: false, audio: true });
    }

    #[test]
    fn manifest_roundtrip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let vis = FmxMatrix::new(2, 4, vec![0.0; 8], Some(vec![true, true])).unwrap();
        let aud = FmxMatrix::new(2, 3, vec![0.0; 6], None).unwrap();
        write_fmx(&dir.path().join("v0.fmx"), &vis).unwrap();
        write_fmx(&dir.path().join("a0.fmx"), &aud).unwrap();
        let manifest = Manifest {
            version: 1,
            label_scale: LabelScale::Hundred,
            samples: vec![ManifestRecord {
                id: "s0".into(),
                split: Split::Train,
                visual: "v0.fmx".into(),
                audio: "a0.fmx".into(),
                labels: vec![10.0; 7],
            }],
        };
        let mpath = dir.path().join("manifest.json");
        save_manifest(&mpath, &manifest).unwrap();
        let ds = load_dataset(&mpath).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.samples[0].label, vec![0.1; 7]);

        // missing file
        let mut bad = manifest.clone();
        bad.samples[0].visual = "missing.fmx".into();
        save_manifest(&mpath, &bad).unwrap();
        assert!(matches!(load_dataset(&mpath), Err(EriError::Data(_))));

        // duplicate ids
        let mut dup = manifest.clone();
        dup.samples.push(dup.samples[0].clone());
        save_manifest(&mpath, &dup).unwrap();
        assert!(matches!(load_dataset(&mpath), Err(EriError::Data(_))));
    }
}
