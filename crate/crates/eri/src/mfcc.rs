//! MFCC extraction for 16 kHz audio and block packing into model inputs.
//!
//! Pipeline per frame: Hann window → 512-point FFT (frame zero-padded from
//! 480) → power spectrum → 64 triangular mel filters over 0–8 kHz →
//! log → orthonormal DCT-II, keeping the first 32 coefficients.
//! Frames are then grouped into non-overlapping blocks of 32 and each block
//! flattened to a 1024-dim vector.

use crate::error::{EriError, Result};
use crate::tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::path::Path;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 480;
pub const HOP_LEN: usize = 256;
pub const FFT_LEN: usize = 512;
pub const N_MELS: usize = 64;
pub const N_MFCC: usize = 32;
pub const BLOCK_FRAMES: usize = 32;
pub const BLOCK_DIM: usize = N_MFCC * BLOCK_FRAMES;

const LOG_FLOOR: f64 = 1e-10;

/// floor((len − frame) / hop) + 1, or 0 when the signal is shorter than
/// one frame.
pub fn num_frames(signal_len: usize) -> usize {
    if signal_len < FRAME_LEN {
        0
    } else {
        (signal_len - FRAME_LEN) / HOP_LEN + 1
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with edges spaced evenly on the mel scale from 0 to
/// Nyquist, evaluated at the FFT bin center frequencies.
fn mel_filterbank(sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = FFT_LEN / 2 + 1;
    let nyquist = sample_rate / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate / FFT_LEN as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II matrix rows for the first `N_MFCC` coefficients.
fn dct_matrix() -> Vec<Vec<f64>> {
    let n = N_MELS as f64;
    (0..N_MFCC)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            (0..N_MELS)
                .map(|i| {
                    scale
                        * (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos()
                })
                .collect()
        })
        .collect()
}

/// MFCC matrix (num_frames × 32) for a mono 16 kHz signal.
pub fn mfcc(signal: &[f64], sample_rate: u32) -> Result<Tensor> {
    if sample_rate != SAMPLE_RATE {
        return Err(EriError::Argument(format!(
            "expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz"
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(EriError::Data("non-finite audio sample".into()));
    }
    let t_frames = num_frames(signal.len());
    if t_frames == 0 {
        return Err(EriError::Argument(format!(
            "signal too short for one frame: {} < {FRAME_LEN} samples",
            signal.len()
        )));
    }

    let hann: Vec<f64> = (0..FRAME_LEN)
        .map(|i| {
            0.5 * (1.0
                - (2.0 * std::f64::consts::PI * i as f64 / (FRAME_LEN - 1) as f64).cos())
        })
        .collect();
    let filters = mel_filterbank(sample_rate as f64);
    let dct = dct_matrix();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_LEN);

    let n_bins = FFT_LEN / 2 + 1;
    let mut out = Vec::with_capacity(t_frames * N_MFCC);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
    for t in 0..t_frames {
        let start = t * HOP_LEN;
        for i in 0..FFT_LEN {
            let v = if i < FRAME_LEN {
                signal[start + i] * hann[i]
            } else {
                0.0
            };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        for row in &dct {
            out.push(row.iter().zip(&log_mel).map(|(d, m)| d * m).sum());
        }
    }
    Tensor::new(t_frames, N_MFCC, out)
}

/// Pack an MFCC matrix into non-overlapping 32-frame blocks, each flattened
/// row-major to 1024 dims. A sequence shorter than one block becomes a single
/// zero-padded block; otherwise trailing frames that do not fill a block are
/// dropped.
pub fn block_combine(frames: &Tensor) -> Result<Tensor> {
    if frames.cols() != N_MFCC {
        return Err(EriError::shape(
            "block_combine input",
            &frames.shape(),
            &[frames.rows(), N_MFCC],
        ));
    }
    if frames.rows() == 0 {
        return Err(EriError::Argument("block_combine on empty mfcc matrix".into()));
    }
    let t = frames.rows();
    if t < BLOCK_FRAMES {
        let mut data = frames.data().to_vec();
        data.resize(BLOCK_DIM, 0.0);
        return Tensor::new(1, BLOCK_DIM, data);
    }
    let n_blocks = t / BLOCK_FRAMES;
    let mut data = Vec::with_capacity(n_blocks * BLOCK_DIM);
    for b in 0..n_blocks {
        for r in 0..BLOCK_FRAMES {
            data.extend_from_slice(frames.row(b * BLOCK_FRAMES + r));
        }
    }
    Tensor::new(n_blocks, BLOCK_DIM, data)
}

/// Full pipeline: signal → MFCCs → block features (num_blocks × 1024).
pub fn audio_features(signal: &[f64], sample_rate: u32) -> Result<Tensor> {
    block_combine(&mfcc(signal, sample_rate)?)
}

// ── audio file input ────────────────────────────────────────────────
//
// Two formats: canonical 16-bit mono PCM WAV, or headerless f32 LE
// samples (extension ".f32").

pub fn read_audio(path: &Path) -> Result<(Vec<f64>, u32)> {
    if path.extension().and_then(|e| e.to_str()) == Some("f32") {
        let bytes = std::fs::read(path)?;
        if bytes.len() % 4 != 0 {
            return Err(EriError::Format {
                path: path.display().to_string(),
                offset: bytes.len() as u64,
                msg: "raw f32 file length not a multiple of 4".into(),
            });
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        return Ok((samples, SAMPLE_RATE));
    }
    read_wav(path)
}

fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let pstr = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let fail = |offset: usize, msg: String| EriError::Format {
        path: pstr.clone(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail(0, "not a RIFF/WAVE file".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut samples: Option<Vec<f64>> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(fail(pos, format!("chunk overruns file by {} bytes", body + size - bytes.len())));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail(body, "fmt chunk too short".into()));
                }
                format = Some((u16_at(body), u16_at(body + 2), u32_at(body + 4), u16_at(body + 14)));
            }
            b"data" => {
                let (tag, channels, _, bits) = format
                    .ok_or_else(|| fail(pos, "data chunk before fmt chunk".into()))?;
                if tag != 1 || bits != 16 {
                    return Err(fail(body, format!("only 16-bit PCM supported (tag {tag}, {bits} bits)")));
                }
                if channels != 1 {
                    return Err(fail(body, format!("only mono supported, got {channels} channels")));
                }
                samples = Some(
                    bytes[body..body + size]
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0)
                        .collect(),
                );
            }
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }
    let (_, _, rate, _) = format.ok_or_else(|| fail(bytes.len(), "missing fmt chunk".into()))?;
    let samples = samples.ok_or_else(|| fail(bytes.len(), "missing data chunk".into()))?;
    Ok((samples, rate))
}

/// Canonical 44-byte-header 16-bit mono PCM writer, for fixtures and tests.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}
