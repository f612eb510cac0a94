//! Training loop: per-sample graphs with gradient accumulation over each
//! mini-batch, AdamW updates, and a loss log.

use crate::data::PreparedSample;
use crate::error::{EriError, Result};
use crate::graph::Graph;
use crate::model::EriModel;
use crate::optim::{lr_at_epoch, AdamW, OptSnapshot, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Mean squared error over all outputs of all samples:
///   L = 1/(K·N) Σ_n Σ_k (p_{nk} − y_{nk})²
pub fn l2_loss(preds: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(EriError::Argument(format!(
            "l2_loss over {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let k = preds[0].len();
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(labels) {
        if p.len() != k || y.len() != k {
            return Err(EriError::Argument("ragged rows in l2_loss".into()));
        }
        total += p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / (k as f64 * preds.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::from("epoch,step,lr,train_loss\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.lr, r.train_loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainRun {
    pub history: Vec<LossRecord>,
    pub final_loss: f64,
    pub steps: u64,
    pub optimizer: OptSnapshot,
}

fn sample_mask(len: usize) -> Vec<bool> {
    vec![true; len]
}

/// One backward pass for a single sample. Returns its summed squared error;
/// gradients are scaled by `grad_scale` and accumulated into the store.
fn sample_step(
    model: &mut EriModel,
    sample: &PreparedSample,
    grad_scale: f64,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let vmask = sample.visual.as_ref().map(|s| sample_mask(s.len()));
    let amask = sample.audio.as_ref().map(|s| sample_mask(s.len()));
    let video = sample
        .visual
        .as_ref()
        .map(|s| (&s.data, vmask.as_deref().unwrap()));
    let audio = sample
        .audio
        .as_ref()
        .map(|s| (&s.data, amask.as_deref().unwrap()));
    let nodes = model.forward_on_graph(&mut g, video, audio, Some(dropout_rng))?;
    let label = g.input(crate::tensor::Tensor::row_vector(sample.label.clone()));
    let diff = g.sub(nodes.pred, label)?;
    let sq = g.mul(diff, diff)?;
    let loss = g.sum(sq);
    let loss_val = g.value(loss).item();
    if !loss_val.is_finite() {
        return Err(EriError::Numerical(format!(
            "non-finite loss on sample {}",
            sample.id
        )));
    }
    g.backward(loss)?;
    model.params.accumulate_from_graph(&g, grad_scale);
    Ok(loss_val)
}

/// Train in place over the given samples. Batches are shuffled each epoch;
/// gradients average over the batch and all outputs. Stops early once a
/// batch loss drops below `stop_at_loss`, when provided.
pub fn train_model(
    model: &mut EriModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    resume: Option<OptSnapshot>,
    stop_at_loss: Option<f64>,
) -> Result<TrainRun> {
    if samples.is_empty() {
        return Err(EriError::Argument("no training samples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(EriError::Config("batch_size and epochs must be positive".into()));
    }
    let k = model.config.output_dim as f64;
    let mut opt = match resume {
        Some(snap) => AdamW::resume(cfg, snap),
        None => AdamW::new(cfg),
    };
    // offset keeps the shuffle stream apart from the dropout seed stream
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x94d0_49bb_1331_11eb));
    let mut history = Vec::new();
    let mut global_step: u64 = opt.step;
    let mut final_loss = f64::INFINITY;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            global_step += 1;
            model.params.zero_grads();
            let scale = 1.0 / (k * batch.len() as f64);
            let mut batch_sse = 0.0;
            for (j, &idx) in batch.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    cfg.seed
                        ^ global_step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        ^ (j as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9),
                );
                batch_sse += sample_step(model, &samples[idx], scale, &mut rng)?;
            }
            let train_loss = batch_sse * scale;
            opt.step(&mut model.params, lr)?;
            history.push(LossRecord {
                epoch,
                step: global_step,
                lr,
                train_loss,
            });
            final_loss = train_loss;
            if stop_at_loss.is_some_and(|t| train_loss < t) {
                break 'epochs;
            }
        }
    }
    Ok(TrainRun {
        history,
        final_loss,
        steps: global_step,
        optimizer: opt.snapshot(),
    })
}
