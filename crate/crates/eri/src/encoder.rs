//! Transformer encoder with a learnable regression token.
//!
//! Pre-norm residual blocks: x ← x + MHA(LN(x)); x ← x + FFN(LN(x)).
//! The regression token sits at index 0 and is the only output passed
//! downstream. Masked (padded) frame columns receive a large negative
//! attention logit and therefore exactly zero weight after softmax.

use crate::error::{EriError, Result};
use crate::graph::{Graph, NodeId};
use crate::init::{gaussian, xavier_uniform};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Per-block attention weights captured during an inference pass.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub block: usize,
    /// One (T+1)×(T+1) row-stochastic matrix per head.
    pub heads: Vec<Tensor>,
}

impl AttentionRecord {
    /// The regression token's attention row, averaged across heads.
    /// Length T+1; entry 0 is the token's self-attention.
    pub fn regression_row(&self) -> Vec<f64> {
        let n = self.heads[0].cols();
        let mut avg = vec![0.0; n];
        for h in &self.heads {
            for j in 0..n {
                avg[j] += h.at(0, j);
            }
        }
        for v in &mut avg {
            *v /= self.heads.len() as f64;
        }
        avg
    }
}

/// Final-block regression-token attention, head-averaged, with the token's
/// self-attention entry dropped. Returns the raw (non-renormalized) T frame
/// weights.
pub fn extract_regression_attention(records: &[AttentionRecord], t: usize) -> Vec<f64> {
    let last = records.last().expect("no attention records");
    let row = last.regression_row();
    debug_assert_eq!(row.len(), t + 1);
    row[1..].to_vec()
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    prefix: String,
}

impl Encoder {
    pub fn init(
        cfg: EncoderConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.d_model == 0 || cfg.blocks == 0 || cfg.heads == 0 {
            return Err(EriError::Config(format!(
                "encoder dims must be positive: {cfg:?}"
            )));
        }
        if cfg.d_model % cfg.heads != 0 {
            return Err(EriError::Config(format!(
                "d_model {} not divisible by head count {}",
                cfg.d_model, cfg.heads
            )));
        }
        let d = cfg.d_model;
        store.register(
            &format!("{prefix}.reg_token"),
            gaussian(1, d, 0.02, rng),
            false,
        )?;
        for b in 0..cfg.blocks {
            for w in ["w_q", "w_k", "w_v", "w_o"] {
                store.register(
                    &format!("{prefix}.block{b}.attn.{w}"),
                    xavier_uniform(d, d, rng),
                    true,
                )?;
            }
            for ln in ["ln1", "ln2"] {
                store.register(
                    &format!("{prefix}.block{b}.{ln}.gamma"),
                    Tensor::full(1, d, 1.0),
                    false,
                )?;
                store.register(
                    &format!("{prefix}.block{b}.{ln}.beta"),
                    Tensor::zeros(1, d),
                    false,
                )?;
            }
            store.register(
                &format!("{prefix}.block{b}.ffn.w1"),
                xavier_uniform(d, cfg.d_ff(), rng),
                true,
            )?;
            store.register(
                &format!("{prefix}.block{b}.ffn.b1"),
                Tensor::zeros(1, cfg.d_ff()),
                false,
            )?;
            store.register(
                &format!("{prefix}.block{b}.ffn.w2"),
                xavier_uniform(cfg.d_ff(), d, rng),
                true,
            )?;
            store.register(
                &format!("{prefix}.block{b}.ffn.b2"),
                Tensor::zeros(1, d),
                false,
            )?;
        }
        Ok(Encoder {
            cfg,
            prefix: prefix.to_string(),
        })
    }

    pub fn attach(cfg: EncoderConfig, prefix: &str) -> Self {
        Encoder {
            cfg,
            prefix: prefix.to_string(),
        }
    }

    /// Multi-head self-attention over already-normalized tokens.
    /// `mask_bias` is a 1×(T+1) leaf of 0 / −1e9 column biases.
    fn mha(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        block: usize,
        x: NodeId,
        mask_bias: NodeId,
        record: Option<&mut Vec<Tensor>>,
    ) -> Result<NodeId> {
        let d = self.cfg.d_model;
        let dh = self.cfg.d_head();
        let name = |w: &str| format!("{}.block{block}.attn.{w}", self.prefix);
        let wq = g.param(&name("w_q"), store.value(&name("w_q"))?.clone());
        let wk = g.param(&name("w_k"), store.value(&name("w_k"))?.clone());
        let wv = g.param(&name("w_v"), store.value(&name("w_v"))?.clone());
        let wo = g.param(&name("w_o"), store.value(&name("w_o"))?.clone());
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.cfg.heads);
        let mut head_attn = Vec::new();
        for h in 0..self.cfg.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let logits = g.matmul_nt(qh, kh)?;
            let logits = g.scale(logits, scale);
            let logits = g.add_row_bias(logits, mask_bias)?;
            let a = g.softmax_rows(logits)?;
            if record.is_some() {
                head_attn.push(g.value(a).clone());
            }
            head_outs.push(g.matmul(a, vh)?);
        }
        if let Some(rec) = record {
            *rec = head_attn;
        }
        let cat = g.concat_cols(&head_outs)?;
        let _ = d;
        g.matmul(cat, wo)
    }

    /// Prepend the regression token, run all blocks, and return the final
    /// token-0 vector. `mask[t]` marks frame t as attendable. Pass a dropout
    /// RNG only in training mode; in inference mode attention weights are
    /// captured into the returned records.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: NodeId,
        mask: &[bool],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, Vec<AttentionRecord>)> {
        let t_len = g.value(frames).rows();
        if t_len == 0 {
            return Err(EriError::Argument(
                "encoder_forward on empty sequence".into(),
            ));
        }
        if mask.len() != t_len {
            return Err(EriError::shape(
                "encoder mask",
                &g.value(frames).shape(),
                &[mask.len(), 1],
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(EriError::Argument("all frame tokens masked".into()));
        }
        if g.value(frames).cols() != self.cfg.d_model {
            return Err(EriError::shape(
                "encoder input",
                &g.value(frames).shape(),
                &[t_len, self.cfg.d_model],
            ));
        }
        let tok_name = format!("{}.reg_token", self.prefix);
        let token = g.param(&tok_name, store.value(&tok_name)?.clone());
        let mut x = g.concat_rows(&[token, frames])?;

        let mut bias = vec![0.0; t_len + 1];
        for (t, &valid) in mask.iter().enumerate() {
            if !valid {
                bias[t + 1] = MASK_BIAS;
            }
        }
        let mask_bias = g.input(Tensor::row_vector(bias));

        let infer = dropout_rng.is_none();
        let mut records = Vec::new();
        for b in 0..self.cfg.blocks {
            let name = |part: &str| format!("{}.block{b}.{part}", self.prefix);
            let g1 = g.param(&name("ln1.gamma"), store.value(&name("ln1.gamma"))?.clone());
            let b1 = g.param(&name("ln1.beta"), store.value(&name("ln1.beta"))?.clone());
            let xn = g.layer_norm_rows(x, g1, b1, LN_EPS)?;
            let mut head_attn = Vec::new();
            let rec = if infer { Some(&mut head_attn) } else { None };
            let mut attn = self.mha(g, store, b, xn, mask_bias, rec)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                attn = g.dropout(attn, self.cfg.dropout, rng);
            }
            x = g.add(x, attn)?;
            if infer {
                records.push(AttentionRecord {
                    block: b,
                    heads: head_attn,
                });
            }

            let g2 = g.param(&name("ln2.gamma"), store.value(&name("ln2.gamma"))?.clone());
            let b2 = g.param(&name("ln2.beta"), store.value(&name("ln2.beta"))?.clone());
            let xn2 = g.layer_norm_rows(x, g2, b2, LN_EPS)?;
            let w1 = g.param(&name("ffn.w1"), store.value(&name("ffn.w1"))?.clone());
            let fb1 = g.param(&name("ffn.b1"), store.value(&name("ffn.b1"))?.clone());
            let w2 = g.param(&name("ffn.w2"), store.value(&name("ffn.w2"))?.clone());
            let fb2 = g.param(&name("ffn.b2"), store.value(&name("ffn.b2"))?.clone());
            let hmid = g.matmul(xn2, w1)?;
            let hmid = g.add_row_bias(hmid, fb1)?;
            let hmid = g.relu(hmid);
            let mut ff = g.matmul(hmid, w2)?;
            ff = g.add_row_bias(ff, fb2)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                ff = g.dropout(ff, self.cfg.dropout, rng);
            }
            x = g.add(x, ff)?;
        }
        let reg_out = g.slice_rows(x, 0, 1)?;
        Ok((reg_out, records))
    }
}
