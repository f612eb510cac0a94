//! The dual-stream network: per-stream GRU → encoder (regression token or
//! mean pooling) → concatenation → linear readout → sigmoid.

use crate::encoder::{Encoder, EncoderConfig, AttentionRecord};
use crate::error::{EriError, Result};
use crate::graph::{Graph, NodeId};
use crate::gru::{Gru, GruConfig};
use crate::init::xavier_uniform;
use crate::optim::OptSnapshot;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const EMOTIONS: [&str; 7] = [
    "Adoration",
    "Amusement",
    "Anxiety",
    "Disgust",
    "Empathic Pain",
    "Fear",
    "Surprise",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Regression-token attention pooling (the full architecture).
    RegressionToken,
    /// Temporal mean of GRU outputs (dilution baseline).
    Mean,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub use_visual: bool,
    pub use_audio: bool,
    pub gru_layers: usize,
    pub hidden: usize,
    pub encoder_blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    pub output_dim: usize,
    pub seed: u64,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_dim: 546,
            audio_dim: 1024,
            use_visual: true,
            use_audio: true,
            gru_layers: 2,
            hidden: 256,
            encoder_blocks: 4,
            heads: 4,
            dropout: 0.2,
            output_dim: 7,
            seed: 0,
            pooling: Pooling::RegressionToken,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_visual && !self.use_audio {
            return Err(EriError::Config("model has no input streams".into()));
        }
        if self.use_visual && self.visual_dim == 0 {
            return Err(EriError::Config("visual_dim must be positive".into()));
        }
        if self.use_audio && self.audio_dim == 0 {
            return Err(EriError::Config("audio_dim must be positive".into()));
        }
        if self.gru_layers == 0 || self.hidden == 0 || self.output_dim == 0 {
            return Err(EriError::Config("dims must be positive".into()));
        }
        if self.pooling == Pooling::RegressionToken {
            if self.encoder_blocks == 0 || self.heads == 0 {
                return Err(EriError::Config("encoder dims must be positive".into()));
            }
            if self.hidden % self.heads != 0 {
                return Err(EriError::Config(format!(
                    "hidden {} not divisible by heads {}",
                    self.hidden, self.heads
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EriError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn streams(&self) -> usize {
        usize::from(self.use_visual) + usize::from(self.use_audio)
    }
}

/// Per-emotion intensities, each strictly inside (0, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub intensities: Vec<f64>,
}

struct Stream {
    gru: Gru,
    encoder: Option<Encoder>,
}

pub struct EriModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    video: Option<Stream>,
    audio: Option<Stream>,
}

/// Output of one forward pass built on a caller-owned graph; `pred` stays a
/// live node so a loss can be attached for training.
pub struct ForwardNodes {
    pub pred: NodeId,
    pub video_attention: Vec<AttentionRecord>,
    pub audio_attention: Vec<AttentionRecord>,
}

impl EriModel {
    /// Deterministic initialization from the config seed: Xavier-uniform
    /// weights, zero biases, N(0, 0.02²) regression tokens.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let build_stream = |name: &str, input_dim: usize, params: &mut ParamStore, rng: &mut ChaCha8Rng| -> Result<Stream> {
            let gru = Gru::init(
                GruConfig {
                    input_dim,
                    hidden: config.hidden,
                    layers: config.gru_layers,
                },
                &format!("{name}.gru"),
                params,
                rng,
            )?;
            let encoder = match config.pooling {
                Pooling::RegressionToken => Some(Encoder::init(
                    EncoderConfig {
                        d_model: config.hidden,
                        blocks: config.encoder_blocks,
                        heads: config.heads,
                        dropout: config.dropout,
                    },
                    &format!("{name}.enc"),
                    params,
                    rng,
                )?),
                Pooling::Mean => None,
            };
            Ok(Stream { gru, encoder })
        };
        let video = if config.use_visual {
            Some(build_stream("video", config.visual_dim, &mut params, &mut rng)?)
        } else {
            None
        };
        let audio = if config.use_audio {
            Some(build_stream("audio", config.audio_dim, &mut params, &mut rng)?)
        } else {
            None
        };
        let readout_in = config.hidden * config.streams();
        params.register(
            "readout.w",
            xavier_uniform(readout_in, config.output_dim, &mut rng),
            true,
        )?;
        params.register("readout.b", Tensor::zeros(1, config.output_dim), false)?;
        Ok(EriModel {
            config,
            params,
            video,
            audio,
        })
    }

    fn stream_forward(
        &self,
        g: &mut Graph,
        stream: &Stream,
        feats: &Tensor,
        mask: &[bool],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, Vec<AttentionRecord>)> {
        let input = g.input(feats.clone());
        let seq = stream.gru.forward(g, &self.params, input)?;
        match &stream.encoder {
            Some(enc) => enc.forward(g, &self.params, seq, mask, dropout_rng),
            None => {
                if !mask.iter().any(|&m| m) {
                    return Err(EriError::Argument("all frames masked".into()));
                }
                Ok((g.masked_mean_rows(seq, mask)?, Vec::new()))
            }
        }
    }

    /// Build the full forward pass on `g`. Streams must match the config:
    /// pass `Some((features, mask))` for each enabled stream.
    pub fn forward_on_graph(
        &self,
        g: &mut Graph,
        video: Option<(&Tensor, &[bool])>,
        audio: Option<(&Tensor, &[bool])>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardNodes> {
        let mut pooled = Vec::new();
        let mut video_attention = Vec::new();
        let mut audio_attention = Vec::new();
        match (&self.video, video) {
            (Some(stream), Some((feats, mask))) => {
                let (out, recs) =
                    self.stream_forward(g, stream, feats, mask, dropout_rng.as_deref_mut())?;
                pooled.push(out);
                video_attention = recs;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(EriError::Argument("model expects a video stream".into()))
            }
            (None, Some(_)) => {
                return Err(EriError::Argument("model has no video stream".into()))
            }
        }
        match (&self.audio, audio) {
            (Some(stream), Some((feats, mask))) => {
                let (out, recs) =
                    self.stream_forward(g, stream, feats, mask, dropout_rng.as_deref_mut())?;
                pooled.push(out);
                audio_attention = recs;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(EriError::Argument("model expects an audio stream".into()))
            }
            (None, Some(_)) => {
                return Err(EriError::Argument("model has no audio stream".into()))
            }
        }
        let fused = if pooled.len() == 1 {
            pooled[0]
        } else {
            g.concat_cols(&pooled)?
        };
        let w = g.param("readout.w", self.params.value("readout.w")?.clone());
        let b = g.param("readout.b", self.params.value("readout.b")?.clone());
        let lin = g.matmul(fused, w)?;
        let lin = g.add_row_bias(lin, b)?;
        let pred = g.sigmoid(lin);
        Ok(ForwardNodes {
            pred,
            video_attention,
            audio_attention,
        })
    }

    /// Inference-mode forward pass (dropout off, attention recorded).
    pub fn predict(
        &self,
        video: Option<(&Tensor, &[bool])>,
        audio: Option<(&Tensor, &[bool])>,
    ) -> Result<(Prediction, ForwardNodes, Graph)> {
        let mut g = Graph::new();
        let nodes = self.forward_on_graph(&mut g, video, audio, None)?;
        let out = g.value(nodes.pred);
        if !out.all_finite() {
            return Err(EriError::Numerical("non-finite prediction".into()));
        }
        let pred = Prediction {
            intensities: out.data().to_vec(),
        };
        Ok((pred, nodes, g))
    }
}

// ── checkpoint format ───────────────────────────────────────────────
//
// magic "ERI1", u32 config JSON length + bytes, u32 param count, then per
// parameter: u32 name length, name bytes, u32 ndim (=2), dims as u32 LE,
// f32 LE data. A trailing u8 flag marks optional optimizer state
// (u64 step, then m and v arrays per parameter in the same order).

const MAGIC: &[u8; 4] = b"ERI1";

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn read_exact_at(data: &[u8], pos: &mut usize, len: usize, path: &str) -> Result<Vec<u8>> {
    if *pos + len > data.len() {
        return Err(EriError::Format {
            path: path.to_string(),
            offset: *pos as u64,
            msg: "truncated checkpoint".into(),
        });
    }
    let out = data[*pos..*pos + len].to_vec();
    *pos += len;
    Ok(out)
}

fn read_u32(data: &[u8], pos: &mut usize, path: &str) -> Result<u32> {
    let b = read_exact_at(data, pos, 4, path)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_f32_tensor(
    data: &[u8],
    pos: &mut usize,
    rows: usize,
    cols: usize,
    path: &str,
) -> Result<Tensor> {
    let raw = read_exact_at(data, pos, rows * cols * 4, path)?;
    let vals: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::new(rows, cols, vals).unwrap())
}

pub fn save_checkpoint(
    model: &EriModel,
    opt: Option<&OptSnapshot>,
    path: &Path,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let cfg = serde_json::to_vec(&model.config)
        .map_err(|e| EriError::Data(format!("config serialization: {e}")))?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, p) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        write_tensor(&mut out, &p.value);
    }
    match opt {
        Some(snap) => {
            out.push(1);
            out.extend_from_slice(&snap.step.to_le_bytes());
            for (name, p) in model.params.iter() {
                write_tensor_ref(&mut out, snap.m.get(name), p);
                write_tensor_ref(&mut out, snap.v.get(name), p);
            }
        }
        None => out.push(0),
    }
    std::fs::write(path, out)?;
    Ok(())
}

// helpers kept separate so the save loop stays readable
fn write_tensor_ref(out: &mut Vec<u8>, t: Option<&Tensor>, p: &crate::params::Param) {
    match t {
        Some(t) => write_tensor(out, t),
        None => write_tensor(out, &Tensor::zeros(p.value.rows(), p.value.cols())),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(EriModel, Option<OptSnapshot>)> {
    let pstr = path.display().to_string();
    let data = std::fs::read(path)?;
    let mut pos = 0usize;
    let magic = read_exact_at(&data, &mut pos, 4, &pstr)?;
    if magic != MAGIC {
        return Err(EriError::Format {
            path: pstr,
            offset: 0,
            msg: format!("bad magic {magic:?}, expected \"ERI1\""),
        });
    }
    let cfg_len = read_u32(&data, &mut pos, &pstr)? as usize;
    let cfg_bytes = read_exact_at(&data, &mut pos, cfg_len, &pstr)?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes).map_err(|e| EriError::Format {
        path: pstr.clone(),
        offset: 8,
        msg: format!("bad config block: {e}"),
    })?;
    let mut model = EriModel::init(config)?;
    let n = read_u32(&data, &mut pos, &pstr)? as usize;
    if n != model.params.len() {
        return Err(EriError::Format {
            path: pstr,
            offset: pos as u64,
            msg: format!(
                "checkpoint has {n} parameters, config implies {}",
                model.params.len()
            ),
        });
    }
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = read_u32(&data, &mut pos, &pstr)? as usize;
        let name_bytes = read_exact_at(&data, &mut pos, name_len, &pstr)?;
        let name = String::from_utf8(name_bytes).map_err(|_| EriError::Format {
            path: pstr.clone(),
            offset: pos as u64,
            msg: "non-utf8 parameter name".into(),
        })?;
        let ndim = read_u32(&data, &mut pos, &pstr)?;
        if ndim != 2 {
            return Err(EriError::Format {
                path: pstr.clone(),
                offset: pos as u64,
                msg: format!("unsupported ndim {ndim}"),
            });
        }
        let rows = read_u32(&data, &mut pos, &pstr)? as usize;
        let cols = read_u32(&data, &mut pos, &pstr)? as usize;
        let value = read_f32_tensor(&data, &mut pos, rows, cols, &pstr)?;
        let p = model.params.get_mut(&name).ok_or_else(|| EriError::Format {
            path: pstr.clone(),
            offset: pos as u64,
            msg: format!("unknown parameter {name}"),
        })?;
        if p.value.shape() != value.shape() {
            return Err(EriError::Format {
                path: pstr.clone(),
                offset: pos as u64,
                msg: format!("shape mismatch for {name}"),
            });
        }
        p.value = value;
        order.push(name);
    }
    let flag = read_exact_at(&data, &mut pos, 1, &pstr)?[0];
    let opt = if flag == 1 {
        let step_bytes = read_exact_at(&data, &mut pos, 8, &pstr)?;
        let step = u64::from_le_bytes(step_bytes.try_into().unwrap());
        let mut m = IndexMapTensors::new();
        let mut v = IndexMapTensors::new();
        for name in &order {
            let shape = model.params.value(name)?.shape();
            m.insert(
                name.clone(),
                read_f32_tensor(&data, &mut pos, shape[0], shape[1], &pstr)?,
            );
            v.insert(
                name.clone(),
                read_f32_tensor(&data, &mut pos, shape[0], shape[1], &pstr)?,
            );
        }
        Some(OptSnapshot { step, m, v })
    } else {
        None
    };
    Ok((model, opt))
}

type IndexMapTensors = indexmap::IndexMap<String, Tensor>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::gaussian;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            visual_dim: 6,
            audio_dim: 5,
            use_visual: true,
            use_audio: true,
            gru_layers: 1,
            hidden: 8,
            encoder_blocks: 1,
            heads: 2,
            dropout: 0.0,
            output_dim: 7,
            seed: 42,
            pooling: Pooling::RegressionToken,
        }
    }

    fn toy_inputs(seed: u64, t_v: usize, t_a: usize) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (gaussian(t_v, 6, 0.8, &mut rng), gaussian(t_a, 5, 0.8, &mut rng))
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = EriModel::init(toy_config()).unwrap();
        let b = EriModel::init(toy_config()).unwrap();
        for (name, p) in a.params.iter() {
            assert_eq!(p.value, b.params.get(name).unwrap().value, "{name}");
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = toy_config();
        let model = EriModel::init(cfg.clone()).unwrap();
        let h = cfg.hidden;
        let gru = |d: usize| 3 * (d * h + h * h + h);
        let block = 4 * h * h + 4 * h + (h * 4 * h + 4 * h + 4 * h * h + h);
        let encoder = cfg.encoder_blocks * block + h; // + regression token
        let expect = gru(cfg.visual_dim) + encoder + gru(cfg.audio_dim) + encoder
            + (2 * h) * 7 + 7; // readout
        assert_eq!(model.params.num_scalars(), expect);
    }

    #[test]
    fn bad_head_divisibility_is_config_error() {
        let mut cfg = ModelConfig::default();
        cfg.heads = 3; // 256 % 3 != 0
        assert!(EriModel::init(cfg).is_err());
    }

    #[test]
    fn zero_dim_is_config_error() {
        let mut cfg = toy_config();
        cfg.hidden = 0;
        assert!(EriModel::init(cfg).is_err());
    }

    #[test]
    fn forward_outputs_seven_values_in_unit_interval() {
        let model = EriModel::init(toy_config()).unwrap();
        for (tv, ta) in [(1usize, 1usize), (5, 3), (12, 9)] {
            let (v, a) = toy_inputs(7, tv, ta);
            let (pred, _, _) = model
                .predict(Some((&v, &vec![true; tv])), Some((&a, &vec![true; ta])))
                .unwrap();
            assert_eq!(pred.intensities.len(), 7);
            assert!(pred.intensities.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn masked_padding_does_not_change_prediction() {
        let model = EriModel::init(toy_config()).unwrap();
        let (v, a) = toy_inputs(3, 6, 4);
        let (p1, _, _) = model
            .predict(Some((&v, &vec![true; 6])), Some((&a, &vec![true; 4])))
            .unwrap();
        // pad both streams with junk rows, masked out
        let mut vd = v.data().to_vec();
        vd.extend_from_slice(&vec![5.0; 3 * 6]);
        let vp = Tensor::new(9, 6, vd).unwrap();
        let mut ad = a.data().to_vec();
        ad.extend_from_slice(&vec![-2.0; 2 * 5]);
        let ap = Tensor::new(6, 5, ad).unwrap();
        let mut vm = vec![true; 6];
        vm.extend_from_slice(&[false; 3]);
        let mut am = vec![true; 4];
        am.extend_from_slice(&[false; 2]);
        let (p2, _, _) = model.predict(Some((&vp, &vm)), Some((&ap, &am))).unwrap();
        for j in 0..7 {
            assert!((p1.intensities[j] - p2.intensities[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_readout_gives_exactly_half() {
        let mut model = EriModel::init(toy_config()).unwrap();
        let w = model.params.get_mut("readout.w").unwrap();
        w.value = Tensor::zeros(w.value.rows(), w.value.cols());
        let (v, a) = toy_inputs(11, 4, 4);
        let (pred, _, _) = model
            .predict(Some((&v, &vec![true; 4])), Some((&a, &vec![true; 4])))
            .unwrap();
        assert!(pred.intensities.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn empty_stream_is_argument_error() {
        let model = EriModel::init(toy_config()).unwrap();
        let (_, a) = toy_inputs(13, 4, 4);
        let v = Tensor::zeros(0, 6);
        assert!(model
            .predict(Some((&v, &[])), Some((&a, &vec![true; 4])))
            .is_err());
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let model = EriModel::init(toy_config()).unwrap();
        let (v, a) = toy_inputs(17, 5, 5);
        let mut g = Graph::new();
        let nodes = model
            .forward_on_graph(&mut g, Some((&v, &vec![true; 5])), Some((&a, &vec![true; 5])), None)
            .unwrap();
        let loss = g.sum(nodes.pred);
        g.backward(loss).unwrap();
        let mut store = model.params.clone();
        store.zero_grads();
        store.accumulate_from_graph(&g, 1.0);
        for (name, p) in store.iter() {
            let nonzero = p.grad.data().iter().any(|&x| x != 0.0);
            assert!(nonzero, "no gradient reached {name}");
        }
    }

    #[test]
    fn single_stream_models() {
        let mut cfg = toy_config();
        cfg.use_visual = false;
        let model = EriModel::init(cfg).unwrap();
        let (_, a) = toy_inputs(19, 4, 6);
        let (pred, _, _) = model.predict(None, Some((&a, &vec![true; 6]))).unwrap();
        assert_eq!(pred.intensities.len(), 7);
        // passing a video stream to an audio-only model is an error
        let v = Tensor::zeros(3, 6);
        assert!(model
            .predict(Some((&v, &[true; 3])), Some((&a, &vec![true; 6])))
            .is_err());
    }

    #[test]
    fn mean_pooling_variant_runs_and_has_no_encoder_params() {
        let mut cfg = toy_config();
        cfg.pooling = Pooling::Mean;
        let model = EriModel::init(cfg).unwrap();
        assert!(model.params.names().all(|n| !n.contains(".enc.")));
        let (v, a) = toy_inputs(23, 5, 5);
        let (pred, nodes, _) = model
            .predict(Some((&v, &vec![true; 5])), Some((&a, &vec![true; 5])))
            .unwrap();
        assert_eq!(pred.intensities.len(), 7);
        assert!(nodes.video_attention.is_empty());
    }

    #[test]
    fn checkpoint_roundtrip_with_optimizer_state() {
        use crate::optim::{AdamW, TrainConfig};
        let mut trained = EriModel::init(toy_config()).unwrap();
        // one optimizer step so values differ from init
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&cfg);
        for (_, p) in trained.params.iter_mut() {
            p.grad = Tensor::full(p.value.rows(), p.value.cols(), 0.01);
        }
        opt.step(&mut trained.params, 1e-3).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&trained, Some(&opt.snapshot()), &path).unwrap();
        let (loaded, snap) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, trained.config);
        let snap = snap.unwrap();
        assert_eq!(snap.step, 1);
        for (name, p) in trained.params.iter() {
            let lp = loaded.params.get(name).unwrap();
            for (a, b) in p.value.data().iter().zip(lp.value.data()) {
                // values round-trip through f32
                assert!((*a as f32) == (*b as f32), "{name}");
            }
        }
        // truncated file is a format error with an offset
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(EriError::Format { .. })
        ));
    }
}
