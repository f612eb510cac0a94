//! Stacked gated recurrent units.
//!
//! Standard gate equations, unidirectional, zero initial hidden state:
//!   z_t = σ(W_z x_t + U_z h_{t−1} + b_z)
//!   r_t = σ(W_r x_t + U_r h_{t−1} + b_r)
//!   n_t = tanh(W_n x_t + r_t ⊙ (U_n h_{t−1}) + b_n)
//!   h_t = (1 − z_t) ⊙ n_t + z_t ⊙ h_{t−1}

use crate::error::{EriError, Result};
use crate::graph::{Graph, NodeId};
use crate::init::xavier_uniform;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GruConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

/// A GRU stack whose parameters live in a [`ParamStore`] under a name prefix,
/// e.g. "video.gru.layer0.w_z".
#[derive(Debug, Clone)]
pub struct Gru {
    pub cfg: GruConfig,
    prefix: String,
}

impl Gru {
    /// Register freshly initialized parameters and return the handle.
    pub fn init(
        cfg: GruConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden == 0 || cfg.layers == 0 {
            return Err(EriError::Config(format!(
                "gru dims must be positive: {cfg:?}"
            )));
        }
        for l in 0..cfg.layers {
            let d = if l == 0 { cfg.input_dim } else { cfg.hidden };
            for gate in GATES {
                store.register(
                    &format!("{prefix}.layer{l}.w_{gate}"),
                    xavier_uniform(d, cfg.hidden, rng),
                    true,
                )?;
                store.register(
                    &format!("{prefix}.layer{l}.u_{gate}"),
                    xavier_uniform(cfg.hidden, cfg.hidden, rng),
                    true,
                )?;
                store.register(
                    &format!("{prefix}.layer{l}.b_{gate}"),
                    Tensor::zeros(1, cfg.hidden),
                    false,
                )?;
            }
        }
        Ok(Gru {
            cfg,
            prefix: prefix.to_string(),
        })
    }

    /// Handle onto already-registered parameters (checkpoint restore).
    pub fn attach(cfg: GruConfig, prefix: &str) -> Self {
        Gru {
            cfg,
            prefix: prefix.to_string(),
        }
    }

    /// Run the stack over a T×D input node, returning the top layer's T×hidden
    /// output sequence.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: NodeId) -> Result<NodeId> {
        let t_len = g.value(input).rows();
        if t_len == 0 {
            return Err(EriError::Argument("gru_forward on empty sequence".into()));
        }
        if g.value(input).cols() != self.cfg.input_dim {
            return Err(EriError::shape(
                "gru input",
                &g.value(input).shape(),
                &[t_len, self.cfg.input_dim],
            ));
        }
        let h_dim = self.cfg.hidden;
        let mut seq = input;
        for l in 0..self.cfg.layers {
            let p = |gate: &str, kind: &str| format!("{}.layer{l}.{kind}_{gate}", self.prefix);
            let mut w = Vec::new();
            let mut u = Vec::new();
            let mut b = Vec::new();
            for gate in GATES {
                w.push(g.param(&p(gate, "w"), store.value(&p(gate, "w"))?.clone()));
                u.push(g.param(&p(gate, "u"), store.value(&p(gate, "u"))?.clone()));
                b.push(g.param(&p(gate, "b"), store.value(&p(gate, "b"))?.clone()));
            }
            // input projections for the whole sequence at once
            let xw: Vec<NodeId> = w
                .iter()
                .map(|&wi| g.matmul(seq, wi))
                .collect::<Result<_>>()?;
            let mut h = g.input(Tensor::zeros(1, h_dim));
            let mut outputs = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let xz = g.slice_rows(xw[0], t, 1)?;
                let xr = g.slice_rows(xw[1], t, 1)?;
                let xn = g.slice_rows(xw[2], t, 1)?;

                let hu_z = g.matmul(h, u[0])?;
                let z_pre = g.add(xz, hu_z)?;
                let z_pre = g.add(z_pre, b[0])?;
                let z = g.sigmoid(z_pre);

                let hu_r = g.matmul(h, u[1])?;
                let r_pre = g.add(xr, hu_r)?;
                let r_pre = g.add(r_pre, b[1])?;
                let r = g.sigmoid(r_pre);

                let hu_n = g.matmul(h, u[2])?;
                let rhu = g.mul(r, hu_n)?;
                let n_pre = g.add(xn, rhu)?;
                let n_pre = g.add(n_pre, b[2])?;
                let n = g.tanh(n_pre);

                let zc = g.one_minus(z);
                let a = g.mul(zc, n)?;
                let bpart = g.mul(z, h)?;
                h = g.add(a, bpart)?;
                outputs.push(h);
            }
            seq = g.concat_rows(&outputs)?;
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store_with(cfg: &GruConfig, seed: u64) -> (Gru, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru = Gru::init(cfg.clone(), "gru", &mut store, &mut rng).unwrap();
        (gru, store)
    }

    #[test]
    fn zero_params_give_zero_output() {
        // z = 0.5, n = 0 ⇒ h stays 0 at every step
        let cfg = GruConfig {
            input_dim: 3,
            hidden: 4,
            layers: 2,
        };
        let (gru, mut store) = store_with(&cfg, 1);
        for (_, p) in store.iter_mut() {
            p.value = Tensor::zeros(p.value.rows(), p.value.cols());
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::new(5, 3, vec![1.0; 15]).unwrap());
        let out = gru.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(out).shape(), [5, 4]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_is_error() {
        let cfg = GruConfig {
            input_dim: 3,
            hidden: 4,
            layers: 1,
        };
        let (gru, store) = store_with(&cfg, 1);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(0, 3));
        assert!(gru.forward(&mut g, &store, x).is_err());
    }

    #[test]
    fn input_dim_mismatch_is_error() {
        let cfg = GruConfig {
            input_dim: 3,
            hidden: 4,
            layers: 1,
        };
        let (gru, store) = store_with(&cfg, 1);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(5, 7));
        assert!(gru.forward(&mut g, &store, x).is_err());
    }

    #[test]
    fn scalar_step_matches_hand_computation() {
        // single layer, D = H = 1, one step from h0 = 0:
        //   z = σ(wz·x + bz), r = σ(wr·x + br), n = tanh(wn·x + r·(un·0) + bn)
        //   h1 = (1−z)·n
        let cfg = GruConfig {
            input_dim: 1,
            hidden: 1,
            layers: 1,
        };
        let (gru, mut store) = store_with(&cfg, 1);
        let vals = [
            ("gru.layer0.w_z", 0.3),
            ("gru.layer0.u_z", 0.5),
            ("gru.layer0.b_z", -0.1),
            ("gru.layer0.w_r", -0.4),
            ("gru.layer0.u_r", 0.2),
            ("gru.layer0.b_r", 0.05),
            ("gru.layer0.w_n", 0.7),
            ("gru.layer0.u_n", -0.6),
            ("gru.layer0.b_n", 0.2),
        ];
        for (name, v) in vals {
            store.get_mut(name).unwrap().value = Tensor::scalar(v);
        }
        let x1 = 0.9;
        let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sigma(0.3 * x1 - 0.1);
        let r = sigma(-0.4 * x1 + 0.05);
        let n = (0.7 * x1 + r * (-0.6 * 0.0) + 0.2).tanh();
        let h1 = (1.0 - z) * n + z * 0.0;

        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(x1));
        let out = gru.forward(&mut g, &store, x).unwrap();
        assert!((g.value(out).item() - h1).abs() < 1e-14);
    }

    #[test]
    fn output_shape_546_to_256() {
        let cfg = GruConfig {
            input_dim: 546,
            hidden: 256,
            layers: 2,
        };
        let (gru, store) = store_with(&cfg, 7);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = g.input(crate::init::gaussian(300, 546, 0.1, &mut rng));
        let out = gru.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(out).shape(), [300, 256]);
    }

    #[test]
    fn causality() {
        // first t output frames are unchanged by truncating the input to t frames
        let cfg = GruConfig {
            input_dim: 2,
            hidden: 3,
            layers: 2,
        };
        let (gru, store) = store_with(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = crate::init::gaussian(8, 2, 1.0, &mut rng);
        let mut g1 = Graph::new();
        let x1 = g1.input(full.clone());
        let o1 = gru.forward(&mut g1, &store, x1).unwrap();
        for t in 1..=8 {
            let trunc = Tensor::new(t, 2, full.data()[..t * 2].to_vec()).unwrap();
            let mut g2 = Graph::new();
            let x2 = g2.input(trunc);
            let o2 = gru.forward(&mut g2, &store, x2).unwrap();
            for r in 0..t {
                for c in 0..3 {
                    assert_eq!(g1.value(o1).at(r, c), g2.value(o2).at(r, c));
                }
            }
        }
    }
}
