use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{GraphBatch, InputScaling};
use super::config::ModelConfig;
use crate::error::Result;
use crate::nn::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct NormIds {
    gamma: usize,
    beta: usize,
    alpha: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DenseIds {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct GatIds {
    weight: usize,
    edge_weight: usize,
    attention: usize,
    norm: Option<NormIds>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Layout {
    embed: DenseIds,
    embed_norm: NormIds,
    global: Option<[DenseIds; 3]>,
    gat: Vec<GatIds>,
    head: [DenseIds; 2],
}

/// Parameters of a block graph-attention network.
#[derive(Clone, Debug, PartialEq)]
pub struct Bgnn {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layout: Layout,
    scaling: Option<InputScaling>,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name, Tensor::new(rows, cols, data).expect("shape"))
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize) -> DenseIds {
        let weight = self.uniform(format!("{name}.weight"), out, inp, inp);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(1, out));
        DenseIds { weight, bias }
    }

    // Norm parameters draw nothing from the RNG, so switching a norm layer
    // on or off leaves every other initial weight unchanged.
    fn norm(&mut self, name: &str, width: usize) -> NormIds {
        NormIds {
            gamma: self.push(format!("{name}.gamma"), Tensor::full(1, width, 1.0)),
            beta: self.push(format!("{name}.beta"), Tensor::zeros(1, width)),
            alpha: self.push(format!("{name}.alpha"), Tensor::full(1, width, 1.0)),
        }
    }
}

impl Bgnn {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut b = Builder { names: Vec::new(), params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(c.init_seed) };
        let embed = b.dense("embed", c.d, c.feature_mask.len());
        let embed_norm = b.norm("embed.norm", c.d);
        let global = c.variant.has_global().then(|| {
            [b.dense("global.0", c.d, c.d), b.dense("global.1", c.d, c.d), b.dense("global.2", c.global_dim, c.d)]
        });
        let g = if c.variant.has_global() { c.global_dim } else { 0 };
        let dh = c.d_prime / c.heads;
        let mut gat = Vec::with_capacity(c.gat_layers);
        for l in 0..c.gat_layers {
            let din = if l == 0 { c.d } else { c.d_prime } + g;
            let weight = b.uniform(format!("gat{l}.weight"), c.d_prime, din, din);
            let edge_weight = b.uniform(format!("gat{l}.edge_weight"), c.d_prime, 1, 1);
            let attention = b.uniform(format!("gat{l}.attention"), c.heads, 3 * dh, 3 * dh);
            let norm = c.variant.has_layer_norm().then(|| b.norm(&format!("gat{l}.norm"), c.d_prime));
            gat.push(GatIds { weight, edge_weight, attention, norm });
        }
        let head = [b.dense("head.0", 2 * c.d_prime, c.d_prime), b.dense("head.1", 2, 2 * c.d_prime)];
        Ok(Self { layout: Layout { embed, embed_norm, global, gat, head }, names: b.names, params: b.params, config, scaling: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(Tensor::shape).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces all parameters; shapes must match the architecture.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(crate::Error::ShapeMismatch { op: "set_params", detail: "parameter shapes differ from the architecture".into() });
        }
        self.params = params;
        Ok(())
    }

    /// Per-layer widths, for logging.
    pub fn summary(&self) -> String {
        let mut s = format!("{} ({} parameters)\n", self.config.label(), self.parameter_count());
        for (n, p) in self.names.iter().zip(&self.params) {
            s.push_str(&format!("  {n}: {}x{}\n", p.rows(), p.cols()));
        }
        s
    }

    /// Records the forward pass on `tape` and returns `B x 2` logits.
    /// `rng` drives dropout and is only consulted when `training`.
    pub fn scaling(&self) -> Option<&InputScaling> {
        self.scaling.as_ref()
    }

    /// Input standardization applied at the start of every forward pass.
    pub fn set_scaling(&mut self, scaling: Option<InputScaling>) {
        self.scaling = scaling;
    }

    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape, batch: &GraphBatch, training: bool, rng: &mut R) -> Result<Var> {
        self.forward_with(tape, batch, training, rng, &self.params)
    }

    /// Forward pass with substitute parameter values (same shapes).
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        training: bool,
        rng: &mut R,
        params: &[Tensor],
    ) -> Result<Var> {
        let c = &self.config;
        let mut vars: Vec<Option<Var>> = vec![None; params.len()];
        let mut p = |tape: &mut Tape, id: usize| *vars[id].get_or_insert_with(|| tape.param(id, params[id].clone()));
        let seg = batch.segments.clone();
        let drop = |tape: &mut Tape, v: Var, rng: &mut R| -> Result<Var> {
            if training {
                tape.dropout(v, c.dropout, rng)
            } else {
                Ok(v)
            }
        };

        let x = match &self.scaling {
            Some(s) => tape.constant(s.apply(&batch.x, &c.feature_mask)),
            None => tape.constant(batch.x.clone()),
        };
        let lay = &self.layout;
        let (w, b) = (p(tape, lay.embed.weight), p(tape, lay.embed.bias));
        let mut h = tape.dense(x, w, Some(b))?;
        let n = lay.embed_norm;
        let (gm, bt, al) = (p(tape, n.gamma), p(tape, n.beta), p(tape, n.alpha));
        h = tape.graph_norm(h, gm, bt, al, seg.clone())?;
        h = drop(tape, h, rng)?;

        let global = match &lay.global {
            Some(layers) => {
                let mut g = h;
                for (k, ids) in layers.iter().enumerate() {
                    let (w, b) = (p(tape, ids.weight), p(tape, ids.bias));
                    g = tape.dense(g, w, Some(b))?;
                    if k + 1 < layers.len() {
                        g = tape.gelu(g, c.gelu);
                    }
                }
                let pooled = tape.mean_pool(g, seg.clone())?;
                Some(tape.broadcast(pooled, seg.clone())?)
            }
            None => None,
        };

        let slot_attr = tape.constant(batch.slot_attr.clone());
        for ids in &lay.gat {
            let input = match global {
                Some(g) => tape.concat_cols(h, g)?,
                None => h,
            };
            let (w, we, a) = (p(tape, ids.weight), p(tape, ids.edge_weight), p(tape, ids.attention));
            let z = tape.dense(input, w, None)?;
            h = tape.attend(z, slot_attr, we, a, c.heads, batch.neighborhoods.clone())?;
            h = tape.gelu(h, c.gelu);
            if let (Some(n), false) = (ids.norm, c.norm_bypass) {
                let (gm, bt, al) = (p(tape, n.gamma), p(tape, n.beta), p(tape, n.alpha));
                h = tape.graph_norm(h, gm, bt, al, seg.clone())?;
            }
            h = drop(tape, h, rng)?;
        }

        let pooled = tape.mean_pool(h, seg)?;
        let [h0, h1] = lay.head;
        let (w, b) = (p(tape, h0.weight), p(tape, h0.bias));
        let y = tape.dense(pooled, w, Some(b))?;
        let y = tape.gelu(y, c.gelu);
        let (w, b) = (p(tape, h1.weight), p(tape, h1.bias));
        tape.dense(y, w, Some(b))
    }

    /// Inference-mode logits.
    pub fn logits(&self, batch: &GraphBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(tape.value(out).clone())
    }
}

/// Row-wise softmax of logits.
pub fn probabilities(logits: &Tensor) -> Tensor {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    p
}

/// Index of the largest logit per row (first on ties).
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}
