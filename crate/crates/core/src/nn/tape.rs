//! Reverse-mode tape over the handful of graph-network operations the
//! classifier needs. Every op computes its value eagerly when recorded and
//! keeps whatever cache its backward rule needs.

use std::sync::Arc;

use rand::Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const GRAPHNORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous row ranges, one per graph of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Empty("graph in batch".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(Self { offsets })
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::from_sizes(&[n])
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    /// Graph index of every row.
    pub fn graph_ids(&self) -> Vec<usize> {
        (0..self.count()).flat_map(|g| self.range(g).map(move |_| g)).collect()
    }
}

/// Incoming edges grouped by target node (compressed rows).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    row_ptr: Vec<usize>,
    src: Vec<usize>,
}

impl Neighborhoods {
    /// Both directions of every undirected edge plus a self-loop per node.
    /// Sources are listed in ascending order for each target. Returns the
    /// structure and the edge attribute of each directed slot (self-loops
    /// carry 0).
    pub fn with_self_loops(n: usize, edges: &[(usize, usize)], attr: &[f64]) -> Result<(Self, Vec<f64>)> {
        if edges.len() != attr.len() {
            return Err(Error::ShapeMismatch {
                op: "neighborhoods",
                detail: format!("{} edges but {} attributes", edges.len(), attr.len()),
            });
        }
        let mut incoming: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 0.0)]).collect();
        for (&(i, j), &a) in edges.iter().zip(attr) {
            if i >= n || j >= n || i == j {
                return Err(Error::Data(format!("invalid edge ({i}, {j}) for {n} nodes")));
            }
            incoming[i].push((j, a));
            incoming[j].push((i, a));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut src = Vec::new();
        let mut slot_attr = Vec::new();
        for inc in &mut incoming {
            inc.sort_by_key(|&(s, _)| s);
            for &(s, a) in inc.iter() {
                src.push(s);
                slot_attr.push(a);
            }
            row_ptr.push(src.len());
        }
        Ok((Self { row_ptr, src }, slot_attr))
    }

    pub fn node_count(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn incoming(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn source(&self, e: usize) -> usize {
        self.src[e]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeluKind {
    #[default]
    Tanh,
    Erf,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

pub fn gelu(x: f64, kind: GeluKind) -> f64 {
    match kind {
        GeluKind::Tanh => 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh()),
        GeluKind::Erf => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
    }
}

fn gelu_grad(x: f64, kind: GeluKind) -> f64 {
    match kind {
        GeluKind::Tanh => {
            let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
        }
        GeluKind::Erf => {
            let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            cdf + x * pdf
        }
    }
}

enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Option<Var> },
    GraphNorm { x: Var, gamma: Var, beta: Var, alpha: Var, seg: Arc<Segments>, xhat: Tensor, std: Tensor, mean: Tensor },
    Attend { z: Var, attr: Var, we: Var, a: Var, heads: usize, nb: Arc<Neighborhoods>, att: Vec<f64>, pre: Vec<f64>, edge_coef: Vec<f64> },
    Gelu { x: Var, kind: GeluKind },
    Mask { x: Var, mask: Vec<f64> },
    MeanPool { x: Var, seg: Arc<Segments> },
    Broadcast { x: Var, seg: Arc<Segments> },
    Concat { a: Var, b: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    WeightedSum { x: Var, w: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that receives no gradient bookkeeping beyond its own slot.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A leaf whose gradient is reported under parameter index `id`.
    pub fn param(&mut self, id: usize, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// `x W^T + b` with `x: n x in`, `W: out x in`, `b: 1 x out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return Err(mismatch("dense", format!("x {:?} vs W {:?}", xv.shape(), wv.shape())));
        }
        if let Some(b) = b {
            if self.value(b).shape() != (1, wv.rows()) {
                return Err(mismatch("dense", format!("bias {:?} for {} outputs", self.value(b).shape(), wv.rows())));
            }
        }
        let (n, out) = (xv.rows(), wv.rows());
        let mut y = Tensor::zeros(n, out);
        for i in 0..n {
            let xi = xv.row(i);
            let yi = y.row_mut(i);
            for (o, yo) in yi.iter_mut().enumerate() {
                *yo = dot(xi, wv.row(o));
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).row(0).to_vec();
            for i in 0..n {
                for (yo, bo) in y.row_mut(i).iter_mut().zip(&bv) {
                    *yo += bo;
                }
            }
        }
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    /// Per-graph normalization with learnable mean-retention `alpha`:
    /// `gamma * (x - alpha*mu) / sqrt(mean((x - alpha*mu)^2) + eps) + beta`.
    pub fn graph_norm(&mut self, x: Var, gamma: Var, beta: Var, alpha: Var, seg: Arc<Segments>) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        for (name, p) in [("gamma", gamma), ("beta", beta), ("alpha", alpha)] {
            if self.value(p).shape() != (1, d) {
                return Err(mismatch("graph_norm", format!("{name} {:?} for width {d}", self.value(p).shape())));
            }
        }
        if seg.total() != xv.rows() {
            return Err(mismatch("graph_norm", format!("segments cover {} of {} rows", seg.total(), xv.rows())));
        }
        let (g, b, a) = (self.value(gamma).row(0), self.value(beta).row(0), self.value(alpha).row(0));
        let mut xhat = Tensor::zeros(xv.rows(), d);
        let mut out = Tensor::zeros(xv.rows(), d);
        let mut std = Tensor::zeros(seg.count(), d);
        let mut mean = Tensor::zeros(seg.count(), d);
        for s in 0..seg.count() {
            let r = seg.range(s);
            let inv_n = 1.0 / r.len() as f64;
            let mu = mean.row_mut(s);
            for i in r.clone() {
                axpy(mu, inv_n, xv.row(i));
            }
            let mu = mean.row(s).to_vec();
            let mut var = vec![0.0; d];
            for i in r.clone() {
                for (j, (v, x)) in var.iter_mut().zip(xv.row(i)).enumerate() {
                    let c = x - a[j] * mu[j];
                    *v += c * c * inv_n;
                }
            }
            let sd: Vec<f64> = var.iter().map(|v| (v + GRAPHNORM_EPS).sqrt()).collect();
            std.row_mut(s).copy_from_slice(&sd);
            for i in r {
                for j in 0..d {
                    let h = (xv.get(i, j) - a[j] * mu[j]) / sd[j];
                    xhat.set(i, j, h);
                    out.set(i, j, g[j] * h + b[j]);
                }
            }
        }
        Ok(self.push(out, Op::GraphNorm { x, gamma, beta, alpha, seg, xhat, std, mean }))
    }

    /// Attention-weighted aggregation over incoming neighbourhoods.
    ///
    /// `z: n x d'` are projected node features, `attr: E x 1` scalar edge
    /// attributes in slot order of `nb`, `we: d' x 1` the edge projection and
    /// `a: heads x 3(d'/heads)`. Each head scores slot `e = (j -> i)` as
    /// LeakyReLU of `a1 . z_i + a2 . z_j + a3 . (attr_e we)`, softmaxes over
    /// the slots of `i`, and averages `z_j` with those weights; head outputs
    /// are concatenated. The projected edge features are rank one, so only
    /// the per-head scalar `a3 . we` is ever formed.
    pub fn attend(&mut self, z: Var, attr: Var, we: Var, a: Var, heads: usize, nb: Arc<Neighborhoods>) -> Result<Var> {
        let (zv, atv, wev, av) = (self.value(z), self.value(attr), self.value(we), self.value(a));
        let (n, dp) = zv.shape();
        if heads == 0 || dp % heads != 0 {
            return Err(mismatch("attend", format!("width {dp} not divisible into {heads} heads")));
        }
        let dh = dp / heads;
        if av.shape() != (heads, 3 * dh) || atv.shape() != (nb.edge_count(), 1) || wev.shape() != (dp, 1) || nb.node_count() != n {
            return Err(mismatch(
                "attend",
                format!(
                    "z {:?}, attr {:?}, we {:?}, a {:?}, {} nodes / {} slots",
                    zv.shape(),
                    atv.shape(),
                    wev.shape(),
                    av.shape(),
                    nb.node_count(),
                    nb.edge_count()
                ),
            ));
        }
        let attr_v = atv.data();
        let edge_coef: Vec<f64> = (0..heads).map(|k| dot(&av.row(k)[2 * dh..], &wev.data()[k * dh..(k + 1) * dh])).collect();
        let mut src_score = vec![0.0; n * heads];
        let mut dst_score = vec![0.0; n * heads];
        for i in 0..n {
            for k in 0..heads {
                let zi = &zv.row(i)[k * dh..(k + 1) * dh];
                dst_score[i * heads + k] = dot(&av.row(k)[..dh], zi);
                src_score[i * heads + k] = dot(&av.row(k)[dh..2 * dh], zi);
            }
        }
        let e_total = nb.edge_count();
        let mut pre = vec![0.0; e_total * heads];
        let mut att = vec![0.0; e_total * heads];
        let mut out = Tensor::zeros(n, dp);
        for i in 0..n {
            let slots = nb.incoming(i);
            for k in 0..heads {
                let mut mx = f64::NEG_INFINITY;
                for e in slots.clone() {
                    let j = nb.source(e);
                    let s = dst_score[i * heads + k] + src_score[j * heads + k] + attr_v[e] * edge_coef[k];
                    pre[e * heads + k] = s;
                    let l = if s > 0.0 { s } else { LEAKY_SLOPE * s };
                    att[e * heads + k] = l;
                    mx = mx.max(l);
                }
                let mut total = 0.0;
                for e in slots.clone() {
                    let w = (att[e * heads + k] - mx).exp();
                    att[e * heads + k] = w;
                    total += w;
                }
                let oi = &mut out.row_mut(i)[k * dh..(k + 1) * dh];
                for e in slots.clone() {
                    let w = att[e * heads + k] / total;
                    att[e * heads + k] = w;
                    axpy(oi, w, &zv.row(nb.source(e))[k * dh..(k + 1) * dh]);
                }
            }
        }
        Ok(self.push(out, Op::Attend { z, attr, we, a, heads, nb, att, pre, edge_coef }))
    }

    /// Attention weights of the most recent `attend` call producing `v`,
    /// laid out `[slot * heads + head]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attend { att, .. } => Some(att),
            _ => None,
        }
    }

    pub fn gelu(&mut self, x: Var, kind: GeluKind) -> Var {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v = gelu(*v, kind);
        }
        self.push(y, Op::Gelu { x, kind })
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("dropout rate must lie in [0, 1), got {p}")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let y = Tensor::new(xv.rows(), xv.cols(), data)?;
        Ok(self.push(y, Op::Mask { x, mask }))
    }

    pub fn mean_pool(&mut self, x: Var, seg: Arc<Segments>) -> Result<Var> {
        let xv = self.value(x);
        if seg.total() != xv.rows() {
            return Err(mismatch("mean_pool", format!("segments cover {} of {} rows", seg.total(), xv.rows())));
        }
        let mut y = Tensor::zeros(seg.count(), xv.cols());
        for g in 0..seg.count() {
            let r = seg.range(g);
            let inv = 1.0 / r.len() as f64;
            let yg = y.row_mut(g);
            for i in r {
                axpy(yg, 1.0, xv.row(i));
            }
            for v in yg {
                *v *= inv;
            }
        }
        Ok(self.push(y, Op::MeanPool { x, seg }))
    }

    /// Copies row `g` of `x` to every row of graph `g`.
    pub fn broadcast(&mut self, x: Var, seg: Arc<Segments>) -> Result<Var> {
        let xv = self.value(x);
        if seg.count() != xv.rows() {
            return Err(mismatch("broadcast", format!("{} graphs vs {} rows", seg.count(), xv.rows())));
        }
        let mut y = Tensor::zeros(seg.total(), xv.cols());
        for g in 0..seg.count() {
            for i in seg.range(g) {
                y.row_mut(i).copy_from_slice(xv.row(g));
            }
        }
        Ok(self.push(y, Op::Broadcast { x, seg }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(mismatch("concat_cols", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let cols = av.cols() + bv.cols();
        let mut y = Tensor::zeros(av.rows(), cols);
        for i in 0..av.rows() {
            let yi = y.row_mut(i);
            yi[..av.cols()].copy_from_slice(av.row(i));
            yi[av.cols()..].copy_from_slice(bv.row(i));
        }
        Ok(self.push(y, Op::Concat { a, b }))
    }

    /// Mean negative log-softmax of the true class, computed in log space.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() || lv.rows() == 0 {
            return Err(mismatch("cross_entropy", format!("{} rows vs {} labels", lv.rows(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(Error::Data(format!("label {l} out of range for {} classes", lv.cols())));
        }
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let y = Tensor::new(1, 1, vec![loss / labels.len() as f64])?;
        Ok(self.push(y, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// `sum(x .* w)` for a fixed weight tensor; turns any output into a
    /// scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, w: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != w.shape() {
            return Err(mismatch("weighted_sum", format!("{:?} vs {:?}", xv.shape(), w.shape())));
        }
        let s = xv.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::full(1, 1, s), Op::WeightedSum { x, w }))
    }

    /// Runs reverse accumulation from the scalar `loss`. Gradients are then
    /// available through [`Tape::grad`] and [`Tape::param_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(mismatch("backward", format!("loss must be 1x1, got {:?}", self.value(loss).shape())));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(1, 1, 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of parameter leaves, summed over repeated uses of the same
    /// id; zero tensors for parameters off the loss path.
    pub fn param_grads(&self, shapes: &[(usize, usize)]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                out[id].add_assign(g);
            }
        }
        out
    }

    fn backprop(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                for i in 0..xv.rows() {
                    let gi = g.row(i);
                    let dxi = dx.row_mut(i);
                    for (o, &go) in gi.iter().enumerate() {
                        if go != 0.0 {
                            axpy(dxi, go, wv.row(o));
                        }
                    }
                    let xi = xv.row(i);
                    for (o, &go) in gi.iter().enumerate() {
                        if go != 0.0 {
                            axpy(dw.row_mut(o), go, xi);
                        }
                    }
                }
                if let Some(b) = b {
                    let mut db = Tensor::zeros(1, wv.rows());
                    for i in 0..g.rows() {
                        axpy(db.row_mut(0), 1.0, g.row(i));
                    }
                    acc(grads, *b, db);
                }
                acc(grads, *x, dx);
                acc(grads, *w, dw);
            }
            Op::GraphNorm { x, gamma, beta, alpha, seg, xhat, std, mean } => {
                let d = xhat.cols();
                let (gm, al) = (self.value(*gamma).row(0), self.value(*alpha).row(0));
                let mut dx = Tensor::zeros(xhat.rows(), d);
                let mut dgamma = Tensor::zeros(1, d);
                let mut dbeta = Tensor::zeros(1, d);
                let mut dalpha = Tensor::zeros(1, d);
                for s in 0..seg.count() {
                    let r = seg.range(s);
                    let n = r.len() as f64;
                    let (sd, mu) = (std.row(s), mean.row(s));
                    let mut proj = vec![0.0; d];
                    for i in r.clone() {
                        for j in 0..d {
                            let gij = g.get(i, j);
                            let h = xhat.get(i, j);
                            dgamma.data_mut()[j] += gij * h;
                            dbeta.data_mut()[j] += gij;
                            proj[j] += gij * gm[j] * h;
                        }
                    }
                    let mut dc_sum = vec![0.0; d];
                    for i in r.clone() {
                        for j in 0..d {
                            let dc = g.get(i, j) * gm[j] / sd[j] - proj[j] * xhat.get(i, j) / (sd[j] * n);
                            dx.set(i, j, dc);
                            dc_sum[j] += dc;
                        }
                    }
                    for j in 0..d {
                        dalpha.data_mut()[j] -= mu[j] * dc_sum[j];
                    }
                    for i in r {
                        for j in 0..d {
                            let v = dx.get(i, j) - al[j] * dc_sum[j] / n;
                            dx.set(i, j, v);
                        }
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dgamma);
                acc(grads, *beta, dbeta);
                acc(grads, *alpha, dalpha);
            }
            Op::Attend { z, attr, we, a, heads, nb, att, pre, edge_coef } => {
                let heads = *heads;
                let (zv, atv, wev, av) = (self.value(*z), self.value(*attr), self.value(*we), self.value(*a));
                let attr_v = atv.data();
                let (n, dp) = zv.shape();
                let dh = dp / heads;
                let mut dz = Tensor::zeros(n, dp);
                let mut dattr = Tensor::zeros(attr_v.len(), 1);
                let mut da = Tensor::zeros(heads, 3 * dh);
                let mut dwe = Tensor::zeros(dp, 1);
                let mut d_dst = vec![0.0; n * heads];
                let mut d_src = vec![0.0; n * heads];
                let mut d_coef = vec![0.0; heads];
                let mut datt = Vec::new();
                for i in 0..n {
                    let slots = nb.incoming(i);
                    for k in 0..heads {
                        let gi = &g.row(i)[k * dh..(k + 1) * dh];
                        datt.clear();
                        let mut weighted = 0.0;
                        for e in slots.clone() {
                            let j = nb.source(e);
                            let w = att[e * heads + k];
                            let dw = dot(gi, &zv.row(j)[k * dh..(k + 1) * dh]);
                            axpy(&mut dz.row_mut(j)[k * dh..(k + 1) * dh], w, gi);
                            datt.push(dw);
                            weighted += w * dw;
                        }
                        for (e, &dw) in slots.clone().zip(&datt) {
                            let w = att[e * heads + k];
                            let ds = w * (dw - weighted);
                            let dpre = if pre[e * heads + k] > 0.0 { ds } else { LEAKY_SLOPE * ds };
                            let j = nb.source(e);
                            d_dst[i * heads + k] += dpre;
                            d_src[j * heads + k] += dpre;
                            d_coef[k] += dpre * attr_v[e];
                            dattr.data_mut()[e] += dpre * edge_coef[k];
                        }
                    }
                }
                for i in 0..n {
                    for k in 0..heads {
                        let (gd, gs) = (d_dst[i * heads + k], d_src[i * heads + k]);
                        let zi = &zv.row(i)[k * dh..(k + 1) * dh];
                        let dar = da.row_mut(k);
                        axpy(&mut dar[..dh], gd, zi);
                        axpy(&mut dar[dh..2 * dh], gs, zi);
                        let ar = av.row(k);
                        let dzi = &mut dz.row_mut(i)[k * dh..(k + 1) * dh];
                        axpy(dzi, gd, &ar[..dh]);
                        axpy(dzi, gs, &ar[dh..2 * dh]);
                    }
                }
                for k in 0..heads {
                    let wk = &wev.data()[k * dh..(k + 1) * dh];
                    axpy(&mut da.row_mut(k)[2 * dh..], d_coef[k], wk);
                    let a3 = &av.row(k)[2 * dh..];
                    axpy(&mut dwe.data_mut()[k * dh..(k + 1) * dh], d_coef[k], a3);
                }
                acc(grads, *z, dz);
                acc(grads, *attr, dattr);
                acc(grads, *we, dwe);
                acc(grads, *a, da);
            }
            Op::Gelu { x, kind } => {
                let xv = self.value(*x);
                let data = xv.data().iter().zip(g.data()).map(|(&x, &gy)| gy * gelu_grad(x, *kind)).collect();
                acc(grads, *x, Tensor::new(xv.rows(), xv.cols(), data).expect("shape"));
            }
            Op::Mask { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                acc(grads, *x, Tensor::new(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::MeanPool { x, seg } => {
                let mut dx = Tensor::zeros(seg.total(), g.cols());
                for s in 0..seg.count() {
                    let r = seg.range(s);
                    let inv = 1.0 / r.len() as f64;
                    for i in r {
                        axpy(dx.row_mut(i), inv, g.row(s));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Broadcast { x, seg } => {
                let mut dx = Tensor::zeros(seg.count(), g.cols());
                for s in 0..seg.count() {
                    for i in seg.range(s) {
                        axpy(dx.row_mut(s), 1.0, g.row(i));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).cols();
                let cb = g.cols() - ca;
                let mut da = Tensor::zeros(g.rows(), ca);
                let mut db = Tensor::zeros(g.rows(), cb);
                for i in 0..g.rows() {
                    da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let scale = g.get(0, 0) / labels.len() as f64;
                let mut dl = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    let row = dl.row_mut(r);
                    row[l] -= 1.0;
                    for v in row {
                        *v *= scale;
                    }
                }
                acc(grads, *logits, dl);
            }
            Op::WeightedSum { x, w } => {
                let mut dx = w.clone();
                dx.scale(g.get(0, 0));
                acc(grads, *x, dx);
            }
        }
    }
}
