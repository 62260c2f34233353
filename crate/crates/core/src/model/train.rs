use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{GraphBatch, GraphSample, InputScaling};
use super::bgnn::{predictions, Bgnn};
use super::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::geom::derive_seed;
use crate::nn::{check_gradients, lr_schedule, Adam, GradCheckOptions, Tape, Tensor, TensorCheck};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Accuracy of the dropout-mode predictions made while training.
    pub train_acc: f64,
    /// Inference-mode accuracy on the training split after the epoch.
    pub train_eval_acc: Option<f64>,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub final_val_acc: f64,
    #[serde(skip)]
    pub optimizer: Option<Adam>,
}

/// Splits `samples` into consecutive batches of at most `size` graphs.
pub fn make_batches(samples: &[&GraphSample], size: usize, mask: &[usize]) -> Result<Vec<GraphBatch>> {
    samples.chunks(size.max(1)).map(|c| GraphBatch::new(c, mask)).collect()
}

/// Percentage of graphs whose argmax logit matches the label.
pub fn accuracy(model: &Bgnn, batches: &[GraphBatch]) -> Result<f64> {
    let counts: Vec<(usize, usize)> = batches
        .par_iter()
        .map(|b| {
            let pred = predictions(&model.logits(b)?);
            Ok((pred.iter().zip(&b.labels).filter(|(p, l)| p == l).count(), b.labels.len()))
        })
        .collect::<Result<_>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    if total == 0 {
        return Err(Error::Empty("evaluation split".into()));
    }
    Ok(100.0 * hit as f64 / total as f64)
}

pub fn evaluate(model: &Bgnn, split: &[GraphSample], batch_size: usize) -> Result<f64> {
    let refs: Vec<&GraphSample> = split.iter().collect();
    accuracy(model, &make_batches(&refs, batch_size, &model.config().feature_mask)?)
}

/// Loss and parameter gradients of one batch.
pub fn loss_and_grads<R: rand::Rng + ?Sized>(
    model: &Bgnn,
    batch: &GraphBatch,
    training: bool,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>, Tensor)> {
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, batch, training, rng)?;
    let loss = tape.cross_entropy(logits, &batch.labels)?;
    let value = tape.value(loss).get(0, 0);
    let out = tape.value(logits).clone();
    tape.backward(loss)?;
    Ok((value, tape.param_grads(&model.shapes()), out))
}

/// Adam with step-decayed learning rate; keeps the parameters of the epoch
/// with the best validation accuracy (earliest on ties) in `model`.
pub fn train(model: &mut Bgnn, train: &[GraphSample], val: &[GraphSample], tc: &TrainConfig) -> Result<TrainReport> {
    train_with_progress(model, train, val, tc, |_| {})
}

pub fn train_with_progress(
    model: &mut Bgnn,
    train: &[GraphSample],
    val: &[GraphSample],
    tc: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    if tc.standardize_inputs {
        model.set_scaling(Some(InputScaling::fit(train)?));
    }
    let mask = model.config().feature_mask.clone();
    let val_refs: Vec<&GraphSample> = val.iter().collect();
    let val_batches = make_batches(&val_refs, tc.batch_size, &mask)?;
    let train_eval_batches = if tc.eval_train {
        let refs: Vec<&GraphSample> = train.iter().collect();
        Some(make_batches(&refs, tc.batch_size, &mask)?)
    } else {
        None
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[tc.seed, 1]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[tc.seed, 2]));
    let mut adam = Adam::new(&model.shapes());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    for epoch in 0..tc.epochs {
        let lr = lr_schedule(epoch, tc.base_lr, tc.decay_factor, tc.decay_period);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            let samples: Vec<&GraphSample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = GraphBatch::new(&samples, &mask)?;
            let (loss, grads, logits) = loss_and_grads(model, &batch, true, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Data(format!("non-finite training loss at epoch {epoch}")));
            }
            adam.update(model.params_mut(), &grads, lr)?;
            loss_sum += loss;
            batches += 1;
            hits += predictions(&logits).iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
        }
        let val_acc = accuracy(model, &val_batches)?;
        let train_eval_acc = match &train_eval_batches {
            Some(b) => Some(accuracy(model, b)?),
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            train_acc: 100.0 * hits as f64 / train.len() as f64,
            train_eval_acc,
            val_acc,
        };
        progress(&rec);
        if best.as_ref().is_none_or(|b| val_acc > b.1) {
            best = Some((epoch, val_acc, model.params().to_vec()));
        }
        history.push(rec);
    }
    let (best_epoch, best_val_acc, params) = best.expect("at least one epoch");
    let final_val_acc = history.last().map_or(0.0, |r| r.val_acc);
    model.set_params(params)?;
    Ok(TrainReport { history, best_epoch, best_val_acc, final_val_acc, optimizer: Some(adam) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: Vec<usize>,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// One full training run per feature mask, each from the same seeds and
/// splits. Rows come back in mask order.
pub fn ablate(
    base: &ModelConfig,
    masks: &[Vec<usize>],
    splits: (&[GraphSample], &[GraphSample], &[GraphSample]),
    tc: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let (tr, va, te) = splits;
    masks
        .iter()
        .map(|mask| {
            let cfg = ModelConfig { feature_mask: mask.clone(), ..base.clone() };
            let mut model = Bgnn::new(cfg)?;
            train(&mut model, tr, va, tc)?;
            Ok(AblationRow {
                mask: mask.clone(),
                train_acc: evaluate(&model, tr, tc.batch_size)?,
                val_acc: evaluate(&model, va, tc.batch_size)?,
                test_acc: evaluate(&model, te, tc.batch_size)?,
            })
        })
        .collect()
}

/// Central-difference check of every parameter tensor on one batch. With
/// `dropout_seed` set the check runs in training mode with a fixed mask.
pub fn gradient_check(
    model: &Bgnn,
    batch: &GraphBatch,
    dropout_seed: Option<u64>,
    opts: &GradCheckOptions,
) -> Result<Vec<TensorCheck>> {
    let training = dropout_seed.is_some();
    let rng = || ChaCha8Rng::seed_from_u64(dropout_seed.unwrap_or(0));
    let (_, grads, _) = loss_and_grads(model, batch, training, &mut rng())?;
    let loss = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let logits = model.forward_with(&mut tape, batch, training, &mut rng(), params)?;
        let l = tape.cross_entropy(logits, &batch.labels)?;
        Ok(tape.value(l).get(0, 0))
    };
    check_gradients(model.names(), model.params(), &grads, loss, opts)
}
