use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Max relative FD error over all inputs of `build`, probed through a random
/// weighted sum of its output.
fn op_gradient_error(inputs: Vec<Tensor>, seed: u64, build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
        let out = build(&mut tape, &vars);
        let (r, c) = tape.value(out).shape();
        random(&mut rng, r, c)
    };
    let eval = |ts: &[Tensor], grads: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = tape.weighted_sum(out, probe.clone()).unwrap();
        let value = tape.value(loss).get(0, 0);
        let g = grads.then(|| {
            tape.backward(loss).unwrap();
            tape.param_grads(&ts.iter().map(Tensor::shape).collect::<Vec<_>>())
        });
        (value, g)
    };
    let grads = eval(&inputs, true).1.unwrap();
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    let opts = GradCheckOptions { max_entries: 400, ..Default::default() };
    check_gradients(&names, &inputs, &grads, |ts| Ok(eval(ts, false).0), &opts)
        .unwrap()
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0, f64::max)
}

fn ring(n: usize) -> (Arc<Neighborhoods>, Vec<f64>) {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).chain((0..n).map(|i| (i, (i + 3) % n))).collect();
    let attr: Vec<f64> = (0..edges.len()).map(|e| 0.5 + 0.1 * e as f64).collect();
    let (nb, slot_attr) = Neighborhoods::with_self_loops(n, &edges, &attr).unwrap();
    (Arc::new(nb), slot_attr)
}

#[test]
fn dense_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap());
    let w = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
    let y = tape.dense(x, w, None).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let zero = tape.constant(Tensor::zeros(3, 2));
    let b = tape.constant(Tensor::from_rows(&[[0.5, -1.5]]).unwrap());
    let y = tape.dense(zero, w, Some(b)).unwrap();
    assert!((0..3).all(|i| tape.value(y).row(i) == [0.5, -1.5]));
    let bad = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(tape.dense(bad, w, None), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn dense_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(&mut rng, 5, 4), random(&mut rng, 3, 4), random(&mut rng, 1, 3)];
    let err = op_gradient_error(inputs, 2, |t, v| t.dense(v[0], v[1], Some(v[2])).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn graph_norm_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = Arc::new(Segments::from_sizes(&[4, 6]).unwrap());
    let mut tape = Tape::new();
    let mut xt = random(&mut rng, 10, 3);
    for i in 0..10 {
        xt.set(i, 2, 7.0);
    }
    let x = tape.constant(xt);
    let ones = tape.constant(Tensor::full(1, 3, 1.0));
    let beta = tape.constant(Tensor::from_rows(&[[0.0, 0.0, 0.25]]).unwrap());
    let y = tape.graph_norm(x, ones, beta, ones, seg.clone()).unwrap();
    let yv = tape.value(y);
    for g in 0..2 {
        for j in 0..2 {
            let m: f64 = seg.range(g).map(|i| yv.get(i, j)).sum::<f64>() / seg.range(g).len() as f64;
            assert!(m.abs() < 1e-9);
        }
        // Constant column: variance vanishes and the output collapses to beta.
        for i in seg.range(g) {
            assert!((yv.get(i, 2) - 0.25).abs() < 1e-9);
        }
    }
}

#[test]
fn graph_norm_mean_follows_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let seg = Arc::new(Segments::single(8).unwrap());
    let xt = random(&mut rng, 8, 2);
    let mut tape = Tape::new();
    let x = tape.constant(xt.clone());
    let gamma = tape.constant(Tensor::from_rows(&[[1.5, 0.5]]).unwrap());
    let beta = tape.constant(Tensor::from_rows(&[[0.1, -0.2]]).unwrap());
    let alpha = tape.constant(Tensor::from_rows(&[[0.3, 0.8]]).unwrap());
    let y = tape.graph_norm(x, gamma, beta, alpha, seg).unwrap();
    for (j, (g, b, a)) in [(1.5, 0.1, 0.3), (0.5, -0.2, 0.8)].into_iter().enumerate() {
        let col: Vec<f64> = (0..8).map(|i| xt.get(i, j)).collect();
        let mu = col.iter().sum::<f64>() / 8.0;
        let var = col.iter().map(|x| (x - a * mu).powi(2)).sum::<f64>() / 8.0;
        let expected = (1.0 - a) * mu * g / (var + GRAPHNORM_EPS).sqrt() + b;
        let got = (0..8).map(|i| tape.value(y).get(i, j)).sum::<f64>() / 8.0;
        assert!((got - expected).abs() < 1e-12);
    }
}

#[test]
fn graph_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seg = Arc::new(Segments::from_sizes(&[3, 5]).unwrap());
    let inputs = vec![
        random(&mut rng, 8, 4),
        random(&mut rng, 1, 4),
        random(&mut rng, 1, 4),
        Tensor::new(1, 4, vec![0.2, 0.7, 1.0, 1.3]).unwrap(),
    ];
    let err = op_gradient_error(inputs, 5, |t, v| t.graph_norm(v[0], v[1], v[2], v[3], seg.clone()).unwrap());
    assert!(err < 1e-5, "{err}");
}

#[test]
fn attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // A lone node attends only to itself.
    let (nb, _) = Neighborhoods::with_self_loops(1, &[], &[]).unwrap();
    let mut tape = Tape::new();
    let zt = random(&mut rng, 1, 4);
    let z = tape.constant(zt.clone());
    let attr = tape.constant(Tensor::zeros(1, 1));
    let we = tape.constant(random(&mut rng, 4, 1));
    let a = tape.constant(random(&mut rng, 2, 6));
    let out = tape.attend(z, attr, we, a, 2, Arc::new(nb)).unwrap();
    assert_eq!(tape.attention_weights(out).unwrap(), [1.0, 1.0]);
    assert_eq!(tape.value(out), &zt);

    // Zero attention vector: uniform weights over each neighbourhood.
    let (nb, slot_attr) = ring(9);
    let mut tape = Tape::new();
    let z = tape.constant(random(&mut rng, 9, 4));
    let attr = tape.constant(Tensor::new(slot_attr.len(), 1, slot_attr).unwrap());
    let we = tape.constant(Tensor::full(4, 1, 1.0));
    let a0 = tape.constant(Tensor::zeros(1, 12));
    let out = tape.attend(z, attr, we, a0, 1, nb.clone()).unwrap();
    let att = tape.attention_weights(out).unwrap();
    for i in 0..9 {
        let slots = nb.incoming(i);
        let expected = 1.0 / slots.len() as f64;
        assert!(slots.clone().all(|e| (att[e] - expected).abs() < 1e-15));
    }
}

#[test]
fn attention_matches_direct_formula() {
    // Reference: materialize the projected edge features, score every slot
    // with the full concatenation and softmax per destination and head.
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let (nb, slot_attr) = ring(11);
    let (dp, heads) = (8, 2);
    let dh = dp / heads;
    let zt = random(&mut rng, 11, dp);
    let wet = random(&mut rng, dp, 1);
    let at = random(&mut rng, heads, 3 * dh);
    let mut tape = Tape::new();
    let z = tape.constant(zt.clone());
    let attr = tape.constant(Tensor::new(slot_attr.len(), 1, slot_attr.clone()).unwrap());
    let we = tape.constant(wet.clone());
    let a = tape.constant(at.clone());
    let out = tape.attend(z, attr, we, a, heads, nb.clone()).unwrap();
    for i in 0..11 {
        for k in 0..heads {
            let mut scores = Vec::new();
            for e in nb.incoming(i) {
                let j = nb.source(e);
                let mut s = 0.0;
                for c in 0..dh {
                    s += at.get(k, c) * zt.get(i, k * dh + c);
                    s += at.get(k, dh + c) * zt.get(j, k * dh + c);
                    s += at.get(k, 2 * dh + c) * slot_attr[e] * wet.get(k * dh + c, 0);
                }
                scores.push((j, if s > 0.0 { s } else { 0.2 * s }));
            }
            let total: f64 = scores.iter().map(|(_, s)| s.exp()).sum();
            for c in 0..dh {
                let expect: f64 = scores.iter().map(|&(j, s)| s.exp() / total * zt.get(j, k * dh + c)).sum();
                assert!((tape.value(out).get(i, k * dh + c) - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (nb, _) = ring(20);
    for heads in [1, 4] {
        let mut tape = Tape::new();
        let z = tape.constant(random(&mut rng, 20, 8));
        let attr = tape.constant(random(&mut rng, nb.edge_count(), 1));
        let we = tape.constant(random(&mut rng, 8, 1));
        let a = tape.constant(random(&mut rng, heads, 3 * 8 / heads));
        let out = tape.attend(z, attr, we, a, heads, nb.clone()).unwrap();
        let att = tape.attention_weights(out).unwrap();
        for i in 0..20 {
            for k in 0..heads {
                let s: f64 = nb.incoming(i).map(|e| att[e * heads + k]).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn attention_ignores_shared_score_offset() {
    // Adding the same constant to every score of a neighbourhood (here via
    // the destination term, shared by all incoming slots) leaves the weights
    // unchanged as long as no score changes sign.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (nb, _) = ring(12);
    let zt = random(&mut rng, 12, 4);
    let attr_t = Tensor::zeros(nb.edge_count(), 1);
    let we_t = Tensor::full(4, 1, 1.0);
    let mut at = random(&mut rng, 1, 12);
    for v in &mut at.data_mut()[..4] {
        *v = v.abs() * 3.0;
    }
    let mut zt_pos = zt.clone();
    for v in zt_pos.data_mut() {
        *v = v.abs() + 1.0;
    }
    let weights = |z: &Tensor, a: &Tensor| {
        let mut tape = Tape::new();
        let (z, a) = (tape.constant(z.clone()), tape.constant(a.clone()));
        let (attr, we) = (tape.constant(attr_t.clone()), tape.constant(we_t.clone()));
        let out = tape.attend(z, attr, we, a, 1, nb.clone()).unwrap();
        tape.attention_weights(out).unwrap().to_vec()
    };
    let mut a_pos = at.clone();
    for v in &mut a_pos.data_mut()[4..] {
        *v = v.abs() + 0.1;
    }
    let base = weights(&zt_pos, &a_pos);
    let mut shifted = a_pos.clone();
    for v in &mut shifted.data_mut()[..4] {
        *v += 0.5;
    }
    let moved = weights(&zt_pos, &shifted);
    for (x, y) in base.iter().zip(&moved) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn attention_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (nb, _) = ring(10);
    for heads in [1, 2] {
        let inputs = vec![
            random(&mut rng, 10, 4),
            random(&mut rng, nb.edge_count(), 1),
            random(&mut rng, 4, 1),
            random(&mut rng, heads, 12 / heads),
        ];
        let err = op_gradient_error(inputs, 9, |t, v| t.attend(v[0], v[1], v[2], v[3], heads, nb.clone()).unwrap());
        assert!(err < 1e-5, "heads {heads}: {err}");
    }
}

#[test]
fn gelu_examples() {
    assert_eq!(gelu(0.0, GeluKind::Tanh), 0.0);
    assert!((gelu(3.0, GeluKind::Tanh) - 2.99595).abs() < 1e-3);
    assert!((gelu(-3.0, GeluKind::Tanh) + 0.00405).abs() < 1e-3);
    assert!((gelu(3.0, GeluKind::Erf) - 3.0 * 0.998_650_101_968_369_9).abs() < 1e-12);
    for x in [-3.0, -1.0, 0.3, 2.0] {
        assert!((gelu(x, GeluKind::Tanh) - gelu(x, GeluKind::Erf)).abs() < 1e-3);
    }
}

#[test]
fn gelu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in [GeluKind::Tanh, GeluKind::Erf] {
        let err = op_gradient_error(vec![random(&mut rng, 6, 5)], 11, |t, v| t.gelu(v[0], kind));
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn dropout_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(1000, 1000, 1.0));
    assert_eq!(tape.dropout(x, 0.0, &mut rng).unwrap(), x);
    let y = tape.dropout(x, 0.15, &mut rng).unwrap();
    let zeros = tape.value(y).data().iter().filter(|&&v| v == 0.0).count();
    assert!((zeros as f64 / 1e6 - 0.15).abs() < 0.01);
    let kept = tape.value(y).data().iter().find(|&&v| v != 0.0).unwrap();
    assert!((kept - 1.0 / 0.85).abs() < 1e-15);
    assert!(tape.dropout(x, 1.0, &mut rng).is_err());
}

#[test]
fn dropout_gradient_uses_mask() {
    let mut tape = Tape::new();
    let x = tape.param(0, Tensor::full(4, 4, 2.0));
    let y = tape.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mask: Vec<f64> = tape.value(y).data().iter().map(|v| v / 2.0).collect();
    let loss = tape.weighted_sum(y, Tensor::full(4, 4, 1.0)).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &mask[..]);
}

#[test]
fn pooling_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let seg = Arc::new(Segments::from_sizes(&[1, 3, 5]).unwrap());
    let xt = random(&mut rng, 9, 3);
    let mut tape = Tape::new();
    let x = tape.constant(xt.clone());
    let p = tape.mean_pool(x, seg.clone()).unwrap();
    assert_eq!(tape.value(p).row(0), xt.row(0));
    let ids = seg.graph_ids();
    for g in 0..3 {
        for j in 0..3 {
            let rows: Vec<f64> = (0..9).filter(|&i| ids[i] == g).map(|i| xt.get(i, j)).collect();
            let naive = rows.iter().sum::<f64>() / rows.len() as f64;
            assert!((tape.value(p).get(g, j) - naive).abs() < 1e-12);
        }
    }
    let c = tape.constant(Tensor::full(9, 2, 4.5));
    let pc = tape.mean_pool(c, seg.clone()).unwrap();
    assert!(tape.value(pc).data().iter().all(|&v| v == 4.5));
    let b = tape.broadcast(p, seg.clone()).unwrap();
    assert_eq!(tape.value(b).row(2), tape.value(p).row(1));
    assert_eq!(tape.value(b).row(4), tape.value(p).row(2));
}

#[test]
fn pooling_broadcast_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let seg = Arc::new(Segments::from_sizes(&[2, 4]).unwrap());
    let err = op_gradient_error(vec![random(&mut rng, 6, 3), random(&mut rng, 2, 2)], 16, |t, v| {
        let p = t.mean_pool(v[0], seg.clone()).unwrap();
        let b = t.broadcast(v[1], seg.clone()).unwrap();
        let c = t.concat_cols(v[0], b).unwrap();
        let pc = t.mean_pool(c, seg.clone()).unwrap();
        t.concat_cols(p, pc).unwrap()
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::from_rows(&[[20.0, -20.0]]).unwrap());
    let loss = tape.cross_entropy(l, &[0]).unwrap();
    assert!(tape.value(loss).get(0, 0) < 1e-15);
    let eq = tape.constant(Tensor::from_rows(&[[0.3, 0.3], [-2.0, -2.0]]).unwrap());
    let loss = tape.cross_entropy(eq, &[0, 1]).unwrap();
    assert!((tape.value(loss).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
    let l = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
    let loss = tape.cross_entropy(l, &[1]).unwrap();
    let p_true = 2f64.exp() / (1f64.exp() + 2f64.exp());
    assert!((tape.value(loss).get(0, 0) + p_true.ln()).abs() < 1e-12);
    let huge = tape.constant(Tensor::from_rows(&[[1000.0, -1000.0]]).unwrap());
    let loss = tape.cross_entropy(huge, &[1]).unwrap();
    assert!((tape.value(loss).get(0, 0) - 2000.0).abs() < 1e-9);
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let labels = [0, 1, 1, 0, 1];
    let err = op_gradient_error(vec![random(&mut rng, 5, 2)], 19, |t, v| t.cross_entropy(v[0], &labels).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backward_contract() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(2, 2, 1.0));
    let w = tape.param(0, Tensor::full(2, 2, 0.5));
    let unused = tape.param(1, Tensor::full(1, 3, 0.5));
    let y = tape.dense(x, w, None).unwrap();
    let loss = tape.cross_entropy(y, &[0, 1]).unwrap();
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
    let g = tape.param_grads(&[(2, 2), (1, 3)]);
    assert!(g[0].is_finite());
    assert!(g[1].data().iter().all(|&v| v == 0.0));
    let _ = unused;

    // Loss built only from constants: parameters receive zero gradient.
    let mut tape = Tape::new();
    let _w = tape.param(0, Tensor::full(2, 2, 0.5));
    let c = tape.constant(Tensor::full(1, 2, 0.1));
    let loss = tape.cross_entropy(c, &[1]).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.param_grads(&[(2, 2)])[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn adam_examples() {
    let mut p = vec![Tensor::full(2, 3, 1.0)];
    let mut adam = Adam::new(&[(2, 3)]);
    adam.update(&mut p, &[Tensor::zeros(2, 3)], 1e-3).unwrap();
    assert!(p[0].data().iter().all(|&v| v == 1.0));

    let mut p = vec![Tensor::full(1, 4, 1.0)];
    let mut adam = Adam::new(&[(1, 4)]);
    let g = Tensor::new(1, 4, vec![0.3, -2.0, 5e-3, 1e3]).unwrap();
    adam.update(&mut p, std::slice::from_ref(&g), 1e-3).unwrap();
    for (v, gi) in p[0].data().iter().zip(g.data()) {
        let step = 1.0 - v;
        assert!((step.abs() - 1e-3).abs() < 1e-8, "{step}");
        assert_eq!(step.signum(), gi.signum());
    }

    let run = || {
        let mut p = vec![Tensor::full(1, 2, 0.0)];
        let mut adam = Adam::new(&[(1, 2)]);
        for k in 0..10 {
            let g = Tensor::new(1, 2, vec![k as f64 * 0.1, -0.3]).unwrap();
            adam.update(&mut p, &[g], 1e-2).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn lr_schedule_examples() {
    assert_eq!(lr_schedule(0, 1e-3, 0.5, 33), 1e-3);
    assert!((lr_schedule(33, 1e-3, 0.5, 33) - 5e-4).abs() < 1e-18);
    assert!((lr_schedule(34, 1e-3, 0.5, 33) - 5e-4).abs() < 1e-18);
    assert!((lr_schedule(5, 1e-3, 0.4, 5) - 4e-4).abs() < 1e-18);
    assert!((lr_schedule(24, 1e-3, 0.4, 5) - 1e-3 * 0.4f64.powi(4)).abs() < 1e-18);
}
