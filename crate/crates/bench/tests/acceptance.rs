//! Acceptance checks. Prints one PASS/FAIL line per criterion. This is a
//! report, so it exits zero unless ACCEPTANCE_STRICT is set. Criterion 7
//! runs two desk trainings and takes about a quarter of an hour.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tumorgraph::cut::{CutCell, CutSpec};
use tumorgraph::features::{
    assemble_features, cell_volume, local_birth_intensity, local_death_intensity, local_intensity, FeatureConfig,
};
use tumorgraph::geom::{dist, Vec3};
use tumorgraph::graph::{build_knn_graph, PatchGraph, PatchSource};
use tumorgraph::labeling::{assign_class, normalized_entropy, CloneDistribution, HeterogeneityClass, LabelConfig};
use tumorgraph::model::{gradient_check, Bgnn, GraphBatch, GraphSample, ModelConfig, Variant};
use tumorgraph::nn::{check_gradients, gelu, GeluKind, GradCheckOptions, Neighborhoods, Segments, Tape, Tensor, Var};
use tumorgraph::pipeline::*;
use tumorgraph::sim::{birth_rate, death_rate, kernel_rho, simulate, success_probability, IntrinsicParams, KernelParams};
use tumorgraph_bench::{ball_points, brute_force_density, build_index, indexed_density, paper_params};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} +- {tol:e}"))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_cells(n: usize, seed: u64) -> Vec<CutCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|i| CutCell {
            cell_id: i,
            position: [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(0.0..3.0)],
            mutation_id: rng.random_range(0..5),
            birth_flag: rng.random_bool(0.2) as u8,
            death_flag: rng.random_bool(0.1) as u8,
            density: rng.random_range(0.0..3.0),
        })
        .collect()
}

fn patch(cells: Vec<CutCell>, seed: u64) -> PatchGraph {
    let center = cells[0].position;
    build_knn_graph(cells, center, 10.0, PatchSource { tumor: seed, cut: CutSpec::new(0.0, 40.0), patch: 0 }, 10).unwrap()
}

fn sample(g: &PatchGraph, label: usize) -> GraphSample {
    let cfg = FeatureConfig { volume_samples: 4000, ..FeatureConfig::default() };
    GraphSample::from_patch(g, &assemble_features(g, &cfg).unwrap(), label).unwrap()
}

fn batch(samples: &[GraphSample], mask: &[usize]) -> GraphBatch {
    let refs: Vec<&GraphSample> = samples.iter().collect();
    GraphBatch::new(&refs, mask).unwrap()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn math_units() -> Check {
    let rho = KernelParams::density();
    close("kernel_rho(0)", kernel_rho(0.0, &rho), 1.0, 1e-9)?;
    close("kernel_rho(1)", kernel_rho(1.0, &rho), (-0.5f64).exp(), 1e-9)?;
    close("kernel_rho(1) rounded", kernel_rho(1.0, &rho), 0.60653, 1e-5)?;
    close("kernel_rho(2)", kernel_rho(2.0, &rho), 0.0, 0.0)?;

    let rate = KernelParams::rate();
    let p = IntrinsicParams::reference();
    close("success at rho 0", success_probability(&p, 0.0, &rate), 0.9, 1e-9)?;
    close("success at huge rho", success_probability(&p, 1e6, &rate), 0.0, 1e-9)?;
    close("birth at rho 0", birth_rate(&p, 0.0, &rate), 0.2, 1e-9)?;
    close("death at rho 0", death_rate(&p, 0.0, &rate).map_err(err)?, 10.0, 1e-9)?;
    let two = KernelParams { scale: 2.0, ..rate };
    let half = IntrinsicParams { lifespan_eff: 0.5, ..p };
    close("death, s_l 2, eff 0.5", death_rate(&half, 0.0, &two).map_err(err)?, 1.0, 1e-9)?;
    let grid: Vec<f64> = (0..=10).map(|i| 0.5 * i as f64).collect();
    for w in grid.windows(2) {
        ensure(birth_rate(&p, w[1], &rate) <= birth_rate(&p, w[0], &rate), || "birth rate increases with density".into())?;
        ensure(death_rate(&p, w[1], &rate).unwrap() > death_rate(&p, w[0], &rate).unwrap(), || "death rate not increasing".into())?;
    }

    for kind in [GeluKind::Tanh, GeluKind::Erf] {
        close("gelu(3)", gelu(3.0, kind), 2.99595, 1e-3)?;
        close("gelu(-3)", gelu(-3.0, kind), -0.00405, 1e-3)?;
    }

    // GraphNorm on two graphs: zero column means at alpha 1, beta on a constant column.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x = random(&mut rng, 9, 3);
    for r in 0..9 {
        x.set(r, 2, 4.0);
    }
    let seg = Arc::new(Segments::from_sizes(&[4, 5]).map_err(err)?);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let gamma = tape.constant(Tensor::full(1, 3, 1.0));
    let beta = tape.constant(Tensor::new(1, 3, vec![0.0, 0.0, 0.7]).map_err(err)?);
    let alpha = tape.constant(Tensor::full(1, 3, 1.0));
    let y = tape.graph_norm(xv, gamma, beta, alpha, seg.clone()).map_err(err)?;
    for g in 0..2 {
        for c in 0..2 {
            let m: f64 = seg.range(g).map(|r| tape.value(y).get(r, c)).sum::<f64>() / seg.range(g).len() as f64;
            close("graph norm column mean", m, 0.0, 1e-9)?;
        }
        for r in seg.range(g) {
            close("graph norm constant column", tape.value(y).get(r, 2), 0.7, 1e-9)?;
        }
    }

    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(2, 2, vec![0.3, 0.3, 20.0, -20.0]).map_err(err)?);
    let both = tape.cross_entropy(l, &[1, 0]).map_err(err)?;
    close("cross entropy", tape.value(both).get(0, 0), 0.5 * std::f64::consts::LN_2, 1e-9)?;
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(1, 2, vec![20.0, -20.0]).map_err(err)?);
    let sure = tape.cross_entropy(l, &[0]).map_err(err)?;
    close("confident cross entropy", tape.value(sure).get(0, 0), 0.0, 1e-9)?;

    entropy_examples()?;
    Ok("kernels, rates, GELU, GraphNorm, cross-entropy and entropy examples".into())
}

fn entropy_examples() -> Result<(), String> {
    let u = |labels: Vec<u64>| normalized_entropy(&CloneDistribution::from_labels(labels).unwrap());
    close("single clone", u(vec![7; 40]), 0.0, 1e-9)?;
    close("singletons", u((0..40).collect()), 1.0, 1e-9)?;
    close("U(0.5, 0.25, 0.25)", u(vec![1, 1, 2, 3]), 0.94639, 1e-5)?;
    let lc = LabelConfig::default();
    ensure(assign_class(0.30, &lc).class == HeterogeneityClass::Low, || "0.30 not low".into())?;
    ensure(assign_class(0.41, &lc).class == HeterogeneityClass::Discarded, || "0.41 not discarded".into())?;
    ensure(assign_class(0.55, &lc).class == HeterogeneityClass::High, || "0.55 not high".into())
}

/// Max relative error of `build`'s gradients against central differences,
/// with a fixed random linear readout as the loss.
fn layer_error(inputs: Vec<Tensor>, seed: u64, build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
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
    let opts = GradCheckOptions { max_entries: 300, ..Default::default() };
    check_gradients(&names, &inputs, &grads, |ts| Ok(eval(ts, false).0), &opts)
        .unwrap()
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0, f64::max)
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = patch(random_cells(130, 21), 21);
    let s = sample(&g, 1);
    let n = s.node_count();
    let (nb, slot) = Neighborhoods::with_self_loops(n, &s.edges, &s.edge_attr).map_err(err)?;
    let nb = Arc::new(nb);
    let seg = Arc::new(Segments::from_sizes(&[50, n - 50]).map_err(err)?);
    let mut worst: Vec<(String, f64)> = Vec::new();

    let x = random(&mut rng, n, 6);
    worst.push((
        "dense".into(),
        layer_error(vec![x.clone(), random(&mut rng, 5, 6), random(&mut rng, 1, 5)], 3, |t, v| {
            t.dense(v[0], v[1], Some(v[2])).unwrap()
        }),
    ));
    let gn = vec![x.clone(), random(&mut rng, 1, 6), random(&mut rng, 1, 6), random(&mut rng, 1, 6)];
    worst.push(("graph_norm".into(), layer_error(gn, 4, |t, v| t.graph_norm(v[0], v[1], v[2], v[3], seg.clone()).unwrap())));
    for heads in [1, 4] {
        let inputs = vec![
            random(&mut rng, n, 8),
            Tensor::new(slot.len(), 1, slot.clone()).unwrap(),
            random(&mut rng, 8, 1),
            random(&mut rng, heads, 3 * 8 / heads),
        ];
        let e = layer_error(inputs, 5, |t, v| t.attend(v[0], v[1], v[2], v[3], heads, nb.clone()).unwrap());
        worst.push((format!("attention/{heads}-head"), e));
    }
    for kind in [GeluKind::Tanh, GeluKind::Erf] {
        worst.push((format!("gelu/{kind:?}"), layer_error(vec![x.clone()], 6, |t, v| t.gelu(v[0], kind))));
    }
    worst.push((
        "dropout".into(),
        layer_error(vec![x.clone()], 7, |t, v| t.dropout(v[0], 0.15, &mut ChaCha8Rng::seed_from_u64(8)).unwrap()),
    ));
    worst.push(("mean_pool".into(), layer_error(vec![x.clone()], 9, |t, v| t.mean_pool(v[0], seg.clone()).unwrap())));
    worst.push((
        "broadcast".into(),
        layer_error(vec![random(&mut rng, 2, 3)], 10, |t, v| t.broadcast(v[0], seg.clone()).unwrap()),
    ));
    worst.push((
        "concat".into(),
        layer_error(vec![x.clone(), random(&mut rng, n, 2)], 11, |t, v| t.concat_cols(v[0], v[1]).unwrap()),
    ));
    worst.push((
        "cross_entropy".into(),
        layer_error(vec![random(&mut rng, 5, 2)], 12, |t, v| t.cross_entropy(v[0], &[0, 1, 1, 0, 1]).unwrap()),
    ));

    let opts = GradCheckOptions::default();
    let samples = vec![s.clone(), sample(&patch(random_cells(124, 22), 22), 0)];
    for variant in Variant::ALL {
        for heads in [1, 4] {
            let cfg = ModelConfig { heads, variant, init_seed: 5, ..ModelConfig::default() };
            let model = Bgnn::new(cfg.clone()).map_err(err)?;
            let b = batch(&samples, &cfg.feature_mask);
            for dropout in [None, Some(13)] {
                let e = gradient_check(&model, &b, dropout, &opts).map_err(err)?.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
                let mode = if dropout.is_some() { "train" } else { "eval" };
                worst.push((format!("{}/{mode}", cfg.label()), e));
            }
        }
    }
    let (name, e) = worst.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure(e < 1e-4, || format!("{name}: max relative error {e:e}"))?;
    Ok(format!("{} layer and model checks on a {n}-node patch, worst {name} {e:.1e}", worst.len()))
}

fn permuted(s: &GraphSample, seed: u64) -> GraphSample {
    let n = s.node_count();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut features = vec![[0.0; 7]; n];
    for (old, &new) in perm.iter().enumerate() {
        features[new] = s.features[old];
    }
    GraphSample {
        features,
        edges: s.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect(),
        edge_attr: s.edge_attr.clone(),
        label: s.label,
    }
}

fn invariances() -> Check {
    // Coordinates on a dyadic grid so that translating by whole numbers is exact.
    let q = |x: f64| (x * 1048576.0).round() / 1048576.0;
    let mut cells = random_cells(140, 31);
    for c in &mut cells {
        c.position = c.position.map(q);
    }
    let shift: Vec3 = [37.0, -112.0, 5.0];
    let moved: Vec<CutCell> = cells
        .iter()
        .map(|c| CutCell { position: [c.position[0] + shift[0], c.position[1] + shift[1], c.position[2] + shift[2]], ..*c })
        .collect();
    let (g0, g1) = (patch(cells, 31), patch(moved, 31));
    let fc = FeatureConfig { volume_samples: 20_000, ..FeatureConfig::default() };
    let (h0, h1) = (assemble_features(&g0, &fc).map_err(err)?, assemble_features(&g1, &fc).map_err(err)?);
    ensure(h0 == h1, || "feature matrix changes under translation".into())?;
    let model = Bgnn::new(ModelConfig { heads: 4, ..ModelConfig::default() }).map_err(err)?;
    let mask = &model.config().feature_mask;
    let s0 = GraphSample::from_patch(&g0, &h0, 0).map_err(err)?;
    let s1 = GraphSample::from_patch(&g1, &h1, 0).map_err(err)?;
    ensure(
        model.logits(&batch(&[s0.clone()], mask)).map_err(err)? == model.logits(&batch(&[s1], mask)).map_err(err)?,
        || "logits change under translation".into(),
    )?;

    let mut perm_err: f64 = 0.0;
    for variant in Variant::ALL {
        for heads in [1, 4] {
            let cfg = ModelConfig { heads, variant, init_seed: 9, ..ModelConfig::default() };
            let m = Bgnn::new(cfg.clone()).map_err(err)?;
            let a = m.logits(&batch(&[s0.clone()], &cfg.feature_mask)).map_err(err)?;
            let b = m.logits(&batch(&[permuted(&s0, 32)], &cfg.feature_mask)).map_err(err)?;
            perm_err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(perm_err, f64::max);
        }
    }
    ensure(perm_err <= 1e-9, || format!("permutation changes logits by {perm_err:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let b = batch(&[s0.clone()], mask);
    let mut row_err: f64 = 0.0;
    for heads in [1, 4] {
        let mut tape = Tape::new();
        let z = tape.constant(random(&mut rng, s0.node_count(), 16));
        let attr = tape.constant(b.slot_attr.clone());
        let we = tape.constant(random(&mut rng, 16, 1));
        let a = tape.constant(random(&mut rng, heads, 3 * 16 / heads));
        let out = tape.attend(z, attr, we, a, heads, b.neighborhoods.clone()).map_err(err)?;
        let w = tape.attention_weights(out).expect("attention output");
        for i in 0..s0.node_count() {
            for k in 0..heads {
                let total: f64 = b.neighborhoods.incoming(i).map(|e| w[e * heads + k]).sum();
                row_err = row_err.max((total - 1.0).abs());
            }
        }
    }
    ensure(row_err <= 1e-12, || format!("attention rows off by {row_err:e}"))?;
    Ok(format!("translation bit-exact, permutation {perm_err:.1e}, attention rows {row_err:.1e}"))
}

fn oracles() -> Check {
    let k = KernelParams::density();
    let points = ball_points(20_000, 41);
    let index = build_index(&points, &k);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let c = points[rng.random_range(0..points.len())];
        let radius = rng.random_range(0.1..3.0);
        let mut brute: Vec<u32> = (0..points.len()).filter(|&j| dist(&c, &points[j]) <= radius).map(|j| j as u32).collect();
        brute.sort_unstable();
        ensure(index.query(&c, radius) == brute, || format!("index query at {c:?} radius {radius} differs from scan"))?;
    }
    for i in (0..points.len()).step_by(200) {
        close("indexed density", indexed_density(&points, i, &index, &k), brute_force_density(&points, i, &k), 1e-12)?;
    }

    let fc = FeatureConfig { volume_samples: 50_000, ..FeatureConfig::default() };
    let w = |a: &Vec3, b: &Vec3| (-0.5 * (dist(a, b) / fc.sigma).powi(2)).exp();
    let mut intensity_err: f64 = 0.0;
    for seed in 43..46 {
        let g = patch(random_cells(150, seed), seed);
        let n = g.node_count();
        let mut adj = vec![vec![false; n]; n];
        for &(i, j, _) in &g.edges {
            adj[i][j] = true;
            adj[j][i] = true;
        }
        let (lam, lb, ld) = (local_intensity(&g, &fc), local_birth_intensity(&g, &fc), local_death_intensity(&g, &fc));
        for v in 0..n {
            let (mut s, mut deg, mut sb, mut nb, mut sd, mut nd) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for u in 0..n {
                let (pv, pu) = (&g.nodes[v].position, &g.nodes[u].position);
                if adj[v][u] {
                    s += w(pv, pu);
                    deg += 1.0;
                }
                if g.nodes[u].birth_flag == 1 {
                    sb += w(pv, pu);
                    nb += 1.0;
                }
                if g.nodes[u].death_flag == 1 {
                    sd += w(pv, pu);
                    nd += 1.0;
                }
            }
            let mean = |s: f64, c: f64| if c == 0.0 { 0.0 } else { s / c };
            for (got, want) in [(lam[v], mean(s, deg)), (lb[v], mean(sb, nb)), (ld[v], mean(sd, nd))] {
                intensity_err = intensity_err.max((got - want).abs());
            }
        }
        let vol = cell_volume(&g, &fc).map_err(err)?;
        ensure(vol.counts.iter().sum::<u64>() == fc.volume_samples as u64, || "volume samples do not partition".into())?;
        close("volume sum", vol.volumes.iter().sum(), vol.region_volume, 1e-9 * vol.region_volume)?;
    }
    ensure(intensity_err <= 1e-12, || format!("intensity features off by {intensity_err:e}"))?;

    let pair: Vec<CutCell> = [[-3.0, 1.0, 2.0], [3.0, 1.0, 2.0]]
        .iter()
        .enumerate()
        .map(|(i, &position)| CutCell { cell_id: i as u64, position, mutation_id: 0, birth_flag: 0, death_flag: 0, density: 0.0 })
        .collect();
    let g = build_knn_graph(pair, [0.0, 1.0, 2.0], 10.0, PatchSource { tumor: 0, cut: CutSpec::new(0.0, 40.0), patch: 0 }, 10)
        .map_err(err)?;
    let v = cell_volume(&g, &FeatureConfig { volume_samples: 200_000, ..fc }).map_err(err)?.volumes;
    let asym = (v[0] - v[1]).abs() / v[0].max(v[1]);
    ensure(asym <= 0.02, || format!("mirror pair volumes {v:?} differ by {:.2}%", 100.0 * asym))?;
    Ok(format!("100 index queries exact, intensities {intensity_err:.1e}, mirror pair {:.2}%", 100.0 * asym))
}

/// Small but complete pipeline configuration.
fn tiny() -> PipelineConfig {
    let mut c = PipelineConfig::desk();
    c.sim.tumors = 6;
    c.sim.split = [2, 2, 2];
    c.sim.mutation_probabilities = vec![0.05, 0.15];
    c.sim.master_seed = 11;
    c.patches.per_cut = 12;
    c.features.volume_samples = 2000;
    c.model.d = 16;
    c.model.d_prime = 16;
    c.model.global_dim = 8;
    c.train.epochs = 2;
    c.ablation_masks = vec![vec![0], vec![0, 1, 2, 3, 4, 5, 6]];
    c.sweep = SweepConfig { mutation_probabilities: vec![0.0, 0.05, 0.15], tumors_per_level: 1, patches_per_cut: 4 };
    c
}

fn labeling(work: &Path) -> Check {
    entropy_examples()?;
    let cfg = tiny();
    cmd_simulate(&cfg, &work.join("sim"), false).map_err(err)?;
    let stats = cmd_dataset(&cfg, &work.join("sim"), &work.join("data")).map_err(err)?;
    let (lo, hi) = cfg.labeling.band();
    let mut total = 0;
    for s in &stats.splits {
        let records = load_split(&work.join("data"), s.split).map_err(err)?;
        let high = records.iter().filter(|r| r.class == HeterogeneityClass::High).count();
        let low = records.iter().filter(|r| r.class == HeterogeneityClass::Low).count();
        ensure(high == low && high + low == records.len() && high > 0, || {
            format!("{} split has {low} low / {high} high of {}", s.split.name(), records.len())
        })?;
        for r in &records {
            ensure(!(r.entropy > lo && r.entropy < hi), || format!("entropy {} inside the discard band", r.entropy))?;
            ensure(assign_class(r.entropy, &cfg.labeling).class == r.class, || "stored class disagrees with entropy".into())?;
        }
        total += records.len();
    }
    Ok(format!("entropy examples, {total} emitted patches balanced and outside ({lo:.3}, {hi:.3})"))
}

fn trend(work: &Path) -> Check {
    let cfg = PipelineConfig::desk();
    let r = cmd_sweep_report(&cfg, work).map_err(err)?;
    let fractions: Vec<String> = r.rows.iter().map(|row| format!("{}:{:.3}", row.mutation_probability, row.high_fraction)).collect();
    let line = format!("spearman {:.3} over {} levels [{}]", r.spearman, r.rows.len(), fractions.join(" "));
    ensure(r.rows.len() >= 5 && r.spearman >= 0.8, || line.clone())?;
    Ok(line)
}

fn learning(work: &Path) -> Check {
    let cfg = PipelineConfig::desk();
    cmd_simulate(&cfg, &work.join("sim"), false).map_err(err)?;
    let stats = cmd_dataset(&cfg, &work.join("sim"), &work.join("data")).map_err(err)?;
    let patches: usize = stats.splits.iter().map(|s| s.patches).sum();
    let all = cmd_train(&cfg, &work.join("data"), &work.join("all"), |_| {}).map_err(err)?;
    let mut single = cfg.clone();
    single.model.feature_mask = vec![0];
    let one = cmd_train(&single, &work.join("data"), &work.join("feature0"), |_| {}).map_err(err)?;
    let line = format!(
        "{} on {patches} patches: all features test {:.2}% (val {:.2}), feature 0 test {:.2}%",
        all.model, all.test_acc, all.val_acc, one.test_acc
    );
    ensure(all.test_acc >= 75.0 && one.test_acc < all.test_acc, || line.clone())?;
    Ok(line)
}

fn performance() -> Check {
    // Full-scale growth: retry seeds that die out before the cap.
    let mut seed = 1;
    let (h, elapsed) = loop {
        let t = Instant::now();
        let h = simulate(&paper_params(1_000_000, seed), &IntrinsicParams::reference(), 1).map_err(err)?;
        if !h.extinct() || seed == 20 {
            break (h, t.elapsed());
        }
        seed += 1;
    };
    let grown = !h.extinct() && h.births >= 1_000_000 && elapsed < Duration::from_secs(300);
    let sim_line = format!("{} births in {:.1}s (seed {seed})", h.births, elapsed.as_secs_f64());
    drop(h);

    let k = KernelParams::density();
    let points = ball_points(100_000, 1);
    let index = build_index(&points, &k);
    let queries: Vec<usize> = (0..100).map(|i| i * 997).collect();
    let time = |f: &dyn Fn() -> f64| {
        (0..5)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(f());
                t.elapsed()
            })
            .min()
            .unwrap()
    };
    let fast = time(&|| queries.iter().map(|&i| indexed_density(&points, i, &index, &k)).sum());
    let slow = time(&|| queries.iter().map(|&i| brute_force_density(std::hint::black_box(&points), i, &k)).sum());
    let speedup = slow.as_secs_f64() / fast.as_secs_f64();
    let line = format!("{sim_line}; index {:.0}x faster than brute force at 1e5 cells", speedup);
    ensure(grown && speedup >= 10.0, || line.clone())?;
    Ok(line)
}

fn determinism(work: &Path) -> Check {
    let cfg = tiny();
    let mut evals = Vec::new();
    for run in ["a", "b"] {
        let d = work.join(run);
        cmd_simulate(&cfg, &d.join("sim"), false).map_err(err)?;
        cmd_dataset(&cfg, &d.join("sim"), &d.join("data")).map_err(err)?;
        cmd_train(&cfg, &d.join("data"), &d.join("train"), |_| {}).map_err(err)?;
        evals.push(cmd_eval(&d.join("train").join(CHECKPOINT_FILE), &d.join("data"), Split::Test, 16).map_err(err)?);
        cmd_ablate(&cfg, &d.join("data"), &d.join("ablate")).map_err(err)?;
        cmd_sweep_report(&cfg, &d.join("sweep")).map_err(err)?;
    }
    ensure(evals[0] == evals[1], || "evaluation differs between runs".into())?;
    let (a, b) = (read_tree(&work.join("a")), read_tree(&work.join("b")));
    ensure(a.len() == b.len(), || "runs wrote different file sets".into())?;
    for (x, y) in a.iter().zip(&b) {
        ensure(x.0 == y.0 && x.1 == y.1, || format!("{} differs between runs", x.0))?;
    }
    Ok(format!("{} artifacts byte-identical across simulate, dataset, train, eval, ablate and sweep", a.len()))
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

fn main() {
    let root = tempfile::tempdir().expect("scratch directory");
    let dir = |name: &str| root.path().join(name);
    let criteria: Vec<(&str, u64, Box<dyn FnOnce() -> Check>)> = vec![
        ("math units", 10, Box::new(math_units)),
        ("gradients", 300, Box::new(gradients)),
        ("invariances", 60, Box::new(invariances)),
        ("oracles", 120, Box::new(oracles)),
        ("entropy and labeling", 30, Box::new(move || labeling(&dir("labeling")))),
        ("sweep trend", 1800, Box::new(move || trend(&dir("sweep")))),
        ("learning", 3600, Box::new(move || learning(&dir("learning")))),
        ("performance", 600, Box::new(performance)),
        ("determinism", 600, Box::new(move || determinism(&dir("determinism")))),
    ];
    // ACCEPTANCE_ONLY=1,2,5 runs a subset.
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) if secs <= limit as f64 => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit}s budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!("{} {} {name} ({secs:.1}s of {limit}s): {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
