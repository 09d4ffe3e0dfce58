use flowgn::dataset::{DatasetBundle, Split};
use flowgn::graph::Graph;
use flowgn::matrix::Matrix;
use flowgn::model::network::{backward, forward, loss};
use flowgn::model::{train, Activation, ModelConfig, ModelParams};
use flowgn::propagate::{build_propagation_matrix, PropagationMatrix};
use flowgn::walk::{PathSet, WalkParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    x: Matrix,
    props: Vec<PropagationMatrix>,
    params: ModelParams,
    labels: Vec<Option<usize>>,
    mask: Vec<usize>,
}

fn random_instance(seed: u64, n: usize, d: usize, k: usize, c: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let props = (0..k)
        .map(|_| {
            let l = rng.gen_range(2..5);
            let paths: Vec<Vec<usize>> = (0..3 * n)
                .map(|_| (0..l).map(|_| rng.gen_range(0..n)).collect())
                .collect();
            build_propagation_matrix(&PathSet::from_paths(&paths).unwrap(), n).unwrap()
        })
        .collect();
    let mut params = ModelParams::glorot(d, 3, k, c, seed ^ 0xabc);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let labels = (0..n).map(|_| Some(rng.gen_range(0..c))).collect();
    let mask = (0..n).filter(|_| rng.gen_bool(0.7)).collect::<Vec<_>>();
    let mask = if mask.is_empty() { vec![0] } else { mask };
    Instance {
        x,
        props,
        params,
        labels,
        mask,
    }
}

/// Straight-line re-implementation using explicit concatenation and
/// per-entry loops.
fn oracle_logits(inst: &Instance, act: Activation) -> Vec<Vec<f64>> {
    let n = inst.x.rows();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| inst.x.row(i).to_vec()).collect();
    for (layer, p) in inst.params.layers.iter().zip(&inst.props) {
        let dense = p.to_dense();
        let d_in = h[0].len();
        let d_out = layer.weight.cols();
        let mut next = vec![vec![0.0; d_out]; n];
        for v in 0..n {
            let mut cat = h[v].clone();
            for j in 0..d_in {
                cat.push((0..n).map(|s| dense[(v, s)] * h[s][j]).sum());
            }
            for o in 0..d_out {
                let z: f64 = (0..2 * d_in).map(|i| cat[i] * layer.weight[(i, o)]).sum::<f64>() + layer.bias[o];
                next[v][o] = act.apply(z);
            }
        }
        h = next;
    }
    let head = &inst.params.head;
    (0..n)
        .map(|v| {
            (0..head.weight.cols())
                .map(|c| (0..h[v].len()).map(|i| h[v][i] * head.weight[(i, c)]).sum::<f64>() + head.bias[c])
                .collect()
        })
        .collect()
}

fn oracle_loss(logits: &[Vec<f64>], inst: &Instance, wd: f64) -> f64 {
    let ce: f64 = inst
        .mask
        .iter()
        .map(|&v| {
            let row = &logits[v];
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            -(row[inst.labels[v].unwrap()].exp() / z).ln()
        })
        .sum::<f64>()
        / inst.mask.len() as f64;
    let mut sq = 0.0;
    for d in inst.params.layers.iter().chain([&inst.params.head]) {
        sq += d.weight.as_slice().iter().map(|w| w * w).sum::<f64>();
    }
    ce + 0.5 * wd * sq
}

fn objective(inst: &Instance, params: &ModelParams, act: Activation, wd: f64) -> f64 {
    let cache = forward(&inst.x, &inst.props, params, act).unwrap();
    loss(&cache.logits, &inst.labels, &inst.mask, params, wd).unwrap()
}

fn min_abs_preactivation(inst: &Instance, act: Activation) -> f64 {
    let cache = forward(&inst.x, &inst.props, &inst.params, act).unwrap();
    cache
        .pre
        .iter()
        .flat_map(|z| z.as_slice().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Largest relative error over all parameters between the analytic
/// gradient and central differences with step `1e-4`.
fn worst_gradient_error(inst: &Instance, act: Activation, wd: f64) -> f64 {
    let cache = forward(&inst.x, &inst.props, &inst.params, act).unwrap();
    let grads = backward(&inst.x, &inst.props, &inst.params, act, &cache, &inst.labels, &inst.mask, wd).unwrap();
    let analytic: Vec<f64> = grads.tensors().concat();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probe = inst.params.clone();
    let mut flat = 0;
    let sizes: Vec<usize> = probe.tensors().iter().map(|t| t.len()).collect();
    for (t, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let up = objective(inst, &probe, act, wd);
            probe.tensors_mut()[t][i] = orig - h;
            let down = objective(inst, &probe, act, wd);
            probe.tensors_mut()[t][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[flat];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_and_loss_match_oracle(seed in any::<u64>(), n in 2usize..9, d in 1usize..5, k in 1usize..4, c in 2usize..4) {
        let inst = random_instance(seed, n, d, k, c);
        for act in [Activation::Relu, Activation::Identity] {
            let cache = forward(&inst.x, &inst.props, &inst.params, act).unwrap();
            let want = oracle_logits(&inst, act);
            for v in 0..n {
                for j in 0..c {
                    prop_assert!((cache.logits[(v, j)] - want[v][j]).abs() < 1e-10);
                }
            }
            let l = loss(&cache.logits, &inst.labels, &inst.mask, &inst.params, 1e-3).unwrap();
            prop_assert!((l - oracle_loss(&want, &inst, 1e-3)).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), n in 2usize..9, d in 1usize..5, k in 1usize..4, c in 2usize..4) {
        let inst = random_instance(seed, n, d, k, c);
        // finite differences straddling a rectifier kink are meaningless
        prop_assume!(min_abs_preactivation(&inst, Activation::Relu) > 1e-3);
        let err = worst_gradient_error(&inst, Activation::Relu, 1e-3);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn weight_decay_raises_loss(seed in any::<u64>(), wd in 0.0f64..1.0, extra in 1e-3f64..1.0) {
        let inst = random_instance(seed, 5, 3, 2, 2);
        let a = objective(&inst, &inst.params, Activation::Relu, wd);
        let b = objective(&inst, &inst.params, Activation::Relu, wd + extra);
        prop_assert!(b > a);
    }
}

#[test]
fn identity_activation_gradients() {
    for seed in 0..10 {
        let inst = random_instance(seed, 7, 3, 3, 3);
        let err = worst_gradient_error(&inst, Activation::Identity, 1e-2);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

/// Two well separated blobs on a graph of two rings.
fn toy_bundle() -> DatasetBundle {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut edges = Vec::new();
    for i in 0..10 {
        edges.push((i, (i + 1) % 10));
        edges.push((10 + i, 10 + (i + 1) % 10));
    }
    edges.push((0, 10));
    let graph = Graph::from_edges(n, edges).unwrap();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for v in 0..n {
        let class = usize::from(v >= 10);
        let center = if class == 0 { -1.0 } else { 1.0 };
        feats.push(center + rng.gen_range(-0.5..0.5));
        feats.push(-center + rng.gen_range(-0.5..0.5));
        labels.push(Some(class));
    }
    let split = (0..n)
        .map(|v| match v % 10 {
            0..=6 => Split::Train,
            7 => Split::Val,
            _ => Split::Test,
        })
        .collect();
    DatasetBundle::new(graph, Matrix::from_vec(n, 2, feats).unwrap(), labels, split).unwrap()
}

fn toy_walks() -> WalkParams {
    WalkParams {
        p: 1.0,
        q: 1.0,
        length: 4,
        restarts: 3,
        seed: 2,
    }
}

#[test]
fn toy_bundle_is_learned() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 8,
        lr: 1e-2,
        max_epochs: 200,
        patience: 200,
        seed: 1,
        ..ModelConfig::default()
    };
    let (_, report) = train(&bundle, &config, &[toy_walks()]).unwrap();
    let first_perfect = report.epochs.iter().position(|r| r.val_acc == 1.0);
    assert!(first_perfect.is_some());
    assert_eq!(report.accuracy.train, 1.0);
}

#[test]
fn small_steps_descend() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 8,
        lr: 1e-5,
        weight_decay: 1e-5,
        max_epochs: 60,
        patience: 1000,
        seed: 3,
        ..ModelConfig::default()
    };
    let (_, report) = train(&bundle, &config, &[toy_walks()]).unwrap();
    let losses: Vec<f64> = report.epochs.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 60);
    for w in losses.windows(11) {
        assert!(w[10] <= w[0], "{:?}", w);
    }
}

#[test]
fn best_epoch_has_lowest_val_loss() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 6,
        lr: 5e-2,
        max_epochs: 120,
        patience: 10,
        seed: 9,
        ..ModelConfig::default()
    };
    let (best, report) = train(&bundle, &config, &[toy_walks()]).unwrap();
    let best_rec = report.epochs.iter().find(|r| r.epoch == report.best_epoch).unwrap();
    assert!(report.epochs.iter().all(|r| best_rec.val_loss <= r.val_loss));
    assert!(best.all_finite());
}

#[test]
fn zero_epochs_evaluates_initial_model() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 4,
        max_epochs: 0,
        ..ModelConfig::default()
    };
    let (params, report) = train(&bundle, &config, &[toy_walks()]).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(report.best_epoch, 0);
    assert_eq!(params, ModelParams::glorot(2, 4, 2, 2, config.seed));
}

#[test]
fn training_is_thread_count_independent() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 8,
        lr: 1e-2,
        max_epochs: 25,
        seed: 5,
        ..ModelConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&bundle, &config, &[toy_walks()]).unwrap())
    };
    let (a, ra) = run(1);
    let (b, rb) = run(4);
    assert_eq!(a, b);
    let strip = |r: &flowgn::model::TrainReport| {
        r.epochs
            .iter()
            .map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&ra), strip(&rb));
}

#[test]
fn path_batch_mode_trains() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 8,
        lr: 1e-2,
        max_epochs: 40,
        patience: 100,
        batch_mode: flowgn::model::BatchMode::PathBatch,
        batch_nodes: 16,
        seed: 5,
        ..ModelConfig::default()
    };
    let (_, report) = train(&bundle, &config, &[toy_walks()]).unwrap();
    assert_eq!(report.epochs.len(), 40);
    assert!(report.accuracy.train >= 0.9, "{:?}", report.accuracy);
}

#[test]
fn divergence_reports_epoch() {
    let bundle = toy_bundle();
    let config = ModelConfig {
        hidden: 4,
        lr: 1e300,
        max_epochs: 10,
        ..ModelConfig::default()
    };
    match train(&bundle, &config, &[toy_walks()]) {
        Err(flowgn::FlowError::Numerics { epoch: Some(e), .. }) => assert!(e >= 1),
        other => panic!("expected a numerics error, got {other:?}"),
    }
}
