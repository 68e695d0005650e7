//! Per-teacher gradient routing and cached-teacher equivalence.

use rand_distr::{Distribution, StandardNormal};
use regdistill::augment::{AugmentationPolicy, PairMode, Pairing};
use regdistill::data::{generate_synthetic, SyntheticKind, SyntheticSpec};
use regdistill::distill::{cache_teacher_features, distill, student_loss, DistillationConfig, LossKind, TeacherHandle};
use regdistill::models::{BackboneSpec, HeadLayout, HeadSpec, Network, NetworkSpec, BACKBONE_TAP};
use regdistill::rng::stream;
use regdistill::tensor::{BatchNormMode, Tape, Tensor};

const N: usize = 8;
const VIEW: usize = 8;

struct Grads {
    backbone: Vec<f64>,
    heads: Vec<Vec<f64>>,
}

fn gradients(student: &Network<f64>, x: &[f64], targets: &[Tensor<f64>], include: &[usize], weights: &[f64]) -> Grads {
    let mut t = Tape::new();
    let xv = t.constant(vec![N, 3, VIEW, VIEW], x.to_vec()).unwrap();
    let pass = student.forward(&mut t, xv, BatchNormMode::Train, true).unwrap();
    let pairs: Vec<_> = include.iter().map(|&k| (t.constant(targets[k].shape().to_vec(), targets[k].data().to_vec()).unwrap(), pass.head_output(k))).collect();
    let loss = student_loss(&mut t, &LossKind::Regression, &pairs, weights, None).unwrap().total;
    t.backward(loss).unwrap();
    let mut store = student.store.clone();
    store.zero_grad();
    store.accumulate_grads(&t, &pass.bindings).unwrap();
    let collect = |prefix: &str| -> Vec<f64> {
        store
            .iter()
            .filter(|p| p.name.starts_with(prefix) && p.kind.trainable())
            .flat_map(|p| p.tensor.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
            .collect()
    };
    Grads { backbone: collect("backbone."), heads: (0..targets.len()).map(|k| collect(&format!("head{k}."))).collect() }
}

pub struct RoutingOutcome {
    /// Largest `|g - mean_k g_k|` over backbone parameters.
    pub backbone_gap: f64,
    pub masked_nonzero: usize,
}

/// K=3 toy teachers of different widths feeding one three-headed student on a fixed batch.
pub fn routing() -> RoutingOutcome {
    let mut r = stream(0, "routing", &[]);
    let x: Vec<f64> = (0..N * 3 * VIEW * VIEW).map(|_| StandardNormal.sample(&mut r)).collect();
    let xt = Tensor::new(vec![N, 3, VIEW, VIEW], x.clone()).unwrap();
    let widths = [6, 10, 8];
    let targets: Vec<Tensor<f64>> = widths
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let spec = NetworkSpec { backbone: BackboneSpec::new(&[(4, 1), (w, 1)], false, (3, VIEW, VIEW)), heads: vec![] };
            let teacher = Network::<f64>::build(spec, 100 + k as u64).unwrap();
            teacher.forward_features(&xt, &[BACKBONE_TAP]).unwrap().remove(BACKBONE_TAP).unwrap()
        })
        .collect();
    let backbone = BackboneSpec::new(&[(6, 1), (12, 1)], false, (3, VIEW, VIEW));
    let m = backbone.feature_dim();
    let spec = NetworkSpec { backbone, heads: widths.iter().map(|&d| HeadSpec::new(m, d, HeadLayout::Mlp2)).collect() };
    let student = Network::<f64>::build(spec, 7).unwrap();
    let all = [0, 1, 2];

    let mut masked_nonzero = 0;
    for k in 0..3 {
        let mut weights = vec![1.0; 3];
        weights[k] = 0.0;
        let g = gradients(&student, &x, &targets, &all, &weights);
        masked_nonzero += g.heads[k].iter().filter(|&&v| v != 0.0).count();
        for (j, h) in g.heads.iter().enumerate().filter(|(j, _)| *j != k) {
            assert!(h.iter().any(|&v| v != 0.0), "head {j} starved while masking {k}");
        }
    }
    assert_eq!(masked_nonzero, 0, "masked heads received gradient");

    let full = gradients(&student, &x, &targets, &all, &[]);
    let singles: Vec<Grads> = (0..3).map(|k| gradients(&student, &x, &targets, &[k], &[])).collect();
    let mut gap: f64 = 0.0;
    for (i, g) in full.backbone.iter().enumerate() {
        let avg = singles.iter().map(|s| s.backbone[i]).sum::<f64>() / 3.0;
        gap = gap.max((g - avg).abs());
    }
    assert!(gap <= 1e-6, "backbone gradient differs from the single-teacher average by {gap:e}");
    // each head sees only its own term, scaled by 1/K
    for k in 0..3 {
        for (a, b) in full.heads[k].iter().zip(&singles[k].heads[k]) {
            assert!((a - b / 3.0).abs() <= 1e-9);
        }
    }
    RoutingOutcome { backbone_gap: gap, masked_nonzero }
}

/// One epoch against a live frozen teacher on fixed views, step by step against the
/// same run reading cached features. Returns (steps, largest per-step gap).
pub fn cache_equivalence() -> (usize, f64) {
    let spec = |split, per_class| SyntheticSpec { num_classes: 10, per_class, image_size: 32, kind: SyntheticKind::Blobs, noise: 0.75, seed: 1, split };
    let data = generate_synthetic(&spec(0, 40));
    let weak = AugmentationPolicy::weak(16, vec![0.5; 3], vec![0.25; 3]);
    let tspec = NetworkSpec { backbone: BackboneSpec::new(&[(16, 1), (32, 1)], false, (3, 16, 16)), heads: vec![] };
    let live = vec![TeacherHandle::live("t0", Network::<f32>::build(tspec, 1000).unwrap())];
    let backbone = BackboneSpec::new(&[(8, 1), (16, 1)], false, (3, 16, 16));
    let m = backbone.feature_dim();
    let student = NetworkSpec { backbone, heads: vec![HeadSpec::new(m, 32, HeadLayout::Mlp4)] };
    let mut cfg = DistillationConfig::new(student, Pairing::new(PairMode::Same, weak.clone(), weak).unwrap());
    cfg.epochs = 1;
    cfg.batch_size = 32;
    cfg.fixed_views = true;
    cfg.aug_seed = 3;
    let cache = cache_teacher_features(&live[0], &data, &cfg.pairing.teacher, cfg.aug_seed).unwrap();
    let cached = vec![TeacherHandle::<f32>::cached(cache)];
    let (_, _, a) = distill(&cfg, &data, &live).unwrap();
    let (_, _, b) = distill(&cfg, &data, &cached).unwrap();
    assert_eq!(a.len(), b.len());
    assert!(a.len() > 1);
    let mut gap: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let d = (x.total - y.total).abs();
        assert!(d <= 1e-6, "step {}: live {} vs cached {}", x.step, x.total, y.total);
        gap = gap.max(d);
    }
    (a.len(), gap)
}
