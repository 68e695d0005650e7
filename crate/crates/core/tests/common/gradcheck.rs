//! Central finite differences against the tape's reverse sweep, in f64.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use regdistill::distill::{combined_kd_loss, kd_loss, multi_teacher_loss, regression_loss, student_loss, LossKind};
use regdistill::models::{BackboneSpec, HeadLayout, HeadSpec, Network, NetworkSpec};
use regdistill::rng::{stream, Rng};
use regdistill::tensor::{BatchNormMode, RunningStats, Tape, TensorError, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;
const INSTANCES: u64 = 20;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>>;

struct Case {
    inputs: Vec<(Vec<usize>, Vec<f64>)>,
    build: Build,
}

fn normal(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Values bounded away from zero, so kinks stay further than `H` away.
fn off_zero(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| {
        let v: f64 = r.random_range(0.05..1.5);
        if r.random_bool(0.5) { v } else { -v }
    }).collect()
}

/// Scalar `sum(out * w)` for a fixed random `w`, so every output coordinate matters.
fn project(t: &mut Tape<f64>, out: Var, w: &[f64]) -> Result<Var, TensorError> {
    let wv = t.constant(t.shape(out).to_vec(), w.to_vec())?;
    let p = t.mul(out, wv)?;
    t.sum(p)
}

fn eval(case: &Case, values: &[Vec<f64>]) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().zip(values).map(|((s, _), v)| t.variable(s.clone(), v.clone()).unwrap()).collect();
    let out = (case.build)(&mut t, &vars).unwrap();
    t.value(out)[0]
}

fn max_rel_error(case: &Case) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|(s, v)| t.variable(s.clone(), v.clone()).unwrap()).collect();
    let out = (case.build)(&mut t, &vars).unwrap();
    t.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| t.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.value(v).len()])).collect();
    let mut values: Vec<Vec<f64>> = case.inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let x = values[i][j];
            values[i][j] = x + H;
            let up = eval(case, &values);
            values[i][j] = x - H;
            let down = eval(case, &values);
            values[i][j] = x;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[i][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    worst
}

fn check(name: &str, make: impl Fn(&mut Rng) -> Case) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut r = stream(i, "gradcheck", &[name.len() as u64, name.bytes().map(u64::from).sum()]);
        let case = make(&mut r);
        let err = max_rel_error(&case);
        assert!(err < TOL, "{name} instance {i}: max relative error {err:e}");
        worst = worst.max(err);
    }
    worst
}

fn dims(r: &mut Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

pub fn elementwise_and_reductions() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(check("add", |r| {
        let n = dims(r, 1, 6);
        let w = normal(r, n);
        Case { inputs: vec![(vec![n], normal(r, n)), (vec![n], normal(r, n))], build: Box::new(move |t, v| { let o = t.add(v[0], v[1])?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("sub", |r| {
        let n = dims(r, 1, 6);
        let w = normal(r, n);
        Case { inputs: vec![(vec![n], normal(r, n)), (vec![n], normal(r, n))], build: Box::new(move |t, v| { let o = t.sub(v[0], v[1])?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("mul", |r| {
        let n = dims(r, 1, 6);
        let w = normal(r, n);
        Case { inputs: vec![(vec![n], normal(r, n)), (vec![n], normal(r, n))], build: Box::new(move |t, v| { let o = t.mul(v[0], v[1])?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("mul_self", |r| {
        let n = dims(r, 1, 6);
        let w = normal(r, n);
        Case { inputs: vec![(vec![n], normal(r, n))], build: Box::new(move |t, v| { let o = t.mul(v[0], v[0])?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("scale", |r| {
        let n = dims(r, 1, 6);
        let (w, a) = (normal(r, n), r.random_range(-3.0..3.0));
        Case { inputs: vec![(vec![n], normal(r, n))], build: Box::new(move |t, v| { let o = t.scale(v[0], a)?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("relu", |r| {
        let n = dims(r, 1, 8);
        let w = normal(r, n);
        Case { inputs: vec![(vec![n], off_zero(r, n))], build: Box::new(move |t, v| { let o = t.relu(v[0])?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("sum", |r| {
        let n = dims(r, 1, 8);
        Case { inputs: vec![(vec![n], normal(r, n))], build: Box::new(|t, v| { let o = t.sum(v[0])?; t.scale(o, 1.7) }) }
    }));
    worst = worst.max(check("mean", |r| {
        let (a, b) = (dims(r, 1, 4), dims(r, 1, 4));
        Case { inputs: vec![(vec![a, b], normal(r, a * b))], build: Box::new(|t, v| { let m = t.mean(v[0])?; t.mul(m, m) }) }
    }));
    worst
}

pub fn linear_algebra() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(check("matmul", |r| {
        let (m, k, n) = (dims(r, 1, 4), dims(r, 1, 4), dims(r, 1, 4));
        let w = normal(r, m * n);
        Case {
            inputs: vec![(vec![m, k], normal(r, m * k)), (vec![k, n], normal(r, k * n))],
            build: Box::new(move |t, v| { let o = t.matmul(v[0], v[1])?; project(t, o, &w) }),
        }
    }));
    worst = worst.max(check("add_bias", |r| {
        let (n, c) = (dims(r, 1, 4), dims(r, 1, 5));
        let w = normal(r, n * c);
        Case {
            inputs: vec![(vec![n, c], normal(r, n * c)), (vec![c], normal(r, c))],
            build: Box::new(move |t, v| { let o = t.add_bias(v[0], v[1])?; project(t, o, &w) }),
        }
    }));
    worst = worst.max(check("conv2d", |r| {
        let (n, c, f) = (dims(r, 1, 2), dims(r, 1, 3), dims(r, 1, 3));
        let (h, wd) = (dims(r, 3, 6), dims(r, 3, 6));
        let k = if r.random_bool(0.5) { 3 } else { 1 };
        let stride = dims(r, 1, 2);
        let pad = if k == 3 { dims(r, 0, 1) } else { 0 };
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let w = normal(r, n * f * oh * ow);
        Case {
            inputs: vec![(vec![n, c, h, wd], normal(r, n * c * h * wd)), (vec![f, c, k, k], normal(r, f * c * k * k))],
            build: Box::new(move |t, v| { let o = t.conv2d(v[0], v[1], stride, pad)?; project(t, o, &w) }),
        }
    }));
    worst = worst.max(check("global_avg_pool", |r| {
        let (n, c, h, wd) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 4), dims(r, 1, 4));
        let w = normal(r, n * c);
        Case { inputs: vec![(vec![n, c, h, wd], normal(r, n * c * h * wd))], build: Box::new(move |t, v| { let o = t.global_avg_pool(v[0])?; project(t, o, &w) }) }
    }));
    worst
}

fn batchnorm_case(r: &mut Rng, mode: BatchNormMode, spatial: bool) -> Case {
    let (n, c) = (dims(r, 2, 5), dims(r, 1, 3));
    let shape = if spatial { vec![n, c, dims(r, 1, 3), dims(r, 1, 3)] } else { vec![n, c] };
    let len: usize = shape.iter().product();
    let w = normal(r, len);
    let run_mean = normal(r, c);
    let run_var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
    let gamma: Vec<f64> = (0..c).map(|_| r.random_range(0.5..1.5)).collect();
    Case {
        inputs: vec![(shape, normal(r, len)), (vec![c], gamma), (vec![c], normal(r, c))],
        build: Box::new(move |t, v| {
            let (mut m, mut s) = (run_mean.clone(), run_var.clone());
            let stats = RunningStats { mean: &mut m, var: &mut s, momentum: 0.1, eps: 1e-5 };
            let o = t.batchnorm(v[0], v[1], v[2], stats, mode)?;
            project(t, o, &w)
        }),
    }
}

pub fn batch_norm() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(check("batchnorm_train_2d", |r| batchnorm_case(r, BatchNormMode::Train, false)));
    worst = worst.max(check("batchnorm_train_4d", |r| batchnorm_case(r, BatchNormMode::Train, true)));
    worst = worst.max(check("batchnorm_eval", |r| batchnorm_case(r, BatchNormMode::Eval, true)));
    worst
}

pub fn normalization_and_softmax() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(check("l2_normalize", |r| {
        let (n, d) = (dims(r, 1, 4), dims(r, 2, 6));
        let w = normal(r, n * d);
        Case { inputs: vec![(vec![n, d], off_zero(r, n * d))], build: Box::new(move |t, v| { let o = t.l2_normalize(v[0], 1e-12)?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("softmax_temperature", |r| {
        let (n, d, tau) = (dims(r, 1, 4), dims(r, 2, 6), r.random_range(0.5..4.0));
        let w = normal(r, n * d);
        Case { inputs: vec![(vec![n, d], normal(r, n * d))], build: Box::new(move |t, v| { let o = t.softmax_temperature(v[0], tau)?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("log_softmax_temperature", |r| {
        let (n, d, tau) = (dims(r, 1, 4), dims(r, 2, 6), r.random_range(0.5..4.0));
        let w = normal(r, n * d);
        Case { inputs: vec![(vec![n, d], normal(r, n * d))], build: Box::new(move |t, v| { let o = t.log_softmax_temperature(v[0], tau)?; project(t, o, &w) }) }
    }));
    worst = worst.max(check("cross_entropy", |r| {
        let (n, d) = (dims(r, 1, 5), dims(r, 2, 6));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..d)).collect();
        Case { inputs: vec![(vec![n, d], normal(r, n * d))], build: Box::new(move |t, v| t.cross_entropy(v[0], &labels)) }
    }));
    worst
}

pub fn distillation_losses() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(check("regression_loss", |r| {
        let (n, d) = (dims(r, 1, 4), dims(r, 2, 6));
        let teacher = off_zero(r, n * d);
        Case {
            inputs: vec![(vec![n, d], off_zero(r, n * d))],
            build: Box::new(move |t, v| {
                let f_t = t.constant(vec![n, d], teacher.clone())?;
                regression_loss(t, f_t, v[0])
            }),
        }
    }));
    worst = worst.max(check("kd_loss", |r| {
        let (n, d) = (dims(r, 1, 4), dims(r, 2, 6));
        let (tt, ts) = (r.random_range(0.5..4.0), r.random_range(0.5..4.0));
        let teacher = normal(r, n * d);
        Case {
            inputs: vec![(vec![n, d], normal(r, n * d))],
            build: Box::new(move |t, v| {
                let z_t = t.constant(vec![n, d], teacher.clone())?;
                kd_loss(t, z_t, v[0], tt, ts)
            }),
        }
    }));
    worst = worst.max(check("combined_kd_loss", |r| {
        let (n, d) = (dims(r, 1, 4), dims(r, 2, 6));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..d)).collect();
        let (lambda, tau) = (r.random_range(0.0..1.0), r.random_range(0.5..4.0));
        let teacher = normal(r, n * d);
        Case {
            inputs: vec![(vec![n, d], normal(r, n * d))],
            build: Box::new(move |t, v| {
                let z_t = t.constant(vec![n, d], teacher.clone())?;
                let ce = t.cross_entropy(v[0], &labels)?;
                let kd = kd_loss(t, z_t, v[0], tau, tau)?;
                combined_kd_loss(t, ce, kd, lambda, tau)
            }),
        }
    }));
    worst = worst.max(check("multi_teacher_loss", |r| {
        let (k, n, d) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 2, 4));
        let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.0..2.0)).collect();
        let teachers: Vec<Vec<f64>> = (0..k).map(|_| off_zero(r, n * d)).collect();
        let inputs = (0..k).map(|_| (vec![n, d], off_zero(r, n * d))).collect();
        Case {
            inputs,
            build: Box::new(move |t, v| {
                let mut pairs = Vec::new();
                for (tg, &s) in teachers.iter().zip(v) {
                    pairs.push((t.constant(vec![n, d], tg.clone())?, s));
                }
                Ok(multi_teacher_loss(t, &pairs, &weights)?.total)
            }),
        }
    }));
    worst
}

/// The full student objective, differentiated with respect to every parameter of a
/// small student (backbone, batch norms, and heads) on a fixed batch.
pub fn full_student_loss_graph() -> f64 {
    let mut overall: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut r = stream(i, "gradcheck.full", &[]);
        let residual = i % 2 == 1;
        let k = 1 + (i as usize % 3);
        let layout = [HeadLayout::Linear, HeadLayout::Mlp2, HeadLayout::Mlp4][i as usize % 3].clone();
        let backbone = BackboneSpec::new(&[(6, 1), (8, 1)], residual, (2, 6, 6));
        let m = backbone.feature_dim();
        let dims: Vec<usize> = (0..k).map(|_| r.random_range(2..5)).collect();
        let spec = NetworkSpec { backbone, heads: dims.iter().map(|&d| HeadSpec::new(m, d, layout.clone())).collect() };
        let mut net = Network::<f64>::build(spec, i).unwrap();
        let n = 6;
        let x = normal(&mut r, n * 2 * 36);
        let targets: Vec<Vec<f64>> = dims.iter().map(|&d| off_zero(&mut r, n * d)).collect();
        let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.5..1.5)).collect();

        let loss_of = |net: &Network<f64>, grads: bool| -> (f64, Vec<Vec<f64>>) {
            let mut t = Tape::new();
            let xv = t.constant(vec![n, 2, 6, 6], x.clone()).unwrap();
            let pass = net.forward(&mut t, xv, BatchNormMode::Train, grads).unwrap();
            let pairs: Vec<(Var, Var)> = targets
                .iter()
                .zip(&dims)
                .enumerate()
                .map(|(h, (tg, &d))| (t.constant(vec![n, d], tg.clone()).unwrap(), pass.head_output(h)))
                .collect();
            let loss = student_loss(&mut t, &LossKind::Regression, &pairs, &weights, None).unwrap().total;
            let value = t.value(loss)[0];
            if !grads {
                return (value, Vec::new());
            }
            t.backward(loss).unwrap();
            let mut store = net.store.clone();
            store.zero_grad();
            store.accumulate_grads(&t, &pass.bindings).unwrap();
            (value, store.iter().map(|p| p.tensor.grad().map(|g| g.to_vec()).unwrap_or_default()).collect())
        };

        let (_, analytic) = loss_of(&net, true);
        let trainable: Vec<usize> = net.store.iter().enumerate().filter(|(_, p)| p.kind.trainable()).map(|(j, _)| j).collect();
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let pj = trainable[r.random_range(0..trainable.len())];
            let len = net.store.iter().nth(pj).unwrap().tensor.numel();
            let cj = r.random_range(0..len);
            let orig = net.store.iter().nth(pj).unwrap().tensor.data()[cj];
            let set = |net: &mut Network<f64>, v: f64| net.store.iter_mut().nth(pj).unwrap().tensor.data_mut()[cj] = v;
            set(&mut net, orig + H);
            let up = loss_of(&net, false).0;
            set(&mut net, orig - H);
            let down = loss_of(&net, false).0;
            set(&mut net, orig);
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[pj].get(cj).copied().unwrap_or(0.0);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
        assert!(worst < TOL, "student loss instance {i}: max relative error {worst:e}");
        overall = overall.max(worst);
    }
    overall
}

/// Every group; returns the largest relative error seen.
pub fn suite() -> f64 {
    [elementwise_and_reductions(), linear_algebra(), batch_norm(), normalization_and_softmax(), distillation_losses(), full_student_loss_graph()]
        .into_iter()
        .fold(0.0, f64::max)
}
