use std::collections::BTreeMap;

use crate::augment::{eval_view, AugmentationPolicy, Pairing};
use crate::data::{epoch_order, generate_synthetic, Dataset, FeatureCache, SyntheticSpec};
use crate::distill::{cache_teacher_features, DistillationConfig, StepRecord, TeacherHandle, TrainState, Trainer};
use crate::eval::{layerwise_evaluate, EvalConfig, EvaluationReport, ProbeConfig, TapSource, ViewSpec};
use crate::models::{BackboneSpec, HeadLayout, HeadSpec, Network, NetworkSpec};
use crate::tensor::{BatchNormMode, LrSchedule, Scalar, Sgd, Tape, Tensor};

use super::config::{DatasetSource, ExperimentConfig, TeacherConfig, TeacherOrigin};
use super::ExperimentError;

/// Train and test splits of one experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits, ExperimentError> {
    match &cfg.dataset {
        DatasetSource::Synthetic { kind, classes, per_class, test_per_class, image_size, noise, seed } => {
            let spec = |split, per_class| SyntheticSpec {
                num_classes: *classes,
                per_class,
                image_size: *image_size,
                kind: *kind,
                noise: *noise,
                seed: *seed,
                split,
            };
            Ok(Splits { train: generate_synthetic(&spec(0, *per_class)), test: generate_synthetic(&spec(1, *test_per_class)) })
        }
        DatasetSource::Files { train, test } => {
            let (train, test) = (Dataset::load(train)?, Dataset::load(test)?);
            if train.image_shape() != test.image_shape() {
                return Err(ExperimentError::config(format!(
                    "train images are {:?} but test images are {:?}",
                    train.image_shape(),
                    test.image_shape()
                )));
            }
            Ok(Splits { train, test })
        }
    }
}

pub fn teacher_policy(cfg: &ExperimentConfig) -> AugmentationPolicy {
    let a = &cfg.augment;
    AugmentationPolicy::new(a.teacher, a.view_size, a.mean.clone(), a.std.clone())
}

pub fn student_policy(cfg: &ExperimentConfig) -> AugmentationPolicy {
    let a = &cfg.augment;
    AugmentationPolicy::new(a.student, a.view_size, a.mean.clone(), a.std.clone())
}

pub fn pairing(cfg: &ExperimentConfig) -> Result<Pairing, ExperimentError> {
    Ok(Pairing::new(cfg.augment.pairing, teacher_policy(cfg), student_policy(cfg))?)
}

pub fn view_spec(cfg: &ExperimentConfig) -> ViewSpec {
    ViewSpec { size: cfg.augment.view_size, mean: cfg.augment.mean.clone(), std: cfg.augment.std.clone() }
}

pub fn eval_config(cfg: &ExperimentConfig) -> EvalConfig {
    let mut e = EvalConfig::new(view_spec(cfg));
    e.ks = cfg.eval.ks.clone();
    e.probe = cfg.eval.probe.then(|| ProbeConfig { epochs: cfg.eval.probe_epochs, ..ProbeConfig::default() });
    e.mse_normalized = cfg.eval.mse_normalized;
    e.seed = cfg.seed;
    e
}

fn input_shape(cfg: &ExperimentConfig, data: &Dataset) -> (usize, usize, usize) {
    (data.image_shape().0, cfg.augment.view_size, cfg.augment.view_size)
}

/// Architecture of a generated teacher. Supervised teachers carry a linear classifier
/// head, exposed as tap `head0.out`.
pub fn teacher_spec(cfg: &ExperimentConfig, t: &TeacherConfig, data: &Dataset) -> NetworkSpec {
    let backbone = BackboneSpec::new(&t.backbone, t.residual, input_shape(cfg, data));
    let heads = match t.origin {
        TeacherOrigin::Supervised(_) => vec![HeadSpec::new(backbone.feature_dim(), data.num_classes(), HeadLayout::Linear)],
        _ => Vec::new(),
    };
    NetworkSpec { backbone, heads }
}

/// Supervised result: the trained network and its train-set top-1 in percent.
#[derive(Debug, Clone)]
pub struct Pretrained<T> {
    pub network: Network<T>,
    pub train_accuracy: f64,
}

/// Cross-entropy training of `spec` (whose head 0 emits class logits) on deterministic
/// views of `train`.
pub fn pretrain_supervised<T: Scalar>(
    spec: NetworkSpec,
    train: &Dataset,
    view: &ViewSpec,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Pretrained<T>, ExperimentError> {
    let labels = train.labels().ok_or_else(|| ExperimentError::config("supervised teacher needs labelled data"))?;
    if spec.heads.first().map(|h| h.output_dim) != Some(train.num_classes()) {
        return Err(ExperimentError::config("supervised teacher needs a classifier head"));
    }
    let views = eval_views::<T>(train, view)?;
    let per = views.numel() / train.len().max(1);
    let mut net = Network::<T>::build(spec, seed)?;
    let schedule = LrSchedule::cosine(cfg.pretrain.lr, cfg.pretrain.epochs);
    let mut opt = Sgd::<T>::new(cfg.optim.momentum, cfg.optim.weight_decay, cfg.pretrain.lr)?;
    let (c, s) = (train.image_shape().0, view.size);
    for epoch in 0..cfg.pretrain.epochs {
        let lr = schedule.lr_at(epoch)?;
        for batch in epoch_order(train.len(), seed, epoch).chunks(cfg.batch) {
            if batch.len() < 2 {
                continue;
            }
            let mut x = Vec::with_capacity(batch.len() * per);
            for &i in batch {
                x.extend_from_slice(&views.data()[i * per..(i + 1) * per]);
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i] as usize).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(vec![batch.len(), c, s, s], x)?;
            let pass = net.forward(&mut tape, xv, BatchNormMode::Train, true)?;
            let loss = tape.cross_entropy(pass.head_output(0), &y)?;
            tape.backward(loss)?;
            if !tape.value(loss)[0].to_f64().is_some_and(f64::is_finite) {
                return Err(ExperimentError::Distill(crate::distill::DistillError::NumericFailure {
                    epoch,
                    step: 0,
                    op: "pretrain loss".into(),
                }));
            }
            net.store.zero_grad();
            net.store.accumulate_grads(&tape, &pass.bindings)?;
            pass.stats.apply(&mut net.store);
            for (slot, p) in net.store.iter_mut().enumerate() {
                if !p.kind.trainable() {
                    continue;
                }
                let decay = p.kind.decays();
                let (data, grad) = p.tensor.data_and_grad_mut();
                if let Some(g) = grad {
                    opt.step_param(slot, data, g, lr, decay)?;
                }
            }
        }
    }
    let train_accuracy = classifier_accuracy(&net, &views, labels)?;
    Ok(Pretrained { network: net, train_accuracy })
}

fn eval_views<T: Scalar>(data: &Dataset, view: &ViewSpec) -> Result<Tensor<T>, ExperimentError> {
    let shape = data.image_shape();
    let mut out = Vec::with_capacity(data.len() * shape.0 * view.size * view.size);
    for i in 0..data.len() {
        out.extend(eval_view(data.image(i), shape, view.size, &view.mean, &view.std)?.into_iter().map(|v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::new(vec![data.len(), shape.0, view.size, view.size], out)?)
}

/// Top-1 of head 0 read as class logits, in percent.
pub fn classifier_accuracy<T: Scalar>(net: &Network<T>, views: &Tensor<T>, labels: &[u32]) -> Result<f64, ExperimentError> {
    let n = labels.len();
    let per = views.numel() / n.max(1);
    let depth = net.spec().heads[0].layout.depth();
    let tap = crate::models::head_tap(0, depth, depth);
    let mut correct = 0usize;
    for start in (0..n).step_by(256) {
        let end = (start + 256).min(n);
        let mut shape = views.shape().to_vec();
        shape[0] = end - start;
        let x = Tensor::new(shape, views.data()[start * per..end * per].to_vec())?;
        let logits = net.forward_features(&x, &[tap.as_str()])?.remove(tap.as_str()).expect("requested tap");
        for (r, &label) in (start..end).zip(&labels[start..end]) {
            let row = logits.row(r - start);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            correct += usize::from(best == label as usize);
        }
    }
    Ok(100.0 * correct as f64 / n.max(1) as f64)
}

/// The frozen network of teacher `t` and, for supervised teachers, its train accuracy.
pub fn build_teacher<T: Scalar>(
    cfg: &ExperimentConfig,
    t: &TeacherConfig,
    train: &Dataset,
) -> Result<(Network<T>, Option<f64>), ExperimentError> {
    match &t.origin {
        TeacherOrigin::Random(seed) => Ok((Network::build(teacher_spec(cfg, t, train), *seed)?, None)),
        TeacherOrigin::Supervised(seed) => {
            let p = pretrain_supervised(teacher_spec(cfg, t, train), train, &view_spec(cfg), cfg, *seed)?;
            Ok((p.network, Some(p.train_accuracy)))
        }
        TeacherOrigin::Checkpoint(path) => {
            let ckpt = crate::data::Checkpoint::<T>::load(path)?;
            Ok((Network::from_checkpoint(&ckpt)?, None))
        }
    }
}

/// Builds every teacher network of `cfg`, keyed by id.
pub fn build_teachers<T: Scalar>(cfg: &ExperimentConfig, train: &Dataset) -> Result<BTreeMap<String, Network<T>>, ExperimentError> {
    cfg.teachers.iter().map(|t| Ok((t.id.clone(), build_teacher(cfg, t, train)?.0))).collect()
}

/// Feature caches computed so far, keyed by teacher, view policy and seed.
#[derive(Debug, Default)]
pub struct CacheStore {
    caches: BTreeMap<String, FeatureCache>,
}

impl CacheStore {
    pub fn insert(&mut self, cfg: &ExperimentConfig, cache: FeatureCache) {
        self.caches.insert(Self::key(cfg, &cache.teacher_id), cache);
    }

    fn key(cfg: &ExperimentConfig, id: &str) -> String {
        let a = &cfg.augment;
        format!("{id}|{}|{}|{:?}|{:?}|{}", a.teacher, a.view_size, a.mean, a.std, cfg.aug_seed)
    }
}

/// Teacher handles for a run: live networks, or caches drawn from the teacher view policy
/// with `aug_seed` for teachers marked `cache`.
pub fn teacher_handles<T: Scalar>(
    cfg: &ExperimentConfig,
    nets: &BTreeMap<String, Network<T>>,
    train: &Dataset,
    caches: &mut CacheStore,
) -> Result<Vec<TeacherHandle<T>>, ExperimentError> {
    let mut out = Vec::with_capacity(cfg.teachers.len());
    for t in &cfg.teachers {
        let net = nets.get(&t.id).ok_or_else(|| ExperimentError::config(format!("teacher `{}` was not built", t.id)))?;
        let live = TeacherHandle::live_at(t.id.clone(), net.clone(), &t.tap)?;
        if !t.cache {
            out.push(live);
            continue;
        }
        let key = CacheStore::key(cfg, &t.id);
        if !caches.caches.contains_key(&key) {
            let cache = cache_teacher_features(&live, train, &teacher_policy(cfg), cfg.aug_seed)?;
            caches.caches.insert(key.clone(), cache);
        }
        out.push(TeacherHandle::cached(caches.caches[&key].clone()));
    }
    Ok(out)
}

pub fn student_spec(cfg: &ExperimentConfig, teacher_dims: &[usize], data: &Dataset) -> NetworkSpec {
    let backbone = BackboneSpec::new(&cfg.student.backbone, cfg.student.residual, input_shape(cfg, data));
    let m = backbone.feature_dim();
    let heads = teacher_dims.iter().map(|&d| HeadSpec::new(m, d, cfg.student.head.clone())).collect();
    NetworkSpec { backbone, heads }
}

pub fn distillation_config<T: Scalar>(
    cfg: &ExperimentConfig,
    teachers: &[TeacherHandle<T>],
    data: &Dataset,
) -> Result<DistillationConfig, ExperimentError> {
    let dims: Vec<usize> = teachers.iter().map(|t| t.dim()).collect();
    let mut d = DistillationConfig::new(student_spec(cfg, &dims, data), pairing(cfg)?);
    d.loss = cfg.loss.clone();
    d.teacher_weights = cfg.loss_weights.clone();
    d.fixed_views = cfg.augment.fixed_views;
    d.epochs = cfg.epochs;
    d.batch_size = cfg.batch;
    d.seed = cfg.seed;
    d.aug_seed = cfg.aug_seed;
    d.lr = cfg.optim.lr;
    d.momentum = cfg.optim.momentum;
    d.weight_decay = cfg.optim.weight_decay;
    d.schedule = cfg.optim.schedule.clone();
    Ok(d)
}

/// Same architecture and parameters at another precision.
pub fn cast_network<T: Scalar, U: Scalar>(net: &Network<T>) -> Network<U> {
    let mut out = Network::<U>::build(net.spec().clone(), 0).expect("spec already validated");
    let records: Vec<(String, Tensor<U>)> = net.store.named_tensors().into_iter().map(|(n, t)| (n, t.cast())).collect();
    out.store.load_named(&records, true).expect("same layout");
    out
}

/// Taps evaluated for `net` under `cfg`.
pub fn eval_taps(cfg: &ExperimentConfig, net: &Network<f32>) -> Vec<String> {
    match &cfg.eval.taps {
        Some(t) => t.clone(),
        None => net.taps().into_iter().map(|t| t.name).collect(),
    }
}

/// Layer-wise report for a student, with MSE against the first teacher's tap.
pub fn evaluate(
    cfg: &ExperimentConfig,
    student: &Network<f32>,
    splits: &Splits,
    teacher: Option<(&Network<f32>, &str)>,
) -> Result<EvaluationReport, ExperimentError> {
    let taps = eval_taps(cfg, student);
    let taps: Vec<&str> = taps.iter().map(String::as_str).collect();
    let src = teacher.map(|(network, tap)| TapSource { network, tap });
    let mut report = layerwise_evaluate(student, &taps, &splits.train, &splits.test, src, &eval_config(cfg))?;
    report.config_echo = Some(cfg.echo());
    Ok(report)
}

/// Everything a completed run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub student: Network<T>,
    pub state: TrainState,
    pub history: Vec<StepRecord>,
    pub report: EvaluationReport,
}

/// Distill and evaluate one configuration with prebuilt teacher networks.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    splits: &Splits,
    nets: &BTreeMap<String, Network<T>>,
    caches: &mut CacheStore,
) -> Result<RunOutcome<T>, ExperimentError> {
    let teachers = teacher_handles(cfg, nets, &splits.train, caches)?;
    let dcfg = distillation_config(cfg, &teachers, &splits.train)?;
    let mut trainer = Trainer::new(&dcfg, &splits.train, &teachers)?;
    trainer.run()?;
    let state = trainer.state().clone();
    let history = trainer.history().to_vec();
    let student = trainer.into_student();
    let first = &cfg.teachers[0];
    let teacher32 = cast_network::<T, f32>(&nets[&first.id]);
    let report = evaluate(cfg, &cast_network::<T, f32>(&student), splits, Some((&teacher32, first.tap.as_str())))?;
    Ok(RunOutcome { student, state, history, report })
}

/// Tap of the first head's output.
pub fn head_output_tap(cfg: &ExperimentConfig) -> String {
    crate::models::head_tap(0, cfg.student.head.depth(), cfg.student.head.depth())
}
