use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, PairMode, Pairing, ViewKey, STUDENT_SIDE, TEACHER_SIDE};
use crate::data::{epoch_order, Checkpoint, Dataset};
use crate::models::{Network, NetworkSpec};
use crate::tensor::{BatchNormMode, LrSchedule, ScheduleKind, Scalar, Sgd, Tape, Tensor, TensorError, Var};

use super::loss::{combined_kd_loss, kd_loss, multi_teacher_loss, multi_teacher_loss_with, MultiTeacherLoss};
use super::teacher::TeacherHandle;
use super::DistillError;

/// Checkpoint metadata key for the serialized [`TrainState`].
pub const STATE_KEY: &str = "train.state";
/// Prefix of optimizer momentum records in a checkpoint.
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Normalized feature regression through per-teacher heads.
    Regression,
    /// Softened-logit distillation baseline; heads emit class logits.
    KdBaseline { lambda: f64, tau_t: f64, tau_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationConfig {
    /// Student backbone plus one head per teacher, head `k` emitting teacher `k`'s width.
    pub student: NetworkSpec,
    pub loss: LossKind,
    /// Per-teacher loss weights; empty means all ones.
    pub teacher_weights: Vec<f64>,
    pub pairing: Pairing,
    /// Reuse view-epoch 0 every epoch instead of drawing fresh views.
    pub fixed_views: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initialization and shuffling seed.
    pub seed: u64,
    pub aug_seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
}

impl DistillationConfig {
    pub fn new(student: NetworkSpec, pairing: Pairing) -> Self {
        DistillationConfig {
            student,
            loss: LossKind::Regression,
            teacher_weights: Vec::new(),
            pairing,
            fixed_views: false,
            epochs: 1,
            batch_size: 256,
            seed: 0,
            aug_seed: 0,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: ScheduleKind::Cosine,
        }
    }

    pub fn validate<T: Scalar>(&self, teachers: &[TeacherHandle<T>], dataset: &Dataset) -> Result<(), DistillError> {
        let bad = |m: String| Err(DistillError::Config(m));
        if teachers.is_empty() {
            return bad("at least one teacher is required".into());
        }
        if self.student.heads.len() != teachers.len() {
            return bad(format!("{} student heads for {} teachers", self.student.heads.len(), teachers.len()));
        }
        for (k, (head, t)) in self.student.heads.iter().zip(teachers).enumerate() {
            if head.output_dim != t.dim() {
                return bad(format!("head {k} emits {} but teacher `{}` has width {}", head.output_dim, t.id, t.dim()));
            }
        }
        if !self.teacher_weights.is_empty() && self.teacher_weights.len() != teachers.len() {
            return bad(format!("{} teacher weights for {} teachers", self.teacher_weights.len(), teachers.len()));
        }
        if self.teacher_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("teacher weights must be finite and non-negative".into());
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 (batch norm needs two samples)".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if dataset.is_empty() {
            return bad("dataset is empty".into());
        }
        let (c, _, _) = dataset.image_shape();
        let s = self.pairing.student.output_size;
        if self.student.backbone.input != (c, s, s) {
            return bad(format!("student expects input {:?}, views are {:?}", self.student.backbone.input, (c, s, s)));
        }
        self.pairing.teacher.validate(c)?;
        self.pairing.student.validate(c)?;
        let ts = self.pairing.teacher.output_size;
        for t in teachers {
            match &t.source {
                super::TeacherSource::Live { network, .. } => {
                    if network.spec().backbone.input != (c, ts, ts) {
                        return bad(format!("teacher `{}` expects input {:?}, views are {:?}", t.id, network.spec().backbone.input, (c, ts, ts)));
                    }
                }
                super::TeacherSource::Cached(cache) => {
                    if cache.seed != self.aug_seed {
                        return bad(format!("cache of `{}` was drawn with seed {}, run uses {}", t.id, cache.seed, self.aug_seed));
                    }
                    if let Some(i) = (0..dataset.len() as u64).find(|&i| cache.lookup(i).is_none()) {
                        return Err(DistillError::TeacherUnavailable { id: t.id.clone(), detail: format!("image {i} not cached") });
                    }
                }
            }
        }
        if let LossKind::KdBaseline { lambda, tau_t, tau_s } = self.loss {
            if !(0.0..=1.0).contains(&lambda) {
                return bad(format!("lambda {lambda} outside [0, 1]"));
            }
            if !(tau_t > 0.0 && tau_s > 0.0) {
                return bad("temperatures must be positive".into());
            }
            if lambda > 0.0 && dataset.labels().is_none() {
                return bad("lambda > 0 needs labels".into());
            }
            if lambda > 0.0 && self.student.heads.iter().any(|h| h.output_dim != dataset.num_classes()) {
                return bad("with lambda > 0 every head must emit one logit per class".into());
            }
        }
        Ok(())
    }

    fn schedule(&self) -> LrSchedule {
        LrSchedule { base_lr: self.lr, total_steps: self.epochs, kind: self.schedule.clone() }
    }
}

/// Progress counters persisted with a checkpoint; together with the config they fix every
/// remaining random draw, so a resumed run continues bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: usize,
    /// Mean total loss over the last completed epoch.
    pub running_loss: f64,
    pub teacher_losses: Vec<f64>,
    pub teacher_ids: Vec<String>,
    pub seed: u64,
    pub aug_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub per_teacher: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_loss: f64,
    pub teacher_losses: Vec<f64>,
}

pub struct Trainer<'a, T: Scalar> {
    config: &'a DistillationConfig,
    dataset: &'a Dataset,
    teachers: &'a [TeacherHandle<T>],
    student: Network<T>,
    optimizer: Sgd<T>,
    state: TrainState,
    history: Vec<StepRecord>,
    epochs: Vec<EpochSummary>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(config: &'a DistillationConfig, dataset: &'a Dataset, teachers: &'a [TeacherHandle<T>]) -> Result<Self, DistillError> {
        config.validate(teachers, dataset)?;
        let student = Network::build(config.student.clone(), config.seed)?;
        let optimizer = Sgd::new(config.momentum, config.weight_decay, config.lr)?;
        let state = TrainState {
            epoch: 0,
            global_step: 0,
            running_loss: f64::NAN,
            teacher_losses: vec![f64::NAN; teachers.len()],
            teacher_ids: teachers.iter().map(|t| t.id.clone()).collect(),
            seed: config.seed,
            aug_seed: config.aug_seed,
        };
        Ok(Trainer { config, dataset, teachers, student, optimizer, state, history: Vec::new(), epochs: Vec::new() })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        config: &'a DistillationConfig,
        dataset: &'a Dataset,
        teachers: &'a [TeacherHandle<T>],
        ckpt: &Checkpoint<T>,
    ) -> Result<Self, DistillError> {
        let mut trainer = Self::new(config, dataset, teachers)?;
        let student = Network::from_checkpoint(ckpt)?;
        if student.spec() != &config.student {
            return Err(DistillError::Config("checkpoint student architecture differs from the config".into()));
        }
        let text = ckpt.meta.get(STATE_KEY).ok_or_else(|| DistillError::Config(format!("checkpoint has no `{STATE_KEY}`")))?;
        let state: TrainState =
            serde_json::from_str(text).map_err(|e| DistillError::Config(format!("bad stored train state: {e}")))?;
        if state.seed != config.seed || state.aug_seed != config.aug_seed || state.teacher_ids != trainer.state.teacher_ids {
            return Err(DistillError::Config("checkpoint seeds or teachers differ from the config".into()));
        }
        let buffers = student
            .store
            .iter()
            .map(|p| ckpt.get(&format!("{OPTIM_PREFIX}{}", p.name)).map(|t| t.data().to_vec()).unwrap_or_default())
            .collect();
        trainer.optimizer.set_buffers(buffers);
        trainer.student = student;
        trainer.state = state;
        Ok(trainer)
    }

    pub fn student(&self) -> &Network<T> {
        &self.student
    }

    pub fn into_student(self) -> Network<T> {
        self.student
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Step records produced by this trainer instance (not those before a resume).
    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn epoch_summaries(&self) -> &[EpochSummary] {
        &self.epochs
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// Student parameters, optimizer buffers and train state.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut ckpt = self.student.to_checkpoint();
        ckpt.meta.insert(STATE_KEY.into(), serde_json::to_string(&self.state).expect("state serializes"));
        for (p, buf) in self.student.store.iter().zip(self.optimizer.buffers()) {
            if !buf.is_empty() {
                let t = Tensor::new(p.tensor.shape().to_vec(), buf.clone()).expect("buffer matches parameter");
                ckpt.records.push((format!("{OPTIM_PREFIX}{}", p.name), t));
            }
        }
        ckpt
    }

    pub fn run(&mut self) -> Result<(), DistillError> {
        self.run_with(|_| {})
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<(), DistillError> {
        while !self.is_finished() {
            let summary = self.run_epoch()?;
            on_epoch(&summary);
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<EpochSummary, DistillError> {
        let epoch = self.state.epoch;
        let lr = self.config.schedule().lr_at(epoch)?;
        let order = epoch_order(self.dataset.len(), self.config.seed, epoch);
        let k = self.teachers.len();
        let (mut total, mut per, mut steps) = (0.0, vec![0.0; k], 0usize);
        for batch in order.chunks(self.config.batch_size) {
            // A trailing single image cannot be batch-normalized in train mode.
            if batch.len() < 2 {
                continue;
            }
            let rec = self.step(batch, epoch, lr)?;
            total += rec.total;
            per.iter_mut().zip(&rec.per_teacher).for_each(|(a, b)| *a += b);
            steps += 1;
            self.history.push(rec);
        }
        let n = steps.max(1) as f64;
        let summary = EpochSummary {
            epoch,
            lr,
            steps,
            mean_loss: total / n,
            teacher_losses: per.iter().map(|v| v / n).collect(),
        };
        self.state.epoch += 1;
        self.state.running_loss = summary.mean_loss;
        self.state.teacher_losses = summary.teacher_losses.clone();
        self.epochs.push(summary.clone());
        Ok(summary)
    }

    fn to_tensor(shape: Vec<usize>, values: Vec<f32>) -> Tensor<T> {
        Tensor::new(shape, values.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect()).expect("view buffer sized to shape")
    }

    /// Teacher views (when any consumer needs them) and student views for one batch.
    fn views(&self, batch: &[usize], epoch: usize) -> Result<(Option<Tensor<T>>, Tensor<T>), DistillError> {
        let pairing = &self.config.pairing;
        let any_cached = self.teachers.iter().any(|t| t.is_cached());
        let any_live = self.teachers.iter().any(|t| !t.is_cached());
        let same = pairing.mode == PairMode::Same;
        let view_epoch = if self.config.fixed_views { 0 } else { epoch as u64 };
        let teacher_epoch = if any_cached { 0 } else { view_epoch };
        let shape = self.dataset.image_shape();
        let c = shape.0;
        let (ts, ss) = (pairing.teacher.output_size, pairing.student.output_size);
        let mut tv = Vec::with_capacity(if any_live || same { batch.len() * c * ts * ts } else { 0 });
        let mut sv = Vec::with_capacity(batch.len() * c * ss * ss);
        for &i in batch {
            let image = self.dataset.image(i);
            let id = i as u64;
            let key = |epoch| ViewKey { seed: self.config.aug_seed, image: id, epoch };
            if any_live || same {
                let t = augment(image, shape, &pairing.teacher, &mut key(teacher_epoch).stream(TEACHER_SIDE))?;
                if same {
                    sv.extend_from_slice(&t);
                }
                if any_live {
                    tv.extend(t);
                }
            }
            if !same {
                sv.extend(augment(image, shape, &pairing.student, &mut key(view_epoch).stream(STUDENT_SIDE))?);
            }
        }
        let n = batch.len();
        let teacher = any_live.then(|| Self::to_tensor(vec![n, c, ts, ts], tv));
        Ok((teacher, Self::to_tensor(vec![n, c, ss, ss], sv)))
    }

    fn step(&mut self, batch: &[usize], epoch: usize, lr: f64) -> Result<StepRecord, DistillError> {
        let step = self.state.global_step;
        let numeric = |e: DistillError| match e {
            DistillError::Tensor(TensorError::NonFinite { op }) => DistillError::NumericFailure { epoch, step, op: op.to_string() },
            other => other,
        };
        let ids: Vec<u64> = batch.iter().map(|&i| i as u64).collect();
        let (teacher_views, student_views) = self.views(batch, epoch)?;
        let targets = self
            .teachers
            .iter()
            .map(|t| t.features(teacher_views.as_ref(), &ids))
            .collect::<Result<Vec<_>, _>>()
            .map_err(numeric)?;
        let labels: Option<Vec<usize>> = self.dataset.labels().map(|l| batch.iter().map(|&i| l[i] as usize).collect());

        let mut tape = Tape::new();
        let (loss, pass) = (|| -> Result<_, DistillError> {
            let x = tape.constant(student_views.shape().to_vec(), student_views.into_data())?;
            let pass = self.student.forward(&mut tape, x, BatchNormMode::Train, true)?;
            let mut pairs: Vec<(Var, Var)> = Vec::with_capacity(targets.len());
            for (k, t) in targets.into_iter().enumerate() {
                let tv = tape.constant(t.shape().to_vec(), t.into_data())?;
                pairs.push((tv, pass.head_output(k)));
            }
            let loss = student_loss(&mut tape, &self.config.loss, &pairs, &self.config.teacher_weights, labels.as_deref())?;
            tape.backward(loss.total)?;
            Ok((loss, pass))
        })()
        .map_err(numeric)?;

        let total = tape.value(loss.total)[0].to_f64().unwrap_or(f64::NAN);
        let per_teacher: Vec<f64> = loss.components.iter().map(|&v| tape.value(v)[0].to_f64().unwrap_or(f64::NAN)).collect();
        if !total.is_finite() {
            return Err(DistillError::NumericFailure { epoch, step, op: "loss".into() });
        }
        let store = &mut self.student.store;
        store.zero_grad();
        store.accumulate_grads(&tape, &pass.bindings)?;
        pass.stats.apply(store);
        for (slot, p) in store.iter_mut().enumerate() {
            if !p.kind.trainable() {
                continue;
            }
            let decay = p.kind.decays();
            let (data, grad) = p.tensor.data_and_grad_mut();
            if let Some(g) = grad {
                self.optimizer.step_param(slot, data, g, lr, decay).map_err(|e| numeric(e.into()))?;
            }
        }
        self.state.global_step += 1;
        Ok(StepRecord { epoch, step, lr, total, per_teacher })
    }
}

/// The full student objective for one batch, given `(teacher target, head output)` pairs.
pub fn student_loss<T: Scalar>(
    tape: &mut Tape<T>,
    kind: &LossKind,
    pairs: &[(Var, Var)],
    weights: &[f64],
    labels: Option<&[usize]>,
) -> Result<MultiTeacherLoss, TensorError> {
    match *kind {
        LossKind::Regression => multi_teacher_loss(tape, pairs, weights),
        LossKind::KdBaseline { lambda, tau_t, tau_s } => multi_teacher_loss_with(tape, pairs, weights, |tape, t, s| {
            let kd = kd_loss(tape, t, s, tau_t, tau_s)?;
            match labels {
                Some(labels) if lambda > 0.0 => {
                    let ce = tape.cross_entropy(s, labels)?;
                    combined_kd_loss(tape, ce, kd, lambda, tau_s)
                }
                _ if lambda > 0.0 => Err(TensorError::Invalid { op: "kd_baseline", detail: "lambda > 0 needs labels".into() }),
                _ => tape.scale(kd, crate::tensor::lit(tau_s * tau_s)),
            }
        }),
    }
}

/// Convenience wrapper: fresh trainer run to completion.
pub fn distill<T: Scalar>(
    config: &DistillationConfig,
    dataset: &Dataset,
    teachers: &[TeacherHandle<T>],
) -> Result<(Network<T>, TrainState, Vec<StepRecord>), DistillError> {
    let mut trainer = Trainer::new(config, dataset, teachers)?;
    trainer.run()?;
    let state = trainer.state().clone();
    let history = trainer.history().to_vec();
    Ok((trainer.into_student(), state, history))
}

/// Writes step records as CSV: `epoch,step,lr,total_loss,loss_teacher_<id>...`.
pub fn write_history_csv<W: Write>(out: W, teacher_ids: &[String], records: &[StepRecord], header: bool) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        let mut cols: Vec<String> = ["epoch", "step", "lr", "total_loss"].iter().map(|s| s.to_string()).collect();
        cols.extend(teacher_ids.iter().map(|id| format!("loss_teacher_{id}")));
        w.write_record(&cols)?;
    }
    for r in records {
        let mut row = vec![r.epoch.to_string(), r.step.to_string(), r.lr.to_string(), r.total.to_string()];
        row.extend(r.per_teacher.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}
