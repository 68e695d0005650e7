use super::{lit, Result, Scalar, TensorError};

/// Learning-rate schedule shape.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `base * 0.5 * (1 + cos(pi * t / T))`, no warmup, no restarts.
    Cosine,
    /// `base * factor^(milestones passed)`.
    Step { milestones: Vec<usize>, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn cosine(base_lr: f64, total_steps: usize) -> Self {
        LrSchedule { base_lr, total_steps, kind: ScheduleKind::Cosine }
    }

    pub fn step(base_lr: f64, total_steps: usize, milestones: Vec<usize>, factor: f64) -> Self {
        LrSchedule { base_lr, total_steps, kind: ScheduleKind::Step { milestones, factor } }
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(TensorError::Invalid {
                op: "lr_at",
                detail: format!("step {step} outside [0, {}]", self.total_steps),
            });
        }
        Ok(match &self.kind {
            ScheduleKind::Cosine => {
                if self.total_steps == 0 {
                    return Ok(self.base_lr);
                }
                let phase = std::f64::consts::PI * step as f64 / self.total_steps as f64;
                // clamp away the -1e-17 that cos(pi) rounding can leave behind
                (self.base_lr * 0.5 * (1.0 + phase.cos())).max(0.0)
            }
            ScheduleKind::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| step >= m).count();
                self.base_lr * factor.powi(passed as i32)
            }
        })
    }
}

/// One SGD-with-momentum update of a single parameter buffer.
///
/// `v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v`
pub fn sgd_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    momentum: f64,
    weight_decay: f64,
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(TensorError::Shape {
            op: "sgd_step",
            detail: format!("param {} / grad {} / velocity {}", param.len(), grad.len(), velocity.len()),
        });
    }
    let (mu, wd, lr) = (lit::<T>(momentum), lit::<T>(weight_decay), lit::<T>(lr));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v + (g + wd * *p);
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers plus hyper-parameters, one buffer per registered parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    buffers: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64, base_lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::Invalid { op: "sgd", detail: format!("momentum {momentum} outside [0,1)") });
        }
        if !(weight_decay >= 0.0) {
            return Err(TensorError::Invalid { op: "sgd", detail: format!("weight decay {weight_decay} < 0") });
        }
        Ok(Sgd { momentum, weight_decay, base_lr, buffers: Vec::new() })
    }

    /// Applies an update to parameter `slot`; `decay` selects whether weight decay applies.
    pub fn step_param(&mut self, slot: usize, param: &mut [T], grad: &[T], lr: f64, decay: bool) -> Result<()> {
        if self.buffers.len() <= slot {
            self.buffers.resize_with(slot + 1, Vec::new);
        }
        let buf = &mut self.buffers[slot];
        if buf.is_empty() {
            *buf = vec![T::zero(); param.len()];
        }
        let wd = if decay { self.weight_decay } else { 0.0 };
        sgd_update(param, grad, buf, self.momentum, wd, lr)
    }

    pub fn buffers(&self) -> &[Vec<T>] {
        &self.buffers
    }

    pub fn set_buffers(&mut self, buffers: Vec<Vec<T>>) {
        self.buffers = buffers;
    }
}
