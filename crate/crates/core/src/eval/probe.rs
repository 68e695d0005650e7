use rand::seq::SliceRandom;

use crate::rng;
use crate::tensor::{LrSchedule, Sgd, Tape, Tensor};

use super::bank::l2_normalize_rows;
use super::knn::accuracy;
use super::{EvalError, FeatureBank};

/// Standard deviations at or below this are treated as constant dimensions.
pub const STD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 40, lr: 0.01, momentum: 0.9, milestones: vec![15, 30], factor: 0.1, batch_size: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// Test top-1 in percent.
    pub accuracy: f64,
    pub train_accuracy: f64,
    /// Dimensions whose train std fell below [`STD_EPS`].
    pub constant_dims: usize,
}

/// Per-dimension mean and std of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant_dims: usize,
}

impl Standardizer {
    /// Population statistics of `n x dim` rows.
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim) as f64;
        let mut mean = vec![0f64; dim];
        for row in rows.chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0f64; dim];
        for row in rows.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let mut constant_dims = 0;
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > STD_EPS {
                    sd
                } else {
                    constant_dims += 1;
                    STD_EPS
                }
            })
            .collect();
        Standardizer { mean, std, constant_dims }
    }

    pub fn apply(&self, rows: &mut [f64]) {
        let dim = self.mean.len();
        for row in rows.chunks_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

fn normalized_rows(bank: &FeatureBank) -> Result<Vec<f64>, EvalError> {
    let mut f = bank.features().to_vec();
    if !bank.is_normalized() {
        l2_normalize_rows(&mut f, bank.dim())?;
    }
    Ok(f.into_iter().map(|v| v as f64).collect())
}

/// The probe front end: l2-normalize rows, then standardize both banks with train statistics.
pub fn probe_front_end(train: &FeatureBank, test: &FeatureBank) -> Result<(Vec<f64>, Vec<f64>, Standardizer), EvalError> {
    if train.dim() != test.dim() {
        return Err(EvalError::Shape(format!("train width {} vs test width {}", train.dim(), test.dim())));
    }
    if train.is_empty() {
        return Err(EvalError::EmptyBank);
    }
    let mut tr = normalized_rows(train)?;
    let mut te = normalized_rows(test)?;
    let st = Standardizer::fit(&tr, train.dim());
    st.apply(&mut tr);
    st.apply(&mut te);
    Ok((tr, te, st))
}

fn predict(w: &[f64], b: &[f64], rows: &[f64], dim: usize, classes: usize) -> Vec<u32> {
    rows.chunks(dim)
        .map(|x| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..classes {
                let z = b[c] + x.iter().enumerate().map(|(i, v)| v * w[i * classes + c]).sum::<f64>();
                if z > best.1 {
                    best = (c, z);
                }
            }
            best.0 as u32
        })
        .collect()
}

/// Affine softmax classifier on frozen features, trained with momentum SGD and a step schedule.
pub fn linear_probe(train: &FeatureBank, test: &FeatureBank, cfg: &ProbeConfig) -> Result<ProbeResult, EvalError> {
    let (tr, te, st) = probe_front_end(train, test)?;
    let dim = train.dim();
    let classes = train.num_classes().max(test.num_classes());
    let n = train.len();
    if cfg.batch_size == 0 {
        return Err(EvalError::Shape("probe batch size must be positive".into()));
    }
    let schedule = LrSchedule::step(cfg.lr, cfg.epochs, cfg.milestones.clone(), cfg.factor);
    let mut opt = Sgd::<f64>::new(cfg.momentum, 0.0, cfg.lr)?;
    let mut w = vec![0f64; dim * classes];
    let mut b = vec![0f64; classes];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch)?;
        order.shuffle(&mut rng::stream(cfg.seed, "probe.shuffle", &[epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * dim);
            for &i in batch {
                x.extend_from_slice(&tr[i * dim..(i + 1) * dim]);
            }
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels()[i] as usize).collect();
            let mut tape = Tape::<f64>::new();
            let xv = tape.leaf(&Tensor::new(vec![batch.len(), dim], x)?)?;
            let wv = tape.variable(vec![dim, classes], w.clone())?;
            let bv = tape.variable(vec![classes], b.clone())?;
            let logits = tape.matmul(xv, wv)?;
            let logits = tape.add_bias(logits, bv)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            tape.backward(loss)?;
            let gw = tape.grad(wv).expect("weight is a variable").to_vec();
            let gb = tape.grad(bv).expect("bias is a variable").to_vec();
            opt.step_param(0, &mut w, &gw, lr, false)?;
            opt.step_param(1, &mut b, &gb, lr, false)?;
        }
    }
    let train_pred = predict(&w, &b, &tr, dim, classes);
    let test_pred = predict(&w, &b, &te, dim, classes);
    Ok(ProbeResult {
        accuracy: accuracy(&test_pred, test.labels()),
        train_accuracy: accuracy(&train_pred, train.labels()),
        constant_dims: st.constant_dims,
    })
}
