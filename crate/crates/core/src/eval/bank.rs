use crate::data::{BankFile, FeatureCache};

use super::EvalError;

/// Frozen features of one layer with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<u32>,
    pub layer: String,
    normalized: bool,
}

/// Row-wise l2 normalization in f64. All-zero rows (a dead ReLU layer) have no direction
/// and stay zero; returns how many there were.
pub fn l2_normalize_rows(features: &mut [f32], dim: usize) -> Result<usize, EvalError> {
    let mut zero = 0;
    for (i, row) in features.chunks_mut(dim).enumerate() {
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(EvalError::Degenerate(format!("row {i} has norm {norm}")));
        }
        if norm == 0.0 {
            zero += 1;
            continue;
        }
        row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
    }
    Ok(zero)
}

impl FeatureBank {
    /// Builds a bank from `n x dim` row-major features; `normalize` l2-normalizes every
    /// non-zero row.
    pub fn new(
        layer: impl Into<String>,
        mut features: Vec<f32>,
        dim: usize,
        labels: Vec<u32>,
        normalize: bool,
    ) -> Result<Self, EvalError> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(EvalError::Shape(format!("{} values for {} labels of width {dim}", features.len(), labels.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::Degenerate("non-finite feature".into()));
        }
        if normalize {
            l2_normalize_rows(&mut features, dim)?;
        }
        Ok(FeatureBank { features, dim, labels, layer: layer.into(), normalized: normalize })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn to_file(&self, teacher_id: &str, seed: u64) -> BankFile {
        let mut cache = FeatureCache::new(teacher_id, seed, self.dim);
        for i in 0..self.len() {
            cache.push(i as u64, self.row(i)).expect("rows have bank width and unique ids");
        }
        BankFile { features: cache, layer: self.layer.clone(), normalized: self.normalized, labels: self.labels.clone() }
    }

    /// Rows are taken in stored order; the normalized flag is re-checked, not trusted.
    pub fn from_file(file: &BankFile) -> Result<Self, EvalError> {
        let bank = FeatureBank::new(file.layer.clone(), file.features.features().to_vec(), file.features.dim, file.labels.clone(), false)?;
        if file.normalized {
            for i in 0..bank.len() {
                let norm = bank.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-5 && norm != 0.0 {
                    return Err(EvalError::Degenerate(format!("row {i} of a normalized bank has norm {norm}")));
                }
            }
        }
        Ok(FeatureBank { normalized: file.normalized, ..bank })
    }
}

/// Mean over samples and dimensions of the squared difference, optionally after l2
/// normalizing both sides.
pub fn feature_mse(f_t: &[f32], f_s: &[f32], dim_t: usize, dim_s: usize, normalized: bool) -> Result<f64, EvalError> {
    if dim_t != dim_s {
        return Err(EvalError::Shape(format!("teacher width {dim_t} vs student width {dim_s}")));
    }
    if dim_t == 0 || f_t.len() != f_s.len() || f_t.len() % dim_t != 0 || f_t.is_empty() {
        return Err(EvalError::Shape(format!("{} teacher vs {} student values", f_t.len(), f_s.len())));
    }
    let (mut t, mut s) = (f_t.to_vec(), f_s.to_vec());
    if normalized {
        l2_normalize_rows(&mut t, dim_t)?;
        l2_normalize_rows(&mut s, dim_s)?;
    }
    let total: f64 = t.iter().zip(&s).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(total / t.len() as f64)
}
