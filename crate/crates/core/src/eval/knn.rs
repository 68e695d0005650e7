use std::cmp::Ordering;

use super::{EvalError, FeatureBank};

/// Cosine similarity of a query row against every bank row (bank rows unit-norm).
pub fn similarities(bank: &FeatureBank, query: &[f32]) -> Vec<f64> {
    let qn = query.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    // A zero query is similar to nothing; every neighbor then ties at 0.
    let qn = if qn == 0.0 { 1.0 } else { qn };
    let q: Vec<f64> = query.iter().map(|&v| v as f64 / qn).collect();
    (0..bank.len())
        .map(|j| bank.row(j).iter().zip(&q).map(|(&b, &a)| b as f64 * a).sum())
        .collect()
}

/// Higher similarity first, lower index on equal similarity.
pub fn neighbor_order(sims: &[f64], a: usize, b: usize) -> Ordering {
    sims[b].partial_cmp(&sims[a]).expect("finite similarities").then(a.cmp(&b))
}

/// Majority label among `neighbors`; ties go to the larger summed similarity, then the
/// lower class index.
pub fn vote(bank: &FeatureBank, sims: &[f64], neighbors: &[usize]) -> u32 {
    let classes = bank.num_classes();
    let mut counts = vec![0usize; classes];
    let mut mass = vec![0f64; classes];
    for &j in neighbors {
        let l = bank.labels()[j] as usize;
        counts[l] += 1;
        mass[l] += sims[j];
    }
    let mut best = 0;
    for c in 1..classes {
        if counts[c] > counts[best] || (counts[c] == counts[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    best as u32
}

/// Exact brute-force cosine k-NN over `q x p` query rows.
pub fn knn_classify(bank: &FeatureBank, queries: &[f32], k: usize) -> Result<Vec<u32>, EvalError> {
    if bank.is_empty() {
        return Err(EvalError::EmptyBank);
    }
    if k == 0 || k > bank.len() {
        return Err(EvalError::InvalidK { k, n: bank.len() });
    }
    if !bank.is_normalized() {
        return Err(EvalError::Degenerate("k-NN needs an l2-normalized bank".into()));
    }
    let p = bank.dim();
    if queries.len() % p != 0 {
        return Err(EvalError::Shape(format!("{} query values for width {p}", queries.len())));
    }
    let mut out = Vec::with_capacity(queries.len() / p);
    let mut idx: Vec<usize> = Vec::with_capacity(bank.len());
    for (qi, q) in queries.chunks(p).enumerate() {
        let sims = similarities(bank, q);
        if sims.iter().any(|s| !s.is_finite()) {
            return Err(EvalError::Degenerate(format!("query {qi} has non-finite norm")));
        }
        idx.clear();
        idx.extend(0..bank.len());
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, |&a, &b| neighbor_order(&sims, a, b));
        }
        let top = &mut idx[..k];
        top.sort_unstable_by(|&a, &b| neighbor_order(&sims, a, b));
        out.push(vote(bank, &sims, top));
    }
    Ok(out)
}

/// Top-1 accuracy in percent.
pub fn accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / truth.len() as f64
}
