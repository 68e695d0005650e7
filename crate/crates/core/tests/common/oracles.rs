//! Direct reference implementations checked against the library.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use regdistill::data::{generate_synthetic, SyntheticKind, SyntheticSpec};
use regdistill::distill::regression_loss;
use regdistill::eval::{knn_classify, linear_probe, probe_front_end, FeatureBank, ProbeConfig};
use regdistill::rng::{stream, Rng};
use regdistill::tensor::{BatchNormMode, RunningStats, Scalar, Tape};

fn normal(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn normal_f32(r: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

// -- tensor kernels -------------------------------------------------------------

/// Largest `|got - want|` relative to `sum_k |a_ik b_kj|` over every output entry.
pub fn matmul_triple_loop() -> f64 {
    let mut r = stream(0, "oracle.matmul", &[]);
    let mut shapes = vec![(5, 7, 3)];
    shapes.extend((0..30).map(|_| (r.random_range(1..40), r.random_range(1..40), r.random_range(1..40))));
    let mut worst: f64 = 0.0;
    for (p, q, s) in shapes {
        let (a, b) = (normal(&mut r, p * q), normal(&mut r, q * s));
        let mut t = Tape::<f64>::new();
        let av = t.constant(vec![p, q], a.clone()).unwrap();
        let bv = t.constant(vec![q, s], b.clone()).unwrap();
        let c = t.matmul(av, bv).unwrap();
        let got = t.value(c);
        for i in 0..p {
            for j in 0..s {
                let (mut want, mut scale) = (0.0, 0.0);
                for k in 0..q {
                    want += a[i * q + k] * b[k * s + j];
                    scale += (a[i * q + k] * b[k * s + j]).abs();
                }
                worst = worst.max((got[i * s + j] - want).abs() / scale.max(f64::MIN_POSITIVE));
            }
        }
    }
    assert!(worst <= 1e-6, "matmul relative error {worst:e}");
    worst
}

fn conv_reference(x: &[f32], w: &[f32], (n, c, h, wd): (usize, usize, usize, usize), (f, k): (usize, usize), stride: usize, pad: usize) -> Vec<f32> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0f32; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f64;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv as f64 * w[((fi * c + ci) * k + ky) * k + kx] as f64;
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

/// f32 convolution against nested loops; returns the largest absolute difference.
pub fn conv_nested_loops() -> f64 {
    let mut r = stream(0, "oracle.conv", &[]);
    let mut cases = vec![((2, 3, 8, 8), (4, 3), 1, 0), ((2, 3, 8, 8), (4, 3), 1, 1), ((2, 3, 8, 8), (4, 3), 2, 1)];
    for _ in 0..20 {
        let k = [1, 3, 5][r.random_range(0..3)];
        let dims = (r.random_range(1..4), r.random_range(1..5), r.random_range(k..12), r.random_range(k..12));
        cases.push((dims, (r.random_range(1..6), k), r.random_range(1..3), r.random_range(0..=k / 2)));
    }
    let mut worst: f64 = 0.0;
    for (dims, (f, k), stride, pad) in cases {
        let (n, c, h, wd) = dims;
        let x = normal_f32(&mut r, n * c * h * wd);
        let w = normal_f32(&mut r, f * c * k * k);
        let mut t = Tape::<f32>::new();
        let xv = t.constant(vec![n, c, h, wd], x.clone()).unwrap();
        let kv = t.constant(vec![f, c, k, k], w.clone()).unwrap();
        let y = t.conv2d(xv, kv, stride, pad).unwrap();
        let want = conv_reference(&x, &w, dims, (f, k), stride, pad);
        assert_eq!(t.value(y).len(), want.len());
        for (a, b) in t.value(y).iter().zip(&want) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    assert!(worst <= 1e-5, "conv max abs error {worst:e}");
    worst
}

/// Train-mode batch norm against single-pass (Welford) statistics, including the
/// running-stat update. Returns the largest absolute difference.
pub fn batchnorm_single_pass() -> f64 {
    let mut r = stream(0, "oracle.bn", &[]);
    let mut worst: f64 = 0.0;
    for i in 0..30 {
        let (n, c) = (r.random_range(2..16), r.random_range(1..6));
        let shape = if i % 2 == 0 { vec![n, c] } else { vec![n, c, r.random_range(1..5), r.random_range(1..5)] };
        let s: usize = shape[2..].iter().product();
        let x: Vec<f64> = normal(&mut r, n * c * s).iter().map(|v| 3.0 * v + 1.5).collect();
        let gamma = normal(&mut r, c);
        let beta = normal(&mut r, c);
        let (old_mean, old_var) = (normal(&mut r, c), vec![1.3; c]);
        let (momentum, eps) = (0.1, 1e-5);
        let (mut rm, mut rv) = (old_mean.clone(), old_var.clone());
        let mut t = Tape::<f64>::new();
        let xv = t.constant(shape.clone(), x.clone()).unwrap();
        let gv = t.constant(vec![c], gamma.clone()).unwrap();
        let bv = t.constant(vec![c], beta.clone()).unwrap();
        let y = t.batchnorm(xv, gv, bv, RunningStats { mean: &mut rm, var: &mut rv, momentum, eps }, BatchNormMode::Train).unwrap();
        for ci in 0..c {
            let (mut count, mut mean, mut m2) = (0usize, 0f64, 0f64);
            for ni in 0..n {
                for &v in &x[(ni * c + ci) * s..(ni * c + ci + 1) * s] {
                    count += 1;
                    let d = v - mean;
                    mean += d / count as f64;
                    m2 += d * (v - mean);
                }
            }
            let var = m2 / count as f64;
            for ni in 0..n {
                for j in (ni * c + ci) * s..(ni * c + ci + 1) * s {
                    let want = gamma[ci] * (x[j] - mean) / (var + eps).sqrt() + beta[ci];
                    worst = worst.max((t.value(y)[j] - want).abs());
                }
            }
            let unbiased = m2 / (count as f64 - 1.0);
            worst = worst.max((rm[ci] - ((1.0 - momentum) * old_mean[ci] + momentum * mean)).abs());
            worst = worst.max((rv[ci] - ((1.0 - momentum) * old_var[ci] + momentum * unbiased)).abs());
        }
    }
    assert!(worst <= 1e-6, "batchnorm max abs error {worst:e}");
    worst
}

// -- data -----------------------------------------------------------------------

/// Cosine 1-NN on raw pixels of low-noise synthetic data; returns the lowest accuracy.
pub fn raw_pixel_separability() -> f64 {
    let mut lowest = f64::INFINITY;
    for kind in [SyntheticKind::Blobs, SyntheticKind::Shapes] {
        let spec = |split, per_class| SyntheticSpec { num_classes: 10, per_class, image_size: 32, kind, noise: 0.2, seed: 1, split };
        let train = generate_synthetic(&spec(0, 100));
        let test = generate_synthetic(&spec(1, 50));
        let dim = train.image_len();
        let bank = FeatureBank::new("pixels", train.images().to_vec(), dim, train.labels().unwrap().to_vec(), true).unwrap();
        let pred = knn_classify(&bank, test.images(), 1).unwrap();
        let acc = regdistill::eval::accuracy(&pred, test.labels().unwrap());
        assert!(acc > 95.0, "{kind:?}: raw-pixel 1-NN accuracy {acc}");
        lowest = lowest.min(acc);
    }
    lowest
}

// -- regression loss ------------------------------------------------------------

fn loss_value<T: Scalar>(f_t: &[f64], f_s: &[f64], n: usize) -> f64 {
    let d = f_t.len() / n;
    let mut tape = Tape::<T>::new();
    let t = tape.constant(vec![n, d], f_t.iter().map(|&v| regdistill::tensor::lit(v)).collect()).unwrap();
    let s = tape.variable(vec![n, d], f_s.iter().map(|&v| regdistill::tensor::lit(v)).collect()).unwrap();
    let l = regression_loss(&mut tape, t, s).unwrap();
    tape.value(l)[0].to_f64().unwrap()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Reference values 0 / 2 / 4 on random normalized pairs (both precisions), then 100
/// scale draws. Returns the largest deviation seen.
pub fn loss_exactness() -> f64 {
    let mut r = stream(0, "oracle.loss", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = r.random_range(2..64);
        let u = unit(normal(&mut r, d));
        // Gram-Schmidt for an orthogonal partner
        let v = normal(&mut r, d);
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let w = unit(v.iter().zip(&u).map(|(b, a)| b - dot * a).collect());
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        for (s, want) in [(&u, 0.0), (&w, 2.0), (&neg, 4.0)] {
            worst = worst.max((loss_value::<f64>(&u, s, 1) - want).abs());
            worst = worst.max((loss_value::<f32>(&u, s, 1) - want).abs());
        }
    }
    assert!(worst <= 1e-6, "reference values off by {worst:e}");
    for _ in 0..100 {
        let (n, d) = (r.random_range(1..8), r.random_range(2..32));
        let t = normal(&mut r, n * d);
        let s = normal(&mut r, n * d);
        let (a, b) = (10f64.powf(r.random_range(-3.0..3.0)), 10f64.powf(r.random_range(-3.0..3.0)));
        let base = loss_value::<f64>(&t, &s, n);
        let ta: Vec<f64> = t.iter().map(|v| v * a).collect();
        let sb: Vec<f64> = s.iter().map(|v| v * b).collect();
        let err = (loss_value::<f64>(&ta, &sb, n) - base).abs();
        assert!(err <= 1e-6, "scale ({a}, {b}) moved the loss by {err:e}");
        assert!((0.0..=4.0).contains(&base));
        worst = worst.max(err);
    }
    worst
}

// -- k-NN -----------------------------------------------------------------------

/// Sort every bank row by (similarity desc, index asc), keep `k`, majority vote with
/// ties to the larger similarity mass and then the lower class.
fn full_sort_knn(bank: &FeatureBank, queries: &[f32], k: usize) -> Vec<u32> {
    let p = bank.dim();
    queries
        .chunks(p)
        .map(|q| {
            let norm = q.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            let norm = if norm == 0.0 { 1.0 } else { norm };
            let qn: Vec<f64> = q.iter().map(|&v| v as f64 / norm).collect();
            let sims: Vec<f64> = (0..bank.len()).map(|j| bank.row(j).iter().zip(&qn).map(|(&b, a)| b as f64 * a).sum()).collect();
            let mut order: Vec<usize> = (0..bank.len()).collect();
            order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
            let classes = bank.num_classes();
            let (mut count, mut mass) = (vec![0usize; classes], vec![0f64; classes]);
            for &j in &order[..k] {
                let l = bank.labels()[j] as usize;
                count[l] += 1;
                mass[l] += sims[j];
            }
            (0..classes)
                .max_by(|&a, &b| count[a].cmp(&count[b]).then(mass[a].partial_cmp(&mass[b]).unwrap()).then(b.cmp(&a)))
                .unwrap() as u32
        })
        .collect()
}

/// 50 seeded instances; every third uses a coarse value grid so similarities tie
/// often, and every instance duplicates rows under different labels. Returns the number
/// of predictions compared.
pub fn knn_full_sort() -> usize {
    let mut compared = 0;
    for i in 0..50u64 {
        let mut r = stream(i, "oracle.knn", &[]);
        let n = r.random_range(20..=2000);
        let p = r.random_range(1..=128);
        let classes = r.random_range(2..=10u32);
        let coarse = i % 3 == 0;
        let mut rows: Vec<f32> = if coarse {
            (0..n * p).map(|_| r.random_range(-1..=1) as f32).collect()
        } else {
            normal_f32(&mut r, n * p)
        };
        let mut labels: Vec<u32> = (0..n).map(|_| r.random_range(0..classes)).collect();
        for _ in 0..n / 5 {
            let (src, dst) = (r.random_range(0..n), r.random_range(0..n));
            let row = rows[src * p..(src + 1) * p].to_vec();
            rows[dst * p..(dst + 1) * p].copy_from_slice(&row);
            labels[dst] = r.random_range(0..classes);
        }
        // keep every class present so the vote spans all labels
        for c in 0..classes as usize {
            labels[c] = c as u32;
        }
        if rows.chunks(p).any(|row| row.iter().all(|&v| v == 0.0)) {
            for (j, row) in rows.chunks_mut(p).enumerate() {
                if row.iter().all(|&v| v == 0.0) {
                    row[j % p] = 1.0;
                }
            }
        }
        let q = r.random_range(10..60);
        let mut queries = if coarse { (0..q * p).map(|_| r.random_range(-1..=1) as f32).collect() } else { normal_f32(&mut r, q * p) };
        // some queries sit exactly on bank rows
        for qi in 0..q / 4 {
            let src = r.random_range(0..n);
            queries[qi * p..(qi + 1) * p].copy_from_slice(&rows[src * p..(src + 1) * p]);
        }
        let bank = FeatureBank::new("x", rows, p, labels, true).unwrap();
        for k in [1, 20] {
            let got = knn_classify(&bank, &queries, k).unwrap();
            let want = full_sort_knn(&bank, &queries, k);
            assert_eq!(got, want, "instance {i} (n={n}, p={p}, k={k})");
            compared += got.len();
        }
    }
    compared
}

// -- probe front end ------------------------------------------------------------

fn blob_bank(seed: u64, n: usize, classes: u32, p: usize, margin: f32) -> FeatureBank {
    let mut c = stream(0, "oracle.blobs.centers", &[]);
    let centers: Vec<Vec<f32>> = (0..classes).map(|_| normal_f32(&mut c, p).iter().map(|v| v * margin).collect()).collect();
    let mut r = stream(seed, "oracle.blobs", &[]);
    let labels: Vec<u32> = (0..n as u32).map(|i| i % classes).collect();
    let rows = labels.iter().flat_map(|&l| centers[l as usize].iter().map(|c| c + { let z: f32 = StandardNormal.sample(&mut r); z } * 0.3).collect::<Vec<_>>()).collect();
    FeatureBank::new("x", rows, p, labels, true).unwrap()
}

pub struct ProbeOutcome {
    pub worst_mean: f64,
    pub worst_var: f64,
    pub separable: f64,
    pub shuffled: f64,
}

/// Standardization moments on train features, probe accuracy on a separable bank and
/// on label-shuffled balanced 10-class data.
pub fn probe_front_end_checks() -> ProbeOutcome {
    let mut r = stream(0, "oracle.probe", &[]);
    let p = 24;
    // offset, anisotropic features
    let scales: Vec<f32> = (0..p).map(|_| r.random_range(0.01..20.0)).collect();
    let rows: Vec<f32> = (0..500 * p).map(|j| 5.0 + scales[j % p] * { let z: f32 = StandardNormal.sample(&mut r); z }).collect();
    let train = FeatureBank::new("x", rows, p, vec![0; 500], true).unwrap();
    let test = FeatureBank::new("x", normal_f32(&mut r, 100 * p), p, vec![0; 100], true).unwrap();
    let (tr, _, _) = probe_front_end(&train, &test).unwrap();
    let (mut worst_mean, mut worst_var): (f64, f64) = (0.0, 0.0);
    for d in 0..p {
        let col: Vec<f64> = tr.iter().skip(d).step_by(p).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        worst_mean = worst_mean.max(mean.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    assert!(worst_mean < 1e-5 && worst_var < 1e-4, "standardized moments: |mean| {worst_mean:e}, |var-1| {worst_var:e}");

    let separable = linear_probe(&blob_bank(1, 600, 5, 8, 4.0), &blob_bank(2, 300, 5, 8, 4.0), &ProbeConfig::default()).unwrap().accuracy;
    assert_eq!(separable, 100.0, "separable bank");

    let p = 32;
    let mut labels: Vec<u32> = (0..2000).map(|i| i % 10).collect();
    // shuffle so labels carry no information about the features
    for i in (1..labels.len()).rev() {
        labels.swap(i, r.random_range(0..=i));
    }
    let train = FeatureBank::new("x", normal_f32(&mut r, 2000 * p), p, labels, true).unwrap();
    let test = FeatureBank::new("x", normal_f32(&mut r, 2000 * p), p, (0..2000).map(|i| i % 10).collect(), true).unwrap();
    let shuffled = linear_probe(&train, &test, &ProbeConfig::default()).unwrap().accuracy;
    assert!((shuffled - 10.0).abs() <= 3.0, "shuffled labels: accuracy {shuffled}");
    ProbeOutcome { worst_mean, worst_var, separable, shuffled }
}
