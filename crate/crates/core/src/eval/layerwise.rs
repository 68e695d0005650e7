use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::eval_view;
use crate::data::Dataset;
use crate::models::{pool_intermediate, Network, TapKind};
use crate::tensor::Tensor;

use super::bank::{feature_mse, FeatureBank};
use super::knn::{accuracy, knn_classify};
use super::probe::{linear_probe, ProbeConfig};
use super::EvalError;

/// Deterministic evaluation view settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub size: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub view: ViewSpec,
    pub ks: Vec<usize>,
    /// `None` skips the linear probe.
    pub probe: Option<ProbeConfig>,
    pub mse_normalized: bool,
    pub batch_size: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(view: ViewSpec) -> Self {
        EvalConfig { view, ks: vec![1, 20], probe: Some(ProbeConfig::default()), mse_normalized: true, batch_size: 256, seed: 0 }
    }
}

/// A live network together with the tap to read.
#[derive(Clone, Copy)]
pub struct TapSource<'a> {
    pub network: &'a Network<f32>,
    pub tap: &'a str,
}

/// Flattened `n x width` activations at each requested tap over deterministic views.
/// Convolutional taps are spatially pooled to roughly the backbone feature width.
pub fn extract_features(
    net: &Network<f32>,
    dataset: &Dataset,
    taps: &[&str],
    view: &ViewSpec,
    batch_size: usize,
) -> Result<BTreeMap<String, (Vec<f32>, usize)>, EvalError> {
    let known = net.taps();
    let mut kinds = BTreeMap::new();
    for &t in taps {
        let tap = known.iter().find(|k| k.name == t).ok_or_else(|| EvalError::UnknownTap(t.to_string()))?;
        kinds.insert(t.to_string(), tap.kind);
    }
    let shape = dataset.image_shape();
    let s = view.size;
    let m = net.feature_dim();
    let mut out: BTreeMap<String, (Vec<f32>, usize)> = BTreeMap::new();
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let mut x = Vec::with_capacity(chunk.len() * shape.0 * s * s);
        for &i in chunk {
            x.extend(eval_view(dataset.image(i), shape, s, &view.mean, &view.std)?);
        }
        let x = Tensor::new(vec![chunk.len(), shape.0, s, s], x)?;
        let feats = net.forward_features(&x, taps)?;
        for (name, t) in feats {
            let t = if kinds[&name] == TapKind::ConvStage {
                let c = t.shape()[1];
                pool_intermediate(&t, m.max(c))?
            } else {
                t
            };
            let width = t.shape()[1];
            let entry = out.entry(name).or_insert_with(|| (Vec::new(), width));
            entry.0.extend_from_slice(t.data());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub kind: TapKind,
    pub width: usize,
    /// Top-1 percent keyed by k.
    pub knn_top1: BTreeMap<usize, f64>,
    pub linear_top1: Option<f64>,
    /// Against the teacher on the test set; absent when widths differ.
    pub feature_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub config_echo: Option<String>,
    pub layers: Vec<LayerReport>,
}

impl EvaluationReport {
    pub fn layer(&self, name: &str) -> Option<&LayerReport> {
        self.layers.iter().find(|l| l.layer == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per layer: `layer,kind,width,knn_top1_k<k>...,linear_top1,feature_mse`.
    pub fn to_csv(&self) -> String {
        let ks: Vec<usize> = self.layers.first().map(|l| l.knn_top1.keys().copied().collect()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["layer".to_string(), "kind".into(), "width".into()];
        header.extend(ks.iter().map(|k| format!("knn_top1_k{k}")));
        header.extend(["linear_top1".to_string(), "feature_mse".into()]);
        w.write_record(&header).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for l in &self.layers {
            let mut row = vec![l.layer.clone(), format!("{:?}", l.kind), l.width.to_string()];
            row.extend(ks.iter().map(|k| opt(l.knn_top1.get(k).copied())));
            row.push(opt(l.linear_top1));
            row.push(opt(l.feature_mse));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

/// k-NN (and optionally probe and teacher MSE) for every tap, on deterministic views.
pub fn layerwise_evaluate(
    model: &Network<f32>,
    taps: &[&str],
    train: &Dataset,
    test: &Dataset,
    teacher: Option<TapSource<'_>>,
    cfg: &EvalConfig,
) -> Result<EvaluationReport, EvalError> {
    let train_labels = train.labels().ok_or(EvalError::MissingLabels)?.to_vec();
    let test_labels = test.labels().ok_or(EvalError::MissingLabels)?.to_vec();
    let train_feats = extract_features(model, train, taps, &cfg.view, cfg.batch_size)?;
    let test_feats = extract_features(model, test, taps, &cfg.view, cfg.batch_size)?;
    let teacher_feats = match teacher {
        Some(t) => Some(extract_features(t.network, test, &[t.tap], &cfg.view, cfg.batch_size)?.remove(t.tap).expect("requested tap")),
        None => None,
    };
    let kinds: BTreeMap<String, TapKind> = model.taps().into_iter().map(|t| (t.name, t.kind)).collect();
    let mut layers = Vec::with_capacity(taps.len());
    for &tap in taps {
        let (tr, width) = &train_feats[tap];
        let (te, _) = &test_feats[tap];
        let bank = FeatureBank::new(tap, tr.clone(), *width, train_labels.clone(), true)?;
        let query = FeatureBank::new(tap, te.clone(), *width, test_labels.clone(), true)?;
        let mut knn_top1 = BTreeMap::new();
        for &k in &cfg.ks {
            let pred = knn_classify(&bank, query.features(), k)?;
            knn_top1.insert(k, accuracy(&pred, &test_labels));
        }
        let linear_top1 = match &cfg.probe {
            Some(p) => Some(linear_probe(&bank, &query, &ProbeConfig { seed: cfg.seed, ..p.clone() })?.accuracy),
            None => None,
        };
        let kind = kinds[tap];
        let feature_mse = match &teacher_feats {
            Some((tf, tw)) if *tw == *width && kind != TapKind::ConvStage => Some(feature_mse(tf, te, *tw, *width, cfg.mse_normalized)?),
            _ => None,
        };
        layers.push(LayerReport { layer: tap.to_string(), kind, width: *width, knn_top1, linear_top1, feature_mse });
    }
    Ok(EvaluationReport { seed: cfg.seed, config_echo: None, layers })
}
