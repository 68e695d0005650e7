use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::augment::{PairMode, Strength};
use crate::eval::EvaluationReport;
use crate::models::{Network, BACKBONE_TAP};
use crate::tensor::Scalar;

use super::config::{format_head, parse_head, AblationAxis, ExperimentConfig};
use super::pipeline::{head_output_tap, run_experiment, CacheStore, Splits};
use super::ExperimentError;

/// One seed of one variant.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub final_loss: f64,
    pub report: EvaluationReport,
    /// Head-output tap of this run's student.
    pub head_tap: String,
}

impl RunResult {
    pub fn backbone_knn(&self, k: usize) -> Option<f64> {
        self.report.layer(BACKBONE_TAP)?.knn_top1.get(&k).copied()
    }

    pub fn backbone_linear(&self) -> Option<f64> {
        self.report.layer(BACKBONE_TAP)?.linear_top1
    }

    pub fn head_mse(&self) -> Option<f64> {
        self.report.layer(&self.head_tap)?.feature_mse
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    /// Head layout when the sweep is crossed with `ablate.heads`.
    pub head: Option<String>,
    pub runs: Vec<RunResult>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl AblationRow {
    pub fn label(&self) -> String {
        match &self.head {
            Some(h) => format!("{} / {h}", self.variant),
            None => self.variant.clone(),
        }
    }

    fn collect(&self, f: impl Fn(&RunResult) -> Option<f64>) -> Option<f64> {
        let v: Option<Vec<f64>> = self.runs.iter().map(f).collect();
        mean(&v?)
    }

    pub fn knn(&self, k: usize) -> Option<f64> {
        self.collect(|r| r.backbone_knn(k))
    }

    pub fn linear(&self) -> Option<f64> {
        self.collect(RunResult::backbone_linear)
    }

    pub fn mse(&self) -> Option<f64> {
        self.collect(RunResult::head_mse)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_loss).collect()
    }

    pub fn loss(&self) -> f64 {
        mean(&self.losses()).unwrap_or(f64::NAN)
    }

    /// Population standard deviation of the final loss over seeds.
    pub fn loss_std(&self) -> f64 {
        let l = self.losses();
        let m = self.loss();
        (l.iter().map(|v| (v - m).powi(2)).sum::<f64>() / l.len().max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub ks: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label() == label)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec![self.axis.to_string()];
        h.extend(self.ks.iter().map(|k| format!("{k}-NN")));
        h.extend(["Linear".to_string(), "MSE".into(), "loss".into(), "seeds".into()]);
        h
    }

    fn cells(&self, r: &AblationRow) -> Vec<String> {
        let mut c = vec![r.label()];
        c.extend(self.ks.iter().map(|&k| cell(r.knn(k), 2)));
        c.push(cell(r.linear(), 2));
        c.push(cell(r.mse(), 6));
        c.push(format!("{:.6}", r.loss()));
        c.push(r.runs.len().to_string());
        c
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in &self.rows {
            w.write_record(self.cells(r)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut o = format!("| {} |\n|", header.join(" | "));
        for _ in &header {
            o.push_str("---|");
        }
        o.push('\n');
        for r in &self.rows {
            writeln!(o, "| {} |", self.cells(r).join(" | ")).expect("string write");
        }
        o
    }
}

/// `cfg` with one axis value applied.
pub fn variant_config(base: &ExperimentConfig, axis: AblationAxis, value: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = base.clone();
    let bad = |m: String| ExperimentError::config(format!("ablation value `{value}`: {m}"));
    match axis {
        AblationAxis::HeadDepth => cfg.student.head = parse_head(value).map_err(bad)?,
        AblationAxis::AugStrength => {
            let s: Strength = value.parse().map_err(bad)?;
            cfg.augment.teacher = s;
            cfg.augment.student = s;
        }
        AblationAxis::Pairing => {
            // same:<strength> | different:<teacher>:<student>
            let parts: Vec<&str> = value.split(':').collect();
            let mode: PairMode = parts[0].parse().map_err(bad)?;
            let (t, s) = match (mode, &parts[1..]) {
                (PairMode::Same, [s]) => (*s, *s),
                (PairMode::Different, [t, s]) => (*t, *s),
                _ => return Err(bad("expected same:<strength> or different:<teacher>:<student>".into())),
            };
            cfg.augment.pairing = mode;
            cfg.augment.teacher = t.parse().map_err(bad)?;
            cfg.augment.student = s.parse().map_err(bad)?;
        }
        AblationAxis::NumTeachers => {
            let n: usize = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            if n == 0 || n > base.teachers.len() {
                return Err(bad(format!("needs 1..={} teachers", base.teachers.len())));
            }
            cfg.teachers.truncate(n);
            if !cfg.loss_weights.is_empty() {
                cfg.loss_weights.truncate(n);
            }
        }
    }
    cfg.ablate = None;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every variant (crossed with `ablate.heads` when given) for every seed, in order,
/// against prebuilt teacher networks. Seed `s` sets the training seed to `s` and the view seed to `aug_seed + s`.
pub fn run_ablation<T: Scalar>(
    cfg: &ExperimentConfig,
    splits: &Splits,
    nets: &BTreeMap<String, Network<T>>,
    mut on_run: impl FnMut(&str, &RunResult),
) -> Result<AblationTable, ExperimentError> {
    let ab = cfg.ablate.as_ref().ok_or_else(|| ExperimentError::config("no `ablate.axis` in config"))?;
    let mut caches = CacheStore::default();
    let heads: Vec<Option<_>> = if ab.heads.is_empty() { vec![None] } else { ab.heads.iter().cloned().map(Some).collect() };
    let mut rows = Vec::new();
    for value in &ab.values {
        let variant = variant_config(cfg, ab.axis, value)?;
        for head in &heads {
            let mut vcfg = variant.clone();
            if let Some(h) = head {
                vcfg.student.head = h.clone();
            }
            let mut row = AblationRow { variant: value.clone(), head: head.as_ref().map(format_head), runs: Vec::new() };
            for &s in &ab.seeds {
                let mut run_cfg = vcfg.clone();
                run_cfg.seed = s;
                run_cfg.aug_seed = cfg.aug_seed.wrapping_add(s);
                let out = run_experiment::<T>(&run_cfg, splits, nets, &mut caches)?;
                let result =
                    RunResult { seed: s, final_loss: out.state.running_loss, report: out.report, head_tap: head_output_tap(&run_cfg) };
                on_run(&row.label(), &result);
                row.runs.push(result);
            }
            rows.push(row);
        }
    }
    Ok(AblationTable { axis: ab.axis, ks: cfg.eval.ks.clone(), rows })
}
