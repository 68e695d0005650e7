//! Flat `key = value` experiment documents.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Unknown and
//! duplicate keys are errors. [`ExperimentConfig::echo`] writes every key with defaults
//! expanded; parsing the echo yields the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::augment::{PairMode, Strength};
use crate::data::SyntheticKind;
use crate::distill::LossKind;
use crate::models::{HeadLayout, BACKBONE_TAP};
use crate::tensor::ScheduleKind;

use super::ExperimentError;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic { kind: SyntheticKind, classes: usize, per_class: usize, test_per_class: usize, image_size: usize, noise: f64, seed: u64 },
    /// Dataset containers written by `import` (or [`crate::data::Dataset::save`]).
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherOrigin {
    /// Frozen at its random initialization.
    Random(u64),
    /// Trained with cross-entropy on the train split before use.
    Supervised(u64),
    /// Loaded from a checkpoint; architecture comes from the file.
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub id: String,
    pub origin: TeacherOrigin,
    /// `(channels, blocks)` per stage; unused for checkpoint teachers.
    pub backbone: Vec<(usize, usize)>,
    pub residual: bool,
    pub tap: String,
    pub cache: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub backbone: Vec<(usize, usize)>,
    pub residual: bool,
    pub head: HeadLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub pairing: PairMode,
    pub teacher: Strength,
    pub student: Strength,
    pub view_size: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub fixed_views: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// `None` evaluates every tap of the student.
    pub taps: Option<Vec<String>>,
    pub ks: Vec<usize>,
    pub probe: bool,
    pub probe_epochs: usize,
    pub mse_normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    HeadDepth,
    Pairing,
    AugStrength,
    NumTeachers,
}

impl FromStr for AblationAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "head_depth" => Ok(AblationAxis::HeadDepth),
            "pairing" => Ok(AblationAxis::Pairing),
            "aug_strength" => Ok(AblationAxis::AugStrength),
            "num_teachers" => Ok(AblationAxis::NumTeachers),
            _ => Err(format!("unknown ablation axis `{s}` (head_depth|pairing|aug_strength|num_teachers)")),
        }
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AblationAxis::HeadDepth => "head_depth",
            AblationAxis::Pairing => "pairing",
            AblationAxis::AugStrength => "aug_strength",
            AblationAxis::NumTeachers => "num_teachers",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub axis: AblationAxis,
    pub values: Vec<String>,
    /// Each variant runs once per seed; results are averaged.
    pub seeds: Vec<u64>,
    /// When non-empty, every variant is crossed with these head layouts.
    pub heads: Vec<HeadLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub teachers: Vec<TeacherConfig>,
    pub student: StudentConfig,
    pub loss: LossKind,
    pub loss_weights: Vec<f64>,
    pub augment: AugmentConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub aug_seed: u64,
    pub eval: EvalSettings,
    pub ablate: Option<AblationConfig>,
    pub pretrain: PretrainConfig,
}

struct Raw {
    entries: BTreeMap<String, (usize, String)>,
}

fn err(line: Option<usize>, msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config { line, msg: msg.into() }
}

impl Raw {
    fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(Some(n), format!("expected `key = value`, got `{line}`")))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(err(Some(n), format!("bad key `{k}`")));
            }
            if let Some((prev, _)) = entries.insert(k.to_string(), (n, v.trim().to_string())) {
                return Err(err(Some(n), format!("key `{k}` already set on line {prev}")));
            }
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn get<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ExperimentError> {
        match self.take(key) {
            Some((n, v)) => parse(&v).map_err(|e| err(Some(n), format!("`{key}`: {e}"))),
            None => Ok(default),
        }
    }

    fn require<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ExperimentError> {
        let (n, v) = self.take(key).ok_or_else(|| err(None, format!("missing key `{key}`")))?;
        parse(&v).map_err(|e| err(Some(n), format!("`{key}`: {e}")))
    }

    fn num<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ExperimentError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key, default, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    fn finish(self) -> Result<(), ExperimentError> {
        match self.entries.into_iter().next() {
            Some((k, (n, _))) => Err(err(Some(n), format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse::<T>().map_err(|e| format!("`{s}`: {e}"))).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true|false, got `{v}`")),
    }
}

/// `32x1,64x2` -> `[(32, 1), (64, 2)]`.
pub fn parse_stages(v: &str) -> Result<Vec<(usize, usize)>, String> {
    let stages: Vec<(usize, usize)> = v
        .split(',')
        .map(|s| {
            let (c, b) = s.trim().split_once('x').ok_or_else(|| format!("stage `{s}` is not <channels>x<blocks>"))?;
            let c = c.parse::<usize>().map_err(|e| format!("`{s}`: {e}"))?;
            let b = b.parse::<usize>().map_err(|e| format!("`{s}`: {e}"))?;
            if c == 0 || b == 0 {
                return Err(format!("stage `{s}` must be positive"));
            }
            Ok((c, b))
        })
        .collect::<Result<_, _>>()?;
    if stages.is_empty() {
        return Err("at least one stage required".into());
    }
    Ok(stages)
}

pub fn format_stages(stages: &[(usize, usize)]) -> String {
    stages.iter().map(|(c, b)| format!("{c}x{b}")).collect::<Vec<_>>().join(",")
}

/// `linear | mlp2 | mlp4 | equal4 | custom:64,128,64`, also `1 | 2 | 4` for depth.
pub fn parse_head(v: &str) -> Result<HeadLayout, String> {
    match v {
        "linear" | "1" => Ok(HeadLayout::Linear),
        "mlp2" | "2" => Ok(HeadLayout::Mlp2),
        "mlp4" | "4" => Ok(HeadLayout::Mlp4),
        "equal4" => Ok(HeadLayout::EqualDim4),
        _ => match v.strip_prefix("custom:") {
            Some(dims) => Ok(HeadLayout::Custom(list(dims)?)),
            None => Err(format!("unknown head `{v}` (linear|mlp2|mlp4|equal4|custom:<dims>)")),
        },
    }
}

pub fn format_head(h: &HeadLayout) -> String {
    match h {
        HeadLayout::Linear => "linear".into(),
        HeadLayout::Mlp2 => "mlp2".into(),
        HeadLayout::Mlp4 => "mlp4".into(),
        HeadLayout::EqualDim4 => "equal4".into(),
        HeadLayout::Custom(d) => format!("custom:{}", join(d)),
    }
}

/// `cosine` or `step:<m1>,<m2>:<factor>`.
pub fn parse_schedule(v: &str) -> Result<ScheduleKind, String> {
    if v == "cosine" {
        return Ok(ScheduleKind::Cosine);
    }
    let rest = v.strip_prefix("step:").ok_or_else(|| format!("unknown schedule `{v}` (cosine|step:<milestones>:<factor>)"))?;
    let (m, f) = rest.rsplit_once(':').ok_or_else(|| format!("step schedule `{v}` lacks a factor"))?;
    let factor = f.parse::<f64>().map_err(|e| e.to_string())?;
    Ok(ScheduleKind::Step { milestones: list(m)?, factor })
}

pub fn format_schedule(s: &ScheduleKind) -> String {
    match s {
        ScheduleKind::Cosine => "cosine".into(),
        ScheduleKind::Step { milestones, factor } => format!("step:{}:{factor}", join(milestones)),
    }
}

fn kind_name(k: SyntheticKind) -> &'static str {
    match k {
        SyntheticKind::Blobs => "blobs",
        SyntheticKind::Shapes => "shapes",
    }
}

fn pair_name(p: PairMode) -> &'static str {
    match p {
        PairMode::Same => "same",
        PairMode::Different => "different",
    }
}

fn parse_origin(v: &str) -> Result<TeacherOrigin, String> {
    let seed = |s: &str| s.parse::<u64>().map_err(|e| format!("seed `{s}`: {e}"));
    if let Some(s) = v.strip_prefix("random:") {
        Ok(TeacherOrigin::Random(seed(s)?))
    } else if let Some(s) = v.strip_prefix("supervised:") {
        Ok(TeacherOrigin::Supervised(seed(s)?))
    } else if v.is_empty() {
        Err("empty teacher source".into())
    } else {
        Ok(TeacherOrigin::Checkpoint(PathBuf::from(v)))
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut raw = Raw::parse(text)?;
        let source = raw.get("dataset.source", "synthetic".to_string(), |v| Ok(v.to_string()))?;
        let dataset = match source.as_str() {
            "synthetic" => DatasetSource::Synthetic {
                kind: raw.get("dataset.kind", SyntheticKind::Blobs, |v| v.parse())?,
                classes: raw.num("dataset.classes", 10)?,
                per_class: raw.num("dataset.per_class", 500)?,
                test_per_class: raw.num("dataset.test_per_class", 100)?,
                image_size: raw.num("dataset.image_size", 32)?,
                noise: raw.num("dataset.noise", 0.75)?,
                seed: raw.num("dataset.seed", 1)?,
            },
            "files" => DatasetSource::Files {
                train: raw.require("dataset.train", |v| Ok(PathBuf::from(v)))?,
                test: raw.require("dataset.test", |v| Ok(PathBuf::from(v)))?,
            },
            other => return Err(err(None, format!("unknown dataset.source `{other}` (synthetic|files)"))),
        };

        let ids: Vec<String> = raw.get("teachers", vec!["t0".to_string()], |v| list(v))?;
        if ids.is_empty() {
            return Err(err(None, "`teachers` must name at least one teacher"));
        }
        let mut teachers = Vec::with_capacity(ids.len());
        for id in &ids {
            if !is_ident(id) {
                return Err(err(None, format!("teacher id `{id}` must be alphanumeric, `_` or `-`")));
            }
            if teachers.iter().any(|t: &TeacherConfig| &t.id == id) {
                return Err(err(None, format!("teacher `{id}` listed twice")));
            }
            let key = |k: &str| format!("teacher.{id}.{k}");
            let origin = raw.get(&key("source"), TeacherOrigin::Random(1000), parse_origin)?;
            let (backbone, residual) = if matches!(origin, TeacherOrigin::Checkpoint(_)) {
                for k in ["backbone", "residual"] {
                    if let Some((n, _)) = raw.take(&key(k)) {
                        return Err(err(Some(n), format!("`{}` conflicts with a checkpoint source", key(k))));
                    }
                }
                (Vec::new(), false)
            } else {
                (raw.get(&key("backbone"), vec![(32, 1), (64, 1)], parse_stages)?, raw.get(&key("residual"), false, parse_bool)?)
            };
            teachers.push(TeacherConfig {
                id: id.clone(),
                origin,
                backbone,
                residual,
                tap: raw.get(&key("tap"), BACKBONE_TAP.to_string(), |v| Ok(v.to_string()))?,
                cache: raw.get(&key("cache"), false, parse_bool)?,
            });
        }

        let student = StudentConfig {
            backbone: raw.get("student.backbone", vec![(8, 1), (16, 1), (32, 1)], parse_stages)?,
            residual: raw.get("student.residual", false, parse_bool)?,
            head: raw.get("student.head", HeadLayout::Mlp4, parse_head)?,
        };

        let loss_kind = raw.get("loss.kind", "regression".to_string(), |v| Ok(v.to_string()))?;
        let loss = match loss_kind.as_str() {
            "regression" => LossKind::Regression,
            "kd" => LossKind::KdBaseline {
                lambda: raw.num("loss.lambda", 0.0)?,
                tau_t: raw.num("loss.tau_t", 1.0)?,
                tau_s: raw.num("loss.tau_s", 1.0)?,
            },
            other => return Err(err(None, format!("unknown loss.kind `{other}` (regression|kd)"))),
        };
        let loss_weights: Vec<f64> = raw.get("loss.weights", Vec::new(), |v| list(v))?;

        let augment = AugmentConfig {
            pairing: raw.get("augment.pairing", PairMode::Same, |v| v.parse())?,
            teacher: raw.get("augment.teacher", Strength::Weak, |v| v.parse())?,
            student: raw.get("augment.student", Strength::Weak, |v| v.parse())?,
            view_size: raw.num("augment.view_size", 16)?,
            mean: raw.get("augment.mean", vec![0.5; 3], |v| list(v))?,
            std: raw.get("augment.std", vec![0.25; 3], |v| list(v))?,
            fixed_views: raw.get("augment.fixed_views", false, parse_bool)?,
        };
        if augment.pairing == PairMode::Same && augment.teacher != augment.student {
            return Err(err(None, "`same` pairing needs augment.teacher == augment.student"));
        }

        let optim = OptimConfig {
            lr: raw.num("optim.lr", 0.05)?,
            momentum: raw.num("optim.momentum", 0.9)?,
            weight_decay: raw.num("optim.weight_decay", 1e-4)?,
            schedule: raw.get("optim.schedule", ScheduleKind::Cosine, parse_schedule)?,
        };
        let epochs = raw.num("epochs", 30)?;
        let batch = raw.num("batch", 128)?;
        let seed = raw.num("seed", 0)?;
        let aug_seed = raw.num("aug_seed", 0)?;

        let eval = EvalSettings {
            taps: raw.get("eval.taps", None, |v| if v == "all" { Ok(None) } else { list(v).map(Some) })?,
            ks: raw.get("eval.k", vec![1, 20], |v| list(v))?,
            probe: raw.get("eval.probe", true, parse_bool)?,
            probe_epochs: raw.num("eval.probe_epochs", 40)?,
            mse_normalized: raw.get("eval.mse_normalized", true, parse_bool)?,
        };

        let ablate = match raw.take("ablate.axis") {
            Some((n, v)) => Some(AblationConfig {
                axis: v.parse().map_err(|e: String| err(Some(n), e))?,
                values: raw.require("ablate.values", |v| list(v))?,
                seeds: raw.get("ablate.seeds", vec![seed], |v| list(v))?,
                heads: raw.get("ablate.heads", Vec::new(), |v| if v.is_empty() { Ok(Vec::new()) } else { v.split(',').map(|h| parse_head(h.trim())).collect() })?,
            }),
            None => None,
        };

        let pretrain = PretrainConfig { epochs: raw.num("pretrain.epochs", 15)?, lr: raw.num("pretrain.lr", 0.05)? };
        raw.finish()?;

        let cfg = ExperimentConfig {
            dataset,
            teachers,
            student,
            loss,
            loss_weights,
            augment,
            optim,
            epochs,
            batch,
            seed,
            aug_seed,
            eval,
            ablate,
            pretrain,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not need data or networks.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(err(None, m));
        if let DatasetSource::Synthetic { classes, per_class, test_per_class, image_size, noise, .. } = &self.dataset {
            if *classes < 2 || *per_class == 0 || *test_per_class == 0 || *image_size == 0 {
                return bad("synthetic dataset needs >= 2 classes and non-empty splits".into());
            }
            if !(noise.is_finite() && *noise >= 0.0) {
                return bad(format!("dataset.noise {noise} must be finite and non-negative"));
            }
        }
        if self.augment.view_size == 0 {
            return bad("augment.view_size must be positive".into());
        }
        if self.augment.mean.len() != self.augment.std.len() {
            return bad("augment.mean and augment.std lengths differ".into());
        }
        if !self.loss_weights.is_empty() && self.loss_weights.len() != self.teachers.len() {
            return bad(format!("{} loss weights for {} teachers", self.loss_weights.len(), self.teachers.len()));
        }
        if self.batch < 2 {
            return bad("batch must be at least 2".into());
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return bad("eval.k needs positive values".into());
        }
        if let Some(a) = &self.ablate {
            if a.values.is_empty() || a.seeds.is_empty() {
                return bad("ablate.values and ablate.seeds must be non-empty".into());
            }
        }
        Ok(())
    }

    /// Every key with defaults expanded, in a fixed order.
    pub fn echo(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").expect("string write");
        match &self.dataset {
            DatasetSource::Synthetic { kind, classes, per_class, test_per_class, image_size, noise, seed } => {
                kv("dataset.source", "synthetic".into());
                kv("dataset.kind", kind_name(*kind).into());
                kv("dataset.classes", classes.to_string());
                kv("dataset.per_class", per_class.to_string());
                kv("dataset.test_per_class", test_per_class.to_string());
                kv("dataset.image_size", image_size.to_string());
                kv("dataset.noise", noise.to_string());
                kv("dataset.seed", seed.to_string());
            }
            DatasetSource::Files { train, test } => {
                kv("dataset.source", "files".into());
                kv("dataset.train", train.display().to_string());
                kv("dataset.test", test.display().to_string());
            }
        }
        kv("teachers", self.teachers.iter().map(|t| t.id.as_str()).collect::<Vec<_>>().join(","));
        for t in &self.teachers {
            let key = |k: &str| format!("teacher.{}.{k}", t.id);
            let src = match &t.origin {
                TeacherOrigin::Random(s) => format!("random:{s}"),
                TeacherOrigin::Supervised(s) => format!("supervised:{s}"),
                TeacherOrigin::Checkpoint(p) => p.display().to_string(),
            };
            kv(&key("source"), src);
            if !matches!(t.origin, TeacherOrigin::Checkpoint(_)) {
                kv(&key("backbone"), format_stages(&t.backbone));
                kv(&key("residual"), t.residual.to_string());
            }
            kv(&key("tap"), t.tap.clone());
            kv(&key("cache"), t.cache.to_string());
        }
        kv("student.backbone", format_stages(&self.student.backbone));
        kv("student.residual", self.student.residual.to_string());
        kv("student.head", format_head(&self.student.head));
        match self.loss {
            LossKind::Regression => kv("loss.kind", "regression".into()),
            LossKind::KdBaseline { lambda, tau_t, tau_s } => {
                kv("loss.kind", "kd".into());
                kv("loss.lambda", lambda.to_string());
                kv("loss.tau_t", tau_t.to_string());
                kv("loss.tau_s", tau_s.to_string());
            }
        }
        kv("loss.weights", join(&self.loss_weights));
        let a = &self.augment;
        kv("augment.pairing", pair_name(a.pairing).into());
        kv("augment.teacher", a.teacher.to_string());
        kv("augment.student", a.student.to_string());
        kv("augment.view_size", a.view_size.to_string());
        kv("augment.mean", join(&a.mean));
        kv("augment.std", join(&a.std));
        kv("augment.fixed_views", a.fixed_views.to_string());
        kv("optim.lr", self.optim.lr.to_string());
        kv("optim.momentum", self.optim.momentum.to_string());
        kv("optim.weight_decay", self.optim.weight_decay.to_string());
        kv("optim.schedule", format_schedule(&self.optim.schedule));
        kv("epochs", self.epochs.to_string());
        kv("batch", self.batch.to_string());
        kv("seed", self.seed.to_string());
        kv("aug_seed", self.aug_seed.to_string());
        kv("eval.taps", self.eval.taps.as_ref().map(|t| t.join(",")).unwrap_or_else(|| "all".into()));
        kv("eval.k", join(&self.eval.ks));
        kv("eval.probe", self.eval.probe.to_string());
        kv("eval.probe_epochs", self.eval.probe_epochs.to_string());
        kv("eval.mse_normalized", self.eval.mse_normalized.to_string());
        if let Some(ab) = &self.ablate {
            kv("ablate.axis", ab.axis.to_string());
            kv("ablate.values", ab.values.join(","));
            kv("ablate.seeds", join(&ab.seeds));
            kv("ablate.heads", ab.heads.iter().map(format_head).collect::<Vec<_>>().join(","));
        }
        kv("pretrain.epochs", self.pretrain.epochs.to_string());
        kv("pretrain.lr", self.pretrain.lr.to_string());
        o
    }

    pub fn teacher(&self, id: &str) -> Option<&TeacherConfig> {
        self.teachers.iter().find(|t| t.id == id)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::parse("").expect("defaults parse")
    }
}
