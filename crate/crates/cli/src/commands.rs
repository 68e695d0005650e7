use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use regdistill::data::{Checkpoint, Dataset, FeatureCache};
use regdistill::distill::{cache_teacher_features, write_history_csv, TeacherHandle, TeacherSource, Trainer};
use regdistill::experiment::{
    build_teacher, cast_network, distillation_config, evaluate, load_splits, run_ablation, teacher_handles, teacher_policy,
    teacher_spec, CacheStore, ExperimentConfig, Splits, TeacherConfig, TeacherOrigin,
};
use regdistill::models::{read_spec, Network};
use regdistill::tensor::{Precision, Scalar};

use crate::error::CliError;
use crate::Common;

pub const ECHO: &str = "config.echo";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const HISTORY: &str = "history.csv";
pub const REPORT: &str = "report.json";

/// Output directory of one run, with the overwrite guard.
struct RunDir {
    root: PathBuf,
    force: bool,
}

impl RunDir {
    /// Creates the directory and writes `config.echo`. A different echo already present
    /// belongs to another experiment and is only replaced with `--force`.
    fn open(common: &Common, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&common.out).map_err(|e| CliError::Io(format!("{}: {e}", common.out.display())))?;
        let dir = RunDir { root: common.out.clone(), force: common.force };
        let echo = cfg.echo();
        let path = dir.path(ECHO);
        match std::fs::read_to_string(&path) {
            Ok(old) if old == echo => {}
            Ok(_) if !dir.force => {
                return Err(CliError::Io(format!("{} holds a different config; pass --force to replace it", path.display())))
            }
            _ => dir.write(ECHO, echo.as_bytes())?,
        }
        Ok(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn guard(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.exists() && !self.force {
            return Err(CliError::Io(format!("refusing to overwrite {}; pass --force", p.display())));
        }
        Ok(p)
    }

    /// Writes through a temporary file so a crash never leaves a partial output.
    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        atomic_write(&self.path(name), bytes)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| CliError::Io(format!("{}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn teacher_file(id: &str) -> String {
    format!("teacher_{id}.bin")
}

fn cache_file(id: &str) -> String {
    format!("cache_{id}.bin")
}

/// A teacher from its checkpoint source, from `teacher_<id>.bin` in the run directory, or
/// built from the config, in that order.
fn resolve_teacher<T: Scalar>(dir: &RunDir, cfg: &ExperimentConfig, t: &TeacherConfig, train: &Dataset) -> Result<Network<T>, CliError> {
    let local = dir.path(&teacher_file(&t.id));
    if !matches!(t.origin, TeacherOrigin::Checkpoint(_)) && local.exists() {
        let ckpt = Checkpoint::<T>::load(&local)?;
        let spec = read_spec(&ckpt).map_err(regdistill::experiment::ExperimentError::from)?;
        if spec != teacher_spec(cfg, t, train) {
            return Err(CliError::Config(format!("{} does not match teacher `{}` in the config", local.display(), t.id)));
        }
        return Ok(Network::from_checkpoint(&ckpt).map_err(regdistill::experiment::ExperimentError::from)?);
    }
    Ok(build_teacher::<T>(cfg, t, train)?.0)
}

fn resolve_teachers<T: Scalar>(dir: &RunDir, cfg: &ExperimentConfig, train: &Dataset) -> Result<BTreeMap<String, Network<T>>, CliError> {
    cfg.teachers.iter().map(|t| Ok((t.id.clone(), resolve_teacher(dir, cfg, t, train)?))).collect()
}

macro_rules! dispatch {
    ($p:expr, $f:ident($($arg:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn pretrain_teacher(common: &Common) -> Result<(), CliError> {
    dispatch!(common.precision, pretrain_teacher_t(common))
}

fn pretrain_teacher_t<T: Scalar>(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dir = RunDir::open(common, &cfg)?;
    let splits = load_splits(&cfg)?;
    for t in &cfg.teachers {
        if let TeacherOrigin::Checkpoint(p) = &t.origin {
            eprintln!("teacher {}: checkpoint {} used as is", t.id, p.display());
            continue;
        }
        let path = dir.guard(&teacher_file(&t.id))?;
        let (net, acc) = build_teacher::<T>(&cfg, t, &splits.train)?;
        match acc {
            Some(a) => eprintln!("teacher {}: d = {}, train accuracy {a:.2}%", t.id, net.feature_dim()),
            None => eprintln!("teacher {}: d = {} (random, untrained)", t.id, net.feature_dim()),
        }
        atomic_write(&path, &net.to_checkpoint().to_bytes())?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn cache(common: &Common) -> Result<(), CliError> {
    dispatch!(common.precision, cache_t(common))
}

fn cache_t<T: Scalar>(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dir = RunDir::open(common, &cfg)?;
    let splits = load_splits(&cfg)?;
    let nets = resolve_teachers::<T>(&dir, &cfg, &splits.train)?;
    for t in &cfg.teachers {
        let path = dir.guard(&cache_file(&t.id))?;
        let live = TeacherHandle::live_at(t.id.clone(), nets[&t.id].clone(), &t.tap)?;
        let cache = cache_teacher_features(&live, &splits.train, &teacher_policy(&cfg), cfg.aug_seed)?;
        atomic_write(&path, &cache.to_bytes())?;
        eprintln!("teacher {}: cached {} x {} features", t.id, cache.len(), cache.dim);
        println!("{}", path.display());
    }
    Ok(())
}

/// Handles for distillation. Cached teachers read `cache_<id>.bin` when present and
/// write it otherwise.
fn distill_teachers<T: Scalar>(
    dir: &RunDir,
    cfg: &ExperimentConfig,
    splits: &Splits,
    nets: &BTreeMap<String, Network<T>>,
) -> Result<Vec<TeacherHandle<T>>, CliError> {
    let mut store = CacheStore::default();
    let mut fresh = Vec::new();
    for t in cfg.teachers.iter().filter(|t| t.cache) {
        let path = dir.path(&cache_file(&t.id));
        if path.exists() {
            let cache = FeatureCache::load(&path)?;
            if cache.teacher_id != t.id {
                return Err(CliError::Config(format!("{} belongs to teacher `{}`", path.display(), cache.teacher_id)));
            }
            store.insert(cfg, cache);
        } else {
            fresh.push(t.id.clone());
        }
    }
    let handles = teacher_handles(cfg, nets, &splits.train, &mut store)?;
    for h in &handles {
        if let (true, TeacherSource::Cached(c)) = (fresh.contains(&h.id), &h.source) {
            atomic_write(&dir.path(&cache_file(&h.id)), &c.to_bytes())?;
        }
    }
    Ok(handles)
}

pub fn distill(common: &Common, resume: bool) -> Result<(), CliError> {
    dispatch!(common.precision, distill_t(common, resume))
}

fn distill_t<T: Scalar>(common: &Common, resume: bool) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dir = RunDir::open(common, &cfg)?;
    let splits = load_splits(&cfg)?;
    let nets = resolve_teachers::<T>(&dir, &cfg, &splits.train)?;
    let teachers = distill_teachers(&dir, &cfg, &splits, &nets)?;
    let dcfg = distillation_config(&cfg, &teachers, &splits.train)?;
    let ckpt_path = dir.path(CHECKPOINT);
    let mut trainer = if resume {
        let ckpt = Checkpoint::<T>::load(&ckpt_path)?;
        Trainer::resume(&dcfg, &splits.train, &teachers, &ckpt)?
    } else {
        dir.guard(CHECKPOINT)?;
        dir.guard(HISTORY)?;
        Trainer::new(&dcfg, &splits.train, &teachers)?
    };
    let ids = trainer.state().teacher_ids.clone();
    let history_path = dir.path(HISTORY);
    let header = !resume || !history_path.exists();
    let mut history = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&history_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", history_path.display())))?;
    if header {
        write_history_csv(&mut history, &ids, &[], true)?;
    }
    let mut written = 0;
    while !trainer.is_finished() {
        let s = trainer.run_epoch()?;
        atomic_write(&ckpt_path, &trainer.checkpoint().to_bytes())?;
        write_history_csv(&mut history, &ids, &trainer.history()[written..], false)?;
        written = trainer.history().len();
        eprintln!("epoch {:>3}  lr {:.5}  loss {:.6}", s.epoch + 1, s.lr, s.mean_loss);
    }
    println!("{}", ckpt_path.display());
    Ok(())
}

pub fn eval(common: &Common, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    dispatch!(common.precision, eval_t(common, checkpoint))
}

fn eval_t<T: Scalar>(common: &Common, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dir = RunDir::open(common, &cfg)?;
    let report_path = dir.guard(REPORT)?;
    let splits = load_splits(&cfg)?;
    let ckpt = Checkpoint::<T>::load(&checkpoint.unwrap_or_else(|| dir.path(CHECKPOINT)))?;
    let student = Network::<T>::from_checkpoint(&ckpt).map_err(regdistill::experiment::ExperimentError::from)?;
    let first = &cfg.teachers[0];
    let teacher = cast_network::<T, f32>(&resolve_teacher::<T>(&dir, &cfg, first, &splits.train)?);
    let report = evaluate(&cfg, &cast_network::<T, f32>(&student), &splits, Some((&teacher, first.tap.as_str())))?;
    atomic_write(&report_path, report.to_json().as_bytes())?;
    atomic_write(&dir.path("report.csv"), report.to_csv().as_bytes())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn ablate(common: &Common) -> Result<(), CliError> {
    dispatch!(common.precision, ablate_t(common))
}

fn ablate_t<T: Scalar>(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    if cfg.ablate.is_none() {
        return Err(CliError::Config("config has no `ablate.axis`".into()));
    }
    let dir = RunDir::open(common, &cfg)?;
    dir.guard("ablation.csv")?;
    dir.guard("ablation.md")?;
    let splits = load_splits(&cfg)?;
    let nets = resolve_teachers::<T>(&dir, &cfg, &splits.train)?;
    let table = run_ablation(&cfg, &splits, &nets, |label, r| {
        let knn = r.backbone_knn(1).map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        eprintln!("{label} seed {}: loss {:.6}, backbone 1-NN {knn}", r.seed, r.final_loss);
    })?;
    dir.write("ablation.csv", table.to_csv().as_bytes())?;
    dir.write("ablation.md", table.to_markdown().as_bytes())?;
    print!("{}", table.to_markdown());
    Ok(())
}

pub fn import(src: &Path, out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() && !force {
        return Err(CliError::Io(format!("refusing to overwrite {}; pass --force", out.display())));
    }
    let data = regdistill::data::load_png_dir(src)?;
    atomic_write(out, &data.to_bytes())?;
    eprintln!("{} images of shape {:?}, {} classes", data.len(), data.image_shape(), data.num_classes());
    Ok(())
}
