//! Seeded toy sweeps run through the experiment pipeline.

use regdistill::experiment::{build_teachers, load_splits, run_ablation, AblationTable, ExperimentConfig};
use regdistill::models::BACKBONE_TAP;

/// 10 blob classes, 32x32, 500 train and 100 test images per class, a frozen random
/// 64-wide teacher and a 32-wide student.
pub const BASE: &str = "
dataset.kind = blobs
dataset.classes = 10
dataset.per_class = 500
dataset.test_per_class = 100
dataset.image_size = 32
dataset.noise = 0.75
dataset.seed = 1
teachers = t0
teacher.t0.source = random:1000
teacher.t0.backbone = 32x1,64x1
student.backbone = 8x1,16x1,32x1
augment.view_size = 16
epochs = 30
batch = 128
optim.lr = 0.05
eval.k = 1
eval.probe = false
ablate.seeds = 0,1,2
";

pub fn sweep(extra: &str, log: bool) -> AblationTable {
    let cfg = ExperimentConfig::parse(&format!("{BASE}{extra}")).unwrap();
    let splits = load_splits(&cfg).unwrap();
    let nets = build_teachers::<f32>(&cfg, &splits.train).unwrap();
    run_ablation(&cfg, &splits, &nets, |label, run| {
        if log {
            eprintln!("  {label} seed {}: loss {:.4}, backbone 1-NN {:.2}", run.seed, run.final_loss, run.backbone_knn(1).unwrap_or(f64::NAN));
        }
    })
    .unwrap()
}

/// Linear, 2-layer and 4-layer heads on a cached teacher.
pub fn head_depth(log: bool) -> AblationTable {
    sweep("teacher.t0.cache = true\nablate.axis = head_depth\nablate.values = linear,mlp2,mlp4\n", log)
}

/// The five pairing rows against a live teacher with fresh views every epoch.
pub fn pairing(log: bool) -> AblationTable {
    sweep(
        "student.head = mlp4\nablate.axis = pairing\n\
         ablate.values = same:weak,same:strong,different:weak:weak,different:weak:strong,different:strong:strong\n",
        log,
    )
}

pub struct HeadDepthVerdict {
    pub losses: [(f64, f64); 3],
    pub knn: [f64; 3],
}

/// Loss ordering linear >= 2L >= 4L where each gap may be negative by at most one
/// standard deviation, and backbone 1-NN of 4L at least 2 points over linear.
pub fn check_head_depth(table: &AblationTable) -> Result<HeadDepthVerdict, String> {
    let rows = ["linear", "mlp2", "mlp4"].map(|l| table.row(l).expect("row per head"));
    let losses = rows.map(|r| (r.loss(), r.loss_std()));
    let knn = rows.map(|r| r.knn(1).expect("1-NN"));
    let verdict = HeadDepthVerdict { losses, knn };
    for (a, b) in [(0, 1), (1, 2)] {
        let gap = losses[a].0 - losses[b].0;
        let noise = losses[a].1.max(losses[b].1);
        if gap < -noise {
            return Err(format!("loss {} {:.5} < {} {:.5} beyond 1 std ({noise:.5})", rows[a].label(), losses[a].0, rows[b].label(), losses[b].0));
        }
    }
    if knn[2] < knn[0] + 2.0 {
        return Err(format!("4L backbone 1-NN {:.2} is not 2 points over linear {:.2}", knn[2], knn[0]));
    }
    Ok(verdict)
}

pub struct DiscardVerdict {
    /// (tap, seed-averaged MSE, seed-averaged 1-NN)
    pub taps: Vec<(String, Option<f64>, f64)>,
}

/// On the 4L rows: the head output has the lowest feature MSE of every tap that has
/// one, and the backbone or a mid-head tap is within 1 point of its 1-NN, or better.
pub fn check_discardable_head(table: &AblationTable) -> Result<DiscardVerdict, String> {
    let row = table.row("mlp4").expect("4L row");
    let names: Vec<String> = row.runs[0].report.layers.iter().map(|l| l.layer.clone()).collect();
    let avg = |f: &dyn Fn(&regdistill::eval::LayerReport) -> Option<f64>, tap: &str| -> Option<f64> {
        let v: Option<Vec<f64>> = row.runs.iter().map(|r| r.report.layer(tap).and_then(f)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let taps: Vec<(String, Option<f64>, f64)> = names
        .iter()
        .map(|t| (t.clone(), avg(&|l| l.feature_mse, t), avg(&|l| l.knn_top1.get(&1).copied(), t).expect("1-NN per tap")))
        .collect();
    let out = row.runs[0].head_tap.clone();
    let (_, out_mse, out_knn) = taps.iter().find(|(t, _, _)| *t == out).cloned().ok_or("no head-output tap")?;
    let out_mse = out_mse.ok_or("head output has no MSE")?;
    for (t, mse, _) in &taps {
        if let Some(m) = mse {
            if t != &out && *m <= out_mse {
                return Err(format!("{t} MSE {m:.6} <= head output {out_mse:.6}"));
            }
        }
    }
    let best = taps
        .iter()
        .filter(|(t, _, _)| t == BACKBONE_TAP || (t.starts_with("head0.") && *t != out))
        .map(|(_, _, k)| *k)
        .fold(f64::NEG_INFINITY, f64::max);
    if best < out_knn - 1.0 {
        return Err(format!("best backbone/mid-head 1-NN {best:.2} < head output {out_knn:.2} - 1"));
    }
    Ok(DiscardVerdict { taps })
}

/// Same/weak mean 1-NN at least that of every row with a strong view under different
/// pairing. Returns the rows as (label, mean 1-NN).
pub fn check_pairing(table: &AblationTable) -> Result<Vec<(String, f64)>, String> {
    let rows: Vec<(String, f64)> = table.rows.iter().map(|r| (r.label(), r.knn(1).expect("1-NN"))).collect();
    let same_weak = rows.iter().find(|(l, _)| l == "same:weak").ok_or("no same:weak row")?.1;
    for (label, acc) in &rows {
        if label.starts_with("different") && label.contains("strong") && *acc > same_weak {
            return Err(format!("{label} {acc:.2} beats same:weak {same_weak:.2}"));
        }
    }
    Ok(rows)
}
