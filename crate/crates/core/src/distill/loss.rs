use crate::tensor::{lit, Result, Scalar, Tape, TensorError, Var};

/// Rows with norm at or below this are rejected by the normalizing losses.
pub const NORM_EPS: f64 = 1e-12;

/// Copies `v` onto the tape as a constant so no gradient flows back through it.
pub fn detach<T: Scalar>(tape: &mut Tape<T>, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let value = tape.value(v).to_vec();
    tape.constant(shape, value)
}

fn check_pair<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.len() != 2 || sa != sb || sa[0] == 0 {
        return Err(TensorError::Shape { op, detail: format!("{sa:?} vs {sb:?}") });
    }
    Ok(sa[0])
}

/// Batch mean of `|| f_t/|f_t| - f_s/|f_s| ||^2`, i.e. `2 - 2 cos`. The teacher side is detached.
pub fn regression_loss<T: Scalar>(tape: &mut Tape<T>, f_t: Var, f_s: Var) -> Result<Var> {
    let n = check_pair(tape, "regression_loss", f_t, f_s)?;
    let t = detach(tape, f_t)?;
    let t = tape.l2_normalize(t, NORM_EPS)?;
    let s = tape.l2_normalize(f_s, NORM_EPS)?;
    let diff = tape.sub(t, s)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, lit(1.0 / n as f64))
}

/// Batch mean of `-sum_j softmax(t/tau_t)_j * log softmax(s/tau_s)_j`. Teacher logits are detached.
pub fn kd_loss<T: Scalar>(tape: &mut Tape<T>, teacher: Var, student: Var, tau_t: f64, tau_s: f64) -> Result<Var> {
    let n = check_pair(tape, "kd_loss", teacher, student)?;
    let t = detach(tape, teacher)?;
    let yt = tape.softmax_temperature(t, tau_t)?;
    let log_ys = tape.log_softmax_temperature(student, tau_s)?;
    let prod = tape.mul(yt, log_ys)?;
    let total = tape.sum(prod)?;
    tape.scale(total, lit(-1.0 / n as f64))
}

/// `lambda * ce + (1 - lambda) * tau_s^2 * kd`.
pub fn combined_kd_loss<T: Scalar>(tape: &mut Tape<T>, ce: Var, kd: Var, lambda: f64, tau_s: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TensorError::Invalid { op: "combined_kd_loss", detail: format!("lambda {lambda} outside [0, 1]") });
    }
    let a = tape.scale(ce, lit(lambda))?;
    let b = tape.scale(kd, lit((1.0 - lambda) * tau_s * tau_s))?;
    tape.add(a, b)
}

/// Total and per-teacher terms of a multi-teacher objective.
#[derive(Debug, Clone)]
pub struct MultiTeacherLoss {
    pub total: Var,
    pub components: Vec<Var>,
}

/// `(1/K) sum_k w_k d(t_k, s_k)` with `d` = [`regression_loss`]. A zero weight drops the
/// term from the graph, so head `k` then receives no gradient at all.
pub fn multi_teacher_loss<T: Scalar>(tape: &mut Tape<T>, pairs: &[(Var, Var)], weights: &[f64]) -> Result<MultiTeacherLoss> {
    multi_teacher_loss_with(tape, pairs, weights, regression_loss)
}

pub fn multi_teacher_loss_with<T: Scalar>(
    tape: &mut Tape<T>,
    pairs: &[(Var, Var)],
    weights: &[f64],
    mut distance: impl FnMut(&mut Tape<T>, Var, Var) -> Result<Var>,
) -> Result<MultiTeacherLoss> {
    if pairs.is_empty() {
        return Err(TensorError::Invalid { op: "multi_teacher_loss", detail: "no teachers".into() });
    }
    if !weights.is_empty() && weights.len() != pairs.len() {
        return Err(TensorError::Invalid {
            op: "multi_teacher_loss",
            detail: format!("{} weights for {} teachers", weights.len(), pairs.len()),
        });
    }
    let k = pairs.len() as f64;
    let mut components = Vec::with_capacity(pairs.len());
    let mut total: Option<Var> = None;
    for (i, &(t, s)) in pairs.iter().enumerate() {
        let d = distance(tape, t, s)?;
        components.push(d);
        let w = weights.get(i).copied().unwrap_or(1.0);
        if w == 0.0 {
            continue;
        }
        let term = tape.scale(d, lit(w / k))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.scale(components[0], T::zero())?,
    };
    Ok(MultiTeacherLoss { total, components })
}
