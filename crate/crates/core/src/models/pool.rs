use super::ModelError;
use crate::tensor::{lit, Scalar, Tensor};

/// Side length of the pooled grid: `max(1, floor(sqrt(target_len / C)))`.
pub fn pooled_side(channels: usize, target_len: usize) -> usize {
    ((target_len as f64 / channels as f64).sqrt().floor() as usize).max(1)
}

/// Adaptive average pooling of `[N,C,H,W]` to `[N, C*s*s]` with `s` from [`pooled_side`].
pub fn pool_intermediate<T: Scalar>(feature: &Tensor<T>, target_len: usize) -> Result<Tensor<T>, ModelError> {
    let shape = feature.shape();
    if shape.len() != 4 {
        return Err(ModelError::InvalidSpec(format!("pool_intermediate expects [N,C,H,W], got {shape:?}")));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c == 0 || target_len < c {
        return Err(ModelError::InvalidSpec(format!("target length {target_len} below channel count {c}")));
    }
    let s = pooled_side(c, target_len);
    let bins = |extent: usize, i: usize| (i * extent / s, ((i + 1) * extent).div_ceil(s));
    let mut out = Vec::with_capacity(n * c * s * s);
    for plane in feature.data().chunks(h * w) {
        for oi in 0..s {
            let (r0, r1) = bins(h, oi);
            for oj in 0..s {
                let (c0, c1) = bins(w, oj);
                let mut acc = T::zero();
                for r in r0..r1 {
                    for col in c0..c1 {
                        acc += plane[r * w + col];
                    }
                }
                out.push(acc / lit::<T>(((r1 - r0) * (c1 - c0)) as f64));
            }
        }
    }
    Ok(Tensor::new(vec![n, c * s * s], out)?)
}
