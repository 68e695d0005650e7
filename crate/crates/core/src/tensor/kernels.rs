use super::Scalar;

/// Output extent of a convolution along one axis, `None` when the kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn columns(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Unfolds `[N,C,H,W]` into a `[C*k*k, N*OH*OW]` column matrix.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols = g.columns();
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.patch_len() * cols];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let src = &input[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        let base = n * plane + oh * g.ow;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                dst_row[base + ow] = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input layout.
pub(crate) fn col2im<T: Scalar>(cols_grad: &[T], g: &ConvGeometry) -> Vec<T> {
    let cols = g.columns();
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols_grad[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let dst = &mut out[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let base = n * plane + oh * g.ow;
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                dst[ih as usize * g.w + iw as usize] += src_row[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[F, N*P]` -> `[N, F, P]`
pub(crate) fn feature_major_to_batch_major<T: Scalar>(src: &[T], f: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for fi in 0..f {
        for ni in 0..n {
            let s = &src[fi * n * p + ni * p..fi * n * p + (ni + 1) * p];
            out[(ni * f + fi) * p..(ni * f + fi + 1) * p].copy_from_slice(s);
        }
    }
    out
}

/// `[N, F, P]` -> `[F, N*P]`
pub(crate) fn batch_major_to_feature_major<T: Scalar>(src: &[T], f: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for ni in 0..n {
        for fi in 0..f {
            let s = &src[(ni * f + fi) * p..(ni * f + fi + 1) * p];
            out[fi * n * p + ni * p..fi * n * p + (ni + 1) * p].copy_from_slice(s);
        }
    }
    out
}

/// Row-major `[p,q] x [q,r]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], p: usize, q: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p * r];
    T::gemm(p, q, r, T::one(), a, q as isize, 1, b, r as isize, 1, T::zero(), &mut out, r as isize, 1);
    out
}

/// Row-major `[p,q] x [r,q]^T`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], p: usize, q: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p * r];
    T::gemm(p, q, r, T::one(), a, q as isize, 1, b, 1, q as isize, T::zero(), &mut out, r as isize, 1);
    out
}

/// Row-major `[q,p]^T x [q,r]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], p: usize, q: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p * r];
    T::gemm(p, q, r, T::one(), a, 1, p as isize, b, r as isize, 1, T::zero(), &mut out, r as isize, 1);
    out
}
