//! Slice-level kernels shared by forward and backward passes.

use rayon::prelude::*;

use crate::num::Scalar;

/// `out[m,n] += a[m,k] * b[k,n]`, optionally with either side transposed
/// in storage (`a` stored `[k,m]`, `b` stored `[n,k]`).
pub fn matmul_acc<S: Scalar>(
    out: &mut [S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    a_t: bool,
    b_t: bool,
) {
    let row = |i: usize, orow: &mut [S]| {
        for p in 0..k {
            let av = if a_t { a[p * m + i] } else { a[i * k + p] };
            if av == S::zero() {
                continue;
            }
            if b_t {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = *o + av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * *bv;
                }
            }
        }
    };
    if m * n * k >= 1 << 16 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| row(i, orow));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(i, orow)| row(i, orow));
    }
}

/// `(outer, dim, inner)` split of a shape around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output position of `permute(axes)`, the source offset.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n: usize = shape.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..n {
        let off = counter
            .iter()
            .zip(axes)
            .map(|(c, &a)| c * in_strides[a])
            .sum();
        idx.push(off);
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            if counter[d] < out_shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    idx
}

pub struct Conv2dDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Conv2dDims {
    /// Calls `f(x_offset, w_offset, y_offset)` for every in-bounds tap.
    #[inline]
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = (self.k / 2) as isize;
        let (h, w, k) = (self.h, self.w, self.k);
        for n in 0..self.n {
            for co in 0..self.c_out {
                for i in 0..h {
                    for j in 0..w {
                        let y = ((n * self.c_out + co) * h + i) * w + j;
                        for ci in 0..self.c_in {
                            for u in 0..k {
                                let ii = i as isize + u as isize - p;
                                if ii < 0 || ii >= h as isize {
                                    continue;
                                }
                                for v in 0..k {
                                    let jj = j as isize + v as isize - p;
                                    if jj < 0 || jj >= w as isize {
                                        continue;
                                    }
                                    let x = ((n * self.c_in + ci) * h + ii as usize) * w + jj as usize;
                                    let wo = ((co * self.c_in + ci) * k + u) * k + v;
                                    f(x, wo, y);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(x_offset, w_offset, y_offset)` for every in-bounds tap of a
/// depthwise, same-padded temporal convolution over `[n, c, t]`.
#[inline]
pub fn for_each_tconv_tap(n: usize, c: usize, t: usize, kt: usize, mut f: impl FnMut(usize, usize, usize)) {
    let p = (kt / 2) as isize;
    for b in 0..n {
        for ch in 0..c {
            for s in 0..t {
                let y = (b * c + ch) * t + s;
                for u in 0..kt {
                    let ss = s as isize + u as isize - p;
                    if ss < 0 || ss >= t as isize {
                        continue;
                    }
                    f((b * c + ch) * t + ss as usize, ch * kt + u, y);
                }
            }
        }
    }
}

pub const GELU_COEF: f64 = 0.044715;

#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + S::of(GELU_COEF) * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let half = S::of(0.5);
    let t = (c * (x + S::of(GELU_COEF) * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::of(3.0 * GELU_COEF) * x * x)
}
