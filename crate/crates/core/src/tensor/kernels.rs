//! Raw array kernels behind the tape primitives. Inputs are already shape
//! checked; every accumulation runs in `f64`.

use alloc::vec;
use alloc::vec::Vec;

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Range of output columns whose tap `kx` lands inside the input row.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
        // ix = ox*s + kx - p <= in_w - 1
        let lim = self.in_w + p;
        if lim <= kx {
            return (0, 0);
        }
        let hi = ((lim - 1 - kx) / s + 1).min(self.out_w);
        (lo.min(hi), hi)
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.in_h).then_some(iy as usize)
    }
}

/// Unfold one sample `[c,h,w]` into `[c·s·s, out_h·out_w]` (zeros where a
/// tap falls into the padding).
fn im2col<T: Real>(x: &[T], g: &ConvGeom, ranges: &[(usize, usize)], cols: &mut [f64]) {
    let (hw_in, hw_out) = (g.in_h * g.in_w, g.out_h * g.out_w);
    cols.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..g.in_ch {
        let plane = &x[c * hw_in..][..hw_in];
        for ky in 0..g.ksize {
            for kx in 0..g.ksize {
                let row = &mut cols[((c * g.ksize + ky) * g.ksize + kx) * hw_out..][..hw_out];
                let (lo, hi) = ranges[kx];
                for oy in 0..g.out_h {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    let xrow = &plane[iy * g.in_w..][..g.in_w];
                    let dst = &mut row[oy * g.out_w..][..g.out_w];
                    for ox in lo..hi {
                        dst[ox] = xrow[ox * g.stride + kx - g.pad].to_f64();
                    }
                }
            }
        }
    }
}

/// Scatter-add `[c·s·s, out_h·out_w]` columns back onto `[c,h,w]`.
fn col2im(cols: &[f64], g: &ConvGeom, ranges: &[(usize, usize)], out: &mut [f64]) {
    let (hw_in, hw_out) = (g.in_h * g.in_w, g.out_h * g.out_w);
    for c in 0..g.in_ch {
        let plane = &mut out[c * hw_in..][..hw_in];
        for ky in 0..g.ksize {
            for kx in 0..g.ksize {
                let row = &cols[((c * g.ksize + ky) * g.ksize + kx) * hw_out..][..hw_out];
                let (lo, hi) = ranges[kx];
                for oy in 0..g.out_h {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    let xrow = &mut plane[iy * g.in_w..][..g.in_w];
                    let src = &row[oy * g.out_w..][..g.out_w];
                    for ox in lo..hi {
                        xrow[ox * g.stride + kx - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn ranges(g: &ConvGeom) -> Vec<(usize, usize)> {
    (0..g.ksize).map(|kx| g.col_range(kx)).collect()
}

/// y[b,o] = Σ_c x[b,c] ⋆ k[o,c]
pub(crate) fn conv_forward<T: Real>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw_in, hw_out) = (g.in_h * g.in_w, g.out_h * g.out_w);
    let rows = g.in_ch * g.ksize * g.ksize;
    let rg = ranges(g);
    let kf: Vec<f64> = k.iter().map(|v| v.to_f64()).collect();
    let mut cols = vec![0f64; rows * hw_out];
    let mut acc = vec![0f64; hw_out];
    let mut out = Vec::with_capacity(g.batch * g.out_ch * hw_out);
    for b in 0..g.batch {
        im2col(&x[b * g.in_ch * hw_in..][..g.in_ch * hw_in], g, &rg, &mut cols);
        for o in 0..g.out_ch {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (r, &kv) in kf[o * rows..(o + 1) * rows].iter().enumerate() {
                axpy(&mut acc, kv, &cols[r * hw_out..][..hw_out]);
            }
            out.extend(acc.iter().map(|&v| T::from_f64(v)));
        }
    }
    out
}

/// Adjoint of [`conv_forward`] with respect to its input.
pub(crate) fn conv_input_grad<T: Real>(gy: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw_in, hw_out) = (g.in_h * g.in_w, g.out_h * g.out_w);
    let rows = g.in_ch * g.ksize * g.ksize;
    let rg = ranges(g);
    let kf: Vec<f64> = k.iter().map(|v| v.to_f64()).collect();
    let mut cols = vec![0f64; rows * hw_out];
    let mut grow = vec![0f64; hw_out];
    let mut acc = vec![0f64; g.in_ch * hw_in];
    let mut out = Vec::with_capacity(g.batch * g.in_ch * hw_in);
    for b in 0..g.batch {
        cols.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..g.out_ch {
            for (d, s) in grow.iter_mut().zip(&gy[(b * g.out_ch + o) * hw_out..][..hw_out]) {
                *d = s.to_f64();
            }
            for (r, &kv) in kf[o * rows..(o + 1) * rows].iter().enumerate() {
                axpy(&mut cols[r * hw_out..][..hw_out], kv, &grow);
            }
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        col2im(&cols, g, &rg, &mut acc);
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    out
}

/// Adjoint of [`conv_forward`] with respect to its kernel.
pub(crate) fn conv_kernel_grad<T: Real>(x: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw_in, hw_out) = (g.in_h * g.in_w, g.out_h * g.out_w);
    let rows = g.in_ch * g.ksize * g.ksize;
    let rg = ranges(g);
    let mut cols = vec![0f64; rows * hw_out];
    let mut grow = vec![0f64; hw_out];
    let mut acc = vec![0f64; g.out_ch * rows];
    for b in 0..g.batch {
        im2col(&x[b * g.in_ch * hw_in..][..g.in_ch * hw_in], g, &rg, &mut cols);
        for o in 0..g.out_ch {
            for (d, s) in grow.iter_mut().zip(&gy[(b * g.out_ch + o) * hw_out..][..hw_out]) {
                *d = s.to_f64();
            }
            for r in 0..rows {
                acc[o * rows + r] += dot(&grow, &cols[r * hw_out..][..hw_out]);
            }
        }
    }
    acc.into_iter().map(T::from_f64).collect()
}

/// [m,k]·[k,n]
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (p, av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let av = av.to_f64();
            for (acc_j, bv) in acc.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *acc_j += av * bv.to_f64();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    out
}

/// Swap the two leading axes of a tensor viewed as [a, b, rest].
pub(crate) fn swap01<T: Real>(x: &[T], a: usize, b: usize, rest: usize) -> Vec<T> {
    let mut out = vec![T::default(); x.len()];
    for i in 0..a {
        for j in 0..b {
            let src = &x[(i * b + j) * rest..][..rest];
            out[(j * a + i) * rest..][..rest].copy_from_slice(src);
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every element of `big`, the linear index of the element of `small`
/// it maps onto when `small` (same rank, dims equal or 1) is broadcast.
pub(crate) fn broadcast_map(small: &[usize], big: &[usize]) -> Vec<usize> {
    fn fill(d: usize, base: usize, small: &[usize], big: &[usize], sb: &[usize], out: &mut Vec<usize>) {
        let step = if small[d] == 1 { 0 } else { sb[d] };
        if d + 1 == big.len() {
            out.extend((0..big[d]).map(|i| base + i * step));
        } else {
            for i in 0..big[d] {
                fill(d + 1, base + i * step, small, big, sb, out);
            }
        }
    }
    let mut out = Vec::with_capacity(big.iter().product());
    if big.is_empty() {
        out.push(0);
    } else if big.iter().all(|&n| n > 0) {
        fill(0, 0, small, big, &strides(small), &mut out);
    }
    out
}

pub(crate) fn broadcast_to<T: Real>(x: &[T], small: &[usize], big: &[usize]) -> Vec<T> {
    broadcast_map(small, big).into_iter().map(|i| x[i]).collect()
}

pub(crate) fn sum_to<T: Real>(x: &[T], big: &[usize], small: &[usize]) -> Vec<T> {
    let mut acc = vec![0f64; small.iter().product()];
    for (v, i) in x.iter().zip(broadcast_map(small, big)) {
        acc[i] += v.to_f64();
    }
    acc.into_iter().map(T::from_f64).collect()
}

/// [b,c,h,w] → [b,c,h·s,w·s] with the input at multiples of `s`, zeros elsewhere.
pub(crate) fn zero_insert<T: Real>(x: &[T], planes: usize, h: usize, w: usize, s: usize) -> Vec<T> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![T::default(); planes * oh * ow];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                out[(p * oh + i * s) * ow + j * s] = x[(p * h + i) * w + j];
            }
        }
    }
    out
}

/// [b,c,h,w] → [b,c,h/s,w/s] keeping elements at multiples of `s`.
pub(crate) fn subsample<T: Real>(x: &[T], planes: usize, h: usize, w: usize, s: usize) -> Vec<T> {
    let (oh, ow) = (h / s, w / s);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                out.push(x[(p * h + i * s) * w + j * s]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let a = x[base + 2 * i * w + 2 * j].to_f64();
                let b = x[base + 2 * i * w + 2 * j + 1].to_f64();
                let c = x[base + (2 * i + 1) * w + 2 * j].to_f64();
                let d = x[base + (2 * i + 1) * w + 2 * j + 1].to_f64();
                out.push(T::from_f64((a + b + c + d) * 0.25));
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                out.push(x[(p * h + i / 2) * w + j / 2]);
            }
        }
    }
    out
}

/// [b,c,hw] placed at channel offset `start` of a zeroed [b,total,hw].
pub(crate) fn pad_channels<T: Real>(x: &[T], b: usize, c: usize, hw: usize, start: usize, total: usize) -> Vec<T> {
    let mut out = vec![T::default(); b * total * hw];
    for bi in 0..b {
        let src = &x[bi * c * hw..][..c * hw];
        out[(bi * total + start) * hw..][..c * hw].copy_from_slice(src);
    }
    out
}

pub(crate) fn slice_channels<T: Real>(x: &[T], b: usize, total: usize, hw: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(b * len * hw);
    for bi in 0..b {
        out.extend_from_slice(&x[(bi * total + start) * hw..][..len * hw]);
    }
    out
}
