//! Complex 2-D convolution over `[C, T, F]` feature maps.
//!
//! A complex map with `C` channels is stored as `2C` real planes: real parts
//! first, then imaginary parts. `(A + iB) * (x + iy) = (Ax − By) + i(Bx + Ay)`
//! is realised as one real convolution with the block weight `[[A, −B], [B, A]]`,
//! which is the four real convolutions fused into a single GEMM.
//!
//! Time is causal: the kernel covers the current frame and `kt − 1` past
//! frames. Frequency is strided with symmetric zero padding. The transposed
//! form upsamples frequency (scatter) while keeping the causal time gather.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kind: ConvKind,
    /// complex input channels
    pub c_in: usize,
    /// complex output channels
    pub c_out: usize,
    pub kt: usize,
    pub kf: usize,
    pub stride_f: usize,
    pub pad_f: usize,
}

impl ConvGeom {
    pub fn kernel_len(&self) -> usize {
        self.kt * self.kf
    }

    /// Shape of each of the two real weight tensors (A and B).
    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            ConvKind::Conv => [self.c_out, self.c_in, self.kt, self.kf],
            ConvKind::Transposed => [self.c_in, self.c_out, self.kt, self.kf],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.c_in * self.c_out * self.kernel_len()
    }

    pub fn out_freq(&self, f_in: usize) -> Result<usize> {
        match self.kind {
            ConvKind::Conv => {
                let padded = f_in + 2 * self.pad_f;
                if padded < self.kf {
                    return Err(Error::Shape(format!("frequency axis {f_in} too small for kernel {}", self.kf)));
                }
                Ok((padded - self.kf) / self.stride_f + 1)
            }
            ConvKind::Transposed => {
                let full = (f_in - 1) * self.stride_f + self.kf;
                if full <= 2 * self.pad_f {
                    return Err(Error::Shape("transposed output would be empty".into()));
                }
                Ok(full - 2 * self.pad_f)
            }
        }
    }
}

/// Reusable buffers for [`complex_conv2d`] and its backward pass.
#[derive(Debug, Default, Clone)]
pub struct ConvScratch<T: Scalar> {
    block: Vec<T>,
    cols: Vec<T>,
    dblock: Vec<T>,
}

fn build_block<T: Scalar>(g: &ConvGeom, a: &[T], b: &[T], block: &mut Vec<T>) {
    let k = g.kernel_len();
    let (ci, co) = (g.c_in, g.c_out);
    match g.kind {
        ConvKind::Conv => {
            // [2co, 2ci·k]
            let cols = 2 * ci * k;
            block.clear();
            block.resize(2 * co * cols, T::zero());
            for o in 0..co {
                for i in 0..ci {
                    let src = (o * ci + i) * k;
                    for kk in 0..k {
                        let (av, bv) = (a[src + kk], b[src + kk]);
                        block[o * cols + i * k + kk] = av;
                        block[o * cols + (ci + i) * k + kk] = -bv;
                        block[(co + o) * cols + i * k + kk] = bv;
                        block[(co + o) * cols + (ci + i) * k + kk] = av;
                    }
                }
            }
        }
        ConvKind::Transposed => {
            // [2ci, 2co·k]
            let cols = 2 * co * k;
            block.clear();
            block.resize(2 * ci * cols, T::zero());
            for i in 0..ci {
                for o in 0..co {
                    let src = (i * co + o) * k;
                    for kk in 0..k {
                        let (av, bv) = (a[src + kk], b[src + kk]);
                        block[i * cols + o * k + kk] = av;
                        block[i * cols + (co + o) * k + kk] = bv;
                        block[(ci + i) * cols + o * k + kk] = -bv;
                        block[(ci + i) * cols + (co + o) * k + kk] = av;
                    }
                }
            }
        }
    }
}

fn fold_block<T: Scalar>(g: &ConvGeom, dblock: &[T], da: &mut [T], db: &mut [T]) {
    let k = g.kernel_len();
    let (ci, co) = (g.c_in, g.c_out);
    match g.kind {
        ConvKind::Conv => {
            let cols = 2 * ci * k;
            for o in 0..co {
                for i in 0..ci {
                    let dst = (o * ci + i) * k;
                    for kk in 0..k {
                        let rr = dblock[o * cols + i * k + kk];
                        let ri = dblock[o * cols + (ci + i) * k + kk];
                        let ir = dblock[(co + o) * cols + i * k + kk];
                        let ii = dblock[(co + o) * cols + (ci + i) * k + kk];
                        da[dst + kk] += rr + ii;
                        db[dst + kk] += ir - ri;
                    }
                }
            }
        }
        ConvKind::Transposed => {
            let cols = 2 * co * k;
            for i in 0..ci {
                for o in 0..co {
                    let dst = (i * co + o) * k;
                    for kk in 0..k {
                        let rr = dblock[i * cols + o * k + kk];
                        let ri = dblock[i * cols + (co + o) * k + kk];
                        let ir = dblock[(ci + i) * cols + o * k + kk];
                        let ii = dblock[(ci + i) * cols + (co + o) * k + kk];
                        da[dst + kk] += rr + ii;
                        db[dst + kk] += ri - ir;
                    }
                }
            }
        }
    }
}

/// Gather patches of `x [channels, t, f_src]` into `cols [channels·kt·kf, t·f_dst]`.
///
/// `src_freq(fd, df)` maps destination column and kernel tap to a source bin.
#[allow(clippy::too_many_arguments)]
fn gather<T: Scalar>(
    x: &[T],
    channels: usize,
    t: usize,
    f_src: usize,
    f_dst: usize,
    kt: usize,
    kf: usize,
    time_shift: impl Fn(usize, usize) -> Option<usize>,
    src_freq: impl Fn(usize, usize) -> Option<usize>,
    cols: &mut Vec<T>,
) {
    let n = t * f_dst;
    cols.clear();
    cols.resize(channels * kt * kf * n, T::zero());
    for c in 0..channels {
        for dt in 0..kt {
            for df in 0..kf {
                let row = ((c * kt + dt) * kf + df) * n;
                for ti in 0..t {
                    let Some(ts) = time_shift(ti, dt) else { continue };
                    let src = &x[(c * t + ts) * f_src..(c * t + ts + 1) * f_src];
                    let dst = &mut cols[row + ti * f_dst..row + (ti + 1) * f_dst];
                    for (fd, d) in dst.iter_mut().enumerate() {
                        if let Some(fs) = src_freq(fd, df) {
                            *d = src[fs];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`gather`]: scatter-add `cols` back into `x`.
#[allow(clippy::too_many_arguments)]
fn scatter<T: Scalar>(
    cols: &[T],
    channels: usize,
    t: usize,
    f_src: usize,
    f_dst: usize,
    kt: usize,
    kf: usize,
    time_shift: impl Fn(usize, usize) -> Option<usize>,
    src_freq: impl Fn(usize, usize) -> Option<usize>,
    x: &mut [T],
) {
    let n = t * f_dst;
    for c in 0..channels {
        for dt in 0..kt {
            for df in 0..kf {
                let row = ((c * kt + dt) * kf + df) * n;
                for ti in 0..t {
                    let Some(ts) = time_shift(ti, dt) else { continue };
                    let base = (c * t + ts) * f_src;
                    let src = &cols[row + ti * f_dst..row + (ti + 1) * f_dst];
                    for (fd, v) in src.iter().enumerate() {
                        if let Some(fs) = src_freq(fd, df) {
                            x[base + fs] += *v;
                        }
                    }
                }
            }
        }
    }
}

fn causal_gather(kt: usize, t: usize) -> impl Fn(usize, usize) -> Option<usize> {
    move |ti, dt| {
        let ts = ti as isize - (kt as isize - 1) + dt as isize;
        (ts >= 0 && (ts as usize) < t).then_some(ts as usize)
    }
}

fn strided_freq(stride: usize, pad: usize, f_src: usize) -> impl Fn(usize, usize) -> Option<usize> {
    move |fd, df| {
        let fs = (fd * stride + df) as isize - pad as isize;
        (fs >= 0 && (fs as usize) < f_src).then_some(fs as usize)
    }
}

/// For the transposed form: output time `t + kt − 1 − dt` receives input time `t`,
/// so each output frame depends on the current and `kt − 1` past input frames.
fn causal_scatter_time(kt: usize, t: usize) -> impl Fn(usize, usize) -> Option<usize> {
    move |ti, dt| {
        let to = ti + kt - 1 - dt;
        (to < t).then_some(to)
    }
}

fn check_lengths<T>(g: &ConvGeom, x: &[T], t: usize, f_in: usize, a: &[T], b: &[T]) -> Result<()> {
    if x.len() != 2 * g.c_in * t * f_in {
        return Err(Error::Shape(format!("conv input length {} != 2·{}·{}·{}", x.len(), g.c_in, t, f_in)));
    }
    if a.len() != g.weight_len() || b.len() != g.weight_len() {
        return Err(Error::Shape(format!("conv weight lengths {}/{} != {}", a.len(), b.len(), g.weight_len())));
    }
    Ok(())
}

/// Forward complex convolution. `x` is `[2·c_in, t, f_in]`; writes `[2·c_out, t, f_out]`.
#[allow(clippy::too_many_arguments)]
pub fn complex_conv2d<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    t: usize,
    f_in: usize,
    a: &[T],
    b: &[T],
    scratch: &mut ConvScratch<T>,
    out: &mut Vec<T>,
) -> Result<usize> {
    check_lengths(g, x, t, f_in, a, b)?;
    let f_out = g.out_freq(f_in)?;
    build_block(g, a, b, &mut scratch.block);
    let k = g.kernel_len();
    match g.kind {
        ConvKind::Conv => {
            let rows = 2 * g.c_in * k;
            let n = t * f_out;
            gather(x, 2 * g.c_in, t, f_in, f_out, g.kt, g.kf, causal_gather(g.kt, t), strided_freq(g.stride_f, g.pad_f, f_in), &mut scratch.cols);
            out.clear();
            out.resize(2 * g.c_out * n, T::zero());
            T::gemm(2 * g.c_out, rows, n, T::one(), &scratch.block, rows as isize, 1, &scratch.cols, n as isize, 1, T::zero(), out, n as isize, 1);
        }
        ConvKind::Transposed => {
            let rows = 2 * g.c_out * k;
            let n = t * f_in;
            scratch.cols.clear();
            scratch.cols.resize(rows * n, T::zero());
            // cols = blockᵀ · x
            T::gemm(rows, 2 * g.c_in, n, T::one(), &scratch.block, 1, rows as isize, x, n as isize, 1, T::zero(), &mut scratch.cols, n as isize, 1);
            out.clear();
            out.resize(2 * g.c_out * t * f_out, T::zero());
            // scatter cols[(c, dt, df), (ti, fi)] into out[c, ti+kt-1-dt, fi·s - p + df]
            scatter(&scratch.cols, 2 * g.c_out, t, f_out, f_in, g.kt, g.kf, causal_scatter_time(g.kt, t), strided_freq(g.stride_f, g.pad_f, f_out), out);
        }
    }
    Ok(f_out)
}

/// Backward pass; accumulates into `grad_x`, `grad_a`, `grad_b`.
#[allow(clippy::too_many_arguments)]
pub fn complex_conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    t: usize,
    f_in: usize,
    a: &[T],
    b: &[T],
    grad_out: &[T],
    scratch: &mut ConvScratch<T>,
    grad_x: Option<&mut [T]>,
    grad_a: &mut [T],
    grad_b: &mut [T],
) -> Result<()> {
    check_lengths(g, x, t, f_in, a, b)?;
    let f_out = g.out_freq(f_in)?;
    build_block(g, a, b, &mut scratch.block);
    let k = g.kernel_len();
    match g.kind {
        ConvKind::Conv => {
            let rows = 2 * g.c_in * k;
            let n = t * f_out;
            gather(x, 2 * g.c_in, t, f_in, f_out, g.kt, g.kf, causal_gather(g.kt, t), strided_freq(g.stride_f, g.pad_f, f_in), &mut scratch.cols);
            scratch.dblock.clear();
            scratch.dblock.resize(2 * g.c_out * rows, T::zero());
            // dblock = dY · colsᵀ
            T::gemm(2 * g.c_out, n, rows, T::one(), grad_out, n as isize, 1, &scratch.cols, 1, n as isize, T::zero(), &mut scratch.dblock, rows as isize, 1);
            fold_block(g, &scratch.dblock, grad_a, grad_b);
            if let Some(gx) = grad_x {
                // dcols = blockᵀ · dY, then scatter (adjoint of the gather)
                T::gemm(rows, 2 * g.c_out, n, T::one(), &scratch.block, 1, rows as isize, grad_out, n as isize, 1, T::zero(), &mut scratch.cols, n as isize, 1);
                scatter(&scratch.cols, 2 * g.c_in, t, f_in, f_out, g.kt, g.kf, causal_gather(g.kt, t), strided_freq(g.stride_f, g.pad_f, f_in), gx);
            }
        }
        ConvKind::Transposed => {
            let rows = 2 * g.c_out * k;
            let n = t * f_in;
            // dcols = gather of dY (adjoint of the forward scatter)
            gather(grad_out, 2 * g.c_out, t, f_out, f_in, g.kt, g.kf, causal_scatter_time(g.kt, t), strided_freq(g.stride_f, g.pad_f, f_out), &mut scratch.cols);
            scratch.dblock.clear();
            scratch.dblock.resize(2 * g.c_in * rows, T::zero());
            // dblock = x · dcolsᵀ
            T::gemm(2 * g.c_in, n, rows, T::one(), x, n as isize, 1, &scratch.cols, 1, n as isize, T::zero(), &mut scratch.dblock, rows as isize, 1);
            fold_block(g, &scratch.dblock, grad_a, grad_b);
            if let Some(gx) = grad_x {
                T::gemm(2 * g.c_in, rows, n, T::one(), &scratch.block, rows as isize, 1, &scratch.cols, n as isize, 1, T::one(), gx, n as isize, 1);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn randv(r: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Direct nested-loop complex convolution oracle over Complex<f64>.
    fn oracle_conv(g: &ConvGeom, x: &[f64], t: usize, f_in: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let f_out = g.out_freq(f_in).unwrap();
        let xc = |c: usize, ti: usize, fi: usize| Complex::new(x[(c * t + ti) * f_in + fi], x[((g.c_in + c) * t + ti) * f_in + fi]);
        let mut y = vec![Complex::new(0.0, 0.0); g.c_out * t * f_out];
        for o in 0..g.c_out {
            for ti in 0..t {
                for fo in 0..f_out {
                    let mut acc = Complex::new(0.0, 0.0);
                    for i in 0..g.c_in {
                        for dt in 0..g.kt {
                            for df in 0..g.kf {
                                let ts = ti as isize - (g.kt as isize - 1) + dt as isize;
                                let fs = (fo * g.stride_f + df) as isize - g.pad_f as isize;
                                if ts < 0 || fs < 0 || fs as usize >= f_in {
                                    continue;
                                }
                                let w = (o * g.c_in + i) * g.kernel_len() + dt * g.kf + df;
                                acc += Complex::new(a[w], b[w]) * xc(i, ts as usize, fs as usize);
                            }
                        }
                    }
                    y[(o * t + ti) * f_out + fo] = acc;
                }
            }
        }
        let mut out: Vec<f64> = y.iter().map(|c| c.re).collect();
        out.extend(y.iter().map(|c| c.im));
        out
    }

    fn oracle_tconv(g: &ConvGeom, x: &[f64], t: usize, f_in: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let f_out = g.out_freq(f_in).unwrap();
        let mut y = vec![Complex::new(0.0, 0.0); g.c_out * t * f_out];
        for i in 0..g.c_in {
            for ti in 0..t {
                for fi in 0..f_in {
                    let xv = Complex::new(x[(i * t + ti) * f_in + fi], x[((g.c_in + i) * t + ti) * f_in + fi]);
                    for o in 0..g.c_out {
                        for dt in 0..g.kt {
                            for df in 0..g.kf {
                                let to = ti + g.kt - 1 - dt;
                                let fo = (fi * g.stride_f + df) as isize - g.pad_f as isize;
                                if to >= t || fo < 0 || fo as usize >= f_out {
                                    continue;
                                }
                                let w = (i * g.c_out + o) * g.kernel_len() + dt * g.kf + df;
                                y[(o * t + to) * f_out + fo as usize] += Complex::new(a[w], b[w]) * xv;
                            }
                        }
                    }
                }
            }
        }
        let mut out: Vec<f64> = y.iter().map(|c| c.re).collect();
        out.extend(y.iter().map(|c| c.im));
        out
    }

    #[test]
    fn identity_and_rotation_kernels() {
        let g = ConvGeom { kind: ConvKind::Conv, c_in: 1, c_out: 1, kt: 1, kf: 1, stride_f: 1, pad_f: 0 };
        let mut r = rng(1);
        let x = randv(&mut r, 2 * 4 * 6);
        let mut s = ConvScratch::default();
        let mut out = Vec::new();
        complex_conv2d(&g, &x, 4, 6, &[1.0], &[0.0], &mut s, &mut out).unwrap();
        assert_eq!(out, x);
        // kernel i on real input: real part 0, imaginary part x
        let mut real_x = x.clone();
        real_x[24..].iter_mut().for_each(|v| *v = 0.0);
        complex_conv2d(&g, &real_x, 4, 6, &[0.0], &[1.0], &mut s, &mut out).unwrap();
        assert!(out[..24].iter().all(|v| *v == 0.0));
        assert_eq!(&out[24..], &real_x[..24]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut r = rng(2);
        let g = ConvGeom { kind: ConvKind::Conv, c_in: 2, c_out: 3, kt: 3, kf: 3, stride_f: 2, pad_f: 0 };
        let (t, f) = (5, 5);
        let x = randv(&mut r, 2 * g.c_in * t * f);
        let a = randv(&mut r, g.weight_len());
        let b = randv(&mut r, g.weight_len());
        let mut out = Vec::new();
        complex_conv2d(&g, &x, t, f, &a, &b, &mut ConvScratch::default(), &mut out).unwrap();
        let want = oracle_conv(&g, &x, t, f, &a, &b);
        assert_eq!(out.len(), want.len());
        for (u, v) in out.iter().zip(&want) {
            assert!((u - v).abs() < 1e-5);
        }
        let g5 = ConvGeom { kind: ConvKind::Conv, c_in: 2, c_out: 2, kt: 2, kf: 5, stride_f: 2, pad_f: 2 };
        let x = randv(&mut r, 2 * 2 * 4 * 17);
        let a = randv(&mut r, g5.weight_len());
        let b = randv(&mut r, g5.weight_len());
        complex_conv2d(&g5, &x, 4, 17, &a, &b, &mut ConvScratch::default(), &mut out).unwrap();
        for (u, v) in out.iter().zip(&oracle_conv(&g5, &x, 4, 17, &a, &b)) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn transposed_matches_oracle_and_inverts_shape() {
        let mut r = rng(3);
        let g = ConvGeom { kind: ConvKind::Transposed, c_in: 3, c_out: 2, kt: 2, kf: 5, stride_f: 2, pad_f: 2 };
        let (t, f) = (4, 9);
        assert_eq!(g.out_freq(f).unwrap(), 17);
        let x = randv(&mut r, 2 * g.c_in * t * f);
        let a = randv(&mut r, g.weight_len());
        let b = randv(&mut r, g.weight_len());
        let mut out = Vec::new();
        complex_conv2d(&g, &x, t, f, &a, &b, &mut ConvScratch::default(), &mut out).unwrap();
        for (u, v) in out.iter().zip(&oracle_tconv(&g, &x, t, f, &a, &b)) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_and_complex_scalar_equivariant() {
        let mut r = rng(4);
        let g = ConvGeom { kind: ConvKind::Conv, c_in: 2, c_out: 2, kt: 2, kf: 5, stride_f: 2, pad_f: 2 };
        let (t, f) = (3, 9);
        let a = randv(&mut r, g.weight_len());
        let b = randv(&mut r, g.weight_len());
        let x = randv(&mut r, 2 * 2 * t * f);
        let mut s = ConvScratch::default();
        let mut y = Vec::new();
        complex_conv2d(&g, &x, t, f, &a, &b, &mut s, &mut y).unwrap();
        let z = Complex::new(0.6, -1.3);
        let plane = 2 * t * f;
        let rot = |v: &[f64]| {
            let half = v.len() / 2;
            let mut o = v.to_vec();
            for i in 0..half {
                let c = z * Complex::new(v[i], v[half + i]);
                o[i] = c.re;
                o[half + i] = c.im;
            }
            o
        };
        let _ = plane;
        let mut yz = Vec::new();
        complex_conv2d(&g, &rot(&x), t, f, &a, &b, &mut s, &mut yz).unwrap();
        for (u, v) in yz.iter().zip(&rot(&y)) {
            assert!((u - v).abs() < 1e-12);
        }
        let x2 = randv(&mut r, x.len());
        let mut y2 = Vec::new();
        complex_conv2d(&g, &x2, t, f, &a, &b, &mut s, &mut y2).unwrap();
        let sum: Vec<f64> = x.iter().zip(&x2).map(|(p, q)| 2.0 * p - 0.5 * q).collect();
        let mut ys = Vec::new();
        complex_conv2d(&g, &sum, t, f, &a, &b, &mut s, &mut ys).unwrap();
        for ((u, p), q) in ys.iter().zip(&y).zip(&y2) {
            assert!((u - (2.0 * p - 0.5 * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let g = ConvGeom { kind: ConvKind::Conv, c_in: 1, c_out: 1, kt: 1, kf: 1, stride_f: 1, pad_f: 0 };
        let mut out = Vec::new();
        let r = complex_conv2d(&g, &[0.0f32; 7], 2, 2, &[1.0], &[0.0], &mut ConvScratch::default(), &mut out);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
