//! Scalar abstraction shared by the DSP and network code.
//!
//! Everything numeric in this crate is written against [`Scalar`] so the same
//! code runs in `f32` (training, streaming) and `f64` (gradient checks).

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;
use std::fmt::{Debug, Display};
use std::cell::Cell;
use std::iter::Sum;

thread_local! {
    static INLINE_GEMM: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with GEMM routed to an allocation-free kernel on this thread.
///
/// The packed kernel allocates its packing buffers on every call; the
/// real-time hop path runs under this scope so it never touches the heap.
/// Single-row products always take the inline kernel.
pub fn with_inline_gemm<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            INLINE_GEMM.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(INLINE_GEMM.with(|c| c.replace(true)));
    f()
}

/// Strided operand view.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rs: usize,
    cs: usize,
}

impl<T: Copy> View<'_, T> {
    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.rs + c * self.cs]
    }
}

#[allow(clippy::too_many_arguments)]
fn inline_gemm<T: Float + NumAssign + Copy>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    rsa: usize,
    csa: usize,
    b: &[T],
    rsb: usize,
    csb: usize,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    for i in 0..m {
        for j in 0..n {
            let v = &mut c[i * rsc + j * csc];
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
    }
    let a = View { data: a, rs: rsa, cs: csa };
    let b = View { data: b, rs: rsb, cs: csb };
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { accumulate_avx2(m, k, n, alpha, a, b, c, rsc, csc) };
            return;
        }
    }
    accumulate::<T, false, 4, 16>(m, k, n, alpha, a, b, c, rsc, csc);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn accumulate_avx2<T: Float + NumAssign + Copy>(m: usize, k: usize, n: usize, alpha: T, a: View<T>, b: View<T>, c: &mut [T], rsc: usize, csc: usize) {
    accumulate::<T, true, 6, 16>(m, k, n, alpha, a, b, c, rsc, csc);
}

/// Depth of the stack-packed A panel.
const KC: usize = 128;
/// Upper bound on the tile height of any instantiation.
const MR_MAX: usize = 6;

#[inline(always)]
fn madd<T: Float, const FMA: bool>(a: T, b: T, c: T) -> T {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `c += alpha · a · b` without heap allocation.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn accumulate<T: Float + NumAssign + Copy, const FMA: bool, const MR: usize, const NR: usize>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: View<T>,
    b: View<T>,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    if b.cs == 1 && csc == 1 {
        let mut apack = [T::zero(); KC * MR_MAX];
        let mut i = 0;
        while i + MR <= m {
            let mut k0 = 0;
            while k0 < k {
                let kc = KC.min(k - k0);
                for p in 0..kc {
                    for r in 0..MR {
                        apack[p * MR + r] = alpha * a.at(i + r, k0 + p);
                    }
                }
                let mut j = 0;
                while j + NR <= n {
                    let mut acc = [[T::zero(); NR]; MR];
                    for (r, acc_r) in acc.iter_mut().enumerate() {
                        acc_r.copy_from_slice(&c[(i + r) * rsc + j..(i + r) * rsc + j + NR]);
                    }
                    for (p, ap) in apack[..kc * MR].chunks_exact(MR).enumerate() {
                        let off = (k0 + p) * b.rs + j;
                        let brow: &[T; NR] = b.data[off..off + NR].try_into().expect("NR-wide slice");
                        for (acc_r, &av) in acc.iter_mut().zip(ap) {
                            for l in 0..NR {
                                acc_r[l] = madd::<T, FMA>(av, brow[l], acc_r[l]);
                            }
                        }
                    }
                    for (r, acc_r) in acc.iter().enumerate() {
                        c[(i + r) * rsc + j..(i + r) * rsc + j + NR].copy_from_slice(acc_r);
                    }
                    j += NR;
                }
                for (p, ap) in apack[..kc * MR].chunks_exact(MR).enumerate() {
                    let off = (k0 + p) * b.rs;
                    for (r, &av) in ap.iter().enumerate() {
                        let crow = &mut c[(i + r) * rsc..(i + r) * rsc + n];
                        for jj in j..n {
                            crow[jj] = madd::<T, FMA>(av, b.data[off + jj], crow[jj]);
                        }
                    }
                }
                k0 += kc;
            }
            i += MR;
        }
        for i in i..m {
            let crow = &mut c[i * rsc..i * rsc + n];
            for p in 0..k {
                let av = alpha * a.at(i, p);
                let brow = &b.data[p * b.rs..p * b.rs + n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv = madd::<T, FMA>(av, *bv, *cv);
                }
            }
        }
    } else if a.cs == 1 && b.rs == 1 {
        // dot products; each B column is streamed once against four A rows
        for j in 0..n {
            let bcol = &b.data[j * b.cs..j * b.cs + k];
            let mut i = 0;
            while i + 4 <= m {
                let s = dot4::<T, FMA>(
                    [
                        &a.data[i * a.rs..i * a.rs + k],
                        &a.data[(i + 1) * a.rs..(i + 1) * a.rs + k],
                        &a.data[(i + 2) * a.rs..(i + 2) * a.rs + k],
                        &a.data[(i + 3) * a.rs..(i + 3) * a.rs + k],
                    ],
                    bcol,
                );
                for (r, v) in s.into_iter().enumerate() {
                    c[(i + r) * rsc + j * csc] += alpha * v;
                }
                i += 4;
            }
            for i in i..m {
                let row = &a.data[i * a.rs..i * a.rs + k];
                let s = dot4::<T, FMA>([row, row, row, row], bcol)[0];
                c[i * rsc + j * csc] += alpha * s;
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc = madd::<T, FMA>(a.at(i, p), b.at(p, j), acc);
                }
                c[i * rsc + j * csc] += alpha * acc;
            }
        }
    }
}

const LANES: usize = 16;

#[inline(always)]
fn dot4<T: Float + Copy, const FMA: bool>(rows: [&[T]; 4], col: &[T]) -> [T; 4] {
    let mut acc = [[T::zero(); LANES]; 4];
    let cc = col.chunks_exact(LANES);
    let tail = cc.remainder();
    let r0 = rows[0].chunks_exact(LANES);
    let r1 = rows[1].chunks_exact(LANES);
    let r2 = rows[2].chunks_exact(LANES);
    let r3 = rows[3].chunks_exact(LANES);
    let tails = [r0.remainder(), r1.remainder(), r2.remainder(), r3.remainder()];
    for ((((c, x0), x1), x2), x3) in cc.zip(r0).zip(r1).zip(r2).zip(r3) {
        for l in 0..LANES {
            acc[0][l] = madd::<T, FMA>(x0[l], c[l], acc[0][l]);
            acc[1][l] = madd::<T, FMA>(x1[l], c[l], acc[1][l]);
            acc[2][l] = madd::<T, FMA>(x2[l], c[l], acc[2][l]);
            acc[3][l] = madd::<T, FMA>(x3[l], c[l], acc[3][l]);
        }
    }
    let mut out = [T::zero(); 4];
    for r in 0..4 {
        let mut s = tree_sum(&acc[r]);
        for (x, y) in tails[r].iter().zip(tail) {
            s = madd::<T, FMA>(*x, *y, s);
        }
        out[r] = s;
    }
    out
}

#[inline(always)]
fn tree_sum<T: Float, const L: usize>(v: &[T; L]) -> T {
    let mut w = *v;
    let mut len = L;
    while len > 1 {
        len /= 2;
        for l in 0..len {
            w[l] = w[l] + w[l + len];
        }
    }
    w[0]
}

/// Real element type of every numeric kernel.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Row-major `c = alpha * a(m×k) * b(k×n) + beta * c`, strides in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 1 || INLINE_GEMM.with(Cell::get) {
                    inline_gemm(m, k, n, alpha, a, rsa as usize, csa as usize, b, rsb as usize, csb as usize, beta, c, rsc as usize, csc as usize);
                    return;
                }
                // SAFETY: extents checked above; matrixmultiply reads/writes
                // only within the strided m×k, k×n and m×n views.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            #[inline]
            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }
        }
    };
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides unsupported");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm operand out of bounds: need {} have {}", last + 1, len);
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `y = A x` for a row-major `rows × cols` matrix.
pub fn matvec<T: Scalar>(a: &[T], rows: usize, cols: usize, x: &[T], y: &mut [T]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for (r, out) in y.iter_mut().enumerate() {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = T::zero();
        for (w, v) in row.iter().zip(x) {
            acc += *w * *v;
        }
        *out = acc;
    }
}
