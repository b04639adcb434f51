use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar type the numerical core is generic over.
///
/// Training runs at `f32` (the storage dtype of every artifact); the gradient
/// checks re-instantiate the same code at `f64` so central differences have
/// enough headroom for a 1e-4 relative comparison.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn max_s(self, other: Self) -> Self;
    fn min_s(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// C = alpha * A(m×k) · B(k×n) + beta * C, all row-major contiguous.
    ///
    /// # Safety
    /// `a`, `b`, `c` must point to at least m·k, k·n, m·n elements.
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        b: *const Self,
        beta: Self,
        c: *mut Self,
    );
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f32::powi(self, n)
    }
    #[inline]
    fn max_s(self, other: Self) -> Self {
        f32::max(self, other)
    }
    #[inline]
    fn min_s(self, other: Self) -> Self {
        f32::min(self, other)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        b: *const Self,
        beta: Self,
        c: *mut Self,
    ) {
        matrixmultiply::sgemm(
            m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
        )
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn max_s(self, other: Self) -> Self {
        f64::max(self, other)
    }
    #[inline]
    fn min_s(self, other: Self) -> Self {
        f64::min(self, other)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        b: *const Self,
        beta: Self,
        c: *mut Self,
    ) {
        matrixmultiply::dgemm(
            m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
        )
    }
}

/// Storage scalar for training and every on-disk artifact.
pub type Real = f32;

/// Row-major matmul helper: `c[m×n] = a[m×k] · b[k×n]` (overwrites c).
pub fn matmul<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        c.iter_mut().for_each(|v| *v = S::ZERO);
        return;
    }
    unsafe { S::gemm(m, k, n, S::ONE, a.as_ptr(), b.as_ptr(), S::ZERO, c.as_mut_ptr()) }
}

/// Row-major matmul-accumulate: `c += a[m×k] · b[k×n]`.
pub fn matmul_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe { S::gemm(m, k, n, S::ONE, a.as_ptr(), b.as_ptr(), S::ONE, c.as_mut_ptr()) }
}

/// `c[m×n] = aᵀ[m×k] · b[k×n]` where `a` is stored k×m row-major.
pub fn matmul_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        c.iter_mut().for_each(|v| *v = S::ZERO);
        return;
    }
    // A^T in row-major k×m storage is an m×k matrix with row stride 1, col stride m.
    unsafe {
        gemm_strided::<S>(
            m, k, n, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, S::ZERO,
            c.as_mut_ptr(),
        )
    }
}

/// `c[m×n] += aᵀ[m×k] · b[k×n]` where `a` is stored k×m row-major.
pub fn matmul_tn_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        gemm_strided::<S>(
            m, k, n, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, S::ONE,
            c.as_mut_ptr(),
        )
    }
}

/// `c[m×n] = a[m×k] · bᵀ[k×n]` where `b` is stored n×k row-major.
pub fn matmul_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        c.iter_mut().for_each(|v| *v = S::ZERO);
        return;
    }
    unsafe {
        gemm_strided::<S>(
            m, k, n, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, S::ZERO,
            c.as_mut_ptr(),
        )
    }
}

/// `c[m×n] += a[m×k] · bᵀ[k×n]` where `b` is stored n×k row-major.
pub fn matmul_nt_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        gemm_strided::<S>(
            m, k, n, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, S::ONE,
            c.as_mut_ptr(),
        )
    }
}

unsafe fn gemm_strided<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: *const S,
    rsa: isize,
    csa: isize,
    b: *const S,
    rsb: isize,
    csb: isize,
    beta: S,
    c: *mut S,
) {
    // Dispatch through the two concrete kernels; Scalar is sealed to f32/f64.
    if std::any::TypeId::of::<S>() == std::any::TypeId::of::<f32>() {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a as *const f32,
            rsa,
            csa,
            b as *const f32,
            rsb,
            csb,
            beta.to_f64() as f32,
            c as *mut f32,
            n as isize,
            1,
        )
    } else {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a as *const f64,
            rsa,
            csa,
            b as *const f64,
            rsb,
            csb,
            beta.to_f64(),
            c as *mut f64,
            n as isize,
            1,
        )
    }
}
