//! Fixed-shape complex linear algebra on two-port vectors and 2×2 matrices.
//!
//! Every matrix in the resonator model (beam splitter, coupling, effective
//! Hamiltonian, resolvent, transfer matrix, generator) is 2×2, so closed-form
//! determinants, inverses and Hermitian eigendecompositions are used instead
//! of a general dense-matrix library. Rows and columns are indexed by port:
//! 0 is the left port `l`, 1 is the right port `r`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative threshold for declaring a matrix singular: `|det| <= SINGULAR_TOL * ‖a‖_F²`.
pub const SINGULAR_TOL: f64 = 1e-14;

/// Relative gap below which two Hermitian eigenvalues are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Default tolerance for the Hermiticity precondition of [`eig_herm2`].
pub const HERMITIAN_TOL: f64 = 1e-10;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Two-component complex amplitude vector `[e_l, e_r]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CVec2 {
    pub l: C64,
    pub r: C64,
}

impl CVec2 {
    pub const fn new(l: C64, r: C64) -> Self {
        Self { l, r }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Unit vector on the left port.
    pub fn e_l() -> Self {
        Self::new(c(1.0, 0.0), c(0.0, 0.0))
    }

    /// Unit vector on the right port.
    pub fn e_r() -> Self {
        Self::new(c(0.0, 0.0), c(1.0, 0.0))
    }

    pub fn from_real(l: f64, r: f64) -> Self {
        Self::new(c(l, 0.0), c(r, 0.0))
    }

    /// Sesquilinear inner product `⟨self, other⟩`, conjugate-linear in `self`.
    pub fn dot(&self, other: &CVec2) -> C64 {
        self.l.conj() * other.l + self.r.conj() * other.r
    }

    pub fn norm_sqr(&self) -> f64 {
        self.l.norm_sqr() + self.r.norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.l * s, self.r * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self::new(self.l * s, self.r * s)
    }

    pub fn is_finite(&self) -> bool {
        self.l.is_finite() && self.r.is_finite()
    }

    /// Returns `[re_l, im_l, re_r, im_r]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.l.re, self.l.im, self.r.re, self.r.im]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(c(a[0], a[1]), c(a[2], a[3]))
    }
}

impl Index<usize> for CVec2 {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        match i {
            0 => &self.l,
            1 => &self.r,
            _ => panic!("port index {i} out of range"),
        }
    }
}

impl Add for CVec2 {
    type Output = CVec2;
    fn add(self, o: CVec2) -> CVec2 {
        CVec2::new(self.l + o.l, self.r + o.r)
    }
}

impl Sub for CVec2 {
    type Output = CVec2;
    fn sub(self, o: CVec2) -> CVec2 {
        CVec2::new(self.l - o.l, self.r - o.r)
    }
}

/// 2×2 complex matrix, stored row-major.
#[derive(Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CMat2 {
    pub m: [[C64; 2]; 2],
}

impl fmt::Debug for CMat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}

impl CMat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn from_real(a: f64, b: f64, cc: f64, d: f64) -> Self {
        Self::new(c(a, 0.0), c(b, 0.0), c(cc, 0.0), c(d, 0.0))
    }

    pub fn identity() -> Self {
        Self::from_real(1.0, 0.0, 0.0, 1.0)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn diag(a: C64, d: C64) -> Self {
        Self::new(a, C64::default(), C64::default(), d)
    }

    /// Port-swap matrix `[[0, 1], [1, 0]]`.
    pub fn swap() -> Self {
        Self::from_real(0.0, 1.0, 1.0, 0.0)
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.m;
        Self::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self::new(m[0][0], m[1][0], m[0][1], m[1][1])
    }

    pub fn det(&self) -> C64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> C64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.m;
        Self::new(m[0][0] * s, m[0][1] * s, m[1][0] * s, m[1][1] * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(c(s, 0.0))
    }

    pub fn mul_vec(&self, v: &CVec2) -> CVec2 {
        CVec2::new(
            self.m[0][0] * v.l + self.m[0][1] * v.r,
            self.m[1][0] * v.l + self.m[1][1] * v.r,
        )
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|z| z.is_finite())
    }

    /// `(a + a†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale_real(0.5)
    }

    /// Matrix imaginary part `(a − a†) / (2i)`; Hermitian by construction.
    pub fn imag_part(&self) -> Self {
        (*self - self.adjoint()).scale(c(0.0, -0.5))
    }

    /// Frobenius norm of `a − a†`.
    pub fn hermiticity_residual(&self) -> f64 {
        (*self - self.adjoint()).norm()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() <= tol * self.norm().max(1.0)
    }

    /// Frobenius norm of `a†a − I`.
    pub fn unitarity_residual(&self) -> f64 {
        (self.adjoint() * *self - CMat2::identity()).norm()
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_residual() <= tol
    }
}

impl Index<(usize, usize)> for CMat2 {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.m[i][j]
    }
}

impl IndexMut<(usize, usize)> for CMat2 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.m[i][j]
    }
}

impl Add for CMat2 {
    type Output = CMat2;
    fn add(self, o: CMat2) -> CMat2 {
        let (a, b) = (&self.m, &o.m);
        CMat2::new(
            a[0][0] + b[0][0],
            a[0][1] + b[0][1],
            a[1][0] + b[1][0],
            a[1][1] + b[1][1],
        )
    }
}

impl Sub for CMat2 {
    type Output = CMat2;
    fn sub(self, o: CMat2) -> CMat2 {
        let (a, b) = (&self.m, &o.m);
        CMat2::new(
            a[0][0] - b[0][0],
            a[0][1] - b[0][1],
            a[1][0] - b[1][0],
            a[1][1] - b[1][1],
        )
    }
}

impl Neg for CMat2 {
    type Output = CMat2;
    fn neg(self) -> CMat2 {
        self.scale_real(-1.0)
    }
}

impl Mul for CMat2 {
    type Output = CMat2;
    fn mul(self, o: CMat2) -> CMat2 {
        mat_mul(&self, &o)
    }
}

impl Mul<CVec2> for CMat2 {
    type Output = CVec2;
    fn mul(self, v: CVec2) -> CVec2 {
        self.mul_vec(&v)
    }
}

/// Standard matrix product `a·b`.
pub fn mat_mul(a: &CMat2, b: &CMat2) -> CMat2 {
    let (x, y) = (&a.m, &b.m);
    CMat2::new(
        x[0][0] * y[0][0] + x[0][1] * y[1][0],
        x[0][0] * y[0][1] + x[0][1] * y[1][1],
        x[1][0] * y[0][0] + x[1][1] * y[1][0],
        x[1][0] * y[0][1] + x[1][1] * y[1][1],
    )
}

/// Conjugate transpose.
pub fn adjoint(a: &CMat2) -> CMat2 {
    a.adjoint()
}

/// Inverse via the adjugate. Fails with [`Error::SingularMatrix`] when
/// `|det| <= SINGULAR_TOL·‖a‖_F²` or the determinant is not finite.
pub fn inverse2(a: &CMat2) -> Result<CMat2> {
    inverse2_with_tol(a, SINGULAR_TOL)
}

pub fn inverse2_with_tol(a: &CMat2, singular_tol: f64) -> Result<CMat2> {
    let det = a.det();
    let scale = a.norm();
    let det_abs = det.norm();
    if !det_abs.is_finite() || det_abs <= singular_tol * scale * scale {
        return Err(Error::SingularMatrix { det_abs });
    }
    let inv_det = det.inv();
    let m = &a.m;
    Ok(CMat2::new(
        m[1][1] * inv_det,
        -m[0][1] * inv_det,
        -m[1][0] * inv_det,
        m[0][0] * inv_det,
    ))
}

/// Spectrum of a 2×2 Hermitian matrix: `λ_minus ≤ λ_plus` with orthonormal eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HermEig {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub v_minus: CVec2,
    pub v_plus: CVec2,
    pub degenerate: bool,
}

/// Eigenvalues of the Hermitian matrix `[[a, b], [b*, d]]` without eigenvectors.
pub(crate) fn eigvals_herm2_parts(a: f64, d: f64, b: C64) -> (f64, f64) {
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = half.hypot(b.norm());
    (mean - r, mean + r)
}

/// Rotate `v` so its largest-magnitude component is real and positive.
/// Ties (within relative 1e-12) resolve to the left port.
fn fix_phase(v: CVec2) -> CVec2 {
    let pivot = if v.r.norm() > v.l.norm() * (1.0 + 1e-12) {
        v.r
    } else {
        v.l
    };
    let mag = pivot.norm();
    if mag == 0.0 {
        return v;
    }
    v.scale(pivot.conj() / mag)
}

/// Eigendecomposition of a Hermitian 2×2 matrix.
///
/// Eigenvectors are unit-norm with the largest-magnitude component real
/// positive. Degenerate spectra (`λ+ − λ− < 1e-12·scale`) return `(e_l, e_r)`.
pub fn eig_herm2(a: &CMat2) -> Result<HermEig> {
    let residual = a.hermiticity_residual();
    if residual > HERMITIAN_TOL * a.norm().max(1.0) {
        return Err(Error::NotHermitian { residual });
    }
    // Average the off-diagonal pair so tiny anti-Hermitian noise cannot bias the result.
    let diag_l = a.m[0][0].re;
    let diag_r = a.m[1][1].re;
    let b = 0.5 * (a.m[0][1] + a.m[1][0].conj());

    let (lambda_minus, lambda_plus) = eigvals_herm2_parts(diag_l, diag_r, b);
    let scale = diag_l.abs().max(diag_r.abs()).max(b.norm());
    if lambda_plus - lambda_minus <= DEGENERACY_TOL * scale || scale == 0.0 {
        return Ok(HermEig {
            lambda_minus,
            lambda_plus,
            v_minus: CVec2::e_l(),
            v_plus: CVec2::e_r(),
            degenerate: true,
        });
    }

    let half = 0.5 * (diag_l - diag_r);
    let r = half.hypot(b.norm());
    // Pick the numerically stable unnormalized eigenvector for λ+.
    let raw_plus = if half >= 0.0 {
        CVec2::new(c(half + r, 0.0), b.conj())
    } else {
        CVec2::new(b, c(r - half, 0.0))
    };
    let v_plus = raw_plus.scale_real(1.0 / raw_plus.norm());
    let v_minus = CVec2::new(-v_plus.r.conj(), v_plus.l.conj());

    Ok(HermEig {
        lambda_minus,
        lambda_plus,
        v_minus: fix_phase(v_minus),
        v_plus: fix_phase(v_plus),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &CMat2, b: &CMat2, tol: f64) -> bool {
        (*a - *b).max_abs() <= tol
    }

    fn vclose(a: &CVec2, b: &CVec2, tol: f64) -> bool {
        (*a - *b).norm() <= tol
    }

    #[test]
    fn identity_and_swap_products() {
        let i = CMat2::identity();
        assert_eq!(mat_mul(&i, &i), i);
        assert_eq!(mat_mul(&CMat2::swap(), &CMat2::swap()), i);
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(adjoint(&CMat2::identity()), CMat2::identity());
        let a = CMat2::new(c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0));
        let expected = CMat2::new(c(0.0, 0.0), c(0.0, 0.0), c(0.0, -1.0), c(0.0, 0.0));
        assert_eq!(adjoint(&a), expected);
        let z = CMat2::new(c(1.0, 2.0), c(-0.3, 0.1), c(4.0, -1.0), c(0.0, 7.0));
        assert_eq!(adjoint(&adjoint(&z)), z);
    }

    #[test]
    fn eig_diagonal() {
        let e = eig_herm2(&CMat2::from_real(-4.0, 0.0, 0.0, 4.0)).unwrap();
        assert_eq!((e.lambda_minus, e.lambda_plus), (-4.0, 4.0));
        // diag(−4, 4)·e_l = −4·e_l
        assert!(vclose(&e.v_minus, &CVec2::e_l(), 0.0));
        assert!(vclose(&e.v_plus, &CVec2::e_r(), 0.0));
    }

    #[test]
    fn eig_pauli_x() {
        let e = eig_herm2(&CMat2::swap()).unwrap();
        assert!((e.lambda_minus + 1.0).abs() < 1e-15);
        assert!((e.lambda_plus - 1.0).abs() < 1e-15);
        assert!(vclose(&e.v_minus, &CVec2::from_real(S2, -S2), 1e-15));
        assert!(vclose(&e.v_plus, &CVec2::from_real(S2, S2), 1e-15));
    }

    #[test]
    fn eig_degenerate_returns_canonical_basis() {
        let e = eig_herm2(&CMat2::from_real(2.5, 0.0, 0.0, 2.5)).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.v_minus, CVec2::e_l());
        assert_eq!(e.v_plus, CVec2::e_r());
        let z = eig_herm2(&CMat2::zero()).unwrap();
        assert_eq!((z.lambda_minus, z.lambda_plus), (0.0, 0.0));
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let a = CMat2::new(c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0));
        assert!(matches!(eig_herm2(&a), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse2(&CMat2::identity()).unwrap(), CMat2::identity());
        let d = CMat2::diag(c(2.0, 0.0), c(0.0, 4.0));
        let inv = inverse2(&d).unwrap();
        assert!(close(&inv, &CMat2::diag(c(0.5, 0.0), c(0.0, -0.25)), 1e-16));
        let sing = CMat2::from_real(1.0, 2.0, 2.0, 4.0);
        match inverse2(&sing) {
            Err(Error::SingularMatrix { det_abs }) => assert_eq!(det_abs, 0.0),
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    fn arb_c64() -> impl Strategy<Value = C64> {
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| c(re, im))
    }

    fn arb_mat() -> impl Strategy<Value = CMat2> {
        (arb_c64(), arb_c64(), arb_c64(), arb_c64()).prop_map(|(a, b, cc, d)| CMat2::new(a, b, cc, d))
    }

    fn arb_herm() -> impl Strategy<Value = CMat2> {
        (-5.0..5.0f64, -5.0..5.0f64, arb_c64())
            .prop_map(|(a, d, b)| CMat2::new(c(a, 0.0), b, b.conj(), c(d, 0.0)))
    }

    proptest! {
        #[test]
        fn hermitian_reconstruction(a in arb_herm()) {
            let e = eig_herm2(&a).unwrap();
            prop_assert!(e.lambda_minus <= e.lambda_plus);
            let outer = |v: &CVec2, l: f64| {
                CMat2::new(v.l * v.l.conj(), v.l * v.r.conj(), v.r * v.l.conj(), v.r * v.r.conj())
                    .scale_real(l)
            };
            let rebuilt = outer(&e.v_minus, e.lambda_minus) + outer(&e.v_plus, e.lambda_plus);
            prop_assert!((a - rebuilt).norm() < 1e-12 * a.norm().max(1e-300));
            prop_assert!((e.v_minus.norm() - 1.0).abs() < 1e-14);
            prop_assert!((e.v_plus.norm() - 1.0).abs() < 1e-14);
            prop_assert!(e.v_minus.dot(&e.v_plus).norm() < 1e-14);
            let residual = (a.mul_vec(&e.v_plus) - e.v_plus.scale_real(e.lambda_plus)).norm();
            prop_assert!(residual < 1e-12 * a.norm().max(1.0));
        }

        #[test]
        fn eig_is_deterministic(a in arb_herm()) {
            let x = eig_herm2(&a).unwrap();
            let y = eig_herm2(&a).unwrap();
            prop_assert_eq!(x.lambda_minus.to_bits(), y.lambda_minus.to_bits());
            prop_assert_eq!(x.v_plus.to_array().map(f64::to_bits), y.v_plus.to_array().map(f64::to_bits));
            // largest component is real and positive
            let pivot = if x.v_plus.r.norm() > x.v_plus.l.norm() * (1.0 + 1e-12) { x.v_plus.r } else { x.v_plus.l };
            prop_assert!(pivot.im == 0.0 && pivot.re > 0.0);
        }

        #[test]
        fn inverse_round_trip(a in arb_mat()) {
            let det = a.det().norm();
            if det > 1e3 * SINGULAR_TOL * a.norm().powi(2) {
                let inv = inverse2(&a).unwrap();
                prop_assert!((a * inv - CMat2::identity()).norm() < 1e-12 * (a.norm() * inv.norm()).max(1.0));
            }
        }

        #[test]
        fn adjoint_reverses_products(a in arb_mat(), b in arb_mat()) {
            let lhs = (a * b).adjoint();
            let rhs = b.adjoint() * a.adjoint();
            prop_assert!(close(&lhs, &rhs, 1e-14));
        }
    }
}
