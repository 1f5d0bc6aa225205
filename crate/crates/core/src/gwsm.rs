//! The Hermitian generator `A_ε(ω) = −iK†∂K/∂ε` (generalized Wigner-Smith
//! matrix) and its spectrum.

use crate::error::{Error, Result};
use crate::resonator::{
    build_model, checked_denominator, coupling_perturbation, is_near_singular, resolvent,
    transfer_k, SystemParams,
};
use crate::smallcomplex::{c, eig_herm2, eigvals_herm2_parts, CMat2, CVec2};

/// Default central-difference step, in units of `γ`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GwsmSpectrum {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub v_minus: CVec2,
    pub v_plus: CVec2,
    pub near_singular: bool,
}

/// Closed-form generator entries `(A_ll, A_rr, A_lr)`; `A_rl = conj(A_lr)`.
fn gwsm_entries(p: &SystemParams, omega: f64) -> Result<(f64, f64, num_complex::Complex64)> {
    let d = checked_denominator(p, omega)?;
    let inv = 1.0 / d.norm_sqr();
    let (g, rho, tau, eps) = (p.gamma(), p.rho(), p.tau(), p.epsilon());
    let zeta = c(omega, 0.5 * g);
    let e2_conj = p.phase2().conj();

    let ll_inner = zeta * (eps * (1.0 + rho * rho)) + e2_conj * rho * (zeta * zeta + eps * eps);
    let a_ll = -2.0 * g * ll_inner.re * inv;
    let a_rr = -2.0 * g * eps * tau * tau * zeta.re * inv;
    let lr_inner = c(eps * eps + zeta.norm_sqr(), 0.0) + e2_conj * zeta * (2.0 * eps * rho);
    let a_lr = p.phase() * lr_inner * (-g * tau * inv);
    Ok((a_ll, a_rr, a_lr))
}

/// `A_ε(ω)` from its closed-form entries. Hermitian by construction.
pub fn gwsm_a(p: &SystemParams, omega: f64) -> Result<CMat2> {
    let (a_ll, a_rr, a_lr) = gwsm_entries(p, omega)?;
    Ok(CMat2::new(c(a_ll, 0.0), a_lr, a_lr.conj(), c(a_rr, 0.0)))
}

/// `A_ε(ω) = −B†R†VRB` evaluated directly from the resolvent.
pub fn gwsm_definition(p: &SystemParams, omega: f64) -> Result<CMat2> {
    let b = build_model(p).b;
    let r = resolvent(p, omega)?;
    Ok(-(b.adjoint() * r.adjoint() * coupling_perturbation() * r * b))
}

/// Central-difference estimate `−iK†(K(ε+h) − K(ε−h))/(2h)`, Hermitized.
pub fn gwsm_from_k_derivative(p: &SystemParams, omega: f64, step: f64) -> Result<CMat2> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParams(format!("finite-difference step must be > 0, got {step}")));
    }
    let eps = p.epsilon();
    let k = transfer_k(p, omega).map_err(to_denominator)?;
    let k_up = transfer_k(&p.with_epsilon(eps + step)?, omega).map_err(to_denominator)?;
    let k_down = transfer_k(&p.with_epsilon(eps - step)?, omega).map_err(to_denominator)?;
    let dk = (k_up - k_down).scale_real(0.5 / step);
    let m = (k.adjoint() * dk).scale(c(0.0, -1.0));
    Ok(m.hermitian_part())
}

fn to_denominator(e: Error) -> Error {
    match e {
        Error::SingularMatrix { det_abs } => Error::SingularDenominator { denom_abs: det_abs },
        other => other,
    }
}

/// `(tr A, det A)` from the closed forms; `det A = −γ²τ²/|D|² ≤ 0`.
pub fn gwsm_trace_det(p: &SystemParams, omega: f64) -> Result<(f64, f64)> {
    let (a_ll, a_rr, _) = gwsm_entries(p, omega)?;
    let d = checked_denominator(p, omega)?;
    let g = p.gamma();
    let det = -(g * g * p.tau() * p.tau()) / d.norm_sqr();
    Ok((a_ll + a_rr, det))
}

/// Eigenvalues `(λ−, λ+)` of `A_ε(ω)` without eigenvectors.
pub fn gwsm_eigenvalues(p: &SystemParams, omega: f64) -> Result<(f64, f64)> {
    let (a_ll, a_rr, a_lr) = gwsm_entries(p, omega)?;
    Ok(eigvals_herm2_parts(a_ll, a_rr, a_lr))
}

pub fn gwsm_spectrum(p: &SystemParams, omega: f64) -> Result<GwsmSpectrum> {
    let a = gwsm_a(p, omega)?;
    let eig = eig_herm2(&a)?;
    Ok(GwsmSpectrum {
        lambda_minus: eig.lambda_minus,
        lambda_plus: eig.lambda_plus,
        v_minus: eig.v_minus,
        v_plus: eig.v_plus,
        near_singular: is_near_singular(p, omega),
    })
}

/// Spectrum on the exceptional surface (`ε = 0`):
/// `λ∓ = −(γ/|ζ|²)(ρx ± √(τ² + ρ²x²))` with `x = Re(e^{2iφ}ζ*/ζ)`.
pub fn lambda0_closed_form(p: &SystemParams, omega: f64) -> Result<(f64, f64)> {
    if p.epsilon() != 0.0 {
        return Err(Error::InvalidParams(format!(
            "closed-form surface spectrum needs epsilon = 0, got {}",
            p.epsilon()
        )));
    }
    let zeta = c(omega, 0.5 * p.gamma());
    let x = (p.phase2() * zeta.conj() / zeta).re;
    let (rho, tau) = (p.rho(), p.tau());
    let root = (tau * tau + rho * rho * x * x).sqrt();
    let pre = -p.gamma() / zeta.norm_sqr();
    Ok((pre * (rho * x + root), pre * (rho * x - root)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

    fn unit(rho: f64, phi: f64, eps: f64) -> SystemParams {
        SystemParams::unit(rho, phi, eps).unwrap()
    }

    fn arb_point() -> impl Strategy<Value = (SystemParams, f64)> {
        (0.5..2.0f64, 0.0..=1.0f64, 0.0..TAU, -1.0..1.0f64, -3.0..3.0f64)
            .prop_map(|(g, r, ph, e, w)| (SystemParams::new(g, r, ph, e * g).unwrap(), w * g))
            .prop_filter("away from poles", |(p, w)| {
                crate::resonator::resolvent_denominator(p, *w).norm() > 0.01 * p.gamma().powi(2)
            })
    }

    #[test]
    fn diabolic_point_spectrum() {
        let p = unit(0.0, 0.0, 0.0);
        let s = gwsm_spectrum(&p, 0.0).unwrap();
        assert!((s.lambda_minus + 4.0).abs() < 1e-12 && (s.lambda_plus - 4.0).abs() < 1e-12);
        let (tr, det) = gwsm_trace_det(&p, 0.0).unwrap();
        assert!(tr.abs() < 1e-14 && (det + 16.0).abs() < 1e-12);
        let fd = gwsm_from_k_derivative(&p, 0.0, 1e-5).unwrap();
        let exact = gwsm_a(&p, 0.0).unwrap();
        assert!((fd - exact).max_abs() < 1e-8);
        assert!(fd[(0, 0)].norm() < 1e-8 && fd[(1, 1)].norm() < 1e-8);
        for w in [-1.5, -0.2, 0.4, 3.0] {
            let s = gwsm_spectrum(&p, w).unwrap();
            let expect = 1.0 / (0.25 + w * w);
            assert!((s.lambda_plus - expect).abs() < 1e-12);
            assert!((s.lambda_minus + expect).abs() < 1e-12);
        }
    }

    #[test]
    fn full_reflection_has_one_nonzero_entry() {
        for (phi, eps, w) in [(0.0, 0.0, 0.3), (FRAC_PI_4, -0.2, -0.7), (1.1, 0.4, 0.0)] {
            let a = gwsm_a(&unit(1.0, phi, eps), w).unwrap();
            assert_eq!(a[(0, 1)], c(0.0, 0.0));
            assert_eq!(a[(1, 1)], c(0.0, 0.0));
            let s = gwsm_spectrum(&unit(1.0, phi, eps), w).unwrap();
            let all = a[(0, 0)].re;
            let expect = if all >= 0.0 { (0.0, all) } else { (all, 0.0) };
            assert!((s.lambda_minus - expect.0).abs() < 1e-14);
            assert!((s.lambda_plus - expect.1).abs() < 1e-14);
            assert_eq!(gwsm_trace_det(&unit(1.0, phi, eps), w).unwrap().1, 0.0);
        }
    }

    #[test]
    fn constant_on_antidiagonal() {
        for k in 0..20 {
            let w = -2.0 + 4.0 * k as f64 / 19.0;
            let a = gwsm_a(&unit(1.0, 0.0, -w), w).unwrap();
            assert!((a[(0, 0)].re - 8.0).abs() < 1e-9, "w = {w}");
        }
    }

    #[test]
    fn surface_landmarks() {
        for rho in [0.0, 0.25, 0.5, 1.0] {
            let (_, plus) = lambda0_closed_form(&unit(rho, 0.0, 0.0), 0.0).unwrap();
            assert!((plus - 4.0 * (1.0 + rho)).abs() < 1e-12);
            let (minus, _) = lambda0_closed_form(&unit(rho, FRAC_PI_2, 0.0), 0.0).unwrap();
            assert!((minus + 4.0 * (1.0 + rho)).abs() < 1e-12);
        }
        let p = unit(1.0, FRAC_PI_4, 0.0);
        let w = 1.0 / 12f64.sqrt();
        // The maximum of A_ll sits on the negative-frequency lobe.
        let (lo, hi) = lambda0_closed_form(&p, -w).unwrap();
        assert!((hi - 27f64.sqrt()).abs() < 1e-12 && lo == 0.0);
        let (lo, hi) = lambda0_closed_form(&p, w).unwrap();
        assert!((lo + 27f64.sqrt()).abs() < 1e-12 && hi == 0.0);
        let fd = gwsm_from_k_derivative(&p, -w, 1e-5).unwrap();
        assert!((fd[(0, 0)].re - 27f64.sqrt()).abs() < 1e-8);
        assert!(lambda0_closed_form(&unit(0.5, 0.0, 0.1), 0.0).is_err());
    }

    #[test]
    fn odd_in_frequency_at_quarter_phase() {
        let p = unit(1.0, FRAC_PI_4, 0.0);
        for w in [0.05, 0.2887, 0.9, 4.0] {
            let a = gwsm_a(&p, w).unwrap()[(0, 0)].re;
            let b = gwsm_a(&p, -w).unwrap()[(0, 0)].re;
            assert!((a + b).abs() < 1e-13 * a.abs().max(1.0));
            let expect = -2.0 * w / (0.25 + w * w).powi(2);
            assert!((a - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn decays_far_from_resonance() {
        for (rho, phi) in [(0.0, 0.0), (0.5, 0.3), (1.0, 0.0), (1.0, FRAC_PI_4)] {
            for w in [-1e3, 1e3] {
                let s = gwsm_spectrum(&unit(rho, phi, 0.0), w).unwrap();
                assert!(s.lambda_plus.abs().max(s.lambda_minus.abs()) < 1e-5 * 4.0);
            }
        }
    }

    #[test]
    fn finite_difference_is_second_order() {
        let p = SystemParams::new(1.2, 0.6, 0.8, 0.15).unwrap();
        let exact = gwsm_a(&p, 0.35).unwrap();
        let e1 = (gwsm_from_k_derivative(&p, 0.35, 2e-2).unwrap() - exact).max_abs();
        let e2 = (gwsm_from_k_derivative(&p, 0.35, 1e-2).unwrap() - exact).max_abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn pole_is_reported() {
        let p = unit(1.0, FRAC_PI_4, -0.5);
        assert!(matches!(gwsm_a(&p, 0.0), Err(Error::SingularDenominator { .. })));
        assert!(matches!(gwsm_from_k_derivative(&p, 0.0, 1e-5), Err(Error::SingularDenominator { .. })));
        let near = gwsm_spectrum(&p, 1e-7).unwrap();
        assert!(near.near_singular);
    }

    proptest! {
        #[test]
        fn three_way_agreement((p, w) in arb_point()) {
            let closed = gwsm_a(&p, w).unwrap();
            let def = gwsm_definition(&p, w).unwrap();
            let fd = gwsm_from_k_derivative(&p, w, 1e-5 * p.gamma()).unwrap();
            let scale = closed.max_abs().max(1.0 / p.gamma());
            prop_assert!(closed.hermiticity_residual() < 1e-12 * scale);
            prop_assert!((closed - def).max_abs() < 1e-10 * scale);
            prop_assert!((closed - fd).max_abs() < 1e-8 * scale);
        }

        #[test]
        fn trace_det_consistency((p, w) in arb_point()) {
            let a = gwsm_a(&p, w).unwrap();
            let (tr, det) = gwsm_trace_det(&p, w).unwrap();
            let scale = a.max_abs().max(1e-300);
            prop_assert!((tr - a.trace().re).abs() < 1e-10 * scale);
            prop_assert!((det - a.det().re).abs() < 1e-10 * scale * scale);
            prop_assert!(det <= 0.0);
            let s = gwsm_spectrum(&p, w).unwrap();
            let disc = (tr * tr - 4.0 * det).sqrt();
            prop_assert!((s.lambda_plus - 0.5 * (tr + disc)).abs() < 1e-10 * scale);
            prop_assert!((s.lambda_minus - 0.5 * (tr - disc)).abs() < 1e-10 * scale);
            prop_assert!(s.lambda_minus <= 0.0 + 1e-12 * scale && s.lambda_plus >= -1e-12 * scale);
        }

        #[test]
        fn surface_bound(rho in 0.0..=1.0f64, phi in 0.0..TAU, w in -5.0..5.0f64) {
            let p = unit(rho, phi, 0.0);
            let (lo, hi) = lambda0_closed_form(&p, w).unwrap();
            let s = gwsm_spectrum(&p, w).unwrap();
            prop_assert!((lo - s.lambda_minus).abs() < 1e-10);
            prop_assert!((hi - s.lambda_plus).abs() < 1e-10);
            let bound = 4.0 * (1.0 + rho) + 1e-9;
            prop_assert!(lo.abs() <= bound && hi.abs() <= bound);
        }
    }
}
