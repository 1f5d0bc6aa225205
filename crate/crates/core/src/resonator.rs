//! Physical model: parameters, beam splitter, input coupling, the
//! non-Hermitian Hamiltonian, its eigenfrequencies, the resolvent and the
//! frequency-domain transfer matrix `K_ε(ω)`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smallcomplex::{c, inverse2, CMat2, C64, SINGULAR_TOL};

/// Physical parameter bundle.
///
/// `phi` is stored canonicalized to `[0, 2π)` and `tau = √(1 − rho²)` is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SystemParams {
    gamma: f64,
    rho: f64,
    tau: f64,
    phi: f64,
    epsilon: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    gamma: f64,
    rho: f64,
    phi: f64,
    epsilon: f64,
}

impl TryFrom<RawParams> for SystemParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        SystemParams::new(r.gamma, r.rho, r.phi, r.epsilon)
    }
}

impl From<SystemParams> for RawParams {
    fn from(p: SystemParams) -> Self {
        RawParams {
            gamma: p.gamma,
            rho: p.rho,
            phi: p.phi,
            epsilon: p.epsilon,
        }
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            gamma: 1.0,
            rho: 0.0,
            tau: 1.0,
            phi: 0.0,
            epsilon: 0.0,
        }
    }
}

impl SystemParams {
    pub fn new(gamma: f64, rho: f64, phi: f64, epsilon: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be finite and > 0, got {gamma}")));
        }
        if !(rho.is_finite() && (0.0..=1.0).contains(&rho)) {
            return Err(Error::InvalidParams(format!("rho must lie in [0, 1], got {rho}")));
        }
        if !phi.is_finite() {
            return Err(Error::InvalidParams(format!("phi must be finite, got {phi}")));
        }
        if !epsilon.is_finite() {
            return Err(Error::InvalidParams(format!("epsilon must be finite, got {epsilon}")));
        }
        let mut phi = phi.rem_euclid(TAU);
        // rem_euclid can round up to exactly 2π for tiny negative inputs
        if phi >= TAU {
            phi = 0.0;
        }
        Ok(SystemParams {
            gamma,
            rho,
            tau: (1.0 - rho * rho).max(0.0).sqrt(),
            phi,
            epsilon,
        })
    }

    /// Unit decay rate (`γ = 1`).
    pub fn unit(rho: f64, phi: f64, epsilon: f64) -> Result<Self> {
        Self::new(1.0, rho, phi, epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.gamma, self.rho, self.phi, epsilon)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn phi(&self) -> f64 {
        self.phi
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `e^{iφ}`.
    pub fn phase(&self) -> C64 {
        C64::from_polar(1.0, self.phi)
    }

    /// `e^{2iφ}`.
    pub fn phase2(&self) -> C64 {
        C64::from_polar(1.0, 2.0 * self.phi)
    }
}

/// The constant matrices of the model at one parameter point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelMatrices {
    /// Beam splitter.
    pub s: CMat2,
    /// Input coupling.
    pub b: CMat2,
    /// Non-Hermitian Hamiltonian `H̃_ε`.
    pub h_tilde: CMat2,
    /// Hermitian part with `h_tilde = h_eff − (i/2)·b·b†`.
    pub h_eff: CMat2,
}

impl ModelMatrices {
    /// `‖S†S − I‖_F`.
    pub fn unitarity_residual(&self) -> f64 {
        self.s.unitarity_residual()
    }

    /// `‖Im H̃ + ½BB†‖_F` with `Im` the matrix imaginary part.
    pub fn dissipation_residual(&self) -> f64 {
        let bb = self.b * self.b.adjoint();
        (self.h_tilde.imag_part() + bb.scale_real(0.5)).norm()
    }

    /// `‖H̃ − (H_eff − (i/2)BB†)‖_F`.
    pub fn decomposition_residual(&self) -> f64 {
        let bb = self.b * self.b.adjoint();
        (self.h_tilde - (self.h_eff - bb.scale(c(0.0, 0.5)))).norm()
    }
}

/// The symmetric coupling perturbation multiplying `ε` in `H̃_ε`.
pub fn coupling_perturbation() -> CMat2 {
    CMat2::swap()
}

pub fn beam_splitter(p: &SystemParams) -> CMat2 {
    let e1 = p.phase();
    let e2 = p.phase2();
    CMat2::new(e2 * p.rho, e1 * p.tau, e1 * p.tau, c(-p.rho, 0.0))
}

pub fn input_coupling(p: &SystemParams) -> CMat2 {
    let g = p.gamma.sqrt();
    CMat2::new(c(g, 0.0), c(0.0, 0.0), p.phase2() * (g * p.rho), p.phase() * (g * p.tau))
}

pub fn h_tilde(p: &SystemParams) -> CMat2 {
    let half_loss = c(0.0, -0.5 * p.gamma);
    let eps = c(p.epsilon, 0.0);
    let feedback = c(0.0, -p.gamma * p.rho) * p.phase2();
    CMat2::new(half_loss, eps, eps + feedback, half_loss)
}

pub fn h_eff(p: &SystemParams) -> CMat2 {
    let eps = c(p.epsilon, 0.0);
    let half = 0.5 * p.gamma * p.rho;
    let upper = eps + c(0.0, half) * p.phase2().conj();
    let lower = eps + c(0.0, -half) * p.phase2();
    CMat2::new(c(0.0, 0.0), upper, lower, c(0.0, 0.0))
}

pub fn build_model(p: &SystemParams) -> ModelMatrices {
    ModelMatrices {
        s: beam_splitter(p),
        b: input_coupling(p),
        h_tilde: h_tilde(p),
        h_eff: h_eff(p),
    }
}

/// Complex eigenfrequencies `(Ω+, Ω−)` of `H̃_ε` on the principal square-root branch.
pub fn omega_eigenvalues(p: &SystemParams) -> (C64, C64) {
    let eps = p.epsilon;
    let mut disc = c(eps * eps, 0.0) - c(0.0, eps * p.gamma * p.rho) * p.phase2();
    // Normalize −0.0 so the negative real axis maps to +i·√|·|.
    disc.im += 0.0;
    let root = disc.sqrt();
    let centre = c(0.0, -0.5 * p.gamma);
    (centre + root, centre - root)
}

/// `det(H̃_ε − ωI) = ζ² − ε(ε − iγρe^{2iφ})` with `ζ = ω + iγ/2`.
pub fn resolvent_denominator(p: &SystemParams, omega: f64) -> C64 {
    let zeta = c(omega, 0.5 * p.gamma);
    let eps = p.epsilon;
    zeta * zeta - (c(eps, 0.0) - c(0.0, p.gamma * p.rho) * p.phase2()) * eps
}

/// `H̃_ε − ωI`.
pub fn shifted_hamiltonian(p: &SystemParams, omega: f64) -> CMat2 {
    h_tilde(p) - CMat2::identity().scale_real(omega)
}

/// Returns the resolvent denominator, or [`Error::SingularDenominator`] when it
/// vanishes relative to the size of `H̃ − ωI` (same threshold as [`inverse2`]).
pub fn checked_denominator(p: &SystemParams, omega: f64) -> Result<C64> {
    let d = resolvent_denominator(p, omega);
    let scale = shifted_hamiltonian(p, omega).norm();
    if !d.is_finite() || d.norm() <= SINGULAR_TOL * scale * scale {
        return Err(Error::SingularDenominator { denom_abs: d.norm() });
    }
    Ok(d)
}

/// `|det(H̃ − ωI)|² < 1e−12·γ⁴`: values are still returned but are ill-conditioned.
pub fn is_near_singular(p: &SystemParams, omega: f64) -> bool {
    resolvent_denominator(p, omega).norm_sqr() < NEAR_SINGULAR_TOL * p.gamma.powi(4)
}

pub const NEAR_SINGULAR_TOL: f64 = 1e-12;

/// `R_ε(ω) = (H̃_ε − ωI)⁻¹`.
pub fn resolvent(p: &SystemParams, omega: f64) -> Result<CMat2> {
    inverse2(&shifted_hamiltonian(p, omega))
}

/// `K_ε(ω) = S·(I + i·B†·R_ε(ω)·B)`, evaluated through the resolvent.
pub fn transfer_k(p: &SystemParams, omega: f64) -> Result<CMat2> {
    let model = build_model(p);
    let r = resolvent(p, omega)?;
    let inner = model.b.adjoint() * r * model.b;
    Ok(model.s * (CMat2::identity() + inner.scale(c(0.0, 1.0))))
}

/// `K_ε(ω)` assembled entry by entry from its rational closed form.
pub fn transfer_k_closed_form(p: &SystemParams, omega: f64) -> Result<CMat2> {
    let d = checked_denominator(p, omega)?;
    let (g, rho, tau, eps) = (p.gamma, p.rho, p.tau, p.epsilon);
    let e1 = p.phase();
    let e2 = p.phase2();
    let minus_ig_over_d = c(0.0, -g) / d;

    let k_ll = minus_ig_over_d * (c(eps, 0.0) * (c(1.0, 0.0) + e2 * e2 * (rho * rho)) + e2 * (2.0 * rho * omega))
        + e2 * rho;
    let k_lr = minus_ig_over_d * e1 * tau * (c(omega, 0.5 * g) + e2 * (eps * rho)) + e1 * tau;
    let k_rr = minus_ig_over_d * e2 * (eps * tau * tau) - rho;
    Ok(CMat2::new(k_ll, k_lr, k_lr, k_rr))
}

/// Exact increment `K_{ε+δ}(ω) − K_ε(ω) = −iδ·S·B†·R_ε·V·R_{ε+δ}·B`.
///
/// Free of the cancellation a direct subtraction suffers for small `δ`.
pub fn transfer_k_increment(p: &SystemParams, omega: f64, delta: f64) -> Result<CMat2> {
    let model = build_model(p);
    let r0 = resolvent(p, omega)?;
    let r1 = resolvent(&p.with_epsilon(p.epsilon + delta)?, omega)?;
    let chain = model.b.adjoint() * r0 * coupling_perturbation() * r1 * model.b;
    Ok(model.s * chain.scale(c(0.0, -delta)))
}
