//! Quantum Fisher information for coherent and NOON probes, from the
//! generator `A_ε` and, independently, from the small-`δε` limit of the
//! Bures distance between output states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwsm::gwsm_a;
use crate::optimize::optimize_spectrum_default;
use crate::resonator::{is_near_singular, transfer_k, transfer_k_increment, SystemParams};
use crate::smallcomplex::C64;
use crate::states::{
    apply_matrix_field, coherent_probe_from_optimum, inner, noon_probe_from_optimum, ModeKind, ModeState,
    NoonSpec,
};

/// Default `δε` steps for the fidelity-limit oracles, in units of `γ`.
pub const DEFAULT_FIDELITY_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QfiMethod {
    Generator,
    FidelityLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateKind {
    Coherent { photon_number: f64 },
    Noon { n_photons: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probe {
    Coherent(ModeState),
    Noon(NoonSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfiResult {
    pub value: f64,
    pub method: QfiMethod,
    pub probe: Probe,
    pub omega_points: Vec<f64>,
    pub epsilon_at: f64,
    pub near_singular: bool,
}

fn any_near_singular(p: &SystemParams, omegas: &[f64]) -> bool {
    omegas.iter().any(|&w| is_near_singular(p, w))
}

fn require_coherent(beta: &ModeState) -> Result<()> {
    if beta.kind() != ModeKind::CoherentAmplitude {
        return Err(Error::InvalidState("expected a coherent amplitude".into()));
    }
    Ok(())
}

/// `I = 4⟨β, A²β⟩ = 4‖Aβ‖²`.
pub fn coherent_qfi(p: &SystemParams, beta: &ModeState) -> Result<QfiResult> {
    require_coherent(beta)?;
    let a_beta = apply_matrix_field(|w| gwsm_a(p, w), beta)?;
    let omegas = beta.frequencies();
    Ok(QfiResult {
        value: 4.0 * a_beta.norm_sqr(),
        method: QfiMethod::Generator,
        probe: Probe::Coherent(beta.clone()),
        near_singular: any_near_singular(p, &omegas),
        omega_points: omegas,
        epsilon_at: p.epsilon(),
    })
}

/// `ln F` between the output coherent states at `ε` and `ε + δ`:
/// `−2‖β‖² + 2Re⟨β, K†_ε K_{ε+δ} β⟩`, written as `2Re⟨Kβ, (K_{ε+δ} − K_ε)β⟩`.
fn coherent_log_fidelity(p: &SystemParams, beta: &ModeState, delta: f64) -> Result<f64> {
    let mut acc = C64::default();
    for comp in beta.components() {
        let k = transfer_k(p, comp.omega)?;
        let dk = transfer_k_increment(p, comp.omega, delta)?;
        acc += k.mul_vec(&comp.port).dot(&dk.mul_vec(&comp.port));
    }
    Ok(2.0 * acc.re)
}

/// Fidelity `|⟨β_ε|β_{ε+δ}⟩|²` of the output coherent states.
pub fn coherent_fidelity(p: &SystemParams, beta: &ModeState, delta: f64) -> Result<f64> {
    require_coherent(beta)?;
    Ok(coherent_log_fidelity(p, beta, delta)?.exp())
}

/// Fidelity `exp(−‖a − b‖²)` between two coherent states.
pub fn coherent_state_fidelity(a: &ModeState, b: &ModeState) -> f64 {
    let dist = a.norm_sqr() + b.norm_sqr() - 2.0 * inner(a, b).re;
    (-dist.max(0.0)).exp()
}

/// Neville extrapolation of `values(steps)` to step zero.
pub fn richardson(steps: &[f64], values: &[f64]) -> Result<f64> {
    if steps.is_empty() || steps.len() != values.len() {
        return Err(Error::InvalidParams("extrapolation needs matching, non-empty steps and values".into()));
    }
    let mut table = values.to_vec();
    let n = steps.len();
    for level in 1..n {
        for i in 0..n - level {
            let (hi, hj) = (steps[i], steps[i + level]);
            if hi == hj {
                return Err(Error::InvalidParams("extrapolation steps must be distinct".into()));
            }
            table[i] = (hj * table[i] - hi * table[i + 1]) / (hj - hi);
        }
    }
    Ok(table[0])
}

fn validate_steps(steps: &[f64]) -> Result<()> {
    if steps.is_empty() || steps.iter().any(|s| !(s.is_finite() && *s != 0.0)) {
        return Err(Error::InvalidParams("fidelity steps must be finite and non-zero".into()));
    }
    Ok(())
}

/// `4 lim d_B²/δ²` with `d_B² = 2(1 − √F)`, extrapolated over `steps` (units of `γ`).
pub fn coherent_qfi_fidelity_oracle(p: &SystemParams, beta: &ModeState, steps: &[f64]) -> Result<QfiResult> {
    require_coherent(beta)?;
    validate_steps(steps)?;
    let g = p.gamma();
    let mut hs = Vec::with_capacity(steps.len());
    let mut qs = Vec::with_capacity(steps.len());
    for &s in steps {
        let h = s * g;
        let log_f = coherent_log_fidelity(p, beta, h)?;
        let bures_sq = -2.0 * (0.5 * log_f).exp_m1();
        hs.push(h);
        qs.push(4.0 * bures_sq / (h * h));
    }
    let omegas = beta.frequencies();
    Ok(QfiResult {
        value: richardson(&hs, &qs)?,
        method: QfiMethod::FidelityLimit,
        probe: Probe::Coherent(beta.clone()),
        near_singular: any_near_singular(p, &omegas),
        omega_points: omegas,
        epsilon_at: p.epsilon(),
    })
}

fn noon_frequencies(spec: &NoonSpec) -> Vec<f64> {
    let mut out: Vec<f64> = spec.modes().iter().flat_map(|m| m.frequencies()).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `½Σ_nm s_nm^N`, the squared norm of `(ψ₁^⊗N + ψ₂^⊗N)/√2`.
fn noon_norm_sqr(spec: &NoonSpec) -> f64 {
    let n = spec.n_photons() as i32;
    let modes = spec.modes();
    let mut acc = C64::default();
    for a in modes {
        for b in modes {
            acc += inner(a, b).powi(n);
        }
    }
    0.5 * acc.re
}

/// `(⟨A_tot⟩, ⟨A_tot²⟩)` under the normalized NOON state, from single-particle
/// matrix elements and overlap powers.
pub fn noon_moments(p: &SystemParams, spec: &NoonSpec) -> Result<(f64, f64)> {
    let n = spec.n_photons() as i32;
    let nf = n as f64;
    let modes = spec.modes();
    let applied: Vec<ModeState> = modes
        .iter()
        .map(|m| apply_matrix_field(|w| gwsm_a(p, w), m))
        .collect::<Result<_>>()?;
    let mut first = C64::default();
    let mut second = C64::default();
    for (i, bra) in modes.iter().enumerate() {
        for (j, ket) in modes.iter().enumerate() {
            let s = inner(bra, ket);
            let a = inner(bra, &applied[j]);
            let b = inner(&applied[i], &applied[j]);
            first += a * s.powi(n - 1) * nf;
            second += b * s.powi(n - 1) * nf;
            if n >= 2 {
                second += a * a * s.powi(n - 2) * (nf * (nf - 1.0));
            }
        }
    }
    let norm = noon_norm_sqr(spec);
    Ok((0.5 * first.re / norm, 0.5 * second.re / norm))
}

/// `I = 4·Var(A_tot)` for the NOON probe.
pub fn noon_qfi(p: &SystemParams, spec: &NoonSpec) -> Result<QfiResult> {
    let (mean, second) = noon_moments(p, spec)?;
    let omegas = noon_frequencies(spec);
    Ok(QfiResult {
        value: 4.0 * (second - mean * mean).max(0.0),
        method: QfiMethod::Generator,
        probe: Probe::Noon(spec.clone()),
        near_singular: any_near_singular(p, &omegas),
        omega_points: omegas,
        epsilon_at: p.epsilon(),
    })
}

/// `⟨Ψ_ε|Ψ_{ε+δ}⟩ − 1`, expanded binomially so the small difference is computed directly.
fn noon_overlap_minus_one(p: &SystemParams, spec: &NoonSpec, delta: f64) -> Result<C64> {
    let n = spec.n_photons();
    let modes = spec.modes();
    let out: Vec<ModeState> = modes
        .iter()
        .map(|m| apply_matrix_field(|w| transfer_k(p, w), m))
        .collect::<Result<_>>()?;
    let inc: Vec<ModeState> = modes
        .iter()
        .map(|m| apply_matrix_field(|w| transfer_k_increment(p, w, delta), m))
        .collect::<Result<_>>()?;
    let mut acc = C64::default();
    for (i, bra) in modes.iter().enumerate() {
        for (j, ket) in modes.iter().enumerate() {
            let s = inner(bra, ket);
            let e = inner(&out[i], &inc[j]);
            for k in 1..=n {
                acc += s.powi((n - k) as i32) * e.powi(k as i32) * binomial(n, k);
            }
        }
    }
    Ok(acc * (0.5 / noon_norm_sqr(spec)))
}

/// `⟨Ψ_ε|Ψ_{ε+δ}⟩ = ½Σ_nm ⟨ψ_n, K†_ε K_{ε+δ} ψ_m⟩^N`, normalized so `δ = 0` gives 1.
pub fn noon_overlap_oracle(p: &SystemParams, spec: &NoonSpec, delta: f64) -> Result<C64> {
    Ok(C64::new(1.0, 0.0) + noon_overlap_minus_one(p, spec, delta)?)
}

/// Bures-limit NOON QFI `8 lim (1 − |⟨Ψ_ε|Ψ_{ε+δ}⟩|)/δ²`, extrapolated over `steps` (units of `γ`).
pub fn noon_qfi_fidelity_oracle(p: &SystemParams, spec: &NoonSpec, steps: &[f64]) -> Result<QfiResult> {
    validate_steps(steps)?;
    let g = p.gamma();
    let mut hs = Vec::with_capacity(steps.len());
    let mut qs = Vec::with_capacity(steps.len());
    for &s in steps {
        let h = s * g;
        let u = noon_overlap_minus_one(p, spec, h)?;
        let one_minus_sq = -(2.0 * u.re + u.norm_sqr());
        let mag = (C64::new(1.0, 0.0) + u).norm();
        hs.push(h);
        qs.push(8.0 * one_minus_sq / (1.0 + mag) / (h * h));
    }
    let omegas = noon_frequencies(spec);
    Ok(QfiResult {
        value: richardson(&hs, &qs)?,
        method: QfiMethod::FidelityLimit,
        probe: Probe::Noon(spec.clone()),
        near_singular: any_near_singular(p, &omegas),
        omega_points: omegas,
        epsilon_at: p.epsilon(),
    })
}

/// Frequency-optimized QFI at cross-coupling `epsilon` (absolute units):
/// `4λ_abs²·n̄` for coherent probes and `N²(λ_max − λ_min)²` for NOON probes.
pub fn oqfi_value(p: &SystemParams, state: StateKind, epsilon: f64) -> Result<QfiResult> {
    let p = p.with_epsilon(epsilon)?;
    let opt = optimize_spectrum_default(&p)?;
    let mut result = match state {
        StateKind::Coherent { photon_number } => {
            let probe = coherent_probe_from_optimum(&p, &opt, photon_number)?;
            coherent_qfi(&p, &probe)?
        }
        StateKind::Noon { n_photons } => {
            let spec = noon_probe_from_optimum(&p, &opt, n_photons)?;
            noon_qfi(&p, &spec)?
        }
    };
    result.near_singular |= opt.near_singular;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallcomplex::{c, CMat2, CVec2};
    use crate::states::{optimal_coherent_probe, optimal_noon_probe, ModeComponent};
    use std::f64::consts::{FRAC_PI_4, TAU};

    fn unit(rho: f64, phi: f64, eps: f64) -> SystemParams {
        SystemParams::unit(rho, phi, eps).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn coherent_headlines() {
        let probe = optimal_coherent_probe(&unit(0.0, 0.0, 0.0), 2.0).unwrap();
        assert!((coherent_qfi(&unit(0.0, 0.0, 0.0), &probe).unwrap().value - 128.0).abs() < 1e-9);
        let p = unit(1.0, 0.0, 0.0);
        let probe = optimal_coherent_probe(&p, 2.0).unwrap();
        let gen = coherent_qfi(&p, &probe).unwrap();
        assert!((gen.value - 512.0).abs() < 1e-9);
        let fid = coherent_qfi_fidelity_oracle(&p, &probe, &DEFAULT_FIDELITY_STEPS).unwrap();
        assert!(rel(fid.value, gen.value) < 1e-6);
        let zero = optimal_coherent_probe(&p, 0.0).unwrap();
        assert_eq!(coherent_qfi(&p, &zero).unwrap().value, 0.0);
    }

    #[test]
    fn coherent_bound_and_linearity() {
        let p = unit(0.6, 0.9, 0.0);
        let opt = optimize_spectrum_default(&p).unwrap();
        let unit_probe = optimal_coherent_probe(&p, 1.0).unwrap();
        let base = coherent_qfi(&p, &unit_probe).unwrap().value;
        assert!((base - 4.0 * opt.lambda_abs.powi(2)).abs() < 1e-9 * base);
        for nbar in [0.5, 3.0, 7.25] {
            let v = coherent_qfi(&p, &optimal_coherent_probe(&p, nbar).unwrap()).unwrap().value;
            assert!(rel(v, nbar * base) < 1e-12);
        }
        let other = ModeState::coherent(vec![ModeComponent::new(0.3, CVec2::new(c(0.2, 0.5), c(-0.7, 0.1)))]).unwrap();
        let v = coherent_qfi(&p, &other).unwrap().value;
        assert!(v <= 4.0 * opt.lambda_abs.powi(2) * other.norm_sqr() + 1e-9);
    }

    #[test]
    fn fidelity_basics() {
        let p = unit(0.4, 1.0, 0.1);
        let beta = ModeState::coherent(vec![ModeComponent::new(0.2, CVec2::from_real(1.0, -0.5))]).unwrap();
        assert_eq!(coherent_fidelity(&p, &beta, 0.0).unwrap(), 1.0);
        let u = CMat2::new(c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.8), c(0.6, 0.0));
        let q = p.with_epsilon(p.epsilon() + 0.13).unwrap();
        let a = apply_matrix_field(|w| transfer_k(&p, w), &beta).unwrap();
        let b = apply_matrix_field(|w| transfer_k(&q, w), &beta).unwrap();
        let ua = apply_matrix_field(|_| Ok(u), &a).unwrap();
        let ub = apply_matrix_field(|_| Ok(u), &b).unwrap();
        let f1 = coherent_state_fidelity(&a, &b);
        let f2 = coherent_state_fidelity(&ua, &ub);
        assert!((f1 - f2).abs() < 1e-14);
        let direct = coherent_fidelity(&p, &beta, 0.13).unwrap();
        assert!((direct - f1).abs() < 1e-12);
    }

    #[test]
    fn richardson_is_exact_for_quadratics() {
        let steps = [0.4, 0.2, 0.1];
        let vals: Vec<f64> = steps.iter().map(|h| 3.0 - 2.0 * h + 5.0 * h * h).collect();
        assert!((richardson(&steps, &vals).unwrap() - 3.0).abs() < 1e-13);
        assert!(richardson(&[0.1, 0.1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn noon_headlines() {
        let p = unit(1.0, FRAC_PI_4, 0.0);
        let spec = optimal_noon_probe(&p, 3).unwrap();
        assert!((noon_qfi(&p, &spec).unwrap().value - 972.0).abs() < 1e-7);
        let p0 = unit(0.0, 0.0, 0.0);
        let spec0 = optimal_noon_probe(&p0, 3).unwrap();
        assert!((noon_qfi(&p0, &spec0).unwrap().value - 576.0).abs() < 1e-8);
    }

    #[test]
    fn noon_heisenberg_scaling() {
        let p = unit(0.7, 0.5, 0.05);
        let one = noon_qfi(&p, &optimal_noon_probe(&p, 1).unwrap()).unwrap().value;
        let opt = optimize_spectrum_default(&p).unwrap();
        assert!(rel(one, opt.spread().powi(2)) < 1e-12);
        for n in 2..=6u32 {
            let v = noon_qfi(&p, &optimal_noon_probe(&p, n).unwrap()).unwrap().value;
            assert!(rel(v / one, (n * n) as f64) < 1e-12);
        }
    }

    #[test]
    fn noon_overlap_properties() {
        let p = unit(1.0, FRAC_PI_4, 0.0);
        let spec = optimal_noon_probe(&p, 2).unwrap();
        assert_eq!(noon_overlap_oracle(&p, &spec, 0.0).unwrap(), c(1.0, 0.0));
        let o = noon_overlap_oracle(&p, &spec, 1e-3).unwrap();
        assert!(o.norm() <= 1.0);
        let raw = 4.0 * (1.0 - o.norm_sqr()) / 1e-6;
        // the single-step estimate carries an O(δ) bias of about 0.1%
        assert!(rel(raw, 432.0) < 2e-3);
        let fid = noon_qfi_fidelity_oracle(&p, &spec, &DEFAULT_FIDELITY_STEPS).unwrap();
        assert!(rel(fid.value, 432.0) < 1e-6);
        for d in [0.5, -0.2, 0.05] {
            assert!(noon_overlap_oracle(&p, &spec, d).unwrap().norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn noon_general_modes_match_oracle() {
        // two-frequency modes with non-trivial overlap structure
        let p = SystemParams::new(1.3, 0.45, 2.2, 0.12).unwrap();
        let s = 0.5f64.sqrt();
        let psi1 = ModeState::single_photon(vec![
            ModeComponent::new(-0.4, CVec2::new(c(0.5, 0.1), c(0.2, -0.3)).scale_real(s / CVec2::new(c(0.5, 0.1), c(0.2, -0.3)).norm())),
            ModeComponent::new(0.3, CVec2::from_real(s, 0.0)),
        ])
        .unwrap();
        let psi2 = ModeState::single_photon(vec![ModeComponent::new(0.3, CVec2::from_real(0.0, 1.0))]).unwrap();
        for n in 1..=4 {
            let spec = NoonSpec::new(psi1.clone(), psi2.clone(), n).unwrap();
            let gen = noon_qfi(&p, &spec).unwrap().value;
            let fid = noon_qfi_fidelity_oracle(&p, &spec, &DEFAULT_FIDELITY_STEPS).unwrap().value;
            assert!(rel(fid, gen) < 1e-6, "N = {n}: {fid} vs {gen}");
            let opt = optimize_spectrum_default(&p).unwrap();
            assert!(gen <= (n * n) as f64 * opt.spread().powi(2) + 1e-9);
        }
    }

    #[test]
    fn oqfi_headlines() {
        let v = oqfi_value(&unit(1.0, 0.0, 0.0), StateKind::Coherent { photon_number: 3.0 }, 0.0).unwrap();
        assert!((v.value - 768.0).abs() < 1e-8);
        let v = oqfi_value(&unit(1.0, FRAC_PI_4, 0.0), StateKind::Noon { n_photons: 2 }, 0.0).unwrap();
        assert!((v.value - 432.0).abs() < 1e-7);
        for n in 1..=3u32 {
            let v = oqfi_value(&unit(1.0, 0.0, 0.0), StateKind::Noon { n_photons: n }, 0.0).unwrap();
            assert!(rel(v.value, 81.0 * (n * n) as f64) < 1e-9);
        }
    }

    #[test]
    fn random_coherent_oracle_agreement() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let p = SystemParams::new(0.5 + 1.5 * next(), next(), TAU * next(), next() - 0.5).unwrap();
            let w = 4.0 * next() - 2.0;
            if crate::resonator::resolvent_denominator(&p, w).norm() < 0.05 {
                continue;
            }
            let beta = ModeState::coherent(vec![ModeComponent::new(
                w,
                CVec2::new(c(next() - 0.5, next() - 0.5), c(next() - 0.5, next() - 0.5)),
            )])
            .unwrap();
            let gen = coherent_qfi(&p, &beta).unwrap().value;
            let fid = coherent_qfi_fidelity_oracle(&p, &beta, &DEFAULT_FIDELITY_STEPS).unwrap().value;
            assert!(rel(fid, gen) < 1e-6, "{fid} vs {gen}");
        }
    }

    #[test]
    fn result_json_round_trip() {
        let p = unit(1.0, FRAC_PI_4, 0.0);
        for state in [StateKind::Coherent { photon_number: 2.0 }, StateKind::Noon { n_photons: 2 }] {
            let r = oqfi_value(&p, state, 0.0).unwrap();
            let s = serde_json::to_string(&r).unwrap();
            let back: QfiResult = serde_json::from_str(&s).unwrap();
            assert_eq!(back, r);
        }
        assert!(coherent_qfi(&p, optimal_noon_probe(&p, 1).unwrap().psi1()).is_err());
    }
}
