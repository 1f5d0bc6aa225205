//! Measurement models for the two probe families, their classical Fisher
//! information, and seeded Monte Carlo checks of the Cramér-Rao bound.
//!
//! Coherent probes are read out by balanced homodyne detection against a
//! strong local oscillator; the difference signal is modelled directly as a
//! normal variable. NOON probes are read out by two-outcome N-photon counting
//! whose probabilities depend on the phase of `K_ll`.

use std::f64::consts::FRAC_PI_4;
use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwsm::gwsm_a;
use crate::qfi::{coherent_qfi, noon_qfi};
use crate::resonator::{transfer_k, SystemParams};
use crate::smallcomplex::{c, C64};
use crate::states::{apply_matrix_field, inner, optimal_noon_probe, ModeKind, ModeState, NoonSpec};

/// Trials drawn from one RNG stream. Fixed so reports do not depend on the worker count.
const BLOCK: u64 = 8192;

/// LO-to-probe photon ratio below which the normal model is questionable.
pub const LO_RATIO_WARN: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HomodyneConfig {
    params: SystemParams,
    probe: ModeState,
    lo: ModeState,
}

impl HomodyneConfig {
    /// `params.epsilon()` is the nominal operating point.
    pub fn new(params: SystemParams, probe: ModeState, lo: ModeState) -> Result<Self> {
        for s in [&probe, &lo] {
            if s.kind() != ModeKind::CoherentAmplitude {
                return Err(Error::InvalidState("homodyne probe and LO must be coherent amplitudes".into()));
            }
        }
        let ratio = lo.norm_sqr() / probe.norm_sqr();
        if ratio < LO_RATIO_WARN {
            warn!("local oscillator is only {ratio:.3e} times stronger than the probe; the normal model may be inaccurate");
        }
        Ok(Self { params, probe, lo })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }
    pub fn probe(&self) -> &ModeState {
        &self.probe
    }
    pub fn lo(&self) -> &ModeState {
        &self.lo
    }
    pub fn epsilon_nominal(&self) -> f64 {
        self.params.epsilon()
    }

    /// Mean difference signal `μ(ε) = 2Im⟨α, K_ε β⟩`.
    pub fn mean_signal(&self, epsilon: f64) -> Result<f64> {
        let p = self.params.with_epsilon(epsilon)?;
        let out = apply_matrix_field(|w| transfer_k(&p, w), &self.probe)?;
        Ok(2.0 * inner(&self.lo, &out).im)
    }

    /// `dμ/dε = 2Re⟨K†α, Aβ⟩` at the nominal point.
    pub fn signal_slope(&self) -> Result<f64> {
        let p = &self.params;
        let a_beta = apply_matrix_field(|w| gwsm_a(p, w), &self.probe)?;
        let k_a_beta = apply_matrix_field(|w| transfer_k(p, w), &a_beta)?;
        Ok(2.0 * inner(&self.lo, &k_a_beta).re)
    }

    /// Shot-noise variance `‖α‖² + ‖β‖²`.
    pub fn variance(&self) -> f64 {
        self.lo.norm_sqr() + self.probe.norm_sqr()
    }
}

/// `I = (dμ/dε)²/σ²`.
pub fn homodyne_fisher(cfg: &HomodyneConfig) -> Result<f64> {
    let slope = cfg.signal_slope()?;
    Ok(slope * slope / cfg.variance())
}

/// LO matched to the output probe: `α = √n_lo·K_ε β/‖β‖`.
pub fn homodyne_optimal_lo(p: &SystemParams, beta_abs: &ModeState, n_lo: f64) -> Result<ModeState> {
    if !(n_lo.is_finite() && n_lo >= 0.0) {
        return Err(Error::InvalidState(format!("LO photon number must be >= 0, got {n_lo}")));
    }
    let norm = beta_abs.norm();
    if norm == 0.0 {
        return Err(Error::InvalidState("cannot match a local oscillator to an empty probe".into()));
    }
    let out = apply_matrix_field(|w| transfer_k(p, w), beta_abs)?;
    Ok(out.scaled(c(n_lo.sqrt() / norm, 0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub scheme: String,
    pub m_trials: u64,
    pub epsilon_true: f64,
    pub epsilon_nominal: f64,
    /// Mean squared error of the `m`-trial average estimator.
    pub mse: f64,
    /// `1/(m·I)` with `I` the classical Fisher information per trial.
    pub crb: f64,
    /// `mse/crb`; 1 means the bound is saturated.
    pub ratio: f64,
    /// Analytic standard error of `ratio`.
    pub sigma_stat: f64,
    pub mean_estimate: f64,
    pub classical_fi: f64,
    pub qfi: f64,
    pub rng_seed: u64,
}

/// Sums `(err, err²)` over `m` trials, block by block with one ChaCha stream per block.
fn run_trials<F>(m: u64, seed: u64, trial: F) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let blocks = m.div_ceil(BLOCK);
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = BLOCK.min(m - b * BLOCK);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let e = trial(&mut rng);
                sum += e;
                sum_sq += e * e;
            }
            (sum, sum_sq)
        })
        .collect();
    partial.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
}

fn check_trials(m: u64) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParams("at least one trial is required".into()));
    }
    Ok(())
}

/// Draws `m` normal homodyne records at `ε_true` and applies the linearized
/// estimator `ε̂ = ε_nom + (x − μ(ε_nom))/μ'`.
pub fn homodyne_simulate(cfg: &HomodyneConfig, epsilon_true: f64, m_trials: u64, seed: u64) -> Result<TrialReport> {
    check_trials(m_trials)?;
    let eps_nom = cfg.epsilon_nominal();
    let slope = cfg.signal_slope()?;
    let sigma = cfg.variance().sqrt();
    if slope.abs() <= 1e-12 * sigma.max(1.0) {
        return Err(Error::ZeroSensitivity { slope });
    }
    let mu_nom = cfg.mean_signal(eps_nom)?;
    let mu_true = cfg.mean_signal(epsilon_true)?;
    let noise = Normal::new(mu_true, sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;

    let (sum, sum_sq) = run_trials(m_trials, seed, |rng| {
        let x = noise.sample(rng);
        eps_nom + (x - mu_nom) / slope - epsilon_true
    });

    let fisher = slope * slope / (sigma * sigma);
    let spread = sigma / slope.abs();
    let bias = eps_nom + (mu_true - mu_nom) / slope - epsilon_true;
    let var_sq = 2.0 * spread.powi(4) + 4.0 * bias * bias * spread * spread;
    let qfi = coherent_qfi(&cfg.params, &cfg.probe)?.value;
    Ok(report("homodyne", m_trials, epsilon_true, eps_nom, sum, sum_sq, fisher, var_sq, qfi, seed))
}

#[allow(clippy::too_many_arguments)]
fn report(
    scheme: &str,
    m: u64,
    epsilon_true: f64,
    epsilon_nominal: f64,
    sum: f64,
    sum_sq: f64,
    fisher: f64,
    var_err_sq: f64,
    qfi: f64,
    seed: u64,
) -> TrialReport {
    let mf = m as f64;
    let mean_sq = sum_sq / mf;
    TrialReport {
        scheme: scheme.to_string(),
        m_trials: m,
        epsilon_true,
        epsilon_nominal,
        mse: mean_sq / mf,
        crb: 1.0 / (mf * fisher),
        ratio: mean_sq * fisher,
        sigma_stat: fisher * (var_err_sq / mf).sqrt(),
        mean_estimate: epsilon_true + sum / mf,
        classical_fi: fisher,
        qfi,
        rng_seed: seed,
    }
}

/// True when `K` is diagonal with `K_rr = −1`: full reflection and `e^{2iφ} = i`.
fn check_counting_regime(p: &SystemParams) -> Result<()> {
    let offset = (p.phi() - FRAC_PI_4).rem_euclid(PI);
    let phase_ok = offset.min(PI - offset) < 1e-9;
    if (p.rho() - 1.0).abs() > 1e-12 || !phase_ok {
        return Err(Error::InvalidParams(format!(
            "N-photon counting needs rho = 1 and phi = pi/4 (mod pi), got rho = {}, phi = {}",
            p.rho(),
            p.phi()
        )));
    }
    Ok(())
}

/// `q = (ω − iγ/2)² − ε(ε + γ)`, whose phase fixes `K_ll` in the counting regime.
fn counting_argument(p: &SystemParams, omega: f64) -> C64 {
    let g = p.gamma();
    let eps = p.epsilon();
    let z = c(omega, -0.5 * g);
    z * z - eps * (eps + g)
}

/// `θ = 2·arg[(ω − iγ/2)² − ε(ε + γ)]`, so that `K_ll = e^{i(θ + π/2)}`.
pub fn noon_theta(p: &SystemParams, omega: f64) -> Result<f64> {
    check_counting_regime(p)?;
    let q = counting_argument(p, omega);
    if q.norm() == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    Ok(2.0 * q.arg())
}

/// `dθ/dε = 2Im(−(2ε + γ)/q)`.
pub fn noon_theta_derivative(p: &SystemParams, omega: f64) -> Result<f64> {
    check_counting_regime(p)?;
    let q = counting_argument(p, omega);
    if q.norm() == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    Ok(2.0 * (c(-(2.0 * p.epsilon() + p.gamma()), 0.0) / q).im)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoonCountingConfig {
    params: SystemParams,
    spec: NoonSpec,
    omega_plus: f64,
}

impl NoonCountingConfig {
    /// `params.epsilon()` is the nominal operating point.
    pub fn new(params: SystemParams, spec: NoonSpec, omega_plus: f64) -> Result<Self> {
        check_counting_regime(&params)?;
        if !omega_plus.is_finite() {
            return Err(Error::InvalidParams("omega_plus must be finite".into()));
        }
        noon_theta(&params, omega_plus)?;
        Ok(Self { params, spec, omega_plus })
    }

    /// Eigenmode NOON probe with the phase read at the `λ_max` frequency.
    pub fn optimal(params: SystemParams, n_photons: u32) -> Result<Self> {
        let spec = optimal_noon_probe(&params, n_photons)?;
        let omega_plus = spec.psi2().components()[0].omega;
        Self::new(params, spec, omega_plus)
    }

    /// Same probe, different nominal point.
    pub fn with_nominal(&self, epsilon_nominal: f64) -> Result<Self> {
        Self::new(self.params.with_epsilon(epsilon_nominal)?, self.spec.clone(), self.omega_plus)
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }
    pub fn spec(&self) -> &NoonSpec {
        &self.spec
    }
    pub fn omega_plus(&self) -> f64 {
        self.omega_plus
    }
    pub fn n_photons(&self) -> u32 {
        self.spec.n_photons()
    }
    pub fn epsilon_nominal(&self) -> f64 {
        self.params.epsilon()
    }

    fn theta_at(&self, epsilon: f64) -> Result<(f64, f64)> {
        let p = self.params.with_epsilon(epsilon)?;
        Ok((noon_theta(&p, self.omega_plus)?, noon_theta_derivative(&p, self.omega_plus)?))
    }
}

/// `(P₁, P₂) = (cos²Nθ, sin²Nθ)`. Both outcomes put all `N` photons on one
/// detector, so split detections have probability zero.
pub fn noon_counting_probabilities(cfg: &NoonCountingConfig, epsilon: f64) -> Result<(f64, f64)> {
    let (theta, _) = cfg.theta_at(epsilon)?;
    let phase = cfg.n_photons() as f64 * theta;
    let (s, co) = phase.sin_cos();
    Ok((co * co, s * s))
}

/// `dP₁/dε = −N·sin(2Nθ)·dθ/dε`.
pub fn noon_counting_slope(cfg: &NoonCountingConfig, epsilon: f64) -> Result<f64> {
    let (theta, dtheta) = cfg.theta_at(epsilon)?;
    let n = cfg.n_photons() as f64;
    Ok(-n * (2.0 * n * theta).sin() * dtheta)
}

/// `I = 4N²(dθ/dε)²`.
pub fn noon_counting_fisher(cfg: &NoonCountingConfig, epsilon: f64) -> Result<f64> {
    let (_, dtheta) = cfg.theta_at(epsilon)?;
    let n = cfg.n_photons() as f64;
    Ok(4.0 * n * n * dtheta * dtheta)
}

/// Nominal `ε` near the current one at which `2Nθ ≡ target (mod 2π)`.
///
/// Moves the operating point off `sin(2Nθ) = 0`, where the linearized
/// estimator has no sensitivity even though the Fisher information is finite.
pub fn noon_nominal_for_phase(cfg: &NoonCountingConfig, target: f64) -> Result<f64> {
    let n2 = 2.0 * cfg.n_photons() as f64;
    let mut eps = cfg.epsilon_nominal();
    for _ in 0..100 {
        let (theta, dtheta) = cfg.theta_at(eps)?;
        if dtheta == 0.0 {
            return Err(Error::ZeroSensitivity { slope: 0.0 });
        }
        let miss = (n2 * theta - target + PI).rem_euclid(2.0 * PI) - PI;
        let step = miss / (n2 * dtheta);
        eps -= step;
        if step.abs() <= 1e-15 * cfg.params.gamma() {
            return Ok(eps);
        }
    }
    Ok(eps)
}

/// Bernoulli counting records at `ε_true`, linearized estimator
/// `ε̂ = ε_nom + (k − P₁(ε_nom))/P₁'(ε_nom)` with `k ∈ {0, 1}`.
pub fn noon_simulate(cfg: &NoonCountingConfig, epsilon_true: f64, m_trials: u64, seed: u64) -> Result<TrialReport> {
    check_trials(m_trials)?;
    let eps_nom = cfg.epsilon_nominal();
    let (p1_nom, _) = noon_counting_probabilities(cfg, eps_nom)?;
    let slope = noon_counting_slope(cfg, eps_nom)?;
    let fisher = noon_counting_fisher(cfg, eps_nom)?;
    let (_, dtheta) = cfg.theta_at(eps_nom)?;
    let scale = cfg.n_photons() as f64 * dtheta.abs();
    if slope.abs() <= 1e-6 * scale.max(1e-300) {
        return Err(Error::ZeroSensitivity { slope });
    }
    let (p1_true, _) = noon_counting_probabilities(cfg, epsilon_true)?;
    let err_hit = eps_nom + (1.0 - p1_nom) / slope - epsilon_true;
    let err_miss = eps_nom - p1_nom / slope - epsilon_true;

    let (sum, sum_sq) = run_trials(m_trials, seed, |rng| {
        if rng.random::<f64>() < p1_true {
            err_hit
        } else {
            err_miss
        }
    });

    let spread = (err_hit * err_hit - err_miss * err_miss).abs();
    let var_sq = p1_true * (1.0 - p1_true) * spread * spread;
    let qfi = noon_qfi(&cfg.params, &cfg.spec)?.value;
    Ok(report("noon_counting", m_trials, epsilon_true, eps_nom, sum, sum_sq, fisher, var_sq, qfi, seed))
}

/// Signal-to-noise ratio of a homodyne readout under the linear-shift model.
///
/// The output shifts by `ε·iK A β`; with the quadrature matched to the shift
/// the integrated signal is `(γε²/2)(2|shift|)²` against vacuum noise `γ/2`
/// per unit integration time.
pub fn snr_lau_clerk(p: &SystemParams, epsilon: f64, beta_abs: &ModeState) -> Result<f64> {
    let g = p.gamma();
    let a_beta = apply_matrix_field(|w| gwsm_a(p, w), beta_abs)?;
    let shift = apply_matrix_field(|w| transfer_k(p, w), &a_beta)?.scaled(c(0.0, 1.0));
    let signal = 0.5 * g * epsilon * epsilon * 4.0 * shift.norm_sqr();
    let noise = 0.5 * g;
    Ok(signal / noise)
}
