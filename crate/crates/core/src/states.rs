//! Probe states as finite combs of monochromatic two-port components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwsm::gwsm_spectrum;
use crate::optimize::{optimize_spectrum_default, FrequencyOptimum};
use crate::resonator::SystemParams;
use crate::smallcomplex::{CMat2, CVec2, C64};

/// Components closer than this (in units of `γ`) are merged.
pub const FREQ_MERGE_TOL: f64 = 1e-12;

/// Tolerance on unit normalization and NOON mode orthogonality.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeComponent {
    pub omega: f64,
    pub port: CVec2,
}

impl ModeComponent {
    pub fn new(omega: f64, port: CVec2) -> Self {
        Self { omega, port }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    /// Coherent amplitude `β(ω)`; squared norm is the mean photon number.
    CoherentAmplitude,
    /// Single-photon mode function; unit norm.
    SinglePhotonMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeState {
    kind: ModeKind,
    components: Vec<ModeComponent>,
}

impl ModeState {
    /// Builds a state, merging components whose frequencies agree within
    /// [`FREQ_MERGE_TOL`]. Single-photon modes must have unit norm.
    pub fn new(kind: ModeKind, components: Vec<ModeComponent>) -> Result<Self> {
        let state = Self::from_parts(kind, components)?;
        if kind == ModeKind::SinglePhotonMode && (state.norm_sqr() - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!(
                "single-photon mode must be normalized, squared norm is {}",
                state.norm_sqr()
            )));
        }
        Ok(state)
    }

    /// Same as [`ModeState::new`] without the normalization check; used for
    /// fields obtained by applying a non-unitary matrix to a mode.
    fn from_parts(kind: ModeKind, components: Vec<ModeComponent>) -> Result<Self> {
        let mut merged: Vec<ModeComponent> = Vec::with_capacity(components.len());
        for comp in components {
            if !comp.omega.is_finite() || !comp.port.is_finite() {
                return Err(Error::InvalidState("non-finite mode component".into()));
            }
            match merged
                .iter_mut()
                .find(|m| (m.omega - comp.omega).abs() <= FREQ_MERGE_TOL)
            {
                Some(existing) => existing.port = existing.port + comp.port,
                None => merged.push(comp),
            }
        }
        Ok(Self { kind, components: merged })
    }

    pub fn coherent(components: Vec<ModeComponent>) -> Result<Self> {
        Self::new(ModeKind::CoherentAmplitude, components)
    }

    pub fn single_photon(components: Vec<ModeComponent>) -> Result<Self> {
        Self::new(ModeKind::SinglePhotonMode, components)
    }

    pub fn monochromatic(kind: ModeKind, omega: f64, port: CVec2) -> Result<Self> {
        Self::new(kind, vec![ModeComponent::new(omega, port)])
    }

    pub fn kind(&self) -> ModeKind {
        self.kind
    }

    pub fn components(&self) -> &[ModeComponent] {
        &self.components
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.omega).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.components.iter().map(|c| c.port.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Multiplies every port vector by a complex scalar.
    pub fn scaled(&self, s: C64) -> ModeState {
        ModeState {
            kind: self.kind,
            components: self
                .components
                .iter()
                .map(|c| ModeComponent::new(c.omega, c.port.scale(s)))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&StateWire::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: StateWire = serde_json::from_str(s)?;
        wire.try_into()
    }
}

/// Sesquilinear inner product `Σ_ω ⟨a(ω), b(ω)⟩` over matching frequencies.
pub fn inner(a: &ModeState, b: &ModeState) -> C64 {
    let mut acc = C64::default();
    for ca in &a.components {
        for cb in &b.components {
            if (ca.omega - cb.omega).abs() <= FREQ_MERGE_TOL {
                acc += ca.port.dot(&cb.port);
            }
        }
    }
    acc
}

pub fn norm_sqr(s: &ModeState) -> f64 {
    s.norm_sqr()
}

/// Applies a frequency-dependent matrix to every component: `s(ω) ↦ m(ω)·s(ω)`.
pub fn apply_matrix_field<F>(m_of_omega: F, s: &ModeState) -> Result<ModeState>
where
    F: Fn(f64) -> Result<CMat2>,
{
    let mut out = Vec::with_capacity(s.components.len());
    for comp in &s.components {
        let m = m_of_omega(comp.omega)?;
        out.push(ModeComponent::new(comp.omega, m.mul_vec(&comp.port)));
    }
    ModeState::from_parts(s.kind, out)
}

/// Two orthonormal single-photon modes and a photon number `N ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoonSpec {
    psi1: ModeState,
    psi2: ModeState,
    n_photons: u32,
}

impl NoonSpec {
    pub fn new(psi1: ModeState, psi2: ModeState, n_photons: u32) -> Result<Self> {
        if n_photons == 0 {
            return Err(Error::InvalidState("NOON photon number must be at least 1".into()));
        }
        for psi in [&psi1, &psi2] {
            if psi.kind != ModeKind::SinglePhotonMode {
                return Err(Error::InvalidState("NOON modes must be single-photon modes".into()));
            }
        }
        let overlap = inner(&psi1, &psi2).norm();
        if overlap > NORM_TOL {
            return Err(Error::InvalidState(format!("NOON modes are not orthogonal (|overlap| = {overlap:.3e})")));
        }
        Ok(Self { psi1, psi2, n_photons })
    }

    pub fn psi1(&self) -> &ModeState {
        &self.psi1
    }
    pub fn psi2(&self) -> &ModeState {
        &self.psi2
    }
    pub fn n_photons(&self) -> u32 {
        self.n_photons
    }

    pub fn modes(&self) -> [&ModeState; 2] {
        [&self.psi1, &self.psi2]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NoonWire::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: NoonWire = serde_json::from_str(s)?;
        wire.try_into()
    }
}

/// Coherent probe at the frequency of the largest `|λ|`, along its eigenvector.
pub fn optimal_coherent_probe(p: &SystemParams, photon_number: f64) -> Result<ModeState> {
    let opt = optimize_spectrum_default(p)?;
    coherent_probe_from_optimum(p, &opt, photon_number)
}

pub(crate) fn coherent_probe_from_optimum(
    p: &SystemParams,
    opt: &FrequencyOptimum,
    photon_number: f64,
) -> Result<ModeState> {
    if !(photon_number.is_finite() && photon_number >= 0.0) {
        return Err(Error::InvalidState(format!("photon number must be >= 0, got {photon_number}")));
    }
    let (omega, use_plus) = opt.abs_choice();
    let spec = gwsm_spectrum(p, omega)?;
    let v = if use_plus { spec.v_plus } else { spec.v_minus };
    ModeState::monochromatic(ModeKind::CoherentAmplitude, omega, v.scale_real(photon_number.sqrt()))
}

/// NOON probe with `ψ₁` on the `λ_min` eigenmode and `ψ₂` on the `λ_max` eigenmode.
pub fn optimal_noon_probe(p: &SystemParams, n_photons: u32) -> Result<NoonSpec> {
    let opt = optimize_spectrum_default(p)?;
    noon_probe_from_optimum(p, &opt, n_photons)
}

pub(crate) fn noon_probe_from_optimum(
    p: &SystemParams,
    opt: &FrequencyOptimum,
    n_photons: u32,
) -> Result<NoonSpec> {
    let low = gwsm_spectrum(p, opt.omega_min)?;
    let high = gwsm_spectrum(p, opt.omega_max)?;
    let psi1 = ModeState::monochromatic(ModeKind::SinglePhotonMode, opt.omega_min, low.v_minus)?;
    let psi2 = ModeState::monochromatic(ModeKind::SinglePhotonMode, opt.omega_max, high.v_plus)?;
    NoonSpec::new(psi1, psi2, n_photons)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentWire {
    omega: f64,
    port: [f64; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateWire {
    kind: ModeKind,
    components: Vec<ComponentWire>,
}

impl From<&ModeState> for StateWire {
    fn from(s: &ModeState) -> Self {
        StateWire {
            kind: s.kind,
            components: s
                .components
                .iter()
                .map(|c| ComponentWire { omega: c.omega, port: c.port.to_array() })
                .collect(),
        }
    }
}

impl TryFrom<StateWire> for ModeState {
    type Error = Error;
    fn try_from(w: StateWire) -> Result<Self> {
        let comps = w
            .components
            .into_iter()
            .map(|c| ModeComponent::new(c.omega, CVec2::from_array(c.port)))
            .collect();
        ModeState::new(w.kind, comps)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoonWire {
    kind: String,
    n_photons: u32,
    components: [StateWire; 2],
}

impl From<&NoonSpec> for NoonWire {
    fn from(s: &NoonSpec) -> Self {
        NoonWire {
            kind: "noon".into(),
            n_photons: s.n_photons,
            components: [StateWire::from(&s.psi1), StateWire::from(&s.psi2)],
        }
    }
}

impl TryFrom<NoonWire> for NoonSpec {
    type Error = Error;
    fn try_from(w: NoonWire) -> Result<Self> {
        if w.kind != "noon" {
            return Err(Error::Format(format!("expected kind \"noon\", got {:?}", w.kind)));
        }
        let [a, b] = w.components;
        NoonSpec::new(a.try_into()?, b.try_into()?, w.n_photons)
    }
}

impl Serialize for ModeState {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        StateWire::from(self).serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ModeState {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let wire = StateWire::deserialize(de)?;
        ModeState::try_from(wire).map_err(serde::de::Error::custom)
    }
}

impl Serialize for NoonSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        NoonWire::from(self).serialize(ser)
    }
}

impl<'de> Deserialize<'de> for NoonSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let wire = NoonWire::deserialize(de)?;
        NoonSpec::try_from(wire).map_err(serde::de::Error::custom)
    }
}
