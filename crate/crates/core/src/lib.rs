//! Quantum Fisher information for estimating the cross-coupling `ε` of a
//! two-mode microring resonator whose clockwise and counter-clockwise modes
//! are linked by a partially reflecting feedback mirror.
//!
//! Frequencies, rates and `ε` are expressed in units of the decay rate `γ`
//! unless a function takes an explicit [`SystemParams`].

pub mod error;
pub mod smallcomplex;
pub mod resonator;
pub mod gwsm;
pub mod states;
pub mod qfi;
pub mod optimize;
pub mod estimation;
pub mod cli;

pub use error::{Error, Result};
pub use gwsm::{gwsm_a, gwsm_spectrum, GwsmSpectrum};
pub use optimize::{optimize_spectrum, FrequencyOptimum, SweepGrid};
pub use qfi::{coherent_qfi, noon_qfi, oqfi_value, QfiResult, StateKind};
pub use resonator::{build_model, transfer_k, ModelMatrices, SystemParams};
pub use smallcomplex::{CMat2, CVec2};
pub use states::{ModeState, NoonSpec};
