//! Hahn-echo decoherence of the V_B⁻ spin in h-BN from cluster-correlation
//! expansions, with an ESEEM analysis layer.

pub mod bathgen;
pub mod cce;
pub mod error;
pub mod eseem;
pub mod hamiltonian;
pub mod runner;
pub mod spinops;
pub mod units;

pub use bathgen::{Bath, BathConfig, BathSpin, Composition, Species, TableChoice, Tensor3};
pub use cce::{CoherenceCurve, FieldMap, Method, TauGrid};
pub use error::{Error, Result};
pub use hamiltonian::CentralSpin;
pub use spinops::{CMat, C64};
