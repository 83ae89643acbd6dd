//! Physical constants and unit conventions.
//!
//! Lengths in Å, fields in G, frequencies in MHz, times in μs. Hamiltonians are
//! built in rad/μs, so a frequency f (MHz) enters as 2π f.

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Electron gyromagnetic ratio, rad G⁻¹ ms⁻¹ (2π × 2.8024 MHz/G).
pub const GAMMA_E: f64 = 17_607.9;

pub const HBAR: f64 = 1.054_571_817e-34;

/// μ0/4π in T m / A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// Zero-field splitting of the V_B⁻ ground state, MHz.
pub const ZFS_D_MHZ: f64 = 3480.0;
pub const ZFS_E_MHZ: f64 = 50.0;

/// γ in rad G⁻¹ ms⁻¹ times B in G gives rad/ms; this converts to rad/μs.
pub const PER_MS_TO_PER_US: f64 = 1e-3;

pub fn mhz_to_rad_per_us(f: f64) -> f64 {
    TWO_PI * f
}

pub fn rad_per_us_to_mhz(w: f64) -> f64 {
    w / TWO_PI
}

/// Larmor angular frequency |γ| B in rad/μs (sign kept).
pub fn larmor_rad_per_us(gamma: f64, b_gauss: f64) -> f64 {
    gamma * PER_MS_TO_PER_US * b_gauss
}

pub fn tesla_to_gauss(t: f64) -> f64 {
    t * 1e4
}

/// Dipolar prefactor (μ0/4π) ħ γ1 γ2 / h in MHz Å³, γ in rad G⁻¹ ms⁻¹.
pub fn dipolar_constant_mhz_a3(gamma1: f64, gamma2: f64) -> f64 {
    // rad G⁻¹ ms⁻¹ -> rad s⁻¹ T⁻¹ is a factor 1e7
    let g1 = gamma1 * 1e7;
    let g2 = gamma2 * 1e7;
    MU0_OVER_4PI * HBAR * g1 * g2 / 1e-30 / TWO_PI / 1e6
}
