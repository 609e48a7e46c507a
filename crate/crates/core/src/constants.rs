//! Physical constants (CODATA). Energies are handled as frequencies (E/h, MHz),
//! magnetic fields in tesla, lengths in metres.

use crate::real::{cast, Real};

/// Planck constant (J s), exact.
pub const PLANCK_J_S: f64 = 6.626_070_15e-34;

/// Reduced Planck constant (J s).
pub const HBAR_J_S: f64 = PLANCK_J_S / (2.0 * std::f64::consts::PI);

/// Boltzmann constant (J/K), exact.
pub const BOLTZMANN_J_PER_K: f64 = 1.380_649e-23;

/// Vacuum magnetic permeability (N/A^2).
pub const MU0_N_PER_A2: f64 = 1.256_637_062_12e-6;

/// Bohr magneton over Planck constant (MHz/T).
pub const BOHR_MAGNETON_MHZ_PER_T: f64 = 13_996.244_9;

/// Nuclear magneton over Planck constant (MHz/T).
pub const NUCLEAR_MAGNETON_MHZ_PER_T: f64 = 7.622_59;

/// h/k_B expressed in kelvin per MHz: temperature equivalent of a 1 MHz quantum.
pub const KELVIN_PER_MHZ: f64 = PLANCK_J_S * 1e6 / BOLTZMANN_J_PER_K;

#[inline]
pub fn bohr_magneton_mhz_per_t<T: Real>() -> T {
    cast(BOHR_MAGNETON_MHZ_PER_T)
}

#[inline]
pub fn nuclear_magneton_mhz_per_t<T: Real>() -> T {
    cast(NUCLEAR_MAGNETON_MHZ_PER_T)
}

#[inline]
pub fn kelvin_per_mhz<T: Real>() -> T {
    cast(KELVIN_PER_MHZ)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thermal_conversion_scale() {
        // A 3 GHz quantum is worth 0.14398 K.
        assert!((3000.0 * KELVIN_PER_MHZ - 0.14398).abs() < 1e-5);
    }
}
