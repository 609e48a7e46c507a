//! Thermal populations and the coupling/photon budget: ion counts, vacuum
//! field amplitude, single-spin and collective coupling rates, intracavity
//! photon number, Rabi frequency.

use crate::constants::{kelvin_per_mhz, HBAR_J_S, MU0_N_PER_A2, PLANCK_J_S};
use crate::error::{Error, Result};
use crate::real::{cast, Real};
use crate::spin::{EnergyLevels, Transition};

/// Dopant ensemble geometry and concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec<T: Real> {
    /// Fraction of host sites substituted by the dopant (e.g. 50e-6).
    pub dopant_fraction: T,
    /// Host substitution-site density, m^-3.
    pub host_site_density_per_m3: T,
    /// Sample volume, m^3.
    pub sample_volume_m3: T,
    /// Number of inequivalent site classes the dopants split over (2 for YSO).
    pub sites_per_ion_class: u32,
}

/// Default yttrium-site density of YSO, m^-3.
pub const DEFAULT_HOST_SITE_DENSITY_PER_M3: f64 = 1.83e28;

impl<T: Real> EnsembleSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.dopant_fraction < T::zero() || self.dopant_fraction >= T::one() {
            return Err(Error::invalid("dopant_fraction must lie in [0, 1)"));
        }
        if self.host_site_density_per_m3 <= T::zero() {
            return Err(Error::invalid("host_site_density_per_m3 must be positive"));
        }
        if self.sample_volume_m3 <= T::zero() {
            return Err(Error::invalid("sample_volume_m3 must be positive"));
        }
        if self.sites_per_ion_class == 0 {
            return Err(Error::invalid("sites_per_ion_class must be positive"));
        }
        Ok(())
    }
}

/// Microwave resonator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CavityMode<T: Real> {
    /// Resonance frequency omega_c / 2 pi, MHz.
    pub frequency_mhz: T,
    /// Total loss rate kappa / 2 pi (FWHM), MHz.
    pub kappa_mhz: T,
    /// External (coupling) part of the loss rate per port, MHz.
    pub kappa_ext_mhz: T,
    /// Mode volume, m^3.
    pub mode_volume_m3: T,
    /// Fraction of the mode magnetic energy overlapping the sample, (0, 1].
    pub filling_factor: T,
}

impl<T: Real> CavityMode<T> {
    pub fn validate(&self) -> Result<()> {
        if self.frequency_mhz <= T::zero() {
            return Err(Error::invalid("cavity frequency must be positive"));
        }
        if self.kappa_mhz <= T::zero() {
            return Err(Error::invalid("cavity linewidth kappa must be positive"));
        }
        if self.kappa_ext_mhz <= T::zero() || self.kappa_ext_mhz > self.kappa_mhz {
            return Err(Error::invalid("kappa_ext must satisfy 0 < kappa_ext <= kappa"));
        }
        if self.mode_volume_m3 <= T::zero() {
            return Err(Error::invalid("mode volume must be positive"));
        }
        if self.filling_factor <= T::zero() || self.filling_factor > T::one() {
            return Err(Error::invalid("filling factor must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Loaded quality factor f_c / kappa.
    pub fn quality_factor(&self) -> T {
        self.frequency_mhz / self.kappa_mhz
    }
}

/// Boltzmann occupation probabilities of the levels, summing to one.
///
/// Energies are offset so the lowest level sits at zero before
/// exponentiation, which keeps the weights finite at any temperature.
pub fn boltzmann_populations<T: Real>(levels: &EnergyLevels<T>, temperature_k: T) -> Result<Vec<T>> {
    if temperature_k <= T::zero() {
        return Err(Error::invalid("temperature must be positive"));
    }
    if levels.is_empty() {
        return Err(Error::invalid("no levels"));
    }
    let ground = levels.values[0];
    let beta = kelvin_per_mhz::<T>() / temperature_k;
    let weights: Vec<T> = levels
        .values
        .iter()
        .map(|&e| (-(e - ground) * beta).exp())
        .collect();
    let z: T = weights.iter().copied().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Number of dopant ions per site class.
pub fn ion_count<T: Real>(spec: &EnsembleSpec<T>) -> Result<T> {
    spec.validate()?;
    Ok(spec.host_site_density_per_m3 * spec.dopant_fraction * spec.sample_volume_m3
        / cast::<T>(spec.sites_per_ion_class as f64))
}

/// Absolute population-number difference N (p_lower - p_upper) for one
/// transition of a thermal ensemble.
pub fn population_difference_count<T: Real>(
    n_total: T,
    levels: &EnergyLevels<T>,
    temperature_k: T,
    lower: usize,
    upper: usize,
) -> Result<T> {
    if lower >= levels.len() || upper >= levels.len() {
        return Err(Error::invalid("level index out of range"));
    }
    let populations = boltzmann_populations(levels, temperature_k)?;
    Ok(n_total * (populations[lower] - populations[upper]))
}

/// RMS vacuum magnetic-field amplitude of the mode, tesla:
/// B_1 = sqrt(mu_0 h f_c / (2 V)).
pub fn single_photon_field<T: Real>(mode: &CavityMode<T>) -> Result<T> {
    mode.validate()?;
    let f_hz = mode.frequency_mhz * cast(1e6);
    Ok((cast::<T>(MU0_N_PER_A2 * PLANCK_J_S) * f_hz / (cast::<T>(2.0) * mode.mode_volume_m3)).sqrt())
}

/// Single-spin coupling rate g_1 / 2 pi in MHz for a transition with the
/// given magnetic-dipole matrix element (MHz/T).
pub fn single_spin_coupling<T: Real>(dipole_element_mhz_per_t: T, mode: &CavityMode<T>) -> Result<T> {
    Ok(mode.filling_factor * dipole_element_mhz_per_t * single_photon_field(mode)?)
}

/// Collective coupling rate sqrt(N) g / 2 pi in MHz of `delta_n` polarized
/// spins.
pub fn collective_coupling<T: Real>(
    transition: &Transition<T>,
    mode: &CavityMode<T>,
    delta_n: T,
) -> Result<T> {
    if delta_n < T::zero() {
        return Err(Error::invalid("population difference count must be >= 0"));
    }
    Ok(delta_n.sqrt() * single_spin_coupling(transition.dipole_element, mode)?)
}

/// Convert a power in dBm to watts.
pub fn dbm_to_watts<T: Real>(p_dbm: T) -> T {
    cast::<T>(1e-3) * cast::<T>(10.0).powf(p_dbm / cast(10.0))
}

/// Convert a power in watts to dBm.
pub fn watts_to_dbm<T: Real>(p_watts: T) -> T {
    cast::<T>(10.0) * (p_watts / cast(1e-3)).log10()
}

/// Steady-state intracavity photon number at resonance for input power
/// `p_in_watts`: n = P Q / (hbar omega^2), with Q = f_c / kappa.
///
/// The underlying stored-energy relation U = P Q / omega assumes resonant,
/// near-critically-coupled transmission; `coupling_correction` rescales n for
/// other coupling configurations (1 for the idealized case).
pub fn photon_number<T: Real>(mode: &CavityMode<T>, p_in_watts: T, coupling_correction: T) -> Result<T> {
    mode.validate()?;
    if p_in_watts < T::zero() {
        return Err(Error::invalid("input power must be >= 0"));
    }
    if coupling_correction <= T::zero() {
        return Err(Error::invalid("coupling correction must be positive"));
    }
    let omega = cast::<T>(2.0 * std::f64::consts::PI) * mode.frequency_mhz * cast(1e6);
    let q = mode.quality_factor();
    Ok(coupling_correction * p_in_watts * q / (cast::<T>(HBAR_J_S) * omega * omega))
}

/// Collective driving Rabi frequency Omega / 2 pi = 2 g_1 sqrt(n), MHz.
pub fn rabi_frequency<T: Real>(single_spin_coupling_mhz: T, photon_count: T) -> Result<T> {
    if photon_count < T::zero() {
        return Err(Error::invalid("photon count must be >= 0"));
    }
    Ok(cast::<T>(2.0) * single_spin_coupling_mhz * photon_count.sqrt())
}

/// Cooperativity C = (sqrt(N) g)^2 / (kappa Gamma*), all rates as /2pi
/// full widths, matching the convention in which the on-resonance
/// transmission suppression is (1 + C)^-2.
pub fn cooperativity<T: Real>(collective_coupling_mhz: T, kappa_mhz: T, gamma_star_mhz: T) -> Result<T> {
    if kappa_mhz <= T::zero() || gamma_star_mhz <= T::zero() {
        return Err(Error::invalid("kappa and Gamma* must be positive"));
    }
    Ok(collective_coupling_mhz * collective_coupling_mhz / (kappa_mhz * gamma_star_mhz))
}
