//! Cavity transmission under input-output theory with ensemble absorption,
//! peak/Q extraction, dispersive pulling, vibration averaging, saturation
//! sweeps and gap-tuning calibration.
//!
//! The transmission amplitude is
//!
//! ```text
//! S21(w) = kappa_ext / ( i (w_c - w) + kappa/2 + sum_k W_k(w) )
//! ```
//!
//! with all rates in MHz (/2pi, full widths for kappa and Gamma*). The
//! ensemble term is normalized so that an on-resonance line suppresses the
//! peak transmission by exactly (1 + C)^-2 with C = (sqrt(N) g)^2 / (kappa
//! Gamma*): W_k(w) = ((sqrt(N) g)_k^2 / 4) chi_k(w), where chi_k is a
//! unit-strength complex Lorentzian of half-width Gamma*_k/2 (or the
//! density integral for custom line shapes).

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::lineshape::LineProfile;
use crate::real::{cast, Real};
use crate::thermal::{dbm_to_watts, photon_number, CavityMode};

/// Fraction of Gamma* used as the homogeneous floor of the density integral
/// when no explicit value is configured.
pub const DEFAULT_HOMOGENEOUS_FLOOR_FRACTION: f64 = 0.01;

/// Functional form of one ensemble line.
#[derive(Debug, Clone, PartialEq)]
pub enum LineShapeModel<T: Real> {
    /// Lorentzian of FWHM Gamma* centred on the line.
    Lorentzian,
    /// Explicit inhomogeneous frequency density (unit area).
    Density(LineProfile<T>),
}

/// One spin-ensemble transition coupled to the cavity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleLine<T: Real> {
    /// Line centre, MHz (ignored by the density integral, which carries its
    /// own frequency axis).
    pub center_mhz: T,
    /// Inhomogeneous FWHM Gamma* / 2 pi, MHz.
    pub gamma_star_mhz: T,
    /// Collective coupling sqrt(N) g / 2 pi, MHz.
    pub coupling_mhz: T,
    pub shape: LineShapeModel<T>,
}

impl<T: Real> EnsembleLine<T> {
    pub fn lorentzian(center_mhz: T, gamma_star_mhz: T, coupling_mhz: T) -> Self {
        EnsembleLine { center_mhz, gamma_star_mhz, coupling_mhz, shape: LineShapeModel::Lorentzian }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_star_mhz <= T::zero() {
            return Err(Error::invalid("line width Gamma* must be positive"));
        }
        if self.coupling_mhz < T::zero() {
            return Err(Error::invalid("line coupling must be >= 0"));
        }
        if let LineShapeModel::Density(profile) = &self.shape {
            profile.validate().map_err(|e| {
                Error::invalid(format!("custom line density rejected: {e}"))
            })?;
        }
        Ok(())
    }

    /// Homogeneous floor applied inside the density integral.
    fn homogeneous_floor(&self, override_mhz: Option<T>) -> T {
        override_mhz.unwrap_or(self.gamma_star_mhz * cast(DEFAULT_HOMOGENEOUS_FLOOR_FRACTION))
    }

    /// Unit-strength complex susceptibility chi(w) of the line.
    fn susceptibility(&self, omega: T, floor_override: Option<T>) -> Complex<T> {
        match &self.shape {
            LineShapeModel::Lorentzian => {
                // 1 / (i (w_k - w) + Gamma*/2)
                let half = self.gamma_star_mhz * cast(0.5);
                Complex::new(half, self.center_mhz - omega).inv()
            }
            LineShapeModel::Density(profile) => {
                let gamma_h = self.homogeneous_floor(floor_override) * cast::<T>(0.5);
                let nu = &profile.frequencies_mhz;
                let rho = &profile.density_per_mhz;
                // Trapezoidal quadrature of rho(nu) / (i (nu - w) + gamma_h/2).
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..nu.len() - 1 {
                    let f_a = Complex::new(gamma_h, nu[k] - omega).inv() * Complex::new(rho[k], T::zero());
                    let f_b = Complex::new(gamma_h, nu[k + 1] - omega).inv()
                        * Complex::new(rho[k + 1], T::zero());
                    let width = nu[k + 1] - nu[k];
                    acc += (f_a + f_b) * Complex::new(width * cast::<T>(0.5), T::zero());
                }
                acc
            }
        }
    }
}

/// A |S21|^2 trace over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<T: Real> {
    pub frequencies_mhz: Vec<T>,
    /// Linear power units.
    pub s21_squared: Vec<T>,
    pub metadata: SweepMetadata,
}

/// Provenance attached to a sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepMetadata {
    pub input_power_dbm: Option<f64>,
    pub jitter_sigma_mhz: Option<f64>,
    pub config_hash: Option<String>,
}

impl<T: Real> SweepResult<T> {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies_mhz.len() != self.s21_squared.len() {
            return Err(Error::invalid("sweep arrays differ in length"));
        }
        if self.s21_squared.iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(Error::invalid("sweep powers must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Complex transmission amplitude at one frequency.
pub fn s21_amplitude<T: Real>(
    omega_mhz: T,
    mode: &CavityMode<T>,
    lines: &[EnsembleLine<T>],
    floor_override: Option<T>,
) -> Complex<T> {
    let mut denom = Complex::new(mode.kappa_mhz * cast(0.5), mode.frequency_mhz - omega_mhz);
    let quarter = cast::<T>(0.25);
    for line in lines {
        let w = line.susceptibility(omega_mhz, floor_override)
            * Complex::new(line.coupling_mhz * line.coupling_mhz * quarter, T::zero());
        denom += w;
    }
    Complex::new(mode.kappa_ext_mhz, T::zero()) / denom
}

/// |S21|^2 over a sorted frequency grid.
pub fn transmission<T: Real>(
    grid_mhz: &[T],
    mode: &CavityMode<T>,
    lines: &[EnsembleLine<T>],
) -> Result<SweepResult<T>> {
    transmission_with_floor(grid_mhz, mode, lines, None)
}

/// [`transmission`] with an explicit homogeneous floor for density lines.
pub fn transmission_with_floor<T: Real>(
    grid_mhz: &[T],
    mode: &CavityMode<T>,
    lines: &[EnsembleLine<T>],
    floor_override: Option<T>,
) -> Result<SweepResult<T>> {
    mode.validate()?;
    if grid_mhz.len() < 2 {
        return Err(Error::invalid("frequency grid needs at least two points"));
    }
    if grid_mhz.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("frequency grid must be strictly ascending"));
    }
    for line in lines {
        line.validate()?;
    }
    let s21_squared = grid_mhz
        .iter()
        .map(|&w| s21_amplitude(w, mode, lines, floor_override).norm_sqr())
        .collect();
    Ok(SweepResult {
        frequencies_mhz: grid_mhz.to_vec(),
        s21_squared,
        metadata: SweepMetadata::default(),
    })
}

/// Uniform grid centred on the cavity: defaults half-width 50 kappa, step
/// kappa/20.
pub fn cavity_grid<T: Real>(
    mode: &CavityMode<T>,
    half_width_mhz: Option<T>,
    step_mhz: Option<T>,
) -> Result<Vec<T>> {
    mode.validate()?;
    let half_width = half_width_mhz.unwrap_or(mode.kappa_mhz * cast(50.0));
    let step = step_mhz.unwrap_or(mode.kappa_mhz / cast(20.0));
    if half_width <= T::zero() || step <= T::zero() {
        return Err(Error::invalid("grid half-width and step must be positive"));
    }
    let n_side = (half_width / step)
        .to_usize()
        .ok_or_else(|| Error::invalid("grid size overflow"))?;
    if n_side == 0 {
        return Err(Error::invalid("grid step larger than half-width"));
    }
    let mut grid = Vec::with_capacity(2 * n_side + 1);
    for k in -(n_side as i64)..=(n_side as i64) {
        grid.push(mode.frequency_mhz + cast::<T>(k as f64) * step);
    }
    Ok(grid)
}

/// Peak characterization of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakSummary<T: Real> {
    /// Interpolated peak position, MHz.
    pub frequency_mhz: T,
    /// Interpolated peak |S21|^2.
    pub value: T,
    /// Full width at half maximum, MHz.
    pub fwhm_mhz: T,
    /// frequency / FWHM.
    pub q_factor: T,
}

/// Locate the transmission peak and extract the loaded Q, mimicking the
/// network-analyser protocol: the |S21|^2 maximum marks the resonance, the
/// half-maximum crossings give the linewidth.
pub fn extract_peak<T: Real>(sweep: &SweepResult<T>) -> Result<PeakSummary<T>> {
    sweep.validate()?;
    let y = &sweep.s21_squared;
    let x = &sweep.frequencies_mhz;
    if y.len() < 3 {
        return Err(Error::invalid("sweep too short for peak extraction"));
    }
    let mut k_max = 0;
    for (k, &v) in y.iter().enumerate() {
        if v > y[k_max] {
            k_max = k;
        }
    }
    if k_max == 0 || k_max == y.len() - 1 {
        return Err(Error::numerical("peak not bracketed: maximum sits at a grid edge"));
    }

    // Parabola through the three points around the discrete maximum.
    let (x0, x1, x2) = (x[k_max - 1], x[k_max], x[k_max + 1]);
    let (y0, y1, y2) = (y[k_max - 1], y[k_max], y[k_max + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curvature = (d12 - d01) / (x2 - x0);
    let (peak_x, peak_y) = if curvature >= T::zero() {
        (x1, y1) // flat or degenerate: keep the discrete maximum
    } else {
        let vx = (x0 + x1) * cast::<T>(0.5) - d01 / (cast::<T>(2.0) * curvature);
        let vy = y1 + curvature * (vx - x1) * (vx - x1)
            + (d01 + curvature * (x1 - x0)) * (vx - x1);
        (vx, vy)
    };

    let half = peak_y * cast(0.5);
    let left = half_crossing(x, y, k_max, half, true)
        .ok_or_else(|| Error::numerical("no half-maximum crossing on the low-frequency side"))?;
    let right = half_crossing(x, y, k_max, half, false)
        .ok_or_else(|| Error::numerical("no half-maximum crossing on the high-frequency side"))?;
    let fwhm = right - left;
    if fwhm <= T::zero() {
        return Err(Error::numerical("degenerate half-maximum crossings"));
    }
    Ok(PeakSummary { frequency_mhz: peak_x, value: peak_y, fwhm_mhz: fwhm, q_factor: peak_x / fwhm })
}

fn half_crossing<T: Real>(x: &[T], y: &[T], k_max: usize, half: T, leftward: bool) -> Option<T> {
    if leftward {
        for k in (0..k_max).rev() {
            if y[k] <= half {
                let t = (half - y[k]) / (y[k + 1] - y[k]);
                return Some(x[k] + t * (x[k + 1] - x[k]));
            }
        }
        None
    } else {
        for k in (k_max + 1)..y.len() {
            if y[k] <= half {
                let t = (half - y[k - 1]) / (y[k] - y[k - 1]);
                return Some(x[k - 1] + t * (x[k] - x[k - 1]));
            }
        }
        None
    }
}

/// Dispersive cavity-frequency shift produced by detuned lines, MHz:
/// the reactive part of the ensemble response at the bare cavity frequency,
/// sum_k (sqrt(N) g)_k^2 Delta_k / (Delta_k^2 + (Gamma*_k/2)^2) with
/// Delta_k = w_c - w_k for Lorentzian lines.
pub fn cavity_pulling<T: Real>(mode: &CavityMode<T>, lines: &[EnsembleLine<T>]) -> Result<T> {
    mode.validate()?;
    let mut shift = T::zero();
    for line in lines {
        line.validate()?;
        let chi = line.susceptibility(mode.frequency_mhz, None);
        shift += line.coupling_mhz * line.coupling_mhz * chi.im;
    }
    Ok(shift)
}

/// Convolve a sweep with a unit-area Gaussian of standard deviation
/// `sigma_mhz` in centre frequency, modelling vibration jitter of the
/// resonator. Edges are padded with the nearest value; requires a uniform
/// grid. `sigma_mhz = 0` returns the input unchanged.
pub fn vibration_average<T: Real>(sweep: &SweepResult<T>, sigma_mhz: T) -> Result<SweepResult<T>> {
    sweep.validate()?;
    if sigma_mhz < T::zero() {
        return Err(Error::invalid("jitter sigma must be >= 0"));
    }
    if sigma_mhz == T::zero() {
        return Ok(sweep.clone());
    }
    let x = &sweep.frequencies_mhz;
    if x.len() < 2 {
        return Err(Error::invalid("sweep too short to average"));
    }
    let step = x[1] - x[0];
    let uniform_tol = step * cast(1e-6);
    if x.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > uniform_tol) {
        return Err(Error::invalid("vibration averaging requires a uniform grid"));
    }

    let radius = (sigma_mhz / step * cast(6.0))
        .to_usize()
        .ok_or_else(|| Error::invalid("jitter kernel overflow"))?
        .max(1);
    if radius > 1_000_000 {
        return Err(Error::invalid(
            "jitter sigma spans more than a million grid steps; check units",
        ));
    }
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let inv_two_sigma_sq = (cast::<T>(2.0) * sigma_mhz * sigma_mhz).recip();
    for j in -(radius as i64)..=(radius as i64) {
        let d = cast::<T>(j as f64) * step;
        kernel.push((-d * d * inv_two_sigma_sq).exp());
    }
    let norm: T = kernel.iter().copied().sum();
    for w in kernel.iter_mut() {
        *w /= norm;
    }

    let n = x.len();
    let y = &sweep.s21_squared;
    let mut out = vec![T::zero(); n];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (kidx, &w) in kernel.iter().enumerate() {
            let offset = kidx as i64 - radius as i64;
            let j = (i as i64 + offset).clamp(0, n as i64 - 1) as usize;
            acc += w * y[j];
        }
        *slot = acc;
    }
    let mut metadata = sweep.metadata.clone();
    metadata.jitter_sigma_mhz = sigma_mhz.to_f64();
    Ok(SweepResult { frequencies_mhz: x.clone(), s21_squared: out, metadata })
}

/// One point of a saturation power sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationPoint<T: Real> {
    pub power_dbm: T,
    pub photon_number: T,
    pub peak: PeakSummary<T>,
}

/// Power sweep with phenomenological two-level saturation: the line's
/// (sqrt(N) g)^2 is scaled by 1 / (1 + n / n_sat) before each transmission.
pub fn saturation_sweep<T: Real>(
    powers_dbm: &[T],
    mode: &CavityMode<T>,
    line: &EnsembleLine<T>,
    n_sat: T,
    coupling_correction: T,
) -> Result<Vec<SaturationPoint<T>>> {
    if n_sat <= T::zero() {
        return Err(Error::invalid("saturation photon number must be positive"));
    }
    line.validate()?;
    let grid = cavity_grid(mode, None, None)?;
    let mut out = Vec::with_capacity(powers_dbm.len());
    for &p_dbm in powers_dbm {
        let n = photon_number(mode, dbm_to_watts(p_dbm), coupling_correction)?;
        let scale = (T::one() + n / n_sat).recip();
        let mut scaled = line.clone();
        scaled.coupling_mhz = line.coupling_mhz * scale.sqrt();
        let mut sweep = transmission(&grid, mode, std::slice::from_ref(&scaled))?;
        sweep.metadata.input_power_dbm = p_dbm.to_f64();
        let peak = extract_peak(&sweep)?;
        out.push(SaturationPoint { power_dbm: p_dbm, photon_number: n, peak });
    }
    Ok(out)
}

/// Saturation knee: the power (dBm) of the largest-magnitude second
/// difference of peak transmission versus log-power. Requires a uniform dBm
/// grid with at least three points.
pub fn saturation_knee<T: Real>(points: &[SaturationPoint<T>]) -> Result<T> {
    if points.len() < 3 {
        return Err(Error::invalid("knee location needs at least three powers"));
    }
    let step = points[1].power_dbm - points[0].power_dbm;
    let tol = step.abs() * cast(1e-6);
    if points
        .windows(2)
        .any(|w| ((w[1].power_dbm - w[0].power_dbm) - step).abs() > tol)
    {
        return Err(Error::invalid("knee location requires a uniform dBm grid"));
    }
    let mut best_k = 1;
    let mut best = T::zero();
    for k in 1..points.len() - 1 {
        let d2 = points[k + 1].peak.value - cast::<T>(2.0) * points[k].peak.value
            + points[k - 1].peak.value;
        if d2.abs() > best {
            best = d2.abs();
            best_k = k;
        }
    }
    Ok(points[best_k].power_dbm)
}

/// Local linearization of the piezo gap-to-frequency tuning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningCalibration<T: Real> {
    /// MHz of resonance shift per mm of gap change.
    pub slope_mhz_per_mm: T,
    pub reference_gap_mm: T,
    pub reference_frequency_mhz: T,
}

impl<T: Real> TuningCalibration<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.slope_mhz_per_mm.is_finite() || self.slope_mhz_per_mm <= T::zero() {
            return Err(Error::invalid("tuning slope must be finite and positive"));
        }
        Ok(())
    }
}

/// Resonance frequency for a gap size near the calibration reference.
pub fn gap_to_frequency<T: Real>(cal: &TuningCalibration<T>, gap_mm: T) -> Result<T> {
    cal.validate()?;
    Ok(cal.reference_frequency_mhz + cal.slope_mhz_per_mm * (gap_mm - cal.reference_gap_mm))
}

/// One step of a cavity-tuning sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneStep<T: Real> {
    /// Commanded cavity frequency for this step, MHz.
    pub set_frequency_mhz: T,
    pub peak: PeakSummary<T>,
}

/// Emulate the tuning experiment: step the cavity frequency across a range,
/// record peak transmission and Q at each step (optionally after vibration
/// averaging).
pub fn tuned_peak_sweep<T: Real>(
    set_points_mhz: &[T],
    mode_template: &CavityMode<T>,
    lines: &[EnsembleLine<T>],
    jitter_sigma_mhz: T,
    half_width_mhz: Option<T>,
    step_mhz: Option<T>,
) -> Result<Vec<TuneStep<T>>> {
    mode_template.validate()?;
    let mut out = Vec::with_capacity(set_points_mhz.len());
    for &set in set_points_mhz {
        let mode = CavityMode { frequency_mhz: set, ..mode_template.clone() };
        let grid = cavity_grid(&mode, half_width_mhz, step_mhz)?;
        let mut sweep = transmission(&grid, &mode, lines)?;
        if jitter_sigma_mhz > T::zero() {
            sweep = vibration_average(&sweep, jitter_sigma_mhz)?;
        }
        let peak = extract_peak(&sweep)?;
        out.push(TuneStep { set_frequency_mhz: set, peak });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::lineshape::LineProfile;

    fn paper_mode() -> CavityMode<f64> {
        CavityMode {
            frequency_mhz: 3050.0,
            kappa_mhz: 0.03,
            kappa_ext_mhz: 0.0075,
            mode_volume_m3: 3e-7,
            filling_factor: 0.8,
        }
    }

    fn paper_line(center: f64) -> EnsembleLine<f64> {
        EnsembleLine::lorentzian(center, 5.0, 0.15)
    }

    #[test]
    fn bare_cavity_is_lorentzian() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let sweep = transmission(&grid, &mode, &[]).unwrap();
        let peak = extract_peak(&sweep).unwrap();
        // Peak value (2 kappa_ext / kappa)^2, FWHM = kappa.
        assert_relative_eq!(peak.value, 0.25, max_relative = 1e-6);
        assert_relative_eq!(peak.fwhm_mhz, mode.kappa_mhz, max_relative = 0.02);
        assert!((peak.frequency_mhz - mode.frequency_mhz).abs() < mode.kappa_mhz / 20.0);
        // Q ~ 1.0167e5, inside the +-15% band around 9e4.
        assert_relative_eq!(peak.q_factor, 3050.0 / 0.03, max_relative = 0.01);
    }

    #[test]
    fn bare_cavity_area_is_analytic() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let sweep = transmission(&grid, &mode, &[]).unwrap();
        let area = crate::lineshape::trapezoid(&sweep.frequencies_mhz, &sweep.s21_squared);
        let analytic = std::f64::consts::PI * mode.kappa_ext_mhz * mode.kappa_ext_mhz * 2.0
            / mode.kappa_mhz;
        assert_relative_eq!(area, analytic, max_relative = 0.01);
    }

    #[test]
    fn on_resonance_suppression_is_cooperativity_law() {
        let mode = paper_mode();
        let line = paper_line(mode.frequency_mhz);
        let c = crate::thermal::cooperativity(line.coupling_mhz, mode.kappa_mhz, line.gamma_star_mhz)
            .unwrap();
        assert!((0.1..=0.2).contains(&c));
        let bare = s21_amplitude(mode.frequency_mhz, &mode, &[], None).norm_sqr();
        let loaded =
            s21_amplitude(mode.frequency_mhz, &mode, std::slice::from_ref(&line), None).norm_sqr();
        let suppression = loaded / bare;
        let expected = (1.0 + c).powi(-2);
        assert!((suppression - expected).abs() <= 1e-6, "suppression {suppression} vs {expected}");
    }

    #[test]
    fn absorption_never_raises_peak_transmission() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let bare = extract_peak(&transmission(&grid, &mode, &[]).unwrap()).unwrap();
        for detune in [-7.0, -2.0, 0.0, 1.0, 4.0] {
            let line = paper_line(mode.frequency_mhz + detune);
            let loaded =
                extract_peak(&transmission(&grid, &mode, std::slice::from_ref(&line)).unwrap())
                    .unwrap();
            assert!(loaded.value <= bare.value * (1.0 + 1e-12), "detune {detune}");
        }
    }

    #[test]
    fn line_order_does_not_matter() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let lines = vec![paper_line(3048.0), paper_line(3052.5), paper_line(3050.1)];
        let mut reordered = lines.clone();
        reordered.rotate_left(1);
        let a = transmission(&grid, &mode, &lines).unwrap();
        let b = transmission(&grid, &mode, &reordered).unwrap();
        for (x, y) in a.s21_squared.iter().zip(&b.s21_squared) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1e-30));
        }
    }

    #[test]
    fn density_integral_matches_independent_quadrature() {
        // The implementation's trapezoidal density integral is checked
        // against Simpson quadrature of the same kernel in this test.
        let mode = paper_mode();
        let center = mode.frequency_mhz + 1.3;
        let sigma = 1.8;
        let step = 0.004;
        let n = 2 * ((8.0 * sigma / step) as usize) + 1; // odd for Simpson
        let freqs: Vec<f64> =
            (0..n).map(|k| center - 8.0 * sigma + k as f64 * step).collect();
        let density: Vec<f64> = freqs
            .iter()
            .map(|&f| (-(f - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let profile = LineProfile::normalized(freqs.clone(), density).unwrap();

        let coupling = 0.15;
        let gamma_star = 5.0;
        let gamma_h = gamma_star * DEFAULT_HOMOGENEOUS_FLOOR_FRACTION / 2.0;
        let line = EnsembleLine {
            center_mhz: center,
            gamma_star_mhz: gamma_star,
            coupling_mhz: coupling,
            shape: LineShapeModel::Density(profile.clone()),
        };

        for probe in [mode.frequency_mhz, center, center - 2.0, center + 3.7] {
            let got = s21_amplitude(probe, &mode, std::slice::from_ref(&line), None);
            // Simpson integral of rho(nu) / (i (nu - probe) + gamma_h).
            let mut acc = nalgebra::Complex::new(0.0, 0.0);
            for k in (0..n - 2).step_by(2) {
                let eval = |idx: usize| {
                    nalgebra::Complex::new(gamma_h, freqs[idx] - probe).inv()
                        * nalgebra::Complex::new(profile.density_per_mhz[idx], 0.0)
                };
                acc += (eval(k) + eval(k + 1) * nalgebra::Complex::new(4.0, 0.0) + eval(k + 2))
                    * nalgebra::Complex::new(step / 3.0, 0.0);
            }
            let w = acc * nalgebra::Complex::new(coupling * coupling / 4.0, 0.0);
            let denom =
                nalgebra::Complex::new(mode.kappa_mhz / 2.0, mode.frequency_mhz - probe) + w;
            let expected = (nalgebra::Complex::new(mode.kappa_ext_mhz, 0.0) / denom).norm_sqr();
            assert_relative_eq!(got.norm_sqr(), expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn narrow_density_behaves_like_narrow_lorentzian_when_detuned() {
        // Far from the line, any narrow unit-area density must act like the
        // equivalent Lorentzian line: same normalization convention.
        let mode = paper_mode();
        let center = mode.frequency_mhz + 1.3;
        let sigma = 0.05;
        let step = 0.002;
        let n = (12.0 * sigma / step) as usize;
        let freqs: Vec<f64> =
            (0..n).map(|k| center - 6.0 * sigma + k as f64 * step).collect();
        let density: Vec<f64> = freqs
            .iter()
            .map(|&f| (-(f - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let narrow_width = 0.02;
        let density_line = EnsembleLine {
            center_mhz: center,
            gamma_star_mhz: narrow_width,
            coupling_mhz: 0.15,
            shape: LineShapeModel::Density(LineProfile::normalized(freqs, density).unwrap()),
        };
        let lorentzian = EnsembleLine::lorentzian(center, narrow_width, 0.15);
        // Probe at detunings well beyond both widths.
        for probe in [mode.frequency_mhz, center - 1.0, center + 0.8] {
            let a =
                s21_amplitude(probe, &mode, std::slice::from_ref(&density_line), None).norm_sqr();
            let b =
                s21_amplitude(probe, &mode, std::slice::from_ref(&lorentzian), None).norm_sqr();
            assert_relative_eq!(a, b, max_relative = 2e-2);
        }
    }

    #[test]
    fn unnormalized_density_rejected() {
        let mode = paper_mode();
        let freqs: Vec<f64> = (0..100).map(|k| 3040.0 + 0.2 * k as f64).collect();
        let density = vec![1.0; 100]; // not unit area
        let bad = EnsembleLine {
            center_mhz: 3050.0,
            gamma_star_mhz: 5.0,
            coupling_mhz: 0.15,
            shape: LineShapeModel::Density(LineProfile {
                frequencies_mhz: freqs.clone(),
                density_per_mhz: density,
            }),
        };
        let grid = cavity_grid(&mode, None, None).unwrap();
        assert!(transmission(&grid, &mode, std::slice::from_ref(&bad)).is_err());
    }

    #[test]
    fn peak_extraction_is_scale_invariant() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let sweep = transmission(&grid, &mode, &[]).unwrap();
        let mut doubled = sweep.clone();
        for v in doubled.s21_squared.iter_mut() {
            *v *= 2.0;
        }
        let p1 = extract_peak(&sweep).unwrap();
        let p2 = extract_peak(&doubled).unwrap();
        assert_relative_eq!(p1.frequency_mhz, p2.frequency_mhz, max_relative = 1e-12);
        assert_relative_eq!(p1.q_factor, p2.q_factor, max_relative = 1e-12);
        assert_relative_eq!(p2.value, 2.0 * p1.value, max_relative = 1e-12);
    }

    #[test]
    fn peak_at_grid_edge_is_rejected() {
        let sweep = SweepResult {
            frequencies_mhz: vec![1.0, 2.0, 3.0, 4.0],
            s21_squared: vec![0.1, 0.2, 0.3, 0.4],
            metadata: SweepMetadata::default(),
        };
        let err = extract_peak(&sweep).unwrap_err();
        assert!(err.to_string().contains("not bracketed"));
    }

    #[test]
    fn missing_half_crossing_is_rejected() {
        // Peak bracketed but the curve never falls below half maximum.
        let sweep = SweepResult {
            frequencies_mhz: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            s21_squared: vec![0.90, 0.95, 1.0, 0.95, 0.90],
            metadata: SweepMetadata::default(),
        };
        assert!(extract_peak(&sweep).is_err());
    }

    #[test]
    fn pulling_vanishes_on_resonance_and_is_odd() {
        let mode = paper_mode();
        let on = cavity_pulling(&mode, &[paper_line(mode.frequency_mhz)]).unwrap();
        assert!(on.abs() < 1e-15);
        let up = cavity_pulling(&mode, &[paper_line(mode.frequency_mhz - 2.5)]).unwrap();
        let down = cavity_pulling(&mode, &[paper_line(mode.frequency_mhz + 2.5)]).unwrap();
        assert_relative_eq!(up, -down, max_relative = 1e-12);
    }

    #[test]
    fn pulling_matches_paper_scale_formula() {
        // sqrt(N)g = 0.15 MHz, Gamma* = 5 MHz, detuning 2.5 MHz:
        // shift = 0.0225 * 2.5 / (6.25 + 6.25) = 4.5e-3 MHz (order 1 kHz).
        let mode = paper_mode();
        let line = paper_line(mode.frequency_mhz - 2.5);
        let shift = cavity_pulling(&mode, std::slice::from_ref(&line)).unwrap();
        assert_relative_eq!(shift, 4.5e-3, max_relative = 1e-9);
    }

    #[test]
    fn pulling_from_density_matches_narrow_lorentzian() {
        let mode = paper_mode();
        let center = mode.frequency_mhz + 2.5;
        let sigma = 0.05;
        let step = 0.002;
        let n = (12.0 * sigma / step) as usize;
        let freqs: Vec<f64> =
            (0..n).map(|k| center - 6.0 * sigma + k as f64 * step).collect();
        let density: Vec<f64> = freqs
            .iter()
            .map(|&f| (-(f - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let density_line = EnsembleLine {
            center_mhz: center,
            gamma_star_mhz: 0.02,
            coupling_mhz: 0.15,
            shape: LineShapeModel::Density(LineProfile::normalized(freqs, density).unwrap()),
        };
        let lorentzian = EnsembleLine::lorentzian(center, 0.02, 0.15);
        let a = cavity_pulling(&mode, std::slice::from_ref(&density_line)).unwrap();
        let b = cavity_pulling(&mode, std::slice::from_ref(&lorentzian)).unwrap();
        assert_relative_eq!(a, b, max_relative = 2e-2);
    }

    #[test]
    fn vibration_average_identity_at_zero_sigma() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let sweep = transmission(&grid, &mode, &[]).unwrap();
        let out = vibration_average(&sweep, 0.0).unwrap();
        assert_eq!(out.s21_squared, sweep.s21_squared);
    }

    #[test]
    fn vibration_average_produces_voigt_width() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let sweep = transmission(&grid, &mode, &[]).unwrap();
        let sigma = 0.02;
        let blurred = vibration_average(&sweep, sigma).unwrap();
        let peak = extract_peak(&blurred).unwrap();
        // Olivero-Longbothum approximation for the Voigt FWHM.
        let f_l = mode.kappa_mhz;
        let f_g = 2.0 * (2.0f64.ln() * 2.0).sqrt() * sigma;
        let voigt = 0.5346 * f_l + (0.2166 * f_l * f_l + f_g * f_g).sqrt();
        assert_relative_eq!(peak.fwhm_mhz, voigt, max_relative = 0.02);
    }

    #[test]
    fn vibration_average_lowers_q_and_preserves_area() {
        let mode = paper_mode();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let sweep = transmission(&grid, &mode, &[]).unwrap();
        let blurred = vibration_average(&sweep, 0.01).unwrap();
        let q0 = extract_peak(&sweep).unwrap().q_factor;
        let q1 = extract_peak(&blurred).unwrap().q_factor;
        assert!(q1 < q0);

        // Area preserved away from the padded edges.
        let n = grid.len();
        let inner = n / 10..(9 * n) / 10;
        let a0 = crate::lineshape::trapezoid(
            &sweep.frequencies_mhz[inner.clone()],
            &sweep.s21_squared[inner.clone()],
        );
        let a1 = crate::lineshape::trapezoid(
            &blurred.frequencies_mhz[inner.clone()],
            &blurred.s21_squared[inner],
        );
        assert_relative_eq!(a0, a1, max_relative = 5e-3);
    }

    #[test]
    fn saturation_low_power_matches_linear_response() {
        let mode = paper_mode();
        let line = paper_line(mode.frequency_mhz);
        let n_sat = 5e12;
        let points = saturation_sweep(&[-60.0], &mode, &line, n_sat, 1.0).unwrap();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let unsaturated = extract_peak(
            &transmission(&grid, &mode, std::slice::from_ref(&line)).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(points[0].peak.value, unsaturated.value, max_relative = 5e-3);
        assert_relative_eq!(points[0].peak.q_factor, unsaturated.q_factor, max_relative = 5e-3);
    }

    #[test]
    fn saturation_at_n_sat_halves_cooperativity() {
        let mode = paper_mode();
        let line = paper_line(mode.frequency_mhz);
        // Choose n_sat so the sweep point hits n = n_sat exactly.
        let n_sat = photon_number(&mode, dbm_to_watts(-25.0), 1.0).unwrap();
        let points = saturation_sweep(&[-25.0], &mode, &line, n_sat, 1.0).unwrap();
        let mut halved = line.clone();
        halved.coupling_mhz = line.coupling_mhz / 2.0f64.sqrt();
        let grid = cavity_grid(&mode, None, None).unwrap();
        let expected =
            extract_peak(&transmission(&grid, &mode, std::slice::from_ref(&halved)).unwrap())
                .unwrap();
        assert_relative_eq!(points[0].peak.value, expected.value, max_relative = 1e-12);
    }

    #[test]
    fn saturation_peak_is_monotone_in_power() {
        let mode = paper_mode();
        let line = paper_line(mode.frequency_mhz);
        let powers: Vec<f64> = (0..=50).map(|k| -60.0 + k as f64).collect();
        let points = saturation_sweep(&powers, &mode, &line, 5e12, 1.0).unwrap();
        for w in points.windows(2) {
            assert!(w[1].peak.value >= w[0].peak.value - 1e-12);
            assert!(w[1].peak.q_factor >= w[0].peak.q_factor - 1e-9);
        }
        let knee = saturation_knee(&points).unwrap();
        assert!(knee > -60.0 && knee < -10.0);
    }

    #[test]
    fn gap_tuning_matches_actuator_calibration() {
        // 30 nm step -> 0.1 MHz; 0.3 nm -> 1 kHz.
        let cal = TuningCalibration {
            slope_mhz_per_mm: 0.1 / 30e-6,
            reference_gap_mm: 0.1,
            reference_frequency_mhz: 3100.0,
        };
        let f30nm = gap_to_frequency(&cal, 0.1 + 30e-6).unwrap();
        assert_relative_eq!(f30nm - 3100.0, 0.1, max_relative = 1e-9);
        let f03nm = gap_to_frequency(&cal, 0.1 + 0.3e-6).unwrap();
        assert_relative_eq!(f03nm - 3100.0, 0.001, max_relative = 1e-9);
        assert_eq!(gap_to_frequency(&cal, 0.1).unwrap(), 3100.0);
    }

    #[test]
    fn tuned_sweep_flat_without_lines() {
        let mode = paper_mode();
        let set_points: Vec<f64> = (0..12).map(|k| 3045.0 + k as f64).collect();
        let steps = tuned_peak_sweep(&set_points, &mode, &[], 0.0, None, None).unwrap();
        let first = steps[0].peak;
        for s in &steps {
            assert_relative_eq!(s.peak.value, first.value, max_relative = 1e-9);
            assert!((s.peak.fwhm_mhz - first.fwhm_mhz).abs() < 1e-9);
        }
    }
}
