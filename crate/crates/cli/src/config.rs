//! JSON configuration schema and loading.
//!
//! All keys carry their unit in the name where one applies; unknown keys are
//! rejected everywhere so typos fail loudly. Paths inside a config resolve
//! relative to the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use zfepr_core::cavity::TuningCalibration;
use zfepr_core::thermal::{CavityMode, EnsembleSpec, DEFAULT_HOST_SITE_DENSITY_PER_M3};
use zfepr_core::SpinSystem64;

use crate::error::{from_engine, CliError, Result};

/// Default drive direction: the D2 axis (perpendicular to the resonator
/// gap); configurable because the in-cavity field orientation is not pinned
/// by the hardware description.
pub const DEFAULT_DRIVE_AXIS: [f64; 3] = [0.0, 1.0, 0.0];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub spin_system_paths: Vec<String>,
    #[serde(default)]
    pub ensemble_path: Option<String>,
    #[serde(default)]
    pub cavity_path: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub temperature_kelvin: Option<f64>,
    #[serde(default)]
    pub drive_axis: Option<[f64; 3]>,
    #[serde(default)]
    pub transitions: Option<TransitionsSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub lineshape: Option<LineshapeSection>,
    #[serde(default)]
    pub fit: Option<FitSection>,
    #[serde(default)]
    pub budget: Option<BudgetSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSystemFile {
    pub site_label: String,
    #[serde(default = "default_electron_multiplicity")]
    pub electron_multiplicity: usize,
    #[serde(default = "default_nuclear_multiplicity")]
    pub nuclear_multiplicity: usize,
    /// Dimensionless Zeeman matrix, rows in the (D1, D2, b) frame.
    pub g: [[f64; 3]; 3],
    /// Hyperfine matrix, MHz.
    #[serde(rename = "A")]
    pub a: [[f64; 3]; 3],
    /// Quadrupole matrix, MHz.
    #[serde(rename = "Q")]
    pub q: [[f64; 3]; 3],
    pub g_n: f64,
}

fn default_electron_multiplicity() -> usize {
    2
}

fn default_nuclear_multiplicity() -> usize {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub dopant_fraction: f64,
    #[serde(default = "default_host_density")]
    pub host_site_density_per_m3: f64,
    pub sample_volume_m3: f64,
    #[serde(default = "default_sites_per_class")]
    pub sites_per_ion_class: u32,
}

fn default_host_density() -> f64 {
    DEFAULT_HOST_SITE_DENSITY_PER_M3
}

fn default_sites_per_class() -> u32 {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityFile {
    pub frequency_mhz: f64,
    pub kappa_mhz: f64,
    /// External coupling rate; defaults to kappa/4 (undercoupled two-port).
    #[serde(default)]
    pub kappa_ext_mhz: Option<f64>,
    pub mode_volume_m3: f64,
    pub filling_factor: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionsSection {
    #[serde(default)]
    pub window_mhz: Option<[f64; 2]>,
    /// Drop lines with collective coupling below this, MHz.
    #[serde(default)]
    pub min_coupling_mhz: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub start_mhz: Option<f64>,
    #[serde(default)]
    pub stop_mhz: Option<f64>,
    #[serde(default)]
    pub step_mhz: Option<f64>,
    #[serde(default)]
    pub gap_scan: Option<GapScanSection>,
    #[serde(default)]
    pub lines: Vec<SweepLine>,
    #[serde(default)]
    pub jitter_sigma_mhz: Option<f64>,
    #[serde(default)]
    pub grid_half_width_mhz: Option<f64>,
    #[serde(default)]
    pub grid_step_mhz: Option<f64>,
    #[serde(default)]
    pub input_power_dbm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapScanSection {
    pub slope_mhz_per_mm: f64,
    pub reference_gap_mm: f64,
    pub reference_frequency_mhz: f64,
    pub start_gap_mm: f64,
    pub stop_gap_mm: f64,
    pub step_gap_mm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLine {
    pub center_mhz: f64,
    pub gamma_star_mhz: f64,
    pub coupling_mhz: f64,
    /// CSV profile (frequency_mhz, density_per_mhz) for a custom line shape.
    #[serde(default)]
    pub profile_path: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineshapeSection {
    #[serde(default)]
    pub system_index: Option<usize>,
    #[serde(default)]
    pub lower_level: Option<usize>,
    #[serde(default)]
    pub upper_level: Option<usize>,
    pub sigma_b_tesla: f64,
    /// 1 for a single axis, 3 for an isotropic distribution.
    pub dimensionality: u8,
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    pub grid_start_mhz: f64,
    pub grid_stop_mhz: f64,
    pub grid_step_mhz: f64,
    #[serde(default = "default_method")]
    pub method: String,
    pub samples: u64,
    /// Two-level avoided-crossing surrogate instead of a spin system.
    #[serde(default)]
    pub toy: Option<ToySection>,
}

fn default_method() -> String {
    "quadratic".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    pub gap_delta_mhz: f64,
    pub slope_mu_mhz_per_t: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub observed_path: String,
    pub free_parameters: Vec<FreeParameterSection>,
    #[serde(default = "default_matching")]
    pub matching: String,
    pub window_mhz: [f64; 2],
    #[serde(default)]
    pub strength_floor: Option<f64>,
    #[serde(default)]
    pub restarts: Option<usize>,
}

fn default_matching() -> String {
    "nearest".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParameterSection {
    #[serde(default)]
    pub system_index: usize,
    /// "A" (hyperfine) or "Q" (quadrupole).
    pub matrix: String,
    /// "xx" | "xy" | "xz" | "yy" | "yz" | "zz".
    pub element: String,
    pub min_mhz: f64,
    pub max_mhz: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default)]
    pub input_power_dbm: Option<f64>,
    #[serde(default)]
    pub input_power_watts: Option<f64>,
    pub gamma_star_mhz: f64,
    pub lower_level: usize,
    pub upper_level: usize,
    /// Explicit level list (MHz); taken from the spin system when absent.
    #[serde(default)]
    pub levels_mhz: Option<Vec<f64>>,
    #[serde(default)]
    pub system_index: Option<usize>,
    /// Overrides the dipole matrix element computed from the system.
    #[serde(default)]
    pub dipole_element_mhz_per_t: Option<f64>,
    #[serde(default)]
    pub coupling_correction: Option<f64>,
}

/// Fully-loaded run configuration with referenced files resolved.
pub struct RunConfig {
    pub file: RunConfigFile,
    pub systems: Vec<SpinSystem64>,
    pub ensemble: Option<EnsembleSpec<f64>>,
    pub cavity: Option<CavityMode<f64>>,
    pub base_dir: PathBuf,
    pub sha256: String,
}

impl RunConfig {
    pub fn seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.file.seed).unwrap_or(0)
    }

    pub fn temperature(&self) -> f64 {
        self.file.temperature_kelvin.unwrap_or(5.1)
    }

    pub fn drive_axis(&self) -> Result<Vector3<f64>> {
        let raw = self.file.drive_axis.unwrap_or(DEFAULT_DRIVE_AXIS);
        let v = Vector3::new(raw[0], raw[1], raw[2]);
        let norm = v.norm();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(CliError::config("drive_axis must be a non-zero vector"));
        }
        Ok(v / norm)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        resolve_path(&self.base_dir, relative)
    }

    pub fn ensemble(&self) -> Result<&EnsembleSpec<f64>> {
        self.ensemble
            .as_ref()
            .ok_or_else(|| CliError::config("this command needs an ensemble_path in the config"))
    }

    pub fn cavity(&self) -> Result<&CavityMode<f64>> {
        self.cavity
            .as_ref()
            .ok_or_else(|| CliError::config("this command needs a cavity_path in the config"))
    }
}

fn resolve_path(base: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("cannot parse {}: {e}", path.display())))
}

fn matrix3(entries: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| entries[i][j])
}

pub fn load_spin_system(path: &Path) -> Result<SpinSystem64> {
    let file: SpinSystemFile = read_json(path)?;
    SpinSystem64::new(
        file.electron_multiplicity,
        file.nuclear_multiplicity,
        matrix3(&file.g),
        matrix3(&file.a),
        matrix3(&file.q),
        file.g_n,
        file.site_label,
    )
    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let sha256 = hex_digest(&bytes);
    let file: RunConfigFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("cannot parse config {}: {e}", path.display())))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

    if file.spin_system_paths.is_empty() {
        return Err(CliError::config("spin_system_paths must name at least one file"));
    }
    let mut systems = Vec::with_capacity(file.spin_system_paths.len());
    for p in &file.spin_system_paths {
        systems.push(load_spin_system(&resolve_path(&base_dir, p))?);
    }

    let ensemble = match &file.ensemble_path {
        None => None,
        Some(p) => {
            let f: EnsembleFile = read_json(&resolve_path(&base_dir, p))?;
            let spec = EnsembleSpec {
                dopant_fraction: f.dopant_fraction,
                host_site_density_per_m3: f.host_site_density_per_m3,
                sample_volume_m3: f.sample_volume_m3,
                sites_per_ion_class: f.sites_per_ion_class,
            };
            spec.validate().map_err(from_engine)?;
            Some(spec)
        }
    };
    let cavity = match &file.cavity_path {
        None => None,
        Some(p) => {
            let f: CavityFile = read_json(&resolve_path(&base_dir, p))?;
            let mode = CavityMode {
                frequency_mhz: f.frequency_mhz,
                kappa_mhz: f.kappa_mhz,
                kappa_ext_mhz: f.kappa_ext_mhz.unwrap_or(f.kappa_mhz / 4.0),
                mode_volume_m3: f.mode_volume_m3,
                filling_factor: f.filling_factor,
            };
            mode.validate().map_err(from_engine)?;
            Some(mode)
        }
    };

    Ok(RunConfig { file, systems, ensemble, cavity, base_dir, sha256 })
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl GapScanSection {
    pub fn calibration(&self) -> TuningCalibration<f64> {
        TuningCalibration {
            slope_mhz_per_mm: self.slope_mhz_per_mm,
            reference_gap_mm: self.reference_gap_mm,
            reference_frequency_mhz: self.reference_frequency_mhz,
        }
    }
}

/// Map an element name like "xy" to the upper-triangular (row, col) pair.
pub fn element_indices(element: &str) -> Result<(usize, usize)> {
    match element {
        "xx" => Ok((0, 0)),
        "xy" => Ok((0, 1)),
        "xz" => Ok((0, 2)),
        "yy" => Ok((1, 1)),
        "yz" => Ok((1, 2)),
        "zz" => Ok((2, 2)),
        other => Err(CliError::config(format!(
            "unknown matrix element '{other}' (expected xx, xy, xz, yy, yz or zz)"
        ))),
    }
}
