//! Implementations of the CLI subcommands: thin orchestration over the
//! engine crate plus CSV/JSON I/O.

use std::path::Path;

use serde::Deserialize;

use zfepr_core::cavity::{
    gap_to_frequency, tuned_peak_sweep, EnsembleLine, LineShapeModel, SweepMetadata, SweepResult,
};
use zfepr_core::fit::{
    fit, reduce_sweep, FitProblem, FreeParameter, Matching, MatrixTarget, ObservedLine,
};
use zfepr_core::lineshape::{
    synthesize_profile, toy_profile, FieldDistribution, FieldGeometry, LineProfile,
    SynthesisMethod, ToyCrossing,
};
use zfepr_core::spin::{build_hamiltonian, eigensystem, enumerate_transitions, FieldVector};
use zfepr_core::thermal::{
    boltzmann_populations, collective_coupling, cooperativity, dbm_to_watts, ion_count,
    photon_number, rabi_frequency, single_photon_field, single_spin_coupling,
};
use zfepr_core::EnergyLevels64;

use crate::config::{element_indices, hex_digest, RunConfig};
use crate::error::{from_engine, CliError, Result};
use crate::output::{standard_header, Report};

fn zero_field_levels(config: &RunConfig, system_index: usize) -> Result<EnergyLevels64> {
    let sys = &config.systems[system_index];
    let h = build_hamiltonian(sys, &FieldVector::zero()).map_err(from_engine)?;
    eigensystem(&h).map_err(from_engine)
}

pub fn cmd_levels(config: &RunConfig, out: Option<&Path>, seed: u64) -> Result<()> {
    let mut report = Report::new(out);
    standard_header(&mut report, "levels", Some(&config.sha256), Some(seed));
    report.line("site,level_index,energy_mhz");
    for (idx, sys) in config.systems.iter().enumerate() {
        let levels = zero_field_levels(config, idx)?;
        for (k, e) in levels.values.iter().enumerate() {
            report.line(format!("{},{},{}", sys.site_label, k, e));
        }
    }
    report.finish()
}

pub fn cmd_transitions(config: &RunConfig, out: Option<&Path>, seed: u64) -> Result<()> {
    let section = config.file.transitions.as_ref();
    let window = section.and_then(|s| s.window_mhz).map(|w| (w[0], w[1]));
    let min_coupling = section.and_then(|s| s.min_coupling_mhz).unwrap_or(0.0);
    let ensemble = config.ensemble()?;
    let mode = config.cavity()?;
    let drive = config.drive_axis()?;
    let temperature = config.temperature();
    let n_total = ion_count(ensemble).map_err(from_engine)?;

    let mut rows: Vec<(f64, String, usize, usize, f64)> = Vec::new();
    for (idx, sys) in config.systems.iter().enumerate() {
        let levels = zero_field_levels(config, idx)?;
        let transitions = enumerate_transitions(&levels, sys, &drive, temperature, window)
            .map_err(from_engine)?;
        for tr in transitions {
            let delta_n = (n_total * tr.population_difference).max(0.0);
            let sqrt_ng = collective_coupling(&tr, mode, delta_n).map_err(from_engine)?;
            if sqrt_ng >= min_coupling {
                rows.push((tr.frequency, sys.site_label.clone(), tr.lower_index, tr.upper_index, sqrt_ng));
            }
        }
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite frequencies"));

    let mut report = Report::new(out);
    standard_header(&mut report, "transitions", Some(&config.sha256), Some(seed));
    report.comment("temperature_kelvin", temperature);
    report.line("frequency_mhz,sqrt_n_g_mhz,site,lower,upper");
    for (f, site, lower, upper, g) in rows {
        report.line(format!("{f},{g},{site},{lower},{upper}"));
    }
    report.finish()
}

fn sweep_set_points(section: &crate::config::SweepSection) -> Result<Vec<f64>> {
    if let Some(gap) = &section.gap_scan {
        if section.start_mhz.is_some() || section.stop_mhz.is_some() || section.step_mhz.is_some() {
            return Err(CliError::config(
                "sweep: give either start/stop/step_mhz or gap_scan, not both",
            ));
        }
        let cal = gap.calibration();
        if gap.step_gap_mm <= 0.0 || gap.stop_gap_mm < gap.start_gap_mm {
            return Err(CliError::config("sweep.gap_scan: invalid gap range"));
        }
        let n = ((gap.stop_gap_mm - gap.start_gap_mm) / gap.step_gap_mm).round() as usize;
        (0..=n)
            .map(|k| {
                let g = gap.start_gap_mm + k as f64 * gap.step_gap_mm;
                gap_to_frequency(&cal, g).map_err(from_engine)
            })
            .collect()
    } else {
        let (start, stop, step) = match (section.start_mhz, section.stop_mhz, section.step_mhz) {
            (Some(a), Some(b), Some(s)) => (a, b, s),
            _ => {
                return Err(CliError::config(
                    "sweep: start_mhz, stop_mhz and step_mhz are required (or a gap_scan)",
                ))
            }
        };
        if step <= 0.0 || stop < start {
            return Err(CliError::config("sweep: invalid frequency range"));
        }
        let n = ((stop - start) / step).round() as usize;
        Ok((0..=n).map(|k| start + k as f64 * step).collect())
    }
}

fn sweep_lines(config: &RunConfig, section: &crate::config::SweepSection) -> Result<Vec<EnsembleLine<f64>>> {
    section
        .lines
        .iter()
        .map(|l| {
            let shape = match &l.profile_path {
                None => LineShapeModel::Lorentzian,
                Some(p) => {
                    let path = config.resolve(p);
                    LineShapeModel::Density(read_profile_csv(&path)?)
                }
            };
            Ok(EnsembleLine {
                center_mhz: l.center_mhz,
                gamma_star_mhz: l.gamma_star_mhz,
                coupling_mhz: l.coupling_mhz,
                shape,
            })
        })
        .collect()
}

pub fn cmd_sweep(config: &RunConfig, out: Option<&Path>, seed: u64) -> Result<()> {
    let section = config
        .file
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("config has no 'sweep' section"))?;
    let mode = config.cavity()?;
    let set_points = sweep_set_points(section)?;
    let lines = sweep_lines(config, section)?;
    let jitter = section.jitter_sigma_mhz.unwrap_or(0.0);
    let steps = tuned_peak_sweep(
        &set_points,
        mode,
        &lines,
        jitter,
        section.grid_half_width_mhz,
        section.grid_step_mhz,
    )
    .map_err(from_engine)?;

    let mut report = Report::new(out);
    standard_header(&mut report, "sweep", Some(&config.sha256), Some(seed));
    if let Some(p) = section.input_power_dbm {
        report.comment("input_power_dbm", p);
    }
    report.comment("jitter_sigma_mhz", jitter);
    report.line("set_frequency_mhz,peak_frequency_mhz,peak_s21_squared,q_factor");
    for s in steps {
        report.line(format!(
            "{},{},{},{}",
            s.set_frequency_mhz, s.peak.frequency_mhz, s.peak.value, s.peak.q_factor
        ));
    }
    report.finish()
}

pub fn cmd_lineshape(config: &RunConfig, out: Option<&Path>, seed: u64) -> Result<()> {
    let section = config
        .file
        .lineshape
        .as_ref()
        .ok_or_else(|| CliError::config("config has no 'lineshape' section"))?;
    if section.grid_step_mhz <= 0.0 || section.grid_stop_mhz <= section.grid_start_mhz {
        return Err(CliError::config("lineshape: invalid grid range"));
    }
    let n = ((section.grid_stop_mhz - section.grid_start_mhz) / section.grid_step_mhz).round()
        as usize;
    let grid: Vec<f64> =
        (0..=n).map(|k| section.grid_start_mhz + k as f64 * section.grid_step_mhz).collect();

    let geometry = match section.dimensionality {
        1 => {
            let axis = section.axis.ok_or_else(|| {
                CliError::config("lineshape: dimensionality 1 requires an 'axis'")
            })?;
            let v = nalgebra::Vector3::new(axis[0], axis[1], axis[2]);
            let norm = v.norm();
            if norm <= 0.0 {
                return Err(CliError::config("lineshape: axis must be non-zero"));
            }
            FieldGeometry::Axis(v / norm)
        }
        3 => FieldGeometry::Isotropic,
        other => {
            return Err(CliError::config(format!(
                "lineshape: dimensionality must be 1 or 3 (got {other})"
            )))
        }
    };
    let dist = FieldDistribution { sigma_b_tesla: section.sigma_b_tesla, geometry };

    let profile = match &section.toy {
        Some(toy) => {
            let toy = ToyCrossing {
                gap_delta_mhz: toy.gap_delta_mhz,
                slope_mu_mhz_per_t: toy.slope_mu_mhz_per_t,
            };
            toy_profile(&toy, &dist, &grid, section.samples, seed).map_err(from_engine)?
        }
        None => {
            let system_index = section.system_index.unwrap_or(0);
            let sys = config.systems.get(system_index).ok_or_else(|| {
                CliError::config(format!("lineshape: no spin system with index {system_index}"))
            })?;
            let (lower, upper) = match (section.lower_level, section.upper_level) {
                (Some(l), Some(u)) => (l, u),
                _ => {
                    return Err(CliError::config(
                        "lineshape: lower_level and upper_level are required without a toy",
                    ))
                }
            };
            let method = match section.method.as_str() {
                "exact" => SynthesisMethod::Exact,
                "quadratic" => SynthesisMethod::Quadratic,
                other => {
                    return Err(CliError::config(format!(
                        "lineshape: unknown method '{other}' (expected exact or quadratic)"
                    )))
                }
            };
            synthesize_profile(sys, lower, upper, &dist, &grid, method, section.samples, seed)
                .map_err(from_engine)?
        }
    };

    let mut report = Report::new(out);
    standard_header(&mut report, "lineshape", Some(&config.sha256), Some(seed));
    report.comment("samples", section.samples);
    report.line("frequency_mhz,density_per_mhz");
    for (f, d) in profile.frequencies_mhz.iter().zip(&profile.density_per_mhz) {
        report.line(format!("{f},{d}"));
    }
    report.finish()
}

#[derive(Debug, Deserialize)]
struct ObservedRow {
    frequency_mhz: f64,
    uncertainty_mhz: Option<f64>,
    site_hint: Option<String>,
    assignment: Option<usize>,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::data(path, None, e.to_string()))
}

fn csv_line(err: &csv::Error) -> Option<u64> {
    err.position().map(|p| p.line())
}

pub fn read_observed_csv(path: &Path) -> Result<Vec<ObservedLine<f64>>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ObservedRow>() {
        let row = row.map_err(|e| CliError::data(path, csv_line(&e), e.to_string()))?;
        let mut line = ObservedLine::new(row.frequency_mhz);
        if let Some(u) = row.uncertainty_mhz {
            line.uncertainty_mhz = u;
        }
        line.site_hint = row.site_hint.filter(|s| !s.is_empty());
        line.assignment = row.assignment;
        out.push(line);
    }
    if out.is_empty() {
        return Err(CliError::data(path, None, "no observed lines in file"));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct SweepRow {
    frequency_mhz: f64,
    s21_squared: f64,
}

pub fn read_sweep_csv(path: &Path) -> Result<SweepResult<f64>> {
    let mut reader = csv_reader(path)?;
    let mut frequencies = Vec::new();
    let mut values = Vec::new();
    for row in reader.deserialize::<SweepRow>() {
        let row = row.map_err(|e| CliError::data(path, csv_line(&e), e.to_string()))?;
        frequencies.push(row.frequency_mhz);
        values.push(row.s21_squared);
    }
    if frequencies.len() < 3 {
        return Err(CliError::data(path, None, "sweep needs at least three rows"));
    }
    Ok(SweepResult {
        frequencies_mhz: frequencies,
        s21_squared: values,
        metadata: SweepMetadata::default(),
    })
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    frequency_mhz: f64,
    density_per_mhz: f64,
}

pub fn read_profile_csv(path: &Path) -> Result<LineProfile<f64>> {
    let mut reader = csv_reader(path)?;
    let mut frequencies = Vec::new();
    let mut density = Vec::new();
    for row in reader.deserialize::<ProfileRow>() {
        let row = row.map_err(|e| CliError::data(path, csv_line(&e), e.to_string()))?;
        frequencies.push(row.frequency_mhz);
        density.push(row.density_per_mhz);
    }
    let profile = LineProfile { frequencies_mhz: frequencies, density_per_mhz: density };
    profile
        .validate()
        .map_err(|e| CliError::data(path, None, e.to_string()))?;
    Ok(profile)
}

pub fn cmd_fit(config: &RunConfig, out: Option<&Path>, seed: u64) -> Result<()> {
    let section = config
        .file
        .fit
        .as_ref()
        .ok_or_else(|| CliError::config("config has no 'fit' section"))?;
    let observed = read_observed_csv(&config.resolve(&section.observed_path))?;

    let mut free = Vec::with_capacity(section.free_parameters.len());
    let mut bounds = Vec::with_capacity(section.free_parameters.len());
    for p in &section.free_parameters {
        let target = match p.matrix.as_str() {
            "A" => MatrixTarget::Hyperfine,
            "Q" => MatrixTarget::Quadrupole,
            other => {
                return Err(CliError::config(format!(
                    "fit: unknown matrix '{other}' (expected A or Q)"
                )))
            }
        };
        let (row, col) = element_indices(&p.element)?;
        free.push(
            FreeParameter::new(p.system_index, target, row, col)
                .map_err(from_engine)?,
        );
        bounds.push((p.min_mhz, p.max_mhz));
    }
    let matching = match section.matching.as_str() {
        "nearest" => Matching::Nearest,
        "assigned" => Matching::Assigned,
        other => {
            return Err(CliError::config(format!(
                "fit: unknown matching '{other}' (expected nearest or assigned)"
            )))
        }
    };

    let problem = FitProblem {
        systems: config.systems.clone(),
        free,
        bounds_mhz: bounds,
        observed,
        matching,
        window_mhz: (section.window_mhz[0], section.window_mhz[1]),
        strength_floor: section.strength_floor.unwrap_or(0.0),
        temperature_k: config.temperature(),
        drive_axis: config.drive_axis()?,
        seed,
        restarts: section.restarts.unwrap_or(zfepr_core::fit::DEFAULT_RESTARTS),
    };
    if problem.is_underdetermined() {
        eprintln!(
            "warning: {} observations constrain {} free parameters; the result is not unique",
            problem.observed.len(),
            problem.free.len()
        );
    }
    let result = fit(&problem).map_err(from_engine)?;

    // Human-readable summary on stderr; the JSON report is the artifact.
    eprintln!("fit: converged={} objective={:.6e} MHz^2 iterations={} restarts_used={}",
        result.converged, result.objective, result.iterations, result.restarts_used);
    eprintln!("{:<10} {:>14} {:>14} {:>12}", "observed", "frequency_mhz", "residual_mhz", "matched");
    for (obs, res) in problem.observed.iter().zip(&result.residuals_mhz) {
        match res {
            Some(r) => eprintln!(
                "{:<10} {:>14.4} {:>14.6} {:>12}",
                "", obs.frequency_mhz, r, "yes"
            ),
            None => eprintln!("{:<10} {:>14.4} {:>14} {:>12}", "", obs.frequency_mhz, "-", "no"),
        }
    }

    let json = serde_json::json!({
        "command": "fit",
        "config_sha256": config.sha256,
        "seed": seed,
        "converged": result.converged,
        "objective_mhz2": result.objective,
        "iterations": result.iterations,
        "restarts_used": result.restarts_used,
        "parameters": problem.free.iter().zip(&result.parameters).map(|(p, v)| {
            serde_json::json!({
                "system_index": p.system_index,
                "matrix": match p.target { MatrixTarget::Hyperfine => "A", MatrixTarget::Quadrupole => "Q" },
                "row": p.row,
                "col": p.col,
                "value_mhz": v,
            })
        }).collect::<Vec<_>>(),
        "residuals_mhz": result.residuals_mhz,
        "refined_systems": result.systems.iter().map(|s| {
            serde_json::json!({
                "site_label": s.site_label,
                "g": matrix_rows(&s.g_matrix),
                "A": matrix_rows(&s.a_matrix),
                "Q": matrix_rows(&s.q_matrix),
                "g_n": s.g_n,
            })
        }).collect::<Vec<_>>(),
    });
    let mut report = Report::new(out);
    report.line(serde_json::to_string_pretty(&json).expect("report serializes"));
    report.finish()
}

fn matrix_rows(m: &nalgebra::Matrix3<f64>) -> Vec<Vec<f64>> {
    (0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect()
}

pub fn cmd_budget(config: &RunConfig, out: Option<&Path>, seed: u64) -> Result<()> {
    let section = config
        .file
        .budget
        .as_ref()
        .ok_or_else(|| CliError::config("config has no 'budget' section"))?;
    let ensemble = config.ensemble()?;
    let mode = config.cavity()?;
    let temperature = config.temperature();

    let p_watts = match (section.input_power_dbm, section.input_power_watts) {
        (Some(dbm), None) => dbm_to_watts(dbm),
        (None, Some(w)) => w,
        (None, None) => {
            return Err(CliError::config(
                "budget: give input_power_dbm or input_power_watts",
            ))
        }
        (Some(_), Some(_)) => {
            return Err(CliError::config(
                "budget: give only one of input_power_dbm / input_power_watts",
            ))
        }
    };

    // Level structure: explicit list or the configured spin system.
    let (levels, dipole) = match &section.levels_mhz {
        Some(values) => {
            if values.windows(2).any(|w| w[1] < w[0]) {
                return Err(CliError::config("budget: levels_mhz must be ascending"));
            }
            let n = values.len();
            let levels = EnergyLevels64 {
                values: nalgebra::DVector::from_row_slice(values),
                vectors: nalgebra::DMatrix::identity(n, n),
            };
            let dipole = section.dipole_element_mhz_per_t.ok_or_else(|| {
                CliError::config(
                    "budget: dipole_element_mhz_per_t is required with explicit levels_mhz",
                )
            })?;
            (levels, dipole)
        }
        None => {
            let idx = section.system_index.unwrap_or(0);
            if idx >= config.systems.len() {
                return Err(CliError::config(format!("budget: no spin system with index {idx}")));
            }
            let levels = zero_field_levels(config, idx)?;
            let dipole = match section.dipole_element_mhz_per_t {
                Some(d) => d,
                None => {
                    let drive = config.drive_axis()?;
                    let transitions = enumerate_transitions(
                        &levels,
                        &config.systems[idx],
                        &drive,
                        temperature,
                        None,
                    )
                    .map_err(from_engine)?;
                    transitions
                        .iter()
                        .find(|t| {
                            t.lower_index == section.lower_level
                                && t.upper_index == section.upper_level
                        })
                        .map(|t| t.dipole_element)
                        .ok_or_else(|| {
                            CliError::config("budget: requested transition not found")
                        })?
                }
            };
            (levels, dipole)
        }
    };
    if section.lower_level >= levels.len() || section.upper_level >= levels.len() {
        return Err(CliError::config("budget: level index out of range"));
    }

    let populations = boltzmann_populations(&levels, temperature).map_err(from_engine)?;
    let frequency = levels.frequency(section.lower_level, section.upper_level);
    let n_total = ion_count(ensemble).map_err(from_engine)?;
    let delta_n =
        (n_total * (populations[section.lower_level] - populations[section.upper_level])).max(0.0);
    let b1 = single_photon_field(mode).map_err(from_engine)?;
    let g1 = single_spin_coupling(dipole, mode).map_err(from_engine)?;
    let sqrt_ng = delta_n.sqrt() * g1;
    let correction = section.coupling_correction.unwrap_or(1.0);
    let n_photons = photon_number(mode, p_watts, correction).map_err(from_engine)?;
    let omega = rabi_frequency(g1, n_photons).map_err(from_engine)?;
    let coop = cooperativity(sqrt_ng, mode.kappa_mhz, section.gamma_star_mhz).map_err(from_engine)?;

    let mut report = Report::new(out);
    standard_header(&mut report, "budget", Some(&config.sha256), Some(seed));
    report.comment("temperature_kelvin", temperature);
    report.comment("input_power_watts", p_watts);
    report.line("quantity,value,unit");
    report.line(format!("transition_frequency,{frequency:e},MHz"));
    report.line(format!("ion_count_per_class,{n_total:e},1"));
    report.line(format!("population_difference,{delta_n:e},1"));
    report.line(format!("single_photon_field,{b1:e},T"));
    report.line(format!("single_spin_coupling,{g1:e},MHz"));
    report.line(format!("collective_coupling,{sqrt_ng:e},MHz"));
    report.line(format!("photon_number,{n_photons:e},1"));
    report.line(format!("rabi_frequency,{omega:e},MHz"));
    report.line(format!("cooperativity,{coop:e},1"));
    report.finish()
}

pub fn cmd_ingest(path: &Path, out: Option<&Path>, config: Option<&RunConfig>) -> Result<()> {
    let sweep = read_sweep_csv(path)?;
    let peak = reduce_sweep(&sweep).map_err(|e| match e {
        zfepr_core::Error::Numerical(msg) => CliError::Numerical(msg),
        zfepr_core::Error::Invalid(msg) => CliError::data(path, None, msg),
    })?;
    let bytes = std::fs::read(path)?;

    let mut report = Report::new(out);
    standard_header(&mut report, "ingest", config.map(|c| c.sha256.as_str()), None);
    report.comment("input_sha256", hex_digest(&bytes));
    report.line("center_mhz,peak_value,q_factor,fwhm_mhz");
    report.line(format!(
        "{},{},{},{}",
        peak.frequency_mhz, peak.value, peak.q_factor, peak.fwhm_mhz
    ));
    report.finish()
}
