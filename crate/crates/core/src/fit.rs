//! Refinement of spin-Hamiltonian parameters against observed zero-field
//! line centres: weighted least squares over predicted transition
//! frequencies, minimized by a bounded Nelder-Mead simplex with random
//! restarts.
//!
//! Only A and Q entries are adjustable: zero-field frequencies do not depend
//! on g, so g (and g_n) are unidentifiable from this data and stay fixed.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cavity::{extract_peak, PeakSummary, SweepResult};
use crate::error::{Error, Result};
use crate::real::{cast, Real};
use crate::spin::{build_hamiltonian, eigensystem, enumerate_transitions, FieldVector, SpinSystem};

/// One measured line centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedLine<T: Real> {
    pub frequency_mhz: T,
    /// 1-sigma uncertainty, MHz.
    pub uncertainty_mhz: T,
    /// Site label selecting the system the assignment refers to (first
    /// system when absent).
    pub site_hint: Option<String>,
    /// Canonical transition index (see [`transition_index`]) when the
    /// matching mode is `Assigned`. Pair identity, not list position, so an
    /// assignment stays meaningful while parameters move.
    pub assignment: Option<usize>,
}

/// Canonical index of the ordered level pair (lower < upper) among all
/// pairs of a `dim`-level system, enumerated lexicographically:
/// (0,1), (0,2), ..., (0,dim-1), (1,2), ...
pub fn transition_index(dim: usize, lower: usize, upper: usize) -> Result<usize> {
    if lower >= upper || upper >= dim {
        return Err(Error::invalid("transition pair out of range"));
    }
    Ok(lower * (2 * dim - lower - 1) / 2 + (upper - lower - 1))
}

/// Inverse of [`transition_index`].
pub fn transition_pair(dim: usize, index: usize) -> Result<(usize, usize)> {
    let mut remaining = index;
    for lower in 0..dim.saturating_sub(1) {
        let row = dim - lower - 1;
        if remaining < row {
            return Ok((lower, lower + 1 + remaining));
        }
        remaining -= row;
    }
    Err(Error::invalid(format!(
        "transition index {index} exceeds the {} pairs of a {dim}-level system",
        dim * dim.saturating_sub(1) / 2
    )))
}

/// Default line-centre uncertainty, MHz.
pub const DEFAULT_UNCERTAINTY_MHZ: f64 = 1.0;

impl<T: Real> ObservedLine<T> {
    pub fn new(frequency_mhz: T) -> Self {
        ObservedLine {
            frequency_mhz,
            uncertainty_mhz: cast(DEFAULT_UNCERTAINTY_MHZ),
            site_hint: None,
            assignment: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequency_mhz <= T::zero() {
            return Err(Error::invalid("observed frequency must be positive"));
        }
        if self.uncertainty_mhz <= T::zero() {
            return Err(Error::invalid("observed uncertainty must be positive"));
        }
        Ok(())
    }
}

/// Which symmetric matrix of a system a free parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixTarget {
    Hyperfine,
    Quadrupole,
}

/// Independent entries of a symmetric 3x3 matrix, canonical order.
pub const SYMMETRIC_ENTRIES: [(usize, usize); 6] =
    [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// One adjustable spin-Hamiltonian entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParameter {
    pub system_index: usize,
    pub target: MatrixTarget,
    /// Row/column of the upper-triangular entry; the symmetric partner moves
    /// with it.
    pub row: usize,
    pub col: usize,
}

impl FreeParameter {
    pub fn new(system_index: usize, target: MatrixTarget, row: usize, col: usize) -> Result<Self> {
        if row > 2 || col > 2 || row > col {
            return Err(Error::invalid(
                "free parameter must address an upper-triangular 3x3 entry",
            ));
        }
        Ok(FreeParameter { system_index, target, row, col })
    }
}

/// How predictions are paired with observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matching {
    /// Each observation carries a fixed predicted-line index.
    Assigned,
    /// Greedy one-to-one nearest-frequency matching, ties broken towards the
    /// stronger predicted line.
    Nearest,
}

/// Full description of a refinement problem.
#[derive(Debug, Clone)]
pub struct FitProblem<T: Real> {
    pub systems: Vec<SpinSystem<T>>,
    pub free: Vec<FreeParameter>,
    /// Absolute [low, high] interval per free parameter, MHz.
    pub bounds_mhz: Vec<(T, T)>,
    pub observed: Vec<ObservedLine<T>>,
    pub matching: Matching,
    /// Window for predicted lines; also sets the penalty scale for
    /// unmatched observations.
    pub window_mhz: (T, T),
    /// Minimum weighted strength for a predicted line to participate.
    pub strength_floor: T,
    pub temperature_k: T,
    /// Microwave drive direction for transition strengths.
    pub drive_axis: Vector3<T>,
    pub seed: u64,
    /// Number of random restarts after the baseline start.
    pub restarts: usize,
}

/// Default number of random restarts.
pub const DEFAULT_RESTARTS: usize = 8;

/// Nelder-Mead iteration cap per start.
pub const MAX_ITERATIONS: usize = 2000;

/// Convergence threshold on the simplex objective spread, MHz^2.
pub const SPREAD_TOL: f64 = 1e-6;

impl<T: Real> FitProblem<T> {
    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::invalid("fit problem needs at least one system"));
        }
        for sys in &self.systems {
            sys.validate()?;
        }
        if self.free.is_empty() {
            return Err(Error::invalid("fit problem needs at least one free parameter"));
        }
        if self.bounds_mhz.len() != self.free.len() {
            return Err(Error::invalid("one bounds interval required per free parameter"));
        }
        for (lo, hi) in &self.bounds_mhz {
            if lo >= hi {
                return Err(Error::invalid("parameter bounds must satisfy low < high"));
            }
        }
        for p in &self.free {
            if p.system_index >= self.systems.len() {
                return Err(Error::invalid("free parameter references a missing system"));
            }
        }
        if self.observed.is_empty() {
            return Err(Error::invalid("fit problem needs observations"));
        }
        for obs in &self.observed {
            obs.validate()?;
            if self.matching == Matching::Assigned && obs.assignment.is_none() {
                return Err(Error::invalid(
                    "assigned matching requires an assignment on every observation",
                ));
            }
        }
        if self.window_mhz.0 >= self.window_mhz.1 {
            return Err(Error::invalid("fit window must satisfy low < high"));
        }
        if self.temperature_k <= T::zero() {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(())
    }

    /// Fewer observations than free parameters: the refinement is
    /// underdetermined and the result reports residuals, not unique
    /// parameters. Callers may want to surface a warning.
    pub fn is_underdetermined(&self) -> bool {
        self.observed.len() < self.free.len()
    }

    /// Current values of the free parameters in the base systems.
    pub fn baseline_parameters(&self) -> Vec<T> {
        self.free
            .iter()
            .map(|p| {
                let sys = &self.systems[p.system_index];
                match p.target {
                    MatrixTarget::Hyperfine => sys.a_matrix[(p.row, p.col)],
                    MatrixTarget::Quadrupole => sys.q_matrix[(p.row, p.col)],
                }
            })
            .collect()
    }

    /// Systems with the free entries replaced by `params` (symmetric
    /// partners updated together).
    pub fn apply_parameters(&self, params: &[T]) -> Result<Vec<SpinSystem<T>>> {
        if params.len() != self.free.len() {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        let mut systems = self.systems.clone();
        for (p, &value) in self.free.iter().zip(params) {
            let sys = &mut systems[p.system_index];
            let m = match p.target {
                MatrixTarget::Hyperfine => &mut sys.a_matrix,
                MatrixTarget::Quadrupole => &mut sys.q_matrix,
            };
            m[(p.row, p.col)] = value;
            m[(p.col, p.row)] = value;
        }
        Ok(systems)
    }
}

/// A predicted zero-field line.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLine<T: Real> {
    pub frequency_mhz: T,
    /// Weighted strength (dipole element times sqrt of population
    /// difference), MHz/T.
    pub strength: T,
    pub site_label: String,
    pub system_index: usize,
    pub lower_index: usize,
    pub upper_index: usize,
}

/// Zero-field transitions of all systems inside a window, above a strength
/// floor, sorted by frequency.
pub fn predict_lines<T: Real>(
    systems: &[SpinSystem<T>],
    window_mhz: (T, T),
    strength_floor: T,
    drive_axis: &Vector3<T>,
    temperature_k: T,
) -> Result<Vec<PredictedLine<T>>> {
    let mut out = Vec::new();
    for (system_index, sys) in systems.iter().enumerate() {
        let h = build_hamiltonian(sys, &FieldVector::zero())?;
        let levels = eigensystem(&h)?;
        let transitions =
            enumerate_transitions(&levels, sys, drive_axis, temperature_k, Some(window_mhz))?;
        for tr in transitions {
            if tr.weighted_strength >= strength_floor {
                out.push(PredictedLine {
                    frequency_mhz: tr.frequency,
                    strength: tr.weighted_strength,
                    site_label: sys.site_label.clone(),
                    system_index,
                    lower_index: tr.lower_index,
                    upper_index: tr.upper_index,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.frequency_mhz
            .partial_cmp(&b.frequency_mhz)
            .expect("finite frequencies")
            .then(a.system_index.cmp(&b.system_index))
            .then(a.lower_index.cmp(&b.lower_index))
            .then(a.upper_index.cmp(&b.upper_index))
    });
    Ok(out)
}

/// Residuals (predicted minus observed, MHz) for candidate systems under
/// the problem's matching rule; `None` marks an unmatched observation
/// (penalized in the objective).
pub fn residuals_for_systems<T: Real>(
    problem: &FitProblem<T>,
    systems: &[SpinSystem<T>],
) -> Result<Vec<Option<T>>> {
    match problem.matching {
        Matching::Assigned => {
            let mut levels = Vec::with_capacity(systems.len());
            for sys in systems {
                let h = build_hamiltonian(sys, &FieldVector::zero())?;
                levels.push(eigensystem(&h)?);
            }
            problem
                .observed
                .iter()
                .map(|obs| {
                    let system_index = match &obs.site_hint {
                        None => 0,
                        Some(hint) => systems
                            .iter()
                            .position(|s| &s.site_label == hint)
                            .ok_or_else(|| {
                                Error::invalid(format!("site_hint '{hint}' matches no system"))
                            })?,
                    };
                    let idx = obs
                        .assignment
                        .ok_or_else(|| Error::invalid("observation lacks an assignment"))?;
                    let (lower, upper) = transition_pair(systems[system_index].dim(), idx)?;
                    Ok(Some(levels[system_index].frequency(lower, upper) - obs.frequency_mhz))
                })
                .collect()
        }
        Matching::Nearest => {
            let predicted = predict_lines(
                systems,
                problem.window_mhz,
                problem.strength_floor,
                &problem.drive_axis,
                problem.temperature_k,
            )?;
            let predicted = &predicted;
            // Greedy one-to-one assignment by ascending |distance|, ties by
            // higher predicted strength, then by stable indices.
            let mut pairs: Vec<(T, usize, usize)> = Vec::new();
            for (oi, obs) in problem.observed.iter().enumerate() {
                for (pj, line) in predicted.iter().enumerate() {
                    pairs.push(((line.frequency_mhz - obs.frequency_mhz).abs(), oi, pj));
                }
            }
            pairs.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("finite distances")
                    .then_with(|| {
                        predicted[b.2]
                            .strength
                            .partial_cmp(&predicted[a.2].strength)
                            .expect("finite strengths")
                    })
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut matched: Vec<Option<T>> = vec![None; problem.observed.len()];
            let mut obs_done = vec![false; problem.observed.len()];
            let mut pred_done = vec![false; predicted.len()];
            for (_, oi, pj) in pairs {
                if obs_done[oi] || pred_done[pj] {
                    continue;
                }
                obs_done[oi] = true;
                pred_done[pj] = true;
                matched[oi] =
                    Some(predicted[pj].frequency_mhz - problem.observed[oi].frequency_mhz);
            }
            Ok(matched)
        }
    }
}

fn objective_from_residuals<T: Real>(problem: &FitProblem<T>, residuals: &[Option<T>]) -> T {
    let window_width = problem.window_mhz.1 - problem.window_mhz.0;
    residuals
        .iter()
        .zip(&problem.observed)
        .map(|(r, obs)| match r {
            Some(residual) => {
                let scaled = *residual / obs.uncertainty_mhz;
                scaled * scaled
            }
            None => {
                let scaled = window_width / obs.uncertainty_mhz;
                scaled * scaled
            }
        })
        .sum()
}

/// Weighted least-squares objective sum((f_pred - f_obs)/u)^2, MHz^2.
pub fn objective<T: Real>(problem: &FitProblem<T>, params: &[T]) -> Result<T> {
    problem.validate()?;
    for (value, (lo, hi)) in params.iter().zip(&problem.bounds_mhz) {
        if value < lo || value > hi {
            return Err(Error::invalid("parameter vector violates its bounds"));
        }
    }
    let systems = problem.apply_parameters(params)?;
    let res = residuals_for_systems(problem, &systems)?;
    Ok(objective_from_residuals(problem, &res))
}

/// Outcome of a refinement run.
#[derive(Debug, Clone)]
pub struct FitResult<T: Real> {
    pub systems: Vec<SpinSystem<T>>,
    pub parameters: Vec<T>,
    /// Per-observation residual (predicted minus observed), MHz; `None` for
    /// unmatched observations.
    pub residuals_mhz: Vec<Option<T>>,
    /// Weighted objective, MHz^2.
    pub objective: T,
    pub converged: bool,
    /// Nelder-Mead iterations of the winning start.
    pub iterations: usize,
    pub restarts_used: usize,
}

struct NmOutcome<T> {
    x: Vec<T>,
    fx: T,
    iterations: usize,
    converged: bool,
}

fn clamp_to_bounds<T: Real>(x: &mut [T], bounds: &[(T, T)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = (*v).clamp(*lo, *hi);
    }
}

/// Nelder-Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5;
/// candidates are projected onto the bounds box.
fn nelder_mead<T: Real>(
    f: &mut dyn FnMut(&[T]) -> Result<T>,
    start: &[T],
    bounds: &[(T, T)],
) -> Result<NmOutcome<T>> {
    let dim = start.len();
    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut v = start.to_vec();
        let scale = (bounds[i].1 - bounds[i].0) * cast(0.05);
        // Step towards the interior if the start hugs the upper bound.
        if v[i] + scale <= bounds[i].1 {
            v[i] += scale;
        } else {
            v[i] -= scale;
        }
        clamp_to_bounds(&mut v, bounds);
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|v| f(v)).collect::<Result<_>>()?;

    let spread_tol = cast::<T>(SPREAD_TOL);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite objective"));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        if values[worst] - values[best] < spread_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); dim];
        for &idx in order.iter().take(dim) {
            for (c, v) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += *v;
            }
        }
        let inv = cast::<T>(1.0 / dim as f64);
        for c in centroid.iter_mut() {
            *c *= inv;
        }

        let blend = |a: &[T], b: &[T], t: T| -> Vec<T> {
            let mut out: Vec<T> =
                a.iter().zip(b).map(|(&x, &y)| x + t * (y - x)).collect();
            clamp_to_bounds(&mut out, bounds);
            out
        };

        // Reflection (coefficient 1): x_r = centroid + (centroid - worst).
        let reflected = blend(&simplex[worst], &centroid, cast(2.0));
        let f_reflected = f(&reflected)?;
        if f_reflected < values[second_worst] && f_reflected >= values[best] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        if f_reflected < values[best] {
            // Expansion (coefficient 2 past the centroid).
            let expanded = blend(&simplex[worst], &centroid, cast(3.0));
            let f_expanded = f(&expanded)?;
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        // Contraction (coefficient 0.5 towards the centroid).
        let contracted = blend(&simplex[worst], &centroid, cast(0.5));
        let f_contracted = f(&contracted)?;
        if f_contracted < values[worst] {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        // Shrink everything towards the best vertex (coefficient 0.5).
        let best_point = simplex[best].clone();
        for idx in 0..simplex.len() {
            if idx == best {
                continue;
            }
            simplex[idx] = blend(&simplex[idx], &best_point, cast(0.5));
            values[idx] = f(&simplex[idx])?;
        }
    }

    let mut best = 0;
    for k in 1..values.len() {
        if values[k] < values[best] {
            best = k;
        }
    }
    Ok(NmOutcome { x: simplex[best].clone(), fx: values[best], iterations, converged })
}

/// Objective below which a start counts as an exact fit and remaining
/// restarts are skipped (matches the simplex spread tolerance: further
/// starts cannot do meaningfully better).
const EARLY_EXIT_OBJECTIVE: f64 = 1e-6;

/// Run the refinement: baseline start plus `restarts` random starts drawn
/// uniformly within bounds from the problem seed; the best outcome wins.
/// Deterministic for a fixed seed.
pub fn fit<T: Real>(problem: &FitProblem<T>) -> Result<FitResult<T>> {
    problem.validate()?;
    let baseline = problem.baseline_parameters();
    for (value, (lo, hi)) in baseline.iter().zip(&problem.bounds_mhz) {
        if value < lo || value > hi {
            return Err(Error::invalid(
                "baseline parameter lies outside its bounds; widen the bounds",
            ));
        }
    }
    let baseline_objective = objective(problem, &baseline)?;

    let mut eval = |x: &[T]| objective(problem, x);
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut best: Option<(NmOutcome<T>, usize)> = None;
    let mut restarts_used = 0;

    for attempt in 0..=problem.restarts {
        let start: Vec<T> = if attempt == 0 {
            baseline.clone()
        } else {
            restarts_used += 1;
            problem
                .bounds_mhz
                .iter()
                .map(|(lo, hi)| {
                    let u: f64 = rng.random();
                    *lo + (*hi - *lo) * cast::<T>(u)
                })
                .collect()
        };
        let outcome = nelder_mead(&mut eval, &start, &problem.bounds_mhz)?;
        let better = match &best {
            None => true,
            Some((incumbent, _)) => outcome.fx < incumbent.fx,
        };
        if better {
            best = Some((outcome, attempt));
        }
        if let Some((incumbent, _)) = &best {
            if incumbent.fx < cast(EARLY_EXIT_OBJECTIVE) {
                break;
            }
        }
    }

    let (outcome, _) = best.expect("at least the baseline start ran");
    if outcome.fx > baseline_objective {
        // No candidate improved on the baseline; report the baseline.
        let systems = problem.apply_parameters(&baseline)?;
        let res = residuals_for_systems(problem, &systems)?;
        return Ok(FitResult {
            systems,
            parameters: baseline,
            residuals_mhz: res,
            objective: baseline_objective,
            converged: false,
            iterations: outcome.iterations,
            restarts_used,
        });
    }

    let systems = problem.apply_parameters(&outcome.x)?;
    let res = residuals_for_systems(problem, &systems)?;
    Ok(FitResult {
        systems,
        parameters: outcome.x,
        residuals_mhz: res,
        objective: outcome.fx,
        converged: outcome.converged,
        iterations: outcome.iterations,
        restarts_used,
    })
}

/// Reduce a measured sweep to (centre, peak, Q); the ingestion entry point
/// for network-analyser CSV data.
pub fn reduce_sweep<T: Real>(sweep: &SweepResult<T>) -> Result<PeakSummary<T>> {
    extract_peak(sweep)
}


#[cfg(test)]
mod feasibility_tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::presets::demo_site1;

    #[test]
    fn four_observed_lines_can_be_fit_below_one_megahertz() {
        // Four measured dip centres, six free hyperfine/quadrupole entries,
        // nearest matching inside the scan window. This is a feasibility
        // property of the refinement machinery: the recovered parameters are
        // not claimed to be unique.
        let base = demo_site1::<f64>();
        let free = vec![
            FreeParameter::new(0, MatrixTarget::Hyperfine, 0, 0).unwrap(),
            FreeParameter::new(0, MatrixTarget::Hyperfine, 1, 1).unwrap(),
            FreeParameter::new(0, MatrixTarget::Hyperfine, 2, 2).unwrap(),
            FreeParameter::new(0, MatrixTarget::Hyperfine, 1, 2).unwrap(),
            FreeParameter::new(0, MatrixTarget::Quadrupole, 0, 0).unwrap(),
            FreeParameter::new(0, MatrixTarget::Quadrupole, 1, 1).unwrap(),
        ];
        let bounds: Vec<(f64, f64)> = free
            .iter()
            .map(|p| {
                let v = match p.target {
                    MatrixTarget::Hyperfine => base.a_matrix[(p.row, p.col)],
                    MatrixTarget::Quadrupole => base.q_matrix[(p.row, p.col)],
                };
                (v - 120.0, v + 120.0)
            })
            .collect();
        let problem = FitProblem {
            systems: vec![base],
            free,
            bounds_mhz: bounds,
            observed: vec![
                ObservedLine::new(3045.9),
                ObservedLine::new(3066.5),
                ObservedLine::new(3147.4),
                ObservedLine::new(3176.2),
            ],
            matching: Matching::Nearest,
            window_mhz: (3020.0, 3200.0),
            strength_floor: 100.0,
            temperature_k: 5.1,
            drive_axis: Vector3::y(),
            seed: 20260810,
            restarts: 8,
        };
        let result = fit(&problem).unwrap();
        assert!(result.converged);
        let max_residual = result
            .residuals_mhz
            .iter()
            .map(|r| r.map(f64::abs).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        assert!(max_residual < 1.0, "max residual {max_residual} MHz");
    }
}
