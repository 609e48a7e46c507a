//! Transition enumeration with magnetic-dipole matrix elements and thermal
//! population weights.

use nalgebra::Vector3;

use super::{magnetic_moment_operator, EnergyLevels, SpinSystem};
use crate::error::{Error, Result};
use crate::real::{cast, Real};
use crate::thermal::boltzmann_populations;

/// Levels closer than this (MHz) count as degenerate when transition
/// strengths are summed in quadrature over degenerate partners.
pub const DEGENERACY_TOL_MHZ: f64 = 1e-6;

/// One level pair of the zero-field (or fixed-field) spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T: Real> {
    pub lower_index: usize,
    pub upper_index: usize,
    /// Transition frequency, MHz, non-negative.
    pub frequency: T,
    /// |<upper| M_n |lower>| in MHz/T, quadrature-summed over degenerate
    /// partners so the value is independent of the basis chosen inside a
    /// degenerate cluster.
    pub dipole_element: T,
    /// Fractional Boltzmann population difference p_lower - p_upper.
    pub population_difference: T,
    /// dipole_element * sqrt(|population_difference|), MHz/T.
    pub weighted_strength: T,
}

/// Group sorted level indices into degenerate clusters.
pub(crate) fn degenerate_clusters<T: Real>(values: &[T], tol: T) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (idx, &v) in values.iter().enumerate() {
        match clusters.last_mut() {
            Some(cluster) if (v - values[cluster[0]]).abs() <= tol => cluster.push(idx),
            _ => clusters.push(vec![idx]),
        }
    }
    clusters
}

/// Enumerate every ordered level pair (lower < upper), optionally restricted
/// to a frequency window, sorted by frequency.
pub fn enumerate_transitions<T: Real>(
    levels: &EnergyLevels<T>,
    sys: &SpinSystem<T>,
    drive: &Vector3<T>,
    temperature_k: T,
    window_mhz: Option<(T, T)>,
) -> Result<Vec<Transition<T>>> {
    if levels.len() != sys.dim() {
        return Err(Error::invalid(format!(
            "levels dimension {} does not match system dimension {}",
            levels.len(),
            sys.dim()
        )));
    }
    if let Some((lo, hi)) = window_mhz {
        if lo > hi {
            return Err(Error::invalid("frequency window is inverted"));
        }
    }
    let moment = magnetic_moment_operator(sys, drive)?;
    let populations = boltzmann_populations(levels, temperature_k)?;

    // Moment operator in the energy eigenbasis.
    let m_eig = levels.vectors.adjoint() * moment * &levels.vectors;

    let values: Vec<T> = levels.values.iter().copied().collect();
    let clusters = degenerate_clusters(&values, cast(DEGENERACY_TOL_MHZ));
    let mut cluster_of = vec![0usize; values.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            cluster_of[m] = c;
        }
    }

    let n = values.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for lower in 0..n {
        for upper in (lower + 1)..n {
            let frequency = values[upper] - values[lower];
            if let Some((lo, hi)) = window_mhz {
                if frequency < lo || frequency > hi {
                    continue;
                }
            }
            // Quadrature sum of |<j'|M|i'>|^2 over the two degenerate
            // clusters: the Frobenius norm of the projected block, which is
            // the only combination independent of the basis chosen inside a
            // degenerate cluster. For a pair of non-degenerate levels this
            // reduces to |<upper|M|lower>|.
            let mut strength_sq = T::zero();
            for &i in &clusters[cluster_of[lower]] {
                for &j in &clusters[cluster_of[upper]] {
                    strength_sq += m_eig[(j, i)].norm_sqr();
                }
            }
            let dipole_element = strength_sq.sqrt();
            let population_difference = populations[lower] - populations[upper];
            let weighted_strength = dipole_element * population_difference.abs().sqrt();
            out.push(Transition {
                lower_index: lower,
                upper_index: upper,
                frequency,
                dipole_element,
                population_difference,
                weighted_strength,
            });
        }
    }
    out.sort_by(|a, b| {
        a.frequency
            .partial_cmp(&b.frequency)
            .expect("finite frequencies")
            .then(a.lower_index.cmp(&b.lower_index))
            .then(a.upper_index.cmp(&b.upper_index))
    });
    Ok(out)
}
