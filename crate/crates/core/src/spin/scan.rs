//! Level and transition behaviour versus applied magnetic field.

use nalgebra::{ComplexField, DVector, Vector3};

use super::{build_hamiltonian, eigensystem, CMatrix, EnergyLevels, FieldVector, SpinSystem};
use crate::error::{Error, Result};
use crate::real::{cast, Real};

/// Eigenvector-overlap threshold below which index tracking between adjacent
/// field points is flagged as unreliable.
pub const TRACKING_OVERLAP_MIN: f64 = 0.5;

/// Tracked eigenvalue curves along a field scan.
///
/// Level labels are fixed at the first field point (ascending energies) and
/// carried through subsequent points by eigenvector-overlap continuity, so a
/// curve follows "the same" physical level through crossings.
#[derive(Debug, Clone)]
pub struct ZeemanScan<T: Real> {
    /// Field magnitudes along the scan direction, tesla.
    pub field_values: Vec<T>,
    /// One vector of tracked level energies (MHz) per field point.
    pub level_curves: Vec<DVector<T>>,
    /// Per-segment tracking quality: `false` where the smallest matched
    /// eigenvector overlap fell below [`TRACKING_OVERLAP_MIN`].
    pub segment_ok: Vec<bool>,
}

impl<T: Real> ZeemanScan<T> {
    /// Frequency curve of one tracked level pair.
    pub fn transition_curve(&self, lower: usize, upper: usize) -> Vec<T> {
        self.level_curves
            .iter()
            .map(|lv| lv[upper] - lv[lower])
            .collect()
    }

    pub fn all_segments_ok(&self) -> bool {
        self.segment_ok.iter().all(|&ok| ok)
    }
}

/// Match columns of two eigenbases one-to-one by descending overlap.
///
/// Returns `perm` with `perm[label] = column of next` and the smallest
/// matched overlap modulus.
fn track_assignment<T: Real>(prev: &CMatrix<T>, next: &CMatrix<T>) -> (Vec<usize>, T) {
    let n = prev.ncols();
    let overlap = prev.adjoint() * next;
    let mut pairs: Vec<(T, usize, usize)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            pairs.push((overlap[(i, j)].modulus(), i, j));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite overlaps")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut perm = vec![usize::MAX; n];
    let mut used_next = vec![false; n];
    let mut assigned = 0;
    let mut min_overlap = T::one();
    for (ov, i, j) in pairs {
        if perm[i] != usize::MAX || used_next[j] {
            continue;
        }
        perm[i] = j;
        used_next[j] = true;
        min_overlap = min_overlap.min(ov);
        assigned += 1;
        if assigned == n {
            break;
        }
    }
    (perm, min_overlap)
}

/// Diagonalize along a list of field magnitudes in the direction `n`,
/// tracking level identity between adjacent points.
pub fn zeeman_scan<T: Real>(
    sys: &SpinSystem<T>,
    n: &Vector3<T>,
    b_values: &[T],
) -> Result<ZeemanScan<T>> {
    if b_values.is_empty() {
        return Err(Error::invalid("zeeman_scan needs at least one field value"));
    }
    if b_values.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("field values must be finite"));
    }
    let norm = n.norm();
    if (norm - T::one()).abs() > cast(1e-9) {
        return Err(Error::invalid("scan direction must be a unit vector"));
    }

    let mut level_curves = Vec::with_capacity(b_values.len());
    let mut segment_ok = Vec::with_capacity(b_values.len().saturating_sub(1));
    let mut prev_vectors: Option<CMatrix<T>> = None;
    // perm_to_label[current column] = tracked label
    let mut label_of_col: Vec<usize> = Vec::new();

    for &b in b_values {
        let h = build_hamiltonian(sys, &FieldVector::along(n, b)?)?;
        let levels: EnergyLevels<T> = eigensystem(&h)?;
        match prev_vectors.take() {
            None => {
                label_of_col = (0..levels.len()).collect();
                level_curves.push(levels.values.clone());
            }
            Some(prev) => {
                let (perm, min_overlap) = track_assignment(&prev, &levels.vectors);
                segment_ok.push(min_overlap >= cast(TRACKING_OVERLAP_MIN));
                // prev column i (tracked label label_of_col[i]) continues as
                // next column perm[i].
                let mut new_label_of_col = vec![0usize; levels.len()];
                for (i, &j) in perm.iter().enumerate() {
                    new_label_of_col[j] = label_of_col[i];
                }
                label_of_col = new_label_of_col;
                let mut tracked = DVector::<T>::zeros(levels.len());
                for (col, &label) in label_of_col.iter().enumerate() {
                    tracked[label] = levels.values[col];
                }
                level_curves.push(tracked);
            }
        }
        prev_vectors = Some(levels.vectors);
    }

    Ok(ZeemanScan { field_values: b_values.to_vec(), level_curves, segment_ok })
}

/// Minimum zero-field gap (MHz) required around both levels of a transition
/// before its curvature is considered well-defined.
pub const CURVATURE_MIN_GAP_MHZ: f64 = 1e-3;

/// Second derivative of a transition frequency with respect to field
/// magnitude at B = 0, MHz per tesla squared.
///
/// Uses a second central difference with the step halved until two successive
/// estimates agree to 1%.
pub fn transition_curvature<T: Real>(
    sys: &SpinSystem<T>,
    n: &Vector3<T>,
    lower: usize,
    upper: usize,
) -> Result<T> {
    let h0 = build_hamiltonian(sys, &FieldVector::zero())?;
    let levels = eigensystem(&h0)?;
    let dim = levels.len();
    if lower >= dim || upper >= dim || lower >= upper {
        return Err(Error::invalid("transition indices out of range"));
    }
    let min_gap = cast::<T>(CURVATURE_MIN_GAP_MHZ);
    for &idx in &[lower, upper] {
        let mut gap = T::max_value().unwrap_or_else(T::one);
        if idx > 0 {
            gap = gap.min(levels.values[idx] - levels.values[idx - 1]);
        }
        if idx + 1 < dim {
            gap = gap.min(levels.values[idx + 1] - levels.values[idx]);
        }
        if gap < min_gap {
            return Err(Error::numerical(format!(
                "level {idx} is degenerate at B = 0 (gap {gap:e} MHz); curvature undefined \
                 without degenerate-perturbation handling"
            )));
        }
    }

    let mut step = cast::<T>(1e-4); // 0.1 mT
    let mut previous: Option<T> = None;
    let rel_tol = cast::<T>(0.01);
    let abs_floor = cast::<T>(1e-3); // MHz/T^2; below this the curve is flat
    for _ in 0..10 {
        // Anchor both half-scans at B = 0 so tracked labels mean the
        // zero-field level indices the caller passed in.
        let up = zeeman_scan(sys, n, &[T::zero(), step])?;
        let down = zeeman_scan(sys, n, &[T::zero(), -step])?;
        if !up.all_segments_ok() || !down.all_segments_ok() {
            return Err(Error::numerical(
                "level tracking unreliable during curvature estimation".to_string(),
            ));
        }
        let f_plus = up.transition_curve(lower, upper)[1];
        let f_zero = up.transition_curve(lower, upper)[0];
        let f_minus = down.transition_curve(lower, upper)[1];
        let estimate = (f_plus - f_zero - f_zero + f_minus) / (step * step);
        if let Some(prev) = previous {
            let scale = estimate.abs().max(prev.abs());
            if (estimate - prev).abs() <= rel_tol * scale || scale < abs_floor {
                return Ok(estimate);
            }
        }
        previous = Some(estimate);
        step *= cast(0.5);
    }
    Err(Error::numerical(
        "curvature estimate did not stabilize to 1% while halving the step".to_string(),
    ))
}
