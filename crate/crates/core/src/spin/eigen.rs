//! Dense Hermitian eigendecomposition with deterministic ordering.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{Complex, ComplexField, DVector};

use super::{hermiticity_defect, max_abs, CMatrix};
use crate::error::{Error, Result};
use crate::real::{cast, Real};

/// Relative Hermiticity tolerance accepted by [`eigensystem`].
pub const HERMITICITY_TOL: f64 = 1e-10;

/// Sorted eigenvalues (MHz) and matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct EnergyLevels<T: Real> {
    /// Energies divided by h, ascending.
    pub values: DVector<T>,
    /// Unitary matrix whose k-th column is the eigenvector of `values[k]`.
    pub vectors: CMatrix<T>,
}

impl<T: Real> EnergyLevels<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    /// Transition frequency between two level indices (upper minus lower).
    pub fn frequency(&self, lower: usize, upper: usize) -> T {
        self.values[upper] - self.values[lower]
    }
}

/// Diagonalize a Hermitian matrix.
///
/// Eigenvalues come out ascending; within exactly degenerate clusters the
/// order falls back to the solver's and each eigenvector's phase is fixed so
/// that its first non-negligible component is real positive.
pub fn eigensystem<T: Real>(h: &CMatrix<T>) -> Result<EnergyLevels<T>> {
    if h.nrows() != h.ncols() {
        return Err(Error::invalid("eigensystem needs a square matrix"));
    }
    let scale = max_abs(h).max(T::one());
    if hermiticity_defect(h) > cast::<T>(HERMITICITY_TOL) * scale {
        return Err(Error::invalid(
            "matrix is not Hermitian within tolerance".to_string(),
        ));
    }

    // Symmetrize away round-off before handing to the solver.
    let sym = (h + h.adjoint()) * Complex::new(cast::<T>(0.5), T::zero());
    let eig = SymmetricEigen::try_new(sym, T::default_epsilon(), 0)
        .ok_or_else(|| Error::numerical("Hermitian eigensolver did not converge"))?;

    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
            .then(a.cmp(&b))
    });

    let mut values = DVector::<T>::zeros(n);
    let mut vectors = CMatrix::<T>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).clone_owned();
        fix_phase(&mut col);
        vectors.set_column(dst, &col);
    }

    let levels = EnergyLevels { values, vectors };
    verify_decomposition(h, &levels, scale)?;
    Ok(levels)
}

/// Rotate a vector's global phase so its first component with modulus above
/// threshold becomes real positive.
fn fix_phase<T: Real>(col: &mut DVector<Complex<T>>) {
    let thresh = cast::<T>(1e-9);
    if let Some(lead) = col.iter().find(|c| c.modulus() > thresh).copied() {
        let phase = lead.conj() / Complex::new(lead.modulus(), T::zero());
        for c in col.iter_mut() {
            *c *= phase;
        }
    }
}

fn verify_decomposition<T: Real>(h: &CMatrix<T>, levels: &EnergyLevels<T>, scale: T) -> Result<()> {
    let n = levels.len();
    let gram = levels.vectors.adjoint() * &levels.vectors;
    let unit_defect = (&gram - CMatrix::<T>::identity(n, n))
        .iter()
        .map(|c| c.modulus())
        .fold(T::zero(), |a, x| a.max(x));
    if unit_defect > cast(1e-10) {
        return Err(Error::numerical(format!(
            "eigenvectors lost unitarity (defect {unit_defect:e})"
        )));
    }
    let diag = CMatrix::<T>::from_fn(n, n, |i, j| {
        if i == j {
            Complex::new(levels.values[i], T::zero())
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });
    let rebuilt = &levels.vectors * diag * levels.vectors.adjoint();
    let residual = max_abs(&(rebuilt - h));
    if residual > cast::<T>(1e-9) * scale {
        return Err(Error::numerical(format!(
            "eigendecomposition residual too large ({residual:e})"
        )));
    }
    Ok(())
}
