//! Electron-nuclear spin Hamiltonian for one crystallographic site.
//!
//! The Hamiltonian (in frequency units, MHz) is
//!
//! ```text
//! H/h = (beta_e/h) B.g.S + S.A.I + I.Q.I - (beta_n/h) g_n B.I
//! ```
//!
//! with `S` the effective electron spin, `I` the nuclear spin, `A` the
//! hyperfine matrix and `Q` the electric-quadrupole matrix (both MHz).
//! Vectors and matrices are expressed in the right-handed crystal frame
//! (D1, D2, b). Angular-momentum operators use the standard ladder
//! construction with m ordered descending (m = j, j-1, ..., -j), so
//! eigenvector output is reproducible.

mod eigen;
mod scan;
mod transitions;

pub use eigen::{eigensystem, EnergyLevels};
pub use scan::{transition_curvature, zeeman_scan, ZeemanScan};
pub use transitions::{enumerate_transitions, Transition, DEGENERACY_TOL_MHZ};

use nalgebra::{Complex, ComplexField, DMatrix, Matrix3, Vector3};

use crate::constants::{bohr_magneton_mhz_per_t, nuclear_magneton_mhz_per_t};
use crate::error::{Error, Result};
use crate::real::{cast, Real};

/// Dense complex matrix used for operators on the product Hilbert space.
pub type CMatrix<T> = DMatrix<Complex<T>>;

/// Relative tolerance for the symmetry check on A and Q.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Spin-Hamiltonian parameters of one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem<T: Real> {
    /// 2S+1 (2 for an effective S = 1/2 Kramers doublet).
    pub electron_multiplicity: usize,
    /// 2I+1 (8 for I = 7/2).
    pub nuclear_multiplicity: usize,
    /// Electronic Zeeman g-matrix, dimensionless, (D1, D2, b) frame.
    pub g_matrix: Matrix3<T>,
    /// Hyperfine matrix, MHz, symmetric.
    pub a_matrix: Matrix3<T>,
    /// Electric-quadrupole matrix, MHz, symmetric.
    pub q_matrix: Matrix3<T>,
    /// Nuclear g factor, dimensionless.
    pub g_n: T,
    /// Site identifier, e.g. "site1" / "site2".
    pub site_label: String,
}

impl<T: Real> SpinSystem<T> {
    pub fn new(
        electron_multiplicity: usize,
        nuclear_multiplicity: usize,
        g_matrix: Matrix3<T>,
        a_matrix: Matrix3<T>,
        q_matrix: Matrix3<T>,
        g_n: T,
        site_label: impl Into<String>,
    ) -> Result<Self> {
        let sys = SpinSystem {
            electron_multiplicity,
            nuclear_multiplicity,
            g_matrix,
            a_matrix,
            q_matrix,
            g_n,
            site_label: site_label.into(),
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Hilbert-space dimension (16 for S = 1/2, I = 7/2).
    pub fn dim(&self) -> usize {
        self.electron_multiplicity * self.nuclear_multiplicity
    }

    pub fn validate(&self) -> Result<()> {
        if self.electron_multiplicity < 2 {
            return Err(Error::invalid(format!(
                "electron_multiplicity must be >= 2, got {}",
                self.electron_multiplicity
            )));
        }
        if self.nuclear_multiplicity < 1 {
            return Err(Error::invalid(format!(
                "nuclear_multiplicity must be >= 1, got {}",
                self.nuclear_multiplicity
            )));
        }
        check_symmetric(&self.a_matrix, "A")?;
        check_symmetric(&self.q_matrix, "Q")?;
        for m in [&self.g_matrix, &self.a_matrix, &self.q_matrix] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("spin-system matrix has non-finite entries"));
            }
        }
        if !self.g_n.is_finite() {
            return Err(Error::invalid("g_n is not finite"));
        }
        Ok(())
    }
}

fn check_symmetric<T: Real>(m: &Matrix3<T>, name: &str) -> Result<()> {
    let scale = m.iter().fold(T::zero(), |acc, x| acc.max(x.abs())).max(T::one());
    let tol = cast::<T>(SYMMETRY_TOL) * scale;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::invalid(format!(
                    "{name} matrix is not symmetric: entry ({i},{j}) = {} vs ({j},{i}) = {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Static magnetic field in tesla, components along the crystal axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldVector<T: Real> {
    pub d1: T,
    pub d2: T,
    pub b: T,
}

impl<T: Real> FieldVector<T> {
    pub fn new(d1: T, d2: T, b: T) -> Result<Self> {
        let field = FieldVector { d1, d2, b };
        if !field.as_vector().iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("field vector has non-finite components"));
        }
        Ok(field)
    }

    pub fn zero() -> Self {
        FieldVector { d1: T::zero(), d2: T::zero(), b: T::zero() }
    }

    /// Field of the given magnitude along a direction.
    pub fn along(direction: &Vector3<T>, magnitude: T) -> Result<Self> {
        let v = direction * magnitude;
        FieldVector::new(v.x, v.y, v.z)
    }

    pub fn as_vector(&self) -> Vector3<T> {
        Vector3::new(self.d1, self.d2, self.b)
    }
}

/// Cartesian angular-momentum matrices for one spin, m ordered descending.
pub(crate) struct AngularMomentum<T: Real> {
    pub jx: CMatrix<T>,
    pub jy: CMatrix<T>,
    pub jz: CMatrix<T>,
}

impl<T: Real> AngularMomentum<T> {
    pub fn for_multiplicity(multiplicity: usize) -> Self {
        let dim = multiplicity;
        let j = (dim as f64 - 1.0) / 2.0;
        let mut jz = CMatrix::<T>::zeros(dim, dim);
        let mut jp = CMatrix::<T>::zeros(dim, dim);
        for k in 0..dim {
            let m = j - k as f64;
            jz[(k, k)] = Complex::new(cast(m), T::zero());
            if k > 0 {
                // J+ |j,m> = sqrt(j(j+1) - m(m+1)) |j,m+1>; with m descending
                // the target sits one row above.
                let amp = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
                jp[(k - 1, k)] = Complex::new(cast(amp), T::zero());
            }
        }
        let jm = jp.adjoint();
        let half = Complex::new(cast::<T>(0.5), T::zero());
        let neg_half_i = Complex::new(T::zero(), -cast::<T>(0.5));
        let jx = (&jp + &jm) * half;
        let jy = (&jp - &jm) * neg_half_i;
        AngularMomentum { jx, jy, jz }
    }

    pub fn component(&self, axis: usize) -> &CMatrix<T> {
        match axis {
            0 => &self.jx,
            1 => &self.jy,
            2 => &self.jz,
            _ => unreachable!("axis index out of range"),
        }
    }
}

/// Spin operators lifted to the electron (x) nuclear product space.
pub(crate) struct ProductOperators<T: Real> {
    /// S_x, S_y, S_z on the full space.
    pub s: [CMatrix<T>; 3],
    /// I_x, I_y, I_z on the full space.
    pub i: [CMatrix<T>; 3],
    /// I_a I_b products on the full space (quadrupole term), row-major 3x3.
    pub ii: [[CMatrix<T>; 3]; 3],
}

impl<T: Real> ProductOperators<T> {
    pub fn build(sys: &SpinSystem<T>) -> Self {
        let s_ops = AngularMomentum::for_multiplicity(sys.electron_multiplicity);
        let i_ops = AngularMomentum::for_multiplicity(sys.nuclear_multiplicity);
        let id_e = CMatrix::<T>::identity(sys.electron_multiplicity, sys.electron_multiplicity);
        let id_n = CMatrix::<T>::identity(sys.nuclear_multiplicity, sys.nuclear_multiplicity);

        let lift_s = |m: &CMatrix<T>| m.kronecker(&id_n);
        let lift_i = |m: &CMatrix<T>| id_e.kronecker(m);

        let s = [lift_s(&s_ops.jx), lift_s(&s_ops.jy), lift_s(&s_ops.jz)];
        let i = [lift_i(&i_ops.jx), lift_i(&i_ops.jy), lift_i(&i_ops.jz)];
        let ii = std::array::from_fn(|a| {
            std::array::from_fn(|b| lift_i(&(i_ops.component(a) * i_ops.component(b))))
        });
        ProductOperators { s, i, ii }
    }
}

fn complex_scale<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// Full spin Hamiltonian divided by Planck's constant, MHz.
pub fn build_hamiltonian<T: Real>(sys: &SpinSystem<T>, field: &FieldVector<T>) -> Result<CMatrix<T>> {
    sys.validate()?;
    let b = field.as_vector();
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("field vector has non-finite components"));
    }
    let ops = ProductOperators::build(sys);
    let dim = sys.dim();
    let mut h = CMatrix::<T>::zeros(dim, dim);

    // Electronic Zeeman: (beta_e/h) sum_b (B.g)_b S_b.
    let bg = sys.g_matrix.transpose() * b;
    let beta_e = bohr_magneton_mhz_per_t::<T>();
    for axis in 0..3 {
        let coeff = beta_e * bg[axis];
        if coeff != T::zero() {
            h += &ops.s[axis] * complex_scale(coeff);
        }
    }

    // Hyperfine: sum_ab A_ab S_a I_b.
    for a in 0..3 {
        for bx in 0..3 {
            let coeff = sys.a_matrix[(a, bx)];
            if coeff != T::zero() {
                h += (&ops.s[a] * &ops.i[bx]) * complex_scale(coeff);
            }
        }
    }

    // Quadrupole: sum_ab Q_ab I_a I_b.
    for a in 0..3 {
        for bx in 0..3 {
            let coeff = sys.q_matrix[(a, bx)];
            if coeff != T::zero() {
                h += &ops.ii[a][bx] * complex_scale(coeff);
            }
        }
    }

    // Nuclear Zeeman: -(beta_n/h) g_n B.I.
    let beta_n = nuclear_magneton_mhz_per_t::<T>();
    for axis in 0..3 {
        let coeff = -beta_n * sys.g_n * b[axis];
        if coeff != T::zero() {
            h += &ops.i[axis] * complex_scale(coeff);
        }
    }

    Ok(h)
}

/// Magnetic-moment operator along a unit direction, MHz per tesla.
///
/// This is the derivative of the Hamiltonian with respect to field magnitude
/// along `n`: M_n = (beta_e/h)(n.g).S - (beta_n/h) g_n (n.I).
pub fn magnetic_moment_operator<T: Real>(sys: &SpinSystem<T>, n: &Vector3<T>) -> Result<CMatrix<T>> {
    sys.validate()?;
    let norm = n.norm();
    if (norm - T::one()).abs() > cast(1e-9) {
        return Err(Error::invalid(format!(
            "drive direction must be a unit vector (|n| = {norm})"
        )));
    }
    let ops = ProductOperators::build(sys);
    let dim = sys.dim();
    let mut m = CMatrix::<T>::zeros(dim, dim);

    let ng = sys.g_matrix.transpose() * n;
    let beta_e = bohr_magneton_mhz_per_t::<T>();
    let beta_n = nuclear_magneton_mhz_per_t::<T>();
    for axis in 0..3 {
        let e_coeff = beta_e * ng[axis];
        if e_coeff != T::zero() {
            m += &ops.s[axis] * complex_scale(e_coeff);
        }
        let n_coeff = -beta_n * sys.g_n * n[axis];
        if n_coeff != T::zero() {
            m += &ops.i[axis] * complex_scale(n_coeff);
        }
    }
    Ok(m)
}

/// Largest |entry| of the anti-Hermitian part, for validation.
pub(crate) fn hermiticity_defect<T: Real>(m: &CMatrix<T>) -> T {
    let adj = m.adjoint();
    (m - adj)
        .iter()
        .map(|c| c.modulus())
        .fold(T::zero(), |acc, x| acc.max(x))
}

pub(crate) fn max_abs<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().map(|c| c.modulus()).fold(T::zero(), |acc, x| acc.max(x))
}
