//! Synthetic spin systems for demos and tests.
//!
//! These parameter sets are constructed, not measured: they reproduce the
//! right scales for an effective S = 1/2, I = 7/2 Kramers ion in a
//! low-symmetry site (hyperfine splittings of a few GHz, anisotropic g,
//! tens-of-MHz quadrupole) and place several usable transitions in the
//! 3.0-3.2 GHz scan window. Published parameter sets for specific crystals
//! are deliberately not hard-coded; supply those through configuration.

use nalgebra::{Matrix3, Vector3};

use crate::real::{cast, Real};
use crate::spin::SpinSystem;

fn m3<T: Real>(entries: [[f64; 3]; 3]) -> Matrix3<T> {
    Matrix3::from_fn(|i, j| cast(entries[i][j]))
}

/// Nuclear g factor used by the demo systems.
pub const DEMO_G_N: f64 = -0.1618;

/// First demonstration site: 16 well-separated zero-field levels spanning
/// about 4.4 GHz, seven transitions inside 3.02-3.20 GHz.
pub fn demo_site1<T: Real>() -> SpinSystem<T> {
    SpinSystem::new(
        2,
        8,
        m3([[2.9, -0.8, 0.6], [-0.8, 6.5, -1.9], [0.6, -1.9, 8.4]]),
        m3([[320.0, -110.0, -180.0], [-110.0, 640.0, 260.0], [-180.0, 260.0, 980.0]]),
        m3([[24.0, -9.0, -14.0], [-9.0, -41.0, 7.0], [-14.0, 7.0, 17.0]]),
        cast(DEMO_G_N),
        "site1",
    )
    .expect("demo parameters are valid")
}

/// Second demonstration site: same scales, different anisotropy, two
/// transitions inside the scan window.
pub fn demo_site2<T: Real>() -> SpinSystem<T> {
    SpinSystem::new(
        2,
        8,
        m3([[3.6, 1.1, -0.5], [1.1, 5.2, 1.4], [-0.5, 1.4, 7.3]]),
        m3([[410.0, 130.0, 150.0], [130.0, 560.0, -210.0], [150.0, -210.0, 890.0]]),
        m3([[-18.0, 11.0, 6.0], [11.0, 35.0, -9.0], [6.0, -9.0, -12.0]]),
        cast(DEMO_G_N),
        "site2",
    )
    .expect("demo parameters are valid")
}

/// Minimal S = 1/2, I = 1/2 system whose outermost zero-field pair realizes
/// the avoided crossing f(B) = sqrt(a_perp^2 + (2 beta_e B / h)^2) for a
/// field along the b axis (g = 2 isotropic, g_n = 0).
///
/// Zero-field levels: -a_par/4 - a_perp/2, +a_par/4 (twice), and
/// -a_par/4 + a_perp/2; the (0, 3) transition frequency is a_perp.
pub fn avoided_crossing_toy<T: Real>(a_perp: f64, a_par: f64) -> SpinSystem<T> {
    SpinSystem::new(
        2,
        2,
        Matrix3::from_diagonal(&Vector3::new(cast(2.0), cast(2.0), cast(2.0))),
        Matrix3::from_diagonal(&Vector3::new(cast(a_perp), cast(a_perp), cast(a_par))),
        Matrix3::zeros(),
        T::zero(),
        "toy-crossing",
    )
    .expect("toy parameters are valid")
}
