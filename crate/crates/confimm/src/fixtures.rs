//! Reference surfaces used by tests, examples and the pipeline defaults.

use crate::error::Result;
use crate::grid::{GridTorusMap, Vec3};
use std::f64::consts::TAU;

/// Torus of revolution with major radius `major` and minor radius `minor`,
/// parametrized by angles (2*pi*u, 2*pi*v):
///
///   f(u, v) = ((R + r cos 2*pi*v) cos 2*pi*u,
///              (R + r cos 2*pi*v) sin 2*pi*u,
///               r sin 2*pi*v)
///
/// Pullback metric: diag((2*pi)^2 (R + r cos 2*pi*v)^2, (2*pi)^2 r^2).
pub fn torus_of_revolution(n: usize, major: f64, minor: f64) -> Result<GridTorusMap> {
    GridTorusMap::from_fn(n, |u, v| {
        let (su, cu) = (TAU * u).sin_cos();
        let (sv, cv) = (TAU * v).sin_cos();
        let ring = major + minor * cv;
        Vec3::new(ring * cu, ring * su, minor * sv)
    })
}

/// Torus of revolution rescaled by 1/(2*pi), so u-circles at the outer
/// equator have speed R + r instead of 2*pi*(R + r). Scaled by 0.3 this is
/// strictly short for the flat identity metric when R = 2, r = 1.
pub fn torus_of_revolution_normalized(n: usize, major: f64, minor: f64) -> Result<GridTorusMap> {
    Ok(torus_of_revolution(n, major, minor)?.scaled(1.0 / TAU))
}

/// Doubly periodic map with a rank-1 Jacobian along the v = 0 row:
/// both u-derivatives vanish there while the v-derivative does not.
pub fn pinch_map(n: usize) -> Result<GridTorusMap> {
    GridTorusMap::from_fn(n, |u, v| {
        let sv = (TAU * v).sin();
        Vec3::new((TAU * u).sin() * sv, (TAU * u).cos() * sv, sv + 0.25 * (2.0 * TAU * v).cos())
    })
}

/// Conformally reparametrized torus of revolution: v is replaced by the
/// coordinate in which the pullback is pointwise proportional to
/// du^2 + y0^2 dv^2 with y0 = r / sqrt(R^2 - r^2). Used as a conformal
/// input fixture; its distortion against metric_from_modulus(i*y0) tends
/// to 1 as the grid is refined.
pub fn conformal_torus_of_revolution(n: usize, major: f64, minor: f64) -> Result<GridTorusMap> {
    let y0 = minor / (major * major - minor * minor).sqrt();
    // dv/dvt = y0 (R + r cos 2*pi*v) / r, solved per grid value of vt by
    // Newton on the cumulative quadrature of the inverse relation.
    let vt_of_v = |v: f64| -> f64 {
        // vt(v) = (1/y0) * integral_0^v r / (R + r cos 2*pi*s) ds
        let steps = 4096;
        let mut acc = 0.0;
        let h = v / steps as f64;
        for i in 0..steps {
            let s0 = i as f64 * h;
            let s1 = s0 + h;
            let sm = 0.5 * (s0 + s1);
            let f0 = minor / (major + minor * (TAU * s0).cos());
            let fm = minor / (major + minor * (TAU * sm).cos());
            let f1 = minor / (major + minor * (TAU * s1).cos());
            acc += h / 6.0 * (f0 + 4.0 * fm + f1);
        }
        acc / y0
    };
    let mut v_for_row = Vec::with_capacity(n);
    for k in 0..n {
        let target = k as f64 / n as f64;
        let mut v = target;
        for _ in 0..60 {
            let err = vt_of_v(v) - target;
            let slope = minor / (major + minor * (TAU * v).cos()) / y0;
            let step = err / slope;
            v -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        v_for_row.push(v);
    }
    GridTorusMap::from_fn(n, |u, vt| {
        let v = v_for_row[(vt * n as f64).round() as usize % n];
        let (su, cu) = (TAU * u).sin_cos();
        let (sv, cv) = (TAU * v).sin_cos();
        let ring = major + minor * cv;
        Vec3::new(ring * cu, ring * su, minor * sv)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;

    #[test]
    fn pinch_map_has_a_degenerate_row() {
        let f = pinch_map(32).unwrap();
        let jac = geometry::differentiate(&f);
        let m = jac.at(5, 0);
        assert!(m.du.norm() < 1e-10, "du should vanish on v = 0");
        assert!(m.dv.norm() > 1.0, "dv should stay regular on v = 0");
    }
}
