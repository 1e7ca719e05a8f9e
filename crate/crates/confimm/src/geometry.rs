//! First-order geometry of sampled torus maps: Jacobians, pullback metrics,
//! defect norms, shortness and isometry predicates, and formal conformal
//! solutions.
//!
//! Defects are measured in the operator norm relative to a reference metric
//! g0: the largest absolute eigenvalue of g0^{-1}(a - b) over all samples.
//! For fixed g0 this is a genuine norm on tensor fields, so the induced
//! distance is symmetric and satisfies the triangle inequality.

use crate::error::{Error, Result};
use crate::grid::{
    Grid, GridTorusMap, JacobianField, Mat2, MetricField, Sym2, SymmetricTensorField, Vec3,
};
use crate::spectral;

/// Spectral Jacobian of a sampled map.
pub fn differentiate(map: &GridTorusMap) -> JacobianField {
    spectral::jacobian(map)
}

/// First fundamental form induced by a map. Always returns a field; samples
/// where the Jacobian degenerates simply carry a singular tensor, which
/// `immersion_report` flags.
pub fn pullback_metric(map: &GridTorusMap) -> MetricField {
    pullback_of_jacobian(&differentiate(map))
}

pub fn pullback_of_jacobian(jac: &JacobianField) -> MetricField {
    MetricField::new(SymmetricTensorField::new(jac.grid().map(|m| m.pullback())))
}

fn check_same_n(ns: &[usize]) -> Result<()> {
    if ns.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::ShapeError(format!("field resolutions differ: {ns:?}")));
    }
    Ok(())
}

/// Sup over samples of the operator norm of (a - b) measured against the
/// positive definite reference metric.
pub fn sup_defect(
    a: &SymmetricTensorField,
    b: &SymmetricTensorField,
    reference: &MetricField,
) -> Result<f64> {
    check_same_n(&[a.n(), b.n(), reference.n()])?;
    if !reference.positive_definite() {
        return Err(Error::IllConditionedMetric {
            max_condition: f64::INFINITY,
            cap: f64::INFINITY,
        });
    }
    let mut worst = 0.0f64;
    for ((sa, sb), sr) in a
        .values()
        .iter()
        .zip(b.values())
        .zip(reference.values())
    {
        let d = *sa - *sb;
        worst = worst.max(d.operator_norm_relative_to(*sr));
    }
    Ok(worst)
}

/// Immersion diagnostics for a sampled map.
#[derive(Clone, Copy, Debug)]
pub struct ImmersionReport {
    pub min_singular_value: f64,
    pub argmin: (usize, usize),
}

pub fn immersion_report(map: &GridTorusMap) -> ImmersionReport {
    jacobian_immersion_report(&differentiate(map))
}

pub fn jacobian_immersion_report(jac: &JacobianField) -> ImmersionReport {
    let n = jac.n();
    let mut min_sv = f64::INFINITY;
    let mut argmin = (0, 0);
    for j in 0..n {
        for k in 0..n {
            let sv = jac.at(j, k).min_singular_value();
            if sv < min_sv {
                min_sv = sv;
                argmin = (j, k);
            }
        }
    }
    ImmersionReport {
        min_singular_value: min_sv,
        argmin,
    }
}

/// True when the smallest singular value of df across all samples exceeds
/// the floor.
pub fn is_immersion(map: &GridTorusMap, sv_floor: f64) -> bool {
    immersion_report(map).min_singular_value > sv_floor
}

/// True when (1 - margin) g - f*h is positive semidefinite at every sample,
/// i.e. f is short for g with the given relative margin. Comparisons are
/// exact; margin = 0 admits isometric samples.
pub fn is_short(map: &GridTorusMap, g: &MetricField, margin: f64) -> Result<bool> {
    is_short_pullback(&pullback_metric(map), g, margin)
}

pub fn is_short_pullback(pullback: &MetricField, g: &MetricField, margin: f64) -> Result<bool> {
    check_same_n(&[pullback.n(), g.n()])?;
    Ok(pullback
        .values()
        .iter()
        .zip(g.values())
        .all(|(p, gg)| (gg.scale(1.0 - margin) - *p).is_psd()))
}

/// True when sup_defect(f*h, g) < eps with g itself as the reference metric.
pub fn is_epsilon_isometric(map: &GridTorusMap, g: &MetricField, eps: f64) -> Result<bool> {
    let p = pullback_metric(map);
    Ok(sup_defect(p.as_tensor(), g.as_tensor(), g)? < eps)
}

/// Unit normal field n = (f_u x f_v) / |f_u x f_v|.
pub fn normal_field(jac: &JacobianField) -> Result<Grid<Vec3>> {
    let n = jac.n();
    let mut out = Grid::from_value(n, Vec3::ZERO);
    for j in 0..n {
        for k in 0..n {
            let cross = jac.at(j, k).normal();
            let len = cross.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::NotImmersion {
                    min_singular_value: 0.0,
                    j,
                    k,
                });
            }
            *out.at_mut(j, k) = cross * (1.0 / len);
        }
    }
    Ok(out)
}

/// Exact first-order solution of the conformal immersion relation over a
/// base map: a per-sample linear map L with L^T L = lambda * g0.
#[derive(Clone, Debug)]
pub struct FormalConformalJet {
    base: GridTorusMap,
    linear: Grid<crate::grid::Mat32>,
    factor: Grid<f64>,
    max_residual: f64,
}

impl FormalConformalJet {
    pub fn base(&self) -> &GridTorusMap {
        &self.base
    }

    pub fn linear_part(&self) -> &Grid<crate::grid::Mat32> {
        &self.linear
    }

    pub fn conformal_factor(&self) -> &Grid<f64> {
        &self.factor
    }

    /// Largest observed violation of L^T L = lambda * g0 in the g0 norm.
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }
}

/// Rotate the derivative part of an immersion onto the prescribed metric:
/// L = df . A with A the g0-self-adjoint inverse square root of
/// g0^{-1} (f*h), so that L^T L = g0 exactly and lambda = 1.
pub fn formalize(map: &GridTorusMap, g0: &MetricField, tol_jet: f64) -> Result<FormalConformalJet> {
    check_same_n(&[map.n(), g0.n()])?;
    let jac = differentiate(map);
    let report = jacobian_immersion_report(&jac);
    if !(report.min_singular_value > 0.0) {
        return Err(Error::NotImmersion {
            min_singular_value: report.min_singular_value,
            j: report.argmin.0,
            k: report.argmin.1,
        });
    }
    let n = map.n();
    let mut linear = Grid::from_value(n, crate::grid::Mat32::default());
    let mut max_residual = 0.0f64;
    for j in 0..n {
        for k in 0..n {
            let df = jac.at(j, k);
            let p = df.pullback();
            let g = g0.at(j, k);
            let gs = g.sqrt_spd();
            let gs_inv = gs.inverse();
            // B = g^{-1/2} p g^{-1/2} is symmetric positive definite.
            let b_m = Mat2::from_sym(gs_inv)
                .mul(Mat2::from_sym(p))
                .mul(Mat2::from_sym(gs_inv));
            let b = Sym2::new(b_m.a, 0.5 * (b_m.b + b_m.c), b_m.d);
            let a = Mat2::from_sym(gs_inv)
                .mul(Mat2::from_sym(b.sqrt_spd().inverse()))
                .mul(Mat2::from_sym(gs));
            let l = df.mul_mat2(a);
            *linear.at_mut(j, k) = l;
            let res = (l.pullback() - g).operator_norm_relative_to(g);
            max_residual = max_residual.max(res);
        }
    }
    if max_residual > tol_jet {
        return Err(Error::JetResidual {
            residual: max_residual,
            tol: tol_jet,
        });
    }
    Ok(FormalConformalJet {
        base: map.clone(),
        linear,
        factor: Grid::from_value(n, 1.0),
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{pinch_map, torus_of_revolution};
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    /// Independent 2x2 symmetric eigensolver: diagonalize by one Jacobi
    /// rotation instead of the closed-form trace/determinant route.
    fn jacobi_eigenvalues(s: Sym2) -> (f64, f64) {
        if s.f.abs() < 1e-300 {
            return (s.e.min(s.g), s.e.max(s.g));
        }
        let theta = 0.5 * (2.0 * s.f).atan2(s.e - s.g);
        let (sin, cos) = theta.sin_cos();
        let l1 = cos * cos * s.e + 2.0 * sin * cos * s.f + sin * sin * s.g;
        let l2 = sin * sin * s.e - 2.0 * sin * cos * s.f + cos * cos * s.g;
        (l1.min(l2), l1.max(l2))
    }

    fn brute_operator_norm(d: Sym2, g: Sym2) -> f64 {
        let gs_inv = g.sqrt_spd().inverse();
        let m = Mat2::from_sym(gs_inv).mul(Mat2::from_sym(d)).mul(Mat2::from_sym(gs_inv));
        let sym = Sym2::new(m.a, 0.5 * (m.b + m.c), m.d);
        let (lo, hi) = jacobi_eigenvalues(sym);
        lo.abs().max(hi.abs())
    }

    #[test]
    fn torus_of_revolution_jacobian_matches_symbolic_derivatives() {
        let (major, minor) = (2.0, 1.0);
        let n = 64;
        let f = torus_of_revolution(n, major, minor).unwrap();
        let jac = differentiate(&f);
        let h = 1.0 / n as f64;
        for j in 0..n {
            for k in 0..n {
                let v = k as f64 * h;
                let m = jac.at(j, k);
                let ring = major + minor * (TAU * v).cos();
                assert_relative_eq!(m.du.norm(), TAU * ring, epsilon = 1e-9);
                assert_relative_eq!(m.dv.norm(), TAU * minor, epsilon = 1e-9);
                assert!(m.du.dot(m.dv).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn torus_of_revolution_pullback_is_the_known_diagonal() {
        let n = 64;
        let f = torus_of_revolution(n, 2.0, 1.0).unwrap();
        let p = pullback_metric(&f);
        let h = 1.0 / n as f64;
        for j in (0..n).step_by(7) {
            for k in 0..n {
                let v = k as f64 * h;
                let ring = 2.0 + (TAU * v).cos();
                let s = p.at(j, k);
                assert_relative_eq!(s.e, TAU * TAU * ring * ring, epsilon = 1e-7);
                assert_relative_eq!(s.g, TAU * TAU, epsilon = 1e-9);
                assert!(s.f.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sup_defect_of_rank_one_perturbation_is_its_coefficient() {
        let n = 16;
        let t = 0.37;
        let g0 = MetricField::constant(n, Sym2::identity());
        let a = SymmetricTensorField::constant(n, Sym2::new(1.0 + t, 0.0, 1.0));
        let d = sup_defect(&a, g0.as_tensor(), &g0).unwrap();
        assert_relative_eq!(d, t, epsilon = 1e-14);
    }

    #[test]
    fn sup_defect_of_double_metric_is_one() {
        let n = 16;
        let g0 = MetricField::constant(n, Sym2::new(2.0, 0.3, 1.0));
        let a = SymmetricTensorField::constant(n, Sym2::new(4.0, 0.6, 2.0));
        let d = sup_defect(&a, g0.as_tensor(), &g0).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn sup_defect_agrees_with_jacobi_rotation_eigensolver() {
        let n = 8;
        let g0 = MetricField::from_fn(n, |j, k| {
            Sym2::new(1.5 + 0.1 * j as f64, 0.2, 1.0 + 0.05 * k as f64)
        });
        let a = SymmetricTensorField::from_fn(n, |j, k| {
            Sym2::new(
                1.0 + 0.03 * k as f64,
                -0.1 + 0.01 * j as f64,
                0.8 + 0.02 * j as f64,
            )
        });
        let b = SymmetricTensorField::constant(n, Sym2::new(0.9, 0.05, 1.1));
        let got = sup_defect(&a, &b, &g0).unwrap();
        let mut expect = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                expect = expect.max(brute_operator_norm(a.at(j, k) - b.at(j, k), g0.at(j, k)));
            }
        }
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn sup_defect_is_a_pseudometric() {
        let n = 8;
        let g0 = MetricField::constant(n, Sym2::new(1.2, 0.1, 0.9));
        let mk = |s: f64| {
            SymmetricTensorField::from_fn(n, |j, k| {
                Sym2::new(
                    s * (1.0 + 0.1 * j as f64),
                    0.05 * s * k as f64,
                    s * (0.7 + 0.02 * (j + k) as f64),
                )
            })
        };
        let (a, b, c) = (mk(1.0), mk(-0.4), mk(0.7));
        let dab = sup_defect(&a, &b, &g0).unwrap();
        let dba = sup_defect(&b, &a, &g0).unwrap();
        let dac = sup_defect(&a, &c, &g0).unwrap();
        let dcb = sup_defect(&c, &b, &g0).unwrap();
        assert_relative_eq!(dab, dba, epsilon = 1e-14);
        assert!(dab <= dac + dcb + 1e-12);
    }

    #[test]
    fn sup_defect_rejects_mismatched_resolutions() {
        let g8 = MetricField::constant(8, Sym2::identity());
        let a16 = SymmetricTensorField::constant(16, Sym2::identity());
        let b16 = SymmetricTensorField::constant(16, Sym2::identity());
        assert!(matches!(
            sup_defect(&a16, &b16, &g8),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn torus_of_revolution_is_an_immersion_with_min_singular_value_two_pi() {
        let f = torus_of_revolution(64, 2.0, 1.0).unwrap();
        let report = immersion_report(&f);
        assert_relative_eq!(report.min_singular_value, TAU, epsilon = 1e-8);
        assert!(is_immersion(&f, 1e-8));
    }

    #[test]
    fn pinch_map_is_not_an_immersion() {
        let f = pinch_map(32).unwrap();
        assert!(!is_immersion(&f, 1e-8));
        assert!(immersion_report(&f).min_singular_value < 1e-9);
    }

    #[test]
    fn isometric_map_is_short_only_with_zero_margin() {
        let f = torus_of_revolution(32, 2.0, 1.0).unwrap();
        let g = pullback_metric(&f);
        assert!(is_short(&f, &g, 0.0).unwrap());
        assert!(!is_short(&f, &g, 0.01).unwrap());
        assert!(is_short(&f.scaled(0.9), &g, 0.1).unwrap());
    }

    #[test]
    fn epsilon_isometry_follows_the_defect_norm() {
        let f = torus_of_revolution(32, 2.0, 1.0).unwrap();
        let g = pullback_metric(&f.scaled(1.01));
        // Pullback scales with the square: defect is 1 - 1/1.01^2 ~ 0.0197.
        assert!(is_epsilon_isometric(&f, &g, 0.02).unwrap());
        assert!(!is_epsilon_isometric(&f, &g, 0.019).unwrap());
    }

    #[test]
    fn formalize_returns_identity_rotation_on_its_own_pullback() {
        let f = torus_of_revolution(32, 2.0, 1.0).unwrap();
        let g0 = pullback_metric(&f);
        let jet = formalize(&f, &g0, 1e-10).unwrap();
        assert!(jet.max_residual() <= 1e-10);
        let jac = differentiate(&f);
        for j in (0..32).step_by(5) {
            for k in (0..32).step_by(5) {
                let d = (jet.linear_part().at(j, k).du - jac.at(j, k).du).norm();
                assert!(d < 1e-8, "linear part should equal df, off by {d}");
                assert_relative_eq!(jet.conformal_factor().at(j, k), 1.0);
            }
        }
    }

    #[test]
    fn formalize_hits_an_arbitrary_metric_exactly() {
        let n = 32;
        let f = torus_of_revolution(n, 2.0, 1.0).unwrap();
        let g0 = MetricField::from_fn(n, |j, k| {
            let (u, v) = (j as f64 / n as f64, k as f64 / n as f64);
            Sym2::new(
                2.0 + 0.3 * (TAU * u).sin(),
                0.2 * (TAU * v).cos(),
                1.0 + 0.1 * (TAU * (u + v)).cos(),
            )
        });
        let jet = formalize(&f, &g0, 1e-9).unwrap();
        for j in (0..n).step_by(3) {
            for k in (0..n).step_by(3) {
                let p = jet.linear_part().at(j, k).pullback();
                let res = (p - g0.at(j, k)).operator_norm_relative_to(g0.at(j, k));
                assert!(res < 1e-10);
            }
        }
    }

    #[test]
    fn formalize_rejects_degenerate_maps() {
        let f = pinch_map(32).unwrap();
        let g0 = MetricField::constant(32, Sym2::identity());
        assert!(matches!(
            formalize(&f, &g0, 1e-10),
            Err(Error::NotImmersion { .. })
        ));
    }
}
