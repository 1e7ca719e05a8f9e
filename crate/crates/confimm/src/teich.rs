//! Genus-1 Teichmüller space in the upper half plane chart.
//!
//! A point w in H^2 labels the flat conformal class of the quotient torus
//! C / (Z + wZ). The chart is realized concretely in two directions:
//!
//! * `metric_from_modulus` produces the constant coefficient metric
//!   g_w = |dz + mu dz_bar|^2 with mu = (i - w)/(i + w), whose conformal
//!   class is exactly w.
//! * `modulus_of_metric` recovers the class of an arbitrary sampled metric
//!   by solving for the g-harmonic representative of du, closing it to the
//!   holomorphic form Omega = omega + i *omega, and taking the ratio of the
//!   two loop periods.
//!
//! The harmonic solve minimizes the g-Dirichlet energy of du + d phi with
//! P1 finite elements on the triangulated grid, which yields a symmetric
//! positive semidefinite 7-band system solved by Jacobi-preconditioned
//! conjugate gradients.

use crate::error::{Error, Result};
use crate::grid::{Grid, MetricField, Sym2};
use crate::spectral;
use num_complex::Complex64;

/// Point of the upper half plane chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Modulus {
    re: f64,
    im: f64,
}

impl Modulus {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !(im > 0.0) || !re.is_finite() || !im.is_finite() {
            return Err(Error::NotInUpperHalfPlane { re, im });
        }
        Ok(Modulus { re, im })
    }

    pub fn re(self) -> f64 {
        self.re
    }

    pub fn im(self) -> f64 {
        self.im
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn from_complex(z: Complex64) -> Result<Self> {
        Modulus::new(z.re, z.im)
    }
}

impl std::fmt::Display for Modulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.12} {:.12}", self.re, self.im)
    }
}

/// Euclidean distance in the chart.
pub fn chart_distance(a: Modulus, b: Modulus) -> f64 {
    ((a.re - b.re).powi(2) + (a.im - b.im).powi(2)).sqrt()
}

/// Constant coefficient metric |dz + mu dz_bar|^2 with mu = (i-w)/(i+w).
/// Writing mu = p + iq the coefficients are
/// E = (1+p)^2 + q^2, F = 2q, G = (1-p)^2 + q^2, det = (1 - |mu|^2)^2.
pub fn metric_from_modulus(w: Modulus, n: usize) -> MetricField {
    let i = Complex64::new(0.0, 1.0);
    let wc = w.to_complex();
    let mu = (i - wc) / (i + wc);
    let (p, q) = (mu.re, mu.im);
    let coeffs = Sym2::new(
        (1.0 + p).powi(2) + q * q,
        2.0 * q,
        (1.0 - p).powi(2) + q * q,
    );
    MetricField::constant(n, coeffs)
}

/// Closed ball in the chart together with the sample set a parametric sweep
/// evaluates. The center is always a sample.
#[derive(Clone, Debug)]
pub struct TeichBall {
    center: Modulus,
    radius: f64,
    samples: Vec<Modulus>,
}

impl TeichBall {
    pub fn new(center: Modulus, radius: f64, samples: Vec<Modulus>) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::ConfigError(format!(
                "ball radius {radius} must be positive and finite"
            )));
        }
        if radius >= center.im() {
            return Err(Error::ConfigError(format!(
                "ball of radius {radius} at im = {} leaves the upper half plane",
                center.im()
            )));
        }
        if !samples.iter().any(|s| chart_distance(*s, center) == 0.0) {
            return Err(Error::ConfigError(
                "ball samples must include the center".into(),
            ));
        }
        if let Some(s) = samples
            .iter()
            .find(|s| chart_distance(**s, center) > radius * (1.0 + 1e-12))
        {
            return Err(Error::ConfigError(format!(
                "sample {} {} lies outside the ball",
                s.re(),
                s.im()
            )));
        }
        Ok(TeichBall {
            center,
            radius,
            samples,
        })
    }

    /// Center plus four points at radius/2 and eight on the boundary,
    /// thirteen samples total.
    pub fn with_default_samples(center: Modulus, radius: f64) -> Result<Self> {
        let mut samples = vec![center];
        for arm in 0..4 {
            let ang = std::f64::consts::FRAC_PI_2 * arm as f64;
            samples.push(Modulus::new(
                center.re() + 0.5 * radius * ang.cos(),
                center.im() + 0.5 * radius * ang.sin(),
            )?);
        }
        for arm in 0..8 {
            let ang = std::f64::consts::FRAC_PI_4 * arm as f64;
            samples.push(Modulus::new(
                center.re() + radius * ang.cos(),
                center.im() + radius * ang.sin(),
            )?);
        }
        TeichBall::new(center, radius, samples)
    }

    pub fn center(&self) -> Modulus {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn samples(&self) -> &[Modulus] {
        &self.samples
    }
}

/// Solver knobs for `modulus_of_metric`.
#[derive(Clone, Copy, Debug)]
pub struct ModulusOptions {
    /// Relative residual target for the conjugate gradient solve.
    pub tol_cg: f64,
    /// Iteration cap; 0 means 40n + 2000.
    pub max_cg_iters: usize,
    /// Largest admissible per-sample condition number of the metric.
    pub cond_cap: f64,
}

impl Default for ModulusOptions {
    fn default() -> Self {
        ModulusOptions {
            tol_cg: 1e-10,
            max_cg_iters: 0,
            cond_cap: 1e8,
        }
    }
}

/// Seven-band symmetric stencil on the periodic grid: self coupling plus
/// the six directed neighbors (+u, -u, +v, -v, +uv, -uv).
struct Stencil {
    n: usize,
    c_self: Vec<f64>,
    c_pu: Vec<f64>,
    c_mu: Vec<f64>,
    c_pv: Vec<f64>,
    c_mv: Vec<f64>,
    c_pd: Vec<f64>,
    c_md: Vec<f64>,
}

impl Stencil {
    fn zeros(n: usize) -> Self {
        let z = vec![0.0; n * n];
        Stencil {
            n,
            c_self: z.clone(),
            c_pu: z.clone(),
            c_mu: z.clone(),
            c_pv: z.clone(),
            c_mv: z.clone(),
            c_pd: z.clone(),
            c_md: z,
        }
    }

    fn add_pair(&mut self, a: (usize, usize), b: (usize, usize), coeff: f64) {
        let n = self.n;
        let ia = a.0 * n + a.1;
        let ib = b.0 * n + b.1;
        if ia == ib {
            self.c_self[ia] += coeff;
            return;
        }
        // The assembly loop visits each vertex pair in both orders, so a
        // single directed band takes the contribution.
        let dj = (b.0 + n - a.0) % n;
        let dk = (b.1 + n - a.1) % n;
        let band = if (dj, dk) == (1, 0) {
            &mut self.c_pu
        } else if (dj, dk) == (n - 1, 0) {
            &mut self.c_mu
        } else if (dj, dk) == (0, 1) {
            &mut self.c_pv
        } else if (dj, dk) == (0, n - 1) {
            &mut self.c_mv
        } else if (dj, dk) == (1, 1) {
            &mut self.c_pd
        } else if (dj, dk) == (n - 1, n - 1) {
            &mut self.c_md
        } else {
            unreachable!("offset ({dj}, {dk}) is not in the stencil")
        };
        band[ia] += coeff;
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let jp = (j + 1) % n;
            let jm = (j + n - 1) % n;
            for k in 0..n {
                let kp = (k + 1) % n;
                let km = (k + n - 1) % n;
                let i = j * n + k;
                y[i] = self.c_self[i] * x[i]
                    + self.c_pu[i] * x[jp * n + k]
                    + self.c_mu[i] * x[jm * n + k]
                    + self.c_pv[i] * x[j * n + kp]
                    + self.c_mv[i] * x[j * n + km]
                    + self.c_pd[i] * x[jp * n + kp]
                    + self.c_md[i] * x[jm * n + km];
            }
        }
    }
}

/// Hodge dual coefficients of a 1-form a du + b dv for the metric (E, F, G):
/// *(a du + b dv) = ((aF - bE) du + (aG - bF) dv) / sqrt(det).
fn hodge_star(a: f64, b: f64, g: Sym2) -> (f64, f64) {
    let sd = g.det().sqrt();
    ((a * g.f - b * g.e) / sd, (a * g.g - b * g.f) / sd)
}

/// Conformal class of a sampled positive definite metric.
pub fn modulus_of_metric(g: &MetricField, opts: &ModulusOptions) -> Result<Modulus> {
    let n = g.n();
    if !g.positive_definite() {
        return Err(Error::IllConditionedMetric {
            max_condition: f64::INFINITY,
            cap: opts.cond_cap,
        });
    }
    let cond = g.max_condition_number();
    if cond > opts.cond_cap {
        return Err(Error::IllConditionedMetric {
            max_condition: cond,
            cap: opts.cond_cap,
        });
    }

    // Coefficient tensor of the Dirichlet energy: W = sqrt(det) g^{-1}.
    let w: Vec<Sym2> = g
        .values()
        .iter()
        .map(|s| {
            let sd = s.det().sqrt();
            Sym2::new(s.g / sd, -s.f / sd, s.e / sd)
        })
        .collect();

    let h = 1.0 / n as f64;
    let area = 0.5 * h * h;
    let inv_h = n as f64;
    let mut st = Stencil::zeros(n);
    let mut b = vec![0.0; n * n];

    // P1 triangles: each grid cell (j, k) splits along the (+u, +v) diagonal.
    let tri_grads_lower = [(-inv_h, 0.0), (inv_h, -inv_h), (0.0, inv_h)];
    let tri_grads_upper = [(0.0, -inv_h), (inv_h, 0.0), (-inv_h, inv_h)];
    for j in 0..n {
        let jp = (j + 1) % n;
        for k in 0..n {
            let kp = (k + 1) % n;
            let lower = [(j, k), (jp, k), (jp, kp)];
            let upper = [(j, k), (jp, kp), (j, kp)];
            for (verts, grads) in [(lower, tri_grads_lower), (upper, tri_grads_upper)] {
                let wt = {
                    let mut acc = Sym2::ZERO;
                    for &(vj, vk) in &verts {
                        acc = acc + w[vj * n + vk];
                    }
                    acc.scale(1.0 / 3.0)
                };
                for a_i in 0..3 {
                    let ga = grads[a_i];
                    // W applied to the hat gradient of vertex a.
                    let wga = (wt.e * ga.0 + wt.f * ga.1, wt.f * ga.0 + wt.g * ga.1);
                    for b_i in 0..3 {
                        let gb = grads[b_i];
                        st.add_pair(verts[a_i], verts[b_i], area * (wga.0 * gb.0 + wga.1 * gb.1));
                    }
                    // Forcing from the du part of omega = du + d phi.
                    b[verts[a_i].0 * n + verts[a_i].1] -= area * (wga.0 * 1.0 + wga.1 * 0.0);
                }
            }
        }
    }

    // Jacobi-preconditioned CG for the periodic Neumann-type system. The
    // kernel is the constants; b is mean free by partition of unity, and the
    // mean is re-projected out of the residual to keep roundoff from feeding
    // the kernel. A rhs at rounding level relative to the stencil (constant
    // coefficients) already has the solution phi = 0.
    let size = n * n;
    let remove_mean = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
    };
    remove_mean(&mut b);
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale_a = st.c_self.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut phi = vec![0.0; size];
    if norm_b > 1e-13 * scale_a {
        let max_iters = if opts.max_cg_iters == 0 {
            40 * n + 2000
        } else {
            opts.max_cg_iters
        };
        let inv_diag: Vec<f64> = st.c_self.iter().map(|d| 1.0 / d).collect();
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; size];
        let mut rz = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let mut converged = false;
        for _ in 0..max_iters {
            st.matvec(&p, &mut ap);
            let pap = p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            let alpha = rz / pap;
            for i in 0..size {
                phi[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            remove_mean(&mut r);
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if res <= opts.tol_cg * norm_b {
                converged = true;
                break;
            }
            for i in 0..size {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..size {
                p[i] = z[i] + beta * p[i];
            }
        }
        if !converged {
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::ModulusSolveFailed(format!(
                "conjugate gradients stalled at relative residual {:.3e} after {} iterations",
                res / norm_b,
                max_iters
            )));
        }
    }

    // omega = du + d phi, Omega = omega + i * (star omega). Periods over the
    // two loop classes come out of whole-grid means: averaging the u-loop
    // integral over all rows (and the v-loop over all columns) is itself a
    // grid quadrature of the same homology classes.
    let phi_grid = Grid::from_raw(n, phi);
    let phi_u = spectral::d_du(&phi_grid);
    let phi_v = spectral::d_dv(&phi_grid);
    let mut pa = Complex64::new(0.0, 0.0);
    let mut pb = Complex64::new(0.0, 0.0);
    for j in 0..n {
        for k in 0..n {
            let a = 1.0 + phi_u.at(j, k);
            let bb = phi_v.at(j, k);
            let (sa, sb) = hodge_star(a, bb, g.at(j, k));
            pa += Complex64::new(a, sa);
            pb += Complex64::new(bb, sb);
        }
    }
    let scale = 1.0 / (n * n) as f64;
    pa *= scale;
    pb *= scale;
    if pa.norm() == 0.0 {
        return Err(Error::ModulusSolveFailed("vanishing A-period".into()));
    }
    let mut tau = pb / pa;
    if tau.im < 0.0 {
        tau = tau.conj();
    }
    if !(tau.im > 0.0) || !tau.re.is_finite() {
        return Err(Error::ModulusSolveFailed(format!(
            "period ratio {} + {}i does not define a point of the upper half plane",
            tau.re, tau.im
        )));
    }
    Modulus::new(tau.re, tau.im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::torus_of_revolution;
    use crate::geometry::pullback_metric;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn m(re: f64, im: f64) -> Modulus {
        Modulus::new(re, im).unwrap()
    }

    #[test]
    fn modulus_requires_upper_half_plane() {
        assert!(Modulus::new(0.3, 0.0).is_err());
        assert!(Modulus::new(0.0, -1.0).is_err());
        assert!(Modulus::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn square_torus_metric_is_the_identity() {
        let g = metric_from_modulus(m(0.0, 1.0), 8);
        assert_eq!(g.at(3, 5), Sym2::identity());
    }

    #[test]
    fn doubled_torus_metric_matches_hand_expansion() {
        // w = 2i gives mu = -1/3 and |dz - dz_bar/3|^2 = diag(4/9, 16/9).
        let g = metric_from_modulus(m(0.0, 2.0), 8);
        let s = g.at(0, 0);
        assert_relative_eq!(s.e, 4.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(s.f, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.g, 16.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn chart_metric_determinant_is_conformal_norm() {
        for (re, im) in [(0.0, 1.0), (0.5, 0.8), (-0.3, 1.5), (1.2, 0.4)] {
            let w = m(re, im);
            let i = Complex64::new(0.0, 1.0);
            let mu = (i - w.to_complex()) / (i + w.to_complex());
            let g = metric_from_modulus(w, 8).at(0, 0);
            let expect = (1.0 - mu.norm_sqr()).powi(2);
            assert_relative_eq!(g.det(), expect, epsilon = 1e-13);
            assert!(mu.norm() < 1.0);
        }
    }

    #[test]
    fn modulus_round_trip_on_constant_metrics_is_nearly_exact() {
        for (re, im) in [(0.0, 1.0), (0.0, 2.0), (0.5, 0.8), (-0.3, 1.5)] {
            let w = m(re, im);
            let g = metric_from_modulus(w, 64);
            let tau = modulus_of_metric(&g, &ModulusOptions::default()).unwrap();
            assert!(
                chart_distance(tau, w) < 1e-12,
                "round trip moved {re}+{im}i by {}",
                chart_distance(tau, w)
            );
        }
    }

    #[test]
    fn torus_of_revolution_modulus_matches_quadrature_oracle() {
        // The conformal length of the v-circle is the integral of
        // r / (R + r cos theta); for R = 2, r = 1 the closed form is
        // 1/sqrt(3). Cross-check the closed form by Simpson quadrature,
        // then the solver against both.
        let steps = 1 << 14;
        let mut acc = 0.0;
        let h = 1.0 / steps as f64;
        for i in 0..steps {
            let x0 = i as f64 * h;
            let xm = x0 + 0.5 * h;
            let x1 = x0 + h;
            let f = |x: f64| 1.0 / (2.0 + (TAU * x).cos());
            acc += h / 6.0 * (f(x0) + 4.0 * f(xm) + f(x1));
        }
        let closed_form = 1.0 / 3.0f64.sqrt();
        assert_relative_eq!(acc, closed_form, epsilon = 1e-12);

        let f = torus_of_revolution(128, 2.0, 1.0).unwrap();
        let g = pullback_metric(&f);
        let tau = modulus_of_metric(&g, &ModulusOptions::default()).unwrap();
        assert!(tau.re().abs() < 1e-6);
        assert_relative_eq!(tau.im(), closed_form, epsilon = 2e-4);
    }

    #[test]
    fn modulus_is_conformally_invariant() {
        let f = torus_of_revolution(64, 2.0, 1.0).unwrap();
        let g = pullback_metric(&f);
        let lam = |j: usize, k: usize| {
            let u = j as f64 / 64.0;
            let _ = k;
            1.0 + 0.5 * (TAU * u).sin()
        };
        let scaled = MetricField::from_fn(64, |j, k| g.at(j, k).scale(lam(j, k)));
        let t0 = modulus_of_metric(&g, &ModulusOptions::default()).unwrap();
        let t1 = modulus_of_metric(&scaled, &ModulusOptions::default()).unwrap();
        assert!(chart_distance(t0, t1) < 1e-10);
    }

    #[test]
    fn modulus_is_invariant_under_grid_shifts() {
        let n = 64;
        let f = torus_of_revolution(n, 2.0, 1.0).unwrap();
        let g = pullback_metric(&f);
        let shifted = MetricField::from_fn(n, |j, k| g.at((j + 3) % n, (k + 5) % n));
        let t0 = modulus_of_metric(&g, &ModulusOptions::default()).unwrap();
        let t1 = modulus_of_metric(&shifted, &ModulusOptions::default()).unwrap();
        assert!(chart_distance(t0, t1) < 1e-8);
    }

    #[test]
    fn ill_conditioned_metrics_are_rejected() {
        let g = MetricField::constant(16, Sym2::new(1.0, 0.0, 1e-9));
        let err = modulus_of_metric(&g, &ModulusOptions::default()).unwrap_err();
        assert!(matches!(err, Error::IllConditionedMetric { .. }));
    }

    #[test]
    fn default_ball_has_thirteen_samples_within_radius() {
        let ball = TeichBall::with_default_samples(m(0.0, 1.0), 0.2).unwrap();
        assert_eq!(ball.samples().len(), 13);
        assert!(ball
            .samples()
            .iter()
            .all(|s| chart_distance(*s, ball.center()) <= 0.2 * (1.0 + 1e-12)));
        assert!(TeichBall::with_default_samples(m(0.0, 1.0), 1.0).is_err());
        assert!(TeichBall::with_default_samples(m(0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn chart_distance_is_euclidean() {
        assert_relative_eq!(
            chart_distance(m(0.0, 1.0), m(3.0, 5.0)),
            5.0,
            epsilon = 1e-15
        );
    }
}
