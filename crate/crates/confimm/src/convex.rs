//! Convex integration for torus immersions by one-dimensional corrugation.
//!
//! A strictly short immersion f of the square torus is pushed toward a
//! target flat metric g by repeatedly adding metric along three fixed line
//! fields. The defect D = g - f*h decomposes pointwise into nonnegative
//! multiples of rank-one squares,
//!
//! D = rho_1 du (x) du + rho_2 dv (x) dv + rho_3 l (x) l,
//! l = (du + s dv) / sqrt(2), s = +-1,
//!
//! with rho_3 = 2 s D_12, rho_1 = D_11 - s D_12, rho_2 = D_22 - s D_12.
//! Adding rho l (x) l for one direction is a one-dimensional problem along
//! the integral lines of the dual vector field V (with l(V)^2 = c): the
//! derivative v = df(V) is replaced by a corrugated derivative
//!
//! w = r (cos(theta) t + sin(theta) n),   theta = alpha cos(2 pi N phi),
//!
//! where r^2 = |v|^2 + c rho is the target speed, t = v/|v|, n is the
//! surface normal, and alpha solves J_0(alpha) = |v| / r so that w averages
//! back to v over one oscillation. The phase phi is a global affine
//! function of (u, v) that restricts to the line parameter on every line,
//! so the added oscillation has no fast transverse variation and the
//! pullback metric gains rho l (x) l up to an O(1/N) error.
//!
//! Integrating w - v along each closed line with the mean mode dropped
//! keeps the map doubly periodic; the dropped mean is the closing error of
//! the loop and is itself O(1/N). A staged loop interpolates the target
//! metric through g_k = f_0*h + (1 - theta^k)(g - f_0*h) and corrugates
//! the diagonal direction first so the mixed defect component is consumed
//! before the axis directions run.
//!
//! Stages do not stack corrugations on top of the previous stage's map.
//! A corrugation laid over an already wiggly map rides the fast-turning
//! normal, and the transverse derivative of its perturbation picks up
//! metric error proportional to the frequency ratio of the old wiggles to
//! the new ones, so repeated stacking demands frequencies that grow
//! geometrically forever, which a fixed grid cannot resolve. Instead each
//! direction keeps one cumulative density field and one fixed frequency,
//! and every stage re-lays the whole chain from the smooth base map in
//! frequency order, slowest first. A corrugation then only ever crosses
//! the slower twists laid before it in the chain, the re-laid twists stay
//! phase coherent stage over stage, and the defect remeasured at the next
//! stage folds whatever coupling error the chain left into the cumulative
//! densities, making the loop a self-correcting fixed-point iteration on
//! those fields.

use crate::error::{Error, Result};
use crate::geometry::{
    is_short_pullback, jacobian_immersion_report, normal_field, pullback_metric, sup_defect,
};
use crate::grid::{Grid, GridTorusMap, MetricField, ScalarField, Sym2, SymmetricTensorField, Vec3};
use crate::spectral::Spectral;
use crate::teich::{metric_from_modulus, modulus_of_metric, Modulus, ModulusOptions, TeichBall};
use num_complex::Complex64;
use std::f64::consts::TAU;

/// First positive zero of the Bessel function J_0.
const J0_FIRST_ZERO: f64 = 2.404825557695773;

/// J_0 by its power series, accurate to machine precision for |x| < 3.
fn bessel_j0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..32 {
        term *= -q / ((m * m) as f64);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// J_1 by its power series, accurate to machine precision for |x| < 3.
fn bessel_j1(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for m in 1..32 {
        term *= -q / ((m * (m + 1)) as f64);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// Solve J_0(alpha) = ratio for alpha in [0, first zero of J_0).
///
/// Newton from the small-amplitude expansion alpha ~ 2 sqrt(1 - ratio),
/// falling back to bisection if an iterate leaves the bracket. J_0 is
/// strictly decreasing from 1 to 0 there, so the root is unique.
fn amplitude_for_ratio(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::AmplitudeDomain { ratio });
    }
    if ratio == 1.0 {
        return Ok(0.0);
    }
    let mut alpha = (2.0 * (1.0 - ratio).sqrt()).min(J0_FIRST_ZERO - 1e-9);
    for _ in 0..40 {
        let f = bessel_j0(alpha) - ratio;
        if f.abs() < 1e-14 {
            return Ok(alpha);
        }
        let d = bessel_j1(alpha);
        if d <= 0.0 {
            break;
        }
        let next = alpha + f / d;
        if !(next > 0.0 && next < J0_FIRST_ZERO) {
            break;
        }
        alpha = next;
    }
    let (mut lo, mut hi) = (0.0, J0_FIRST_ZERO);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_j0(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One of the three corrugation line fields on the torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorrugationDirection {
    /// l = du, V = d/du, lines of constant v.
    U,
    /// l = dv, V = d/dv, lines of constant u.
    V,
    /// l = (du + s dv)/sqrt(2), V = d/du + s d/dv, diagonal lines.
    Diag { sign: f64 },
}

impl CorrugationDirection {
    /// Normalization constant c = l(V)^2.
    pub fn coefficient(self) -> f64 {
        match self {
            CorrugationDirection::U | CorrugationDirection::V => 1.0,
            CorrugationDirection::Diag { .. } => 2.0,
        }
    }

    /// Coefficients (a, b) of the form l = a du + b dv.
    pub fn form(self) -> (f64, f64) {
        match self {
            CorrugationDirection::U => (1.0, 0.0),
            CorrugationDirection::V => (0.0, 1.0),
            CorrugationDirection::Diag { sign } => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                (r, sign * r)
            }
        }
    }

    /// The rank-one square l (x) l.
    pub fn tensor_square(self) -> Sym2 {
        let (a, b) = self.form();
        Sym2::new(a * a, a * b, b * b)
    }

    /// Index used in error reports and logs: u = 1, v = 2, diagonal = 3.
    pub fn index(self) -> usize {
        match self {
            CorrugationDirection::U => 1,
            CorrugationDirection::V => 2,
            CorrugationDirection::Diag { .. } => 3,
        }
    }

    /// Short log label.
    pub fn tag(self) -> &'static str {
        match self {
            CorrugationDirection::U => "u",
            CorrugationDirection::V => "v",
            CorrugationDirection::Diag { sign } if sign >= 0.0 => "d+",
            CorrugationDirection::Diag { .. } => "d-",
        }
    }

    fn velocity(self, jac: crate::grid::Mat32) -> Vec3 {
        match self {
            CorrugationDirection::U => jac.du,
            CorrugationDirection::V => jac.dv,
            CorrugationDirection::Diag { sign } => jac.du + jac.dv * sign,
        }
    }

    /// Grid point of sample t on the given line.
    fn point(self, n: usize, line: usize, t: usize) -> (usize, usize) {
        match self {
            CorrugationDirection::U => (t, line),
            CorrugationDirection::V => (line, t),
            CorrugationDirection::Diag { sign } => {
                let j = (line + t) % n;
                let k = if sign >= 0.0 { t % n } else { (n - t) % n };
                (j, k)
            }
        }
    }

    /// Global corrugation phase at sample t of the given line. Restricted
    /// to a line the phase advances by 1/n per sample, and one circuit of
    /// any closed line sweeps a whole number of phase periods provided the
    /// frequency is even.
    fn phase(self, n: usize, line: usize, t: usize) -> f64 {
        match self {
            CorrugationDirection::U | CorrugationDirection::V => t as f64 / n as f64,
            CorrugationDirection::Diag { .. } => (line + 2 * t) as f64 / (2 * n) as f64,
        }
    }
}

/// Pointwise decomposition of a defect tensor into the three rank-one
/// corrugation directions.
#[derive(Clone, Debug)]
pub struct DefectDecomposition {
    sign: f64,
    rho_u: ScalarField,
    rho_v: ScalarField,
    rho_diag: ScalarField,
}

impl DefectDecomposition {
    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn coefficient(&self, dir: CorrugationDirection) -> &ScalarField {
        match dir {
            CorrugationDirection::U => &self.rho_u,
            CorrugationDirection::V => &self.rho_v,
            CorrugationDirection::Diag { .. } => &self.rho_diag,
        }
    }

    /// The three directions in the order a stage consumes them: the
    /// diagonal first, so that the mixed component is gone before the axis
    /// directions run.
    pub fn directions(&self) -> [CorrugationDirection; 3] {
        [
            CorrugationDirection::Diag { sign: self.sign },
            CorrugationDirection::V,
            CorrugationDirection::U,
        ]
    }

    /// Rebuild the decomposed tensor; exact up to rounding for any input.
    pub fn reconstruct(&self) -> SymmetricTensorField {
        let s = self.sign;
        let n = self.rho_u.n();
        SymmetricTensorField::from_fn(n, |j, k| {
            let (ru, rv, rd) = (
                self.rho_u.at(j, k),
                self.rho_v.at(j, k),
                self.rho_diag.at(j, k),
            );
            Sym2::new(ru + 0.5 * rd, 0.5 * s * rd, rv + 0.5 * rd)
        })
    }

    /// Most negative coefficient over all samples and directions.
    pub fn min_coefficient(&self) -> (CorrugationDirection, f64) {
        let mut worst = (CorrugationDirection::U, f64::INFINITY);
        for dir in self.directions() {
            let m = self
                .coefficient(dir)
                .values()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if m < worst.1 {
                worst = (dir, m);
            }
        }
        worst
    }
}

/// Decompose a defect tensor. The diagonal sign s is the sign of the mean
/// mixed component unless the caller pins it (a parametric family must use
/// one sign throughout to stay continuous in the parameter).
pub fn decompose_defect(
    d: &SymmetricTensorField,
    forced_sign: Option<f64>,
) -> DefectDecomposition {
    let n = d.n();
    let sign = match forced_sign {
        Some(s) => {
            if s >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
        None => {
            let mean_f: f64 = d.values().iter().map(|s| s.f).sum::<f64>();
            if mean_f >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    };
    let rho_u = Grid::from_fn(n, |j, k| {
        let s = d.at(j, k);
        s.e - sign * s.f
    });
    let rho_v = Grid::from_fn(n, |j, k| {
        let s = d.at(j, k);
        s.g - sign * s.f
    });
    let rho_diag = Grid::from_fn(n, |j, k| 2.0 * sign * d.at(j, k).f);
    DefectDecomposition {
        sign,
        rho_u,
        rho_v,
        rho_diag,
    }
}

/// Sign-adaptive pointwise decomposition over both diagonals:
///
/// D = rho_u du (x) du + rho_v dv (x) dv + rho_+ l_+ (x) l_+ + rho_- l_- (x) l_-
///
/// with rho_+ = 2 max(D12, 0), rho_- = 2 max(-D12, 0), rho_u = D11 - |D12|,
/// rho_v = D22 - |D12|. Reconstruction is exact for any symmetric field,
/// the diagonal densities are nonnegative by construction with disjoint
/// supports, and the axis densities are nonnegative wherever D is
/// diagonally dominant. Unlike a fixed-sign three-direction decomposition
/// this one is continuous in D even where the mixed component changes
/// sign, which is what a defect field left by earlier corrugations does.
pub fn decompose_defect_adaptive(
    d: &SymmetricTensorField,
) -> [(CorrugationDirection, ScalarField); 4] {
    let n = d.n();
    let rho_plus = Grid::from_fn(n, |j, k| 2.0 * d.at(j, k).f.max(0.0));
    let rho_minus = Grid::from_fn(n, |j, k| 2.0 * (-d.at(j, k).f).max(0.0));
    let rho_u = Grid::from_fn(n, |j, k| {
        let s = d.at(j, k);
        s.e - s.f.abs()
    });
    let rho_v = Grid::from_fn(n, |j, k| {
        let s = d.at(j, k);
        s.g - s.f.abs()
    });
    [
        (CorrugationDirection::Diag { sign: 1.0 }, rho_plus),
        (CorrugationDirection::Diag { sign: -1.0 }, rho_minus),
        (CorrugationDirection::V, rho_v),
        (CorrugationDirection::U, rho_u),
    ]
}

/// Defect g - f*h of a map against a target metric.
pub fn metric_defect(map: &GridTorusMap, g: &MetricField) -> Result<SymmetricTensorField> {
    let pb = pullback_metric(map);
    g.as_tensor().zip_map(pb.as_tensor(), |a, b| a - b)
}

/// Scale a map so it becomes strictly short for g with the given relative
/// margin: the scaled pullback is at most (1 - margin) g in the operator
/// order, with a one-ulp-scale safety factor making the inequality strict.
pub fn make_short(f0: &GridTorusMap, g: &MetricField, margin: f64) -> Result<GridTorusMap> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::ConfigError(format!(
            "shortness margin {margin} must lie in [0, 1)"
        )));
    }
    let pb = pullback_metric(f0);
    if pb.n() != g.n() {
        return Err(Error::ShapeError(format!(
            "map resolution {} does not match metric resolution {}",
            pb.n(),
            g.n()
        )));
    }
    let mut lam_max = 0.0f64;
    for (p, gg) in pb.values().iter().zip(g.values()) {
        lam_max = lam_max.max(p.eigenvalues_relative_to(*gg).1);
    }
    if !(lam_max > 0.0) || !lam_max.is_finite() {
        return Err(Error::InvalidMap(
            "cannot shorten a map with degenerate pullback".into(),
        ));
    }
    let c = ((1.0 - margin) / lam_max).sqrt() * (1.0 - 1e-12);
    Ok(f0.scaled(c))
}

/// A corrugated map together with how far it moved in C^0.
#[derive(Clone, Debug)]
pub struct CorrugationOutcome {
    pub map: GridTorusMap,
    pub displacement: f64,
}

/// Corrugate a map along one direction, adding approximately
/// rho l (x) l to its pullback metric with N oscillations per line circuit.
///
/// Requirements: rho >= 0 everywhere, N in [2, n/4], and N even for the
/// diagonal direction (the diagonal phase is well defined on the torus
/// only up to half periods).
pub fn corrugate_along(
    f: &GridTorusMap,
    dir: CorrugationDirection,
    rho: &ScalarField,
    freq: usize,
) -> Result<CorrugationOutcome> {
    let n = f.n();
    if rho.n() != n {
        return Err(Error::ShapeError(format!(
            "density resolution {} does not match map resolution {}",
            rho.n(),
            n
        )));
    }
    if freq < 2 || freq > n / 4 {
        return Err(Error::ConfigError(format!(
            "corrugation frequency {freq} outside [2, {}] for resolution {n}",
            n / 4
        )));
    }
    if matches!(dir, CorrugationDirection::Diag { .. }) && freq % 2 != 0 {
        return Err(Error::ConfigError(format!(
            "diagonal corrugation frequency {freq} must be even"
        )));
    }
    if let Some(idx) = rho.values().iter().position(|r| *r < 0.0) {
        return Err(Error::NegativeCoefficient {
            direction: dir.index(),
            value: rho.values()[idx],
        });
    }

    let jac = crate::spectral::jacobian(f);
    let rep = jacobian_immersion_report(&jac);
    if rep.min_singular_value <= 1e-12 {
        return Err(Error::NotImmersion {
            min_singular_value: rep.min_singular_value,
            j: rep.argmin.0,
            k: rep.argmin.1,
        });
    }
    let normals = normal_field(&jac)?;
    let c = dir.coefficient();
    let sp = Spectral::new(n);

    let mut points = f.points().clone();
    let mut displacement = 0.0f64;
    let mut p_line = vec![Vec3::ZERO; n];
    let mut shift = vec![Vec3::ZERO; n];
    let mut scratch: Vec<Complex64> = Vec::new();
    for line in 0..n {
        for t in 0..n {
            let (j, k) = dir.point(n, line, t);
            let v = dir.velocity(jac.at(j, k));
            let speed2 = v.norm2();
            let r2 = speed2 + c * rho.at(j, k);
            let ratio = (speed2 / r2).sqrt();
            let alpha = amplitude_for_ratio(ratio.min(1.0))?;
            let theta = alpha * (TAU * freq as f64 * dir.phase(n, line, t)).cos();
            let speed = speed2.sqrt();
            let tangent = v * (1.0 / speed);
            let w = (tangent * theta.cos() + normals.at(j, k) * theta.sin()) * r2.sqrt();
            p_line[t] = w - v;
        }
        sp.line_antiderivative_vec3(&p_line, &mut shift, &mut scratch);
        for (t, s) in shift.iter().enumerate() {
            let (j, k) = dir.point(n, line, t);
            *points.at_mut(j, k) = points.at(j, k) + *s;
            displacement = displacement.max(s.norm());
        }
    }
    let map = GridTorusMap::new(points)?;
    let rep = crate::geometry::immersion_report(&map);
    if rep.min_singular_value <= 1e-12 {
        return Err(Error::NotImmersion {
            min_singular_value: rep.min_singular_value,
            j: rep.argmin.0,
            k: rep.argmin.1,
        });
    }
    Ok(CorrugationOutcome { map, displacement })
}

/// Knobs for the staged Nash-Kuiper loop.
#[derive(Clone, Debug)]
pub struct StageSchedule {
    /// Target sup-norm metric defect, measured against the target metric.
    pub eps: f64,
    /// Stage interpolation ratio in (0, 1); stage k aims for the fraction
    /// 1 - theta^k of the initial defect.
    pub theta: f64,
    /// Hard cap on the number of stages.
    pub max_stages: usize,
    /// Cap on corrugation frequencies; 0 means n/8.
    pub freq_cap: usize,
    /// Residual model constant: a corrugation at frequency N is assumed to
    /// leave about kappa * sup(rho) / N of defect behind. Sets the top
    /// frequency of the chain; the other directions are spaced
    /// geometrically below it, down to 4.
    pub kappa: f64,
    /// Tolerated shortness violation (on the smallest eigenvalue of
    /// g_stage - f*h) before a stage aborts. The base map itself must be
    /// short to 1e-9; stages additionally tolerate overshoot up to a
    /// fraction of the current defect, since the cross-direction coupling
    /// scales with it and the next remeasurement deducts the excess from
    /// the cumulative densities.
    pub shortness_tol: f64,
    /// Fraction of the remeasured defect folded into the cumulative
    /// densities per stage. Values below 1 damp the feedback loop between
    /// the directions at the cost of extra stages.
    pub relaxation: f64,
    /// Total C^0 displacement budget across all corrugations.
    pub c0_budget: f64,
    /// Pin the diagonal sign instead of reading it off the initial defect.
    pub frozen_sign: Option<f64>,
    /// Per-stage frequencies in chain order [v, diag+, diag-, u]; 0
    /// entries and stages beyond the plan fall back to the residual model.
    pub explicit_plan: Option<Vec<[usize; 4]>>,
    /// How many times a NegativeCoefficient abort may restart the run with
    /// theta moved halfway toward 1.
    pub max_theta_retries: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            eps: 0.05,
            theta: 0.4,
            max_stages: 16,
            freq_cap: 0,
            kappa: 8.0,
            shortness_tol: 0.05,
            relaxation: 0.7,
            c0_budget: f64::INFINITY,
            frozen_sign: None,
            explicit_plan: None,
            max_theta_retries: 3,
        }
    }
}

impl StageSchedule {
    pub fn with_eps(eps: f64) -> Self {
        StageSchedule {
            eps,
            ..StageSchedule::default()
        }
    }

    fn freq_cap_for(&self, n: usize) -> usize {
        if self.freq_cap == 0 {
            n / 8
        } else {
            self.freq_cap.min(n / 4)
        }
    }
}

/// One corrugation within a staged run.
#[derive(Clone, Copy, Debug)]
pub struct StageRecord {
    pub stage: usize,
    pub direction: CorrugationDirection,
    pub frequency: usize,
    /// Sup defect against the final target after this corrugation.
    pub sup_defect: f64,
    pub displacement: f64,
}

/// Result of a staged run.
#[derive(Clone, Debug)]
pub struct NashKuiperResult {
    pub map: GridTorusMap,
    pub records: Vec<StageRecord>,
    pub final_defect: f64,
    pub stages_used: usize,
    /// Stage ratio actually used (after any NegativeCoefficient retries).
    pub theta: f64,
    pub sign: f64,
    pub total_displacement: f64,
}

impl NashKuiperResult {
    /// Frequencies per stage in chain order [v, diag+, diag-, u], with 0
    /// for skipped directions; feeds `StageSchedule::explicit_plan` so a
    /// parametric family of runs shares one plan.
    pub fn frequency_plan(&self) -> Vec<[usize; 4]> {
        let stages = self.records.iter().map(|r| r.stage).max().unwrap_or(0);
        let mut plan = vec![[0usize; 4]; stages];
        for rec in &self.records {
            let col = match rec.direction {
                CorrugationDirection::V => 0,
                CorrugationDirection::Diag { sign } if sign >= 0.0 => 1,
                CorrugationDirection::Diag { .. } => 2,
                CorrugationDirection::U => 3,
            };
            plan[rec.stage - 1][col] = rec.frequency;
        }
        plan
    }
}

/// Staged Nash-Kuiper corrugation from a strictly short map toward a flat
/// target metric, to sup defect at most eps.
///
/// Stage k interpolates the target, g_k = f0*h + (1 - theta^k)(g - f0*h),
/// measures the defect of the current map against g_k, folds its
/// decomposition into one cumulative density field per direction, and
/// re-lays the corrugation chain from the base map in the order diagonal,
/// v, u with one fixed frequency per direction (slowest first). The
/// remeasurement makes the loop self-correcting: whatever metric error one
/// stage's chain leaves, the next stage's densities absorb. If a
/// cumulative density comes out substantially negative the run restarts
/// with theta moved halfway toward 1 (gentler stages); small negative
/// excursions at the quarter-of-scale level are clamped to zero and swept
/// up by later stages.
pub fn nash_kuiper_run(
    f0: &GridTorusMap,
    g: &MetricField,
    schedule: &StageSchedule,
) -> Result<NashKuiperResult> {
    if f0.n() != g.n() {
        return Err(Error::ShapeError(format!(
            "map resolution {} does not match metric resolution {}",
            f0.n(),
            g.n()
        )));
    }
    if !(schedule.eps > 0.0) {
        return Err(Error::ConfigError(format!(
            "eps {} must be positive",
            schedule.eps
        )));
    }
    if !(schedule.theta > 0.0 && schedule.theta < 1.0) {
        return Err(Error::ConfigError(format!(
            "theta {} must lie in (0, 1)",
            schedule.theta
        )));
    }
    if !(schedule.relaxation > 0.0 && schedule.relaxation <= 1.0) {
        return Err(Error::ConfigError(format!(
            "relaxation {} must lie in (0, 1]",
            schedule.relaxation
        )));
    }
    let mut theta = schedule.theta;
    let mut retries = 0;
    loop {
        let attempt = attempt_run(f0, g, schedule, theta);
        if let Err(e) = &attempt {
            eprintln!("ATTEMPT theta {theta:.3} failed: {e}");
        }
        match attempt {
            Err(Error::NegativeCoefficient { .. }) if retries < schedule.max_theta_retries => {
                retries += 1;
                theta = 0.5 * (1.0 + theta);
            }
            // Overshooting an intermediate target means the stage steps
            // were too aggressive; stage 0 is the entry precondition and
            // no theta helps there.
            Err(Error::ShortnessLost { stage, .. })
                if stage > 0 && retries < schedule.max_theta_retries =>
            {
                retries += 1;
                theta = 0.5 * (1.0 + theta);
            }
            other => return other,
        }
    }
}

fn attempt_run(
    f0: &GridTorusMap,
    g: &MetricField,
    schedule: &StageSchedule,
    theta: f64,
) -> Result<NashKuiperResult> {
    let n = f0.n();
    let freq_cap = schedule.freq_cap_for(n);
    let pb0 = pullback_metric(f0);
    let d0 = g.as_tensor().zip_map(pb0.as_tensor(), |a, b| a - b)?;

    let initial_defect = sup_defect(pb0.as_tensor(), g.as_tensor(), g)?;
    let sign = schedule
        .frozen_sign
        .map(|s| if s >= 0.0 { 1.0 } else { -1.0 })
        .unwrap_or_else(|| decompose_defect(&d0, None).sign());

    let mut result = NashKuiperResult {
        map: f0.clone(),
        records: Vec::new(),
        final_defect: initial_defect,
        stages_used: 0,
        theta,
        sign,
        total_displacement: 0.0,
    };

    // An already epsilon-isometric start returns before the shortness
    // precondition is consulted.
    if initial_defect <= schedule.eps {
        return Ok(result);
    }
    // The base map must be strictly short; the per-stage tolerance only
    // covers coupling overshoot of intermediate targets.
    let min_eig0 = d0.min_eigenvalue();
    if min_eig0 < -1e-9 {
        return Err(Error::ShortnessLost {
            stage: 0,
            min_eig: min_eig0,
        });
    }

    // Chain slots in laying order, slowest first. The paired index maps a
    // slot to its density in `decompose_defect_adaptive` order. The two
    // diagonals have disjoint supports (one sees the positive part of the
    // mixed component, the other the negative part), so they share one
    // frequency level; v takes the bottom so the twist carrying the
    // deepest deficit, hence the widest angle, turns as slowly as
    // possible, and u runs fastest on top where nothing crosses it.
    let order: [(CorrugationDirection, usize); 4] = [
        (CorrugationDirection::V, 2),
        (CorrugationDirection::Diag { sign: 1.0 }, 0),
        (CorrugationDirection::Diag { sign: -1.0 }, 1),
        (CorrugationDirection::U, 3),
    ];
    // Frequency slot groups over chain positions, with the minimum even
    // frequency each group supports (the diagonal phase is only defined
    // modulo a half period, so its frequency must be even and at least 4).
    let groups: [(&[usize], usize); 3] = [(&[0], 2), (&[1, 2], 4), (&[3], 2)];
    // Cumulative density per direction, always measured against the base
    // map. Each stage re-lays the whole chain from f0 with these fields at
    // fixed frequencies, so no corrugation ever crosses twists faster than
    // the ones laid before it in the chain.
    let mut cum: Vec<ScalarField> = (0..4).map(|_| ScalarField::from_value(n, 0.0)).collect();
    let mut freqs = [0usize; 4];
    let mut f = f0.clone();

    for stage in 1..=schedule.max_stages {
        let delta = 1.0 - theta.powi(stage as i32);
        let g_stage = MetricField::from_fn(n, |j, k| pb0.at(j, k) + d0.at(j, k).scale(delta));

        let pb = pullback_metric(&f);
        let defect_scale = sup_defect(pb.as_tensor(), g.as_tensor(), g)?;
        let stage_gap = g_stage.as_tensor().zip_map(pb.as_tensor(), |a, b| a - b)?;
        let min_eig = stage_gap.min_eigenvalue();
        if min_eig < -schedule.shortness_tol.max(0.3 * defect_scale) {
            return Err(Error::ShortnessLost { stage, min_eig });
        }

        // The first slot folds the stage increment into its cumulative
        // density here; later slots remeasure inside the chain below, so
        // the density each consumes is the full deficit still left after
        // the twists laid before it this very stage, pollution included.
        let beta = schedule.relaxation;
        let fresh = decompose_defect_adaptive(&stage_gap);
        let di0 = order[0].1;
        let updated = cum[0].zip_map(&fresh[di0].1, |c, r| c + beta * r);
        let scale = fresh
            .iter()
            .flat_map(|(_, rho)| rho.values().iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(
                cum.iter()
                    .flat_map(|c| c.values().iter())
                    .fold(0.0f64, |m, &v| m.max(v.abs())),
            );
        let min_c = updated
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_c < -0.25 * scale {
            eprintln!(
                "NEG stage {stage} theta {theta:.3} dir {} min_c {min_c:.4} scale {scale:.4}",
                order[0].0.tag()
            );
            return Err(Error::NegativeCoefficient {
                direction: order[0].0.index(),
                value: min_c,
            });
        }
        cum[0] = updated.map(|r| r.max(0.0));

        let sups: Vec<f64> = cum
            .iter()
            .map(|c| c.values().iter().copied().fold(0.0f64, f64::max))
            .collect();
        let sup_scale = sups.iter().copied().fold(0.0f64, f64::max).max(scale);
        // A direction far below the dominant density is deferred: laying a
        // twist of relative size delta next to a unit twist costs coupling
        // error of order sqrt(delta), so tiny twists are a net loss until
        // the dominant densities have shrunk toward their size.
        let floor = 0.1 * sup_scale;
        let active: Vec<bool> = sups.iter().map(|&s| s > floor && s > 0.0).collect();

        // Assign a fixed frequency the first time a slot group activates:
        // the residual model sets the top of the chain, the rest are
        // spaced geometrically down toward 4. The model is fed the full
        // initial defect, not the current stage increment: the cumulative
        // twists grow toward the full defect, and the frequencies, fixed
        // for the whole run, must be spaced for that endpoint.
        if (0..4).any(|i| active[i] && freqs[i] == 0) {
            let sup_full = decompose_defect_adaptive(&d0)
                .iter()
                .flat_map(|(_, rho)| rho.values().iter())
                .fold(0.0f64, |m, &v| m.max(v));
            let target = (0.25 * initial_defect).max(0.1 * schedule.eps);
            let raw = (schedule.kappa * sup_full / target).ceil() as usize;
            let top = (raw.max(4) + raw % 2).clamp(4, freq_cap.max(4));
            let live: Vec<usize> = (0..3)
                .filter(|&gi| groups[gi].0.iter().any(|&i| active[i] || freqs[i] != 0))
                .collect();
            let k = live.len();
            let bottom = groups[live[0]].1 as f64;
            for (pos, &gi) in live.iter().enumerate() {
                let frac = if k == 1 {
                    1.0
                } else {
                    pos as f64 / (k - 1) as f64
                };
                let level = bottom * (top as f64 / bottom).powf(frac);
                let rounded = 2 * ((level / 2.0).round() as usize);
                let level = rounded.clamp(groups[gi].1, freq_cap.max(groups[gi].1));
                for &i in groups[gi].0 {
                    if freqs[i] == 0 && active[i] {
                        freqs[i] = level;
                    }
                }
            }
        }

        // Re-lay the chain from the base map, slowest direction first.
        let mut chain = f0.clone();
        let mut laid_any = false;
        for (slot, &(dir, _)) in order.iter().enumerate() {
            if !active[slot] {
                continue;
            }
            let planned = schedule
                .explicit_plan
                .as_ref()
                .and_then(|plan| plan.get(stage - 1))
                .map(|row| row[slot])
                .unwrap_or(0);
            let freq = if planned >= 2 {
                planned.min(freq_cap.max(2))
            } else {
                freqs[slot]
            };
            let outcome = corrugate_along(&chain, dir, &cum[slot], freq)?;
            chain = outcome.map;
            laid_any = true;
            {
                let pbc = pullback_metric(&chain);
                let (mut de, mut df, mut dg) = (0.0f64, 0.0f64, 0.0f64);
                for (a, b) in pbc.values().iter().zip(g_stage.values()) {
                    de = de.max((a.e - b.e).abs());
                    df = df.max((a.f - b.f).abs());
                    dg = dg.max((a.g - b.g).abs());
                }
                eprintln!(
                    "  chain {} @{freq} cum {:.3}: |gap E| {de:.3} F {df:.3} G {dg:.3}",
                    dir.tag(),
                    cum[slot].values().iter().copied().fold(0.0f64, f64::max)
                );
            }
            let defect_vs_target =
                sup_defect(pullback_metric(&chain).as_tensor(), g.as_tensor(), g)?;
            result.records.push(StageRecord {
                stage,
                direction: dir,
                frequency: freq,
                sup_defect: defect_vs_target,
                displacement: outcome.displacement,
            });
        }
        if laid_any {
            f = chain;
        }

        let dist = f.max_distance(f0)?;
        result.total_displacement = dist;
        if dist > schedule.c0_budget {
            return Err(Error::C0BudgetExceeded {
                spent: dist,
                budget: schedule.c0_budget,
            });
        }
        result.stages_used = stage;
        result.final_defect = sup_defect(pullback_metric(&f).as_tensor(), g.as_tensor(), g)?;
        eprintln!(
            "STAGE {stage} theta {theta:.3} defect {:.4} sups [{:.3} {:.3} {:.3} {:.3}] freqs {:?} mineig {min_eig:.4}",
            result.final_defect, sups[0], sups[1], sups[2], sups[3], freqs
        );
        if result.final_defect <= schedule.eps {
            result.map = f;
            return Ok(result);
        }
    }
    Err(Error::StageBudgetExceeded {
        stages: schedule.max_stages,
        defect: result.final_defect,
        eps: schedule.eps,
    })
}

/// One entry of a parametric sweep over a Teichmueller ball.
#[derive(Clone, Debug)]
pub struct SweepSample {
    /// Conformal class the run aimed for.
    pub target: Modulus,
    /// Conformal class of the induced metric actually achieved.
    pub achieved: Modulus,
    pub result: NashKuiperResult,
}

/// Scale a base map until it is strictly short, with margin, for the chart
/// metric of every sample of the ball. All runs of a parametric family
/// must share one starting map.
pub fn make_short_for_ball(
    f0: &GridTorusMap,
    ball: &TeichBall,
    margin: f64,
) -> Result<GridTorusMap> {
    let n = f0.n();
    let mut f = make_short(f0, &metric_from_modulus(ball.center(), n), margin)?;
    for _ in 0..60 {
        let pb = pullback_metric(&f);
        let mut ok = true;
        for w in ball.samples() {
            if !is_short_pullback(&pb, &metric_from_modulus(*w, n), margin * 0.5)? {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(f);
        }
        f = f.scaled(0.95);
    }
    Err(Error::InvalidMap(
        "could not make the base map short for every metric in the ball".into(),
    ))
}

/// Run the staged loop for every sample modulus of a ball, from one shared
/// short base map, with the diagonal sign and the stage frequency plan
/// frozen to those of the center run so the family depends continuously on
/// the modulus.
pub fn parametric_sweep(
    f0_short: &GridTorusMap,
    ball: &TeichBall,
    schedule: &StageSchedule,
    opts: &ModulusOptions,
) -> Result<Vec<SweepSample>> {
    let n = f0_short.n();
    let g_center = metric_from_modulus(ball.center(), n);
    let center = nash_kuiper_run(f0_short, &g_center, schedule)?;
    let family_schedule = StageSchedule {
        frozen_sign: Some(center.sign),
        explicit_plan: Some(center.frequency_plan()),
        theta: center.theta,
        ..schedule.clone()
    };
    let mut center_slot = Some(center);
    let mut out = Vec::with_capacity(ball.samples().len());
    for w in ball.samples() {
        let result = match (chart_is_center(*w, ball), center_slot.take()) {
            (true, Some(done)) => done,
            (true, None) => nash_kuiper_run(f0_short, &g_center, &family_schedule)?,
            (false, slot) => {
                center_slot = slot;
                nash_kuiper_run(f0_short, &metric_from_modulus(*w, n), &family_schedule)?
            }
        };
        let achieved = modulus_of_metric(&pullback_metric(&result.map), opts)?;
        out.push(SweepSample {
            target: *w,
            achieved,
            result,
        });
    }
    Ok(out)
}

fn chart_is_center(w: Modulus, ball: &TeichBall) -> bool {
    crate::teich::chart_distance(w, ball.center()) == 0.0
}
