//! Sampled fields on the unit square torus and the small fixed-size
//! linear algebra they need.
//!
//! Everything lives on an n x n grid of samples (u_j, v_k) = (j/n, k/n),
//! stored row major with u as the slow index: sample (j, k) sits at j*n + k.
//! Grids are square so that diagonal grid lines close up after exactly n
//! steps, which the corrugation machinery relies on.

use crate::error::{Error, Result};
use std::ops::{Add, Mul, Neg, Sub};

/// Point or vector in R^3.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// Symmetric 2x2 tensor E du^2 + 2 F du dv + G dv^2.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2 {
    pub e: f64,
    pub f: f64,
    pub g: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        e: 0.0,
        f: 0.0,
        g: 0.0,
    };

    pub fn new(e: f64, f: f64, g: f64) -> Self {
        Sym2 { e, f, g }
    }

    pub fn identity() -> Self {
        Sym2::new(1.0, 0.0, 1.0)
    }

    pub fn det(self) -> f64 {
        self.e * self.g - self.f * self.f
    }

    pub fn trace(self) -> f64 {
        self.e + self.g
    }

    /// Eigenvalues as (min, max).
    pub fn eigenvalues(self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let d = 0.5 * (self.e - self.g);
        let disc = (d * d + self.f * self.f).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    /// Positive semidefinite, exact comparisons.
    pub fn is_psd(self) -> bool {
        self.e >= 0.0 && self.g >= 0.0 && self.det() >= 0.0
    }

    /// Generalized eigenvalues of the pencil det(self - lambda * m) = 0,
    /// as (min, max). Requires m positive definite.
    pub fn eigenvalues_relative_to(self, m: Sym2) -> (f64, f64) {
        let a = m.det();
        let b = self.e * m.g + self.g * m.e - 2.0 * self.f * m.f;
        let c = self.det();
        let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
        ((b - disc) / (2.0 * a), (b + disc) / (2.0 * a))
    }

    /// Largest absolute generalized eigenvalue, the operator norm of self
    /// measured against the positive definite reference m.
    pub fn operator_norm_relative_to(self, m: Sym2) -> f64 {
        let (lo, hi) = self.eigenvalues_relative_to(m);
        lo.abs().max(hi.abs())
    }

    /// Principal square root of a positive definite tensor.
    pub fn sqrt_spd(self) -> Sym2 {
        let s = self.det().sqrt();
        let t = (self.trace() + 2.0 * s).sqrt();
        Sym2::new((self.e + s) / t, self.f / t, (self.g + s) / t)
    }

    pub fn inverse(self) -> Sym2 {
        let d = self.det();
        Sym2::new(self.g / d, -self.f / d, self.e / d)
    }

    pub fn condition_number(self) -> f64 {
        let (lo, hi) = self.eigenvalues();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn scale(self, s: f64) -> Sym2 {
        Sym2::new(self.e * s, self.f * s, self.g * s)
    }

    pub fn is_finite(self) -> bool {
        self.e.is_finite() && self.f.is_finite() && self.g.is_finite()
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2::new(self.e + o.e, self.f + o.f, self.g + o.g)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2::new(self.e - o.e, self.f - o.f, self.g - o.g)
    }
}

/// General 2x2 matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub fn from_sym(s: Sym2) -> Mat2 {
        Mat2 {
            a: s.e,
            b: s.f,
            c: s.f,
            d: s.g,
        }
    }

    pub fn mul(self, o: Mat2) -> Mat2 {
        Mat2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn inverse(self) -> Mat2 {
        let det = self.a * self.d - self.b * self.c;
        Mat2 {
            a: self.d / det,
            b: -self.b / det,
            c: -self.c / det,
            d: self.a / det,
        }
    }
}

/// 3x2 Jacobian block with columns d/du and d/dv.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat32 {
    pub du: Vec3,
    pub dv: Vec3,
}

impl Mat32 {
    /// First fundamental form J^T J.
    pub fn pullback(self) -> Sym2 {
        Sym2::new(self.du.dot(self.du), self.du.dot(self.dv), self.dv.dot(self.dv))
    }

    /// Right multiplication by a 2x2 matrix.
    pub fn mul_mat2(self, m: Mat2) -> Mat32 {
        Mat32 {
            du: self.du * m.a + self.dv * m.c,
            dv: self.du * m.b + self.dv * m.d,
        }
    }

    pub fn min_singular_value(self) -> f64 {
        let (lo, _) = self.pullback().eigenvalues();
        lo.max(0.0).sqrt()
    }

    pub fn normal(self) -> Vec3 {
        self.du.cross(self.dv)
    }
}

/// Dense n x n grid of per-sample values, row major in (j, k).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn from_value(n: usize, value: T) -> Self {
        Grid {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                data.push(f(j, k));
            }
        }
        Grid { n, data }
    }

    pub fn from_raw(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "grid data length must be n^2");
        Grid { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> T {
        self.data[j * self.n + k]
    }

    #[inline]
    pub fn at_mut(&mut self, j: usize, k: usize) -> &mut T {
        &mut self.data[j * self.n + k]
    }

    /// Wrapping access for offsets that may step off the fundamental domain.
    #[inline]
    pub fn at_wrapped(&self, j: isize, k: isize) -> T {
        let n = self.n as isize;
        let jw = j.rem_euclid(n) as usize;
        let kw = k.rem_euclid(n) as usize;
        self.at(jw, kw)
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            n: self.n,
            data: self.data.iter().map(|&t| f(t)).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, o: &Grid<U>, f: impl Fn(T, U) -> V) -> Grid<V> {
        assert_eq!(self.n, o.n, "grid sizes must match");
        Grid {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(o.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

pub type ScalarField = Grid<f64>;

/// Map from the unit square torus into R^3, sampled on the n x n grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTorusMap {
    grid: Grid<Vec3>,
}

impl GridTorusMap {
    pub const MIN_N: usize = 8;

    pub fn new(grid: Grid<Vec3>) -> Result<Self> {
        let n = grid.n();
        if n < Self::MIN_N || n % 2 != 0 {
            return Err(Error::InvalidMap(format!(
                "grid resolution {n} must be even and at least {}",
                Self::MIN_N
            )));
        }
        if let Some(idx) = grid.values().iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidMap(format!(
                "non-finite coordinate at sample ({}, {})",
                idx / n,
                idx % n
            )));
        }
        Ok(GridTorusMap { grid })
    }

    /// Sample a closed-form parametrization f(u, v) with u, v in [0, 1).
    pub fn from_fn(n: usize, f: impl FnMut(f64, f64) -> Vec3) -> Result<Self> {
        let h = 1.0 / n as f64;
        let mut f = f;
        GridTorusMap::new(Grid::from_fn(n, |j, k| f(j as f64 * h, k as f64 * h)))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> Vec3 {
        self.grid.at(j, k)
    }

    pub fn points(&self) -> &Grid<Vec3> {
        &self.grid
    }

    pub fn points_mut(&mut self) -> &mut Grid<Vec3> {
        &mut self.grid
    }

    pub fn scaled(&self, s: f64) -> GridTorusMap {
        GridTorusMap {
            grid: self.grid.map(|p| p * s),
        }
    }

    /// Sup distance between two maps on the same grid.
    pub fn max_distance(&self, other: &GridTorusMap) -> Result<f64> {
        if self.n() != other.n() {
            return Err(Error::ShapeError(format!(
                "map resolutions differ: {} vs {}",
                self.n(),
                other.n()
            )));
        }
        Ok(self
            .grid
            .values()
            .iter()
            .zip(other.grid.values())
            .map(|(a, b)| (*a - *b).norm())
            .fold(0.0, f64::max))
    }

    /// Diameter of the sampled image, used to scale push-offs.
    pub fn diameter_estimate(&self) -> f64 {
        let vals = self.grid.values();
        let mut lo = vals[0];
        let mut hi = vals[0];
        for p in vals {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (hi - lo).norm()
    }
}

/// Per-sample 3x2 Jacobian of a map, produced by spectral differentiation.
/// Only the differentiation operator constructs one, so a JacobianField is
/// always consistent with the map it came from.
#[derive(Clone, Debug)]
pub struct JacobianField {
    grid: Grid<Mat32>,
}

impl JacobianField {
    pub(crate) fn from_grid(grid: Grid<Mat32>) -> Self {
        JacobianField { grid }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> Mat32 {
        self.grid.at(j, k)
    }

    pub fn values(&self) -> &[Mat32] {
        self.grid.values()
    }

    pub fn grid(&self) -> &Grid<Mat32> {
        &self.grid
    }
}

/// Symmetric 2-tensor field without positivity assumptions, e.g. a defect.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricTensorField {
    grid: Grid<Sym2>,
}

impl SymmetricTensorField {
    pub fn new(grid: Grid<Sym2>) -> Self {
        SymmetricTensorField { grid }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> Sym2) -> Self {
        SymmetricTensorField {
            grid: Grid::from_fn(n, f),
        }
    }

    pub fn constant(n: usize, value: Sym2) -> Self {
        SymmetricTensorField {
            grid: Grid::from_value(n, value),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> Sym2 {
        self.grid.at(j, k)
    }

    pub fn values(&self) -> &[Sym2] {
        self.grid.values()
    }

    pub fn grid(&self) -> &Grid<Sym2> {
        &self.grid
    }

    pub fn zip_map(&self, o: &SymmetricTensorField, f: impl Fn(Sym2, Sym2) -> Sym2) -> Result<Self> {
        if self.n() != o.n() {
            return Err(Error::ShapeError(format!(
                "tensor field resolutions differ: {} vs {}",
                self.n(),
                o.n()
            )));
        }
        Ok(SymmetricTensorField {
            grid: self.grid.zip_map(&o.grid, f),
        })
    }

    /// Smallest eigenvalue over all samples.
    pub fn min_eigenvalue(&self) -> f64 {
        self.grid
            .values()
            .iter()
            .map(|s| s.eigenvalues().0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Riemannian metric field: a symmetric tensor field that is positive
/// definite at every sample. Constructors that trust their input exist for
/// results of pullbacks, which may legitimately degenerate; positivity is
/// checked where operations require it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    tensor: SymmetricTensorField,
}

impl MetricField {
    pub fn new(tensor: SymmetricTensorField) -> Self {
        MetricField { tensor }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> Sym2) -> Self {
        MetricField {
            tensor: SymmetricTensorField::from_fn(n, f),
        }
    }

    pub fn constant(n: usize, value: Sym2) -> Self {
        MetricField {
            tensor: SymmetricTensorField::constant(n, value),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.tensor.n()
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> Sym2 {
        self.tensor.at(j, k)
    }

    pub fn values(&self) -> &[Sym2] {
        self.tensor.values()
    }

    pub fn as_tensor(&self) -> &SymmetricTensorField {
        &self.tensor
    }

    pub fn into_tensor(self) -> SymmetricTensorField {
        self.tensor
    }

    pub fn positive_definite(&self) -> bool {
        self.values().iter().all(|s| s.e > 0.0 && s.det() > 0.0)
    }

    /// Largest per-sample condition number.
    pub fn max_condition_number(&self) -> f64 {
        self.values()
            .iter()
            .map(|s| s.condition_number())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cross_product_is_right_handed() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        let y = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(x.cross(y), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn sym2_eigenvalues_match_characteristic_polynomial() {
        let s = Sym2::new(2.0, 1.0, 3.0);
        let (lo, hi) = s.eigenvalues();
        for lam in [lo, hi] {
            let chi = (s.e - lam) * (s.g - lam) - s.f * s.f;
            assert!(chi.abs() < 1e-12, "chi({lam}) = {chi}");
        }
        assert!(lo <= hi);
    }

    #[test]
    fn sqrt_spd_squares_back() {
        let s = Sym2::new(4.0, 1.0, 2.0);
        let r = s.sqrt_spd();
        let m = Mat2::from_sym(r).mul(Mat2::from_sym(r));
        assert_relative_eq!(m.a, s.e, epsilon = 1e-14);
        assert_relative_eq!(m.b, s.f, epsilon = 1e-14);
        assert_relative_eq!(m.d, s.g, epsilon = 1e-14);
    }

    #[test]
    fn generalized_eigenvalues_against_plain_ones() {
        let s = Sym2::new(3.0, 0.5, 1.5);
        let (lo, hi) = s.eigenvalues_relative_to(Sym2::identity());
        let (plo, phi) = s.eigenvalues();
        assert_relative_eq!(lo, plo, epsilon = 1e-14);
        assert_relative_eq!(hi, phi, epsilon = 1e-14);
    }

    #[test]
    fn map_rejects_odd_or_tiny_grids() {
        assert!(GridTorusMap::from_fn(6, |_, _| Vec3::ZERO).is_err());
        let odd = Grid::from_value(9, Vec3::ZERO);
        assert!(GridTorusMap::new(odd).is_err());
    }

    #[test]
    fn map_rejects_non_finite_samples() {
        let mut grid = Grid::from_value(8, Vec3::ZERO);
        *grid.at_mut(3, 4) = Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(GridTorusMap::new(grid), Err(Error::InvalidMap(_))));
    }

    #[test]
    fn wrapped_indexing() {
        let g = Grid::from_fn(8, |j, k| (j * 8 + k) as f64);
        assert_eq!(g.at_wrapped(-1, 0), g.at(7, 0));
        assert_eq!(g.at_wrapped(8, 9), g.at(0, 1));
    }
}
