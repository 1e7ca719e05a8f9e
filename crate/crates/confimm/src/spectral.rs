//! Fourier differentiation and integration on periodic grids.
//!
//! All sampled data is treated as the trigonometric interpolant of its n
//! samples over one period. Derivatives multiply mode m by 2*pi*i*m, the
//! antiderivative divides by it, and the Nyquist mode of a derivative is
//! zeroed so real input stays real. These operators are exact inverses of
//! each other on the mean-free modes, which the corrugation step relies on.

use crate::grid::{Grid, GridTorusMap, JacobianField, Mat32, Vec3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::TAU;
use std::sync::Arc;

/// Forward/inverse FFT plans for one line length.
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

#[derive(Clone, Copy)]
enum LineOp {
    Derivative,
    AntiderivativeZeroMean,
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Spectral {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Signed integer frequency of FFT bin m, with the Nyquist bin mapped to 0.
    #[inline]
    fn frequency(&self, m: usize) -> f64 {
        let n = self.n;
        if 2 * m < n {
            m as f64
        } else if 2 * m == n {
            0.0
        } else {
            m as f64 - n as f64
        }
    }

    fn apply_line_op(&self, spectrum: &mut [Complex64], op: LineOp) {
        for (m, c) in spectrum.iter_mut().enumerate() {
            let f = self.frequency(m);
            *c = match op {
                LineOp::Derivative => *c * Complex64::new(0.0, TAU * f),
                LineOp::AntiderivativeZeroMean => {
                    if f == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        *c / Complex64::new(0.0, TAU * f)
                    }
                }
            };
        }
    }

    fn line_vec3(&self, line: &[Vec3], out: &mut [Vec3], op: LineOp, scratch: &mut Vec<Complex64>) {
        debug_assert_eq!(line.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        scratch.resize(self.n, Complex64::new(0.0, 0.0));
        let inv_n = 1.0 / self.n as f64;
        for coord in 0..3 {
            for (c, p) in scratch.iter_mut().zip(line.iter()) {
                let v = match coord {
                    0 => p.x,
                    1 => p.y,
                    _ => p.z,
                };
                *c = Complex64::new(v, 0.0);
            }
            self.fwd.process(scratch);
            self.apply_line_op(scratch, op);
            self.inv.process(scratch);
            for (c, p) in scratch.iter().zip(out.iter_mut()) {
                let v = c.re * inv_n;
                match coord {
                    0 => p.x = v,
                    1 => p.y = v,
                    _ => p.z = v,
                }
            }
        }
    }

    /// Derivative of a closed line of points with respect to its unit-period
    /// parameter (sample spacing 1/n).
    pub fn line_derivative_vec3(
        &self,
        line: &[Vec3],
        out: &mut [Vec3],
        scratch: &mut Vec<Complex64>,
    ) {
        self.line_vec3(line, out, LineOp::Derivative, scratch);
    }

    /// Mean-free antiderivative of a closed line of vectors. Dropping the
    /// zero mode is exactly the removal of the per-line linear drift.
    pub fn line_antiderivative_vec3(
        &self,
        line: &[Vec3],
        out: &mut [Vec3],
        scratch: &mut Vec<Complex64>,
    ) {
        self.line_vec3(line, out, LineOp::AntiderivativeZeroMean, scratch);
    }

    fn line_scalar(&self, line: &[f64], out: &mut [f64], op: LineOp, scratch: &mut Vec<Complex64>) {
        debug_assert_eq!(line.len(), self.n);
        scratch.clear();
        scratch.extend(line.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fwd.process(scratch);
        self.apply_line_op(scratch, op);
        self.inv.process(scratch);
        let inv_n = 1.0 / self.n as f64;
        for (c, o) in scratch.iter().zip(out.iter_mut()) {
            *o = c.re * inv_n;
        }
    }
}

fn transpose<T: Copy + Default>(g: &Grid<T>) -> Grid<T> {
    let n = g.n();
    let mut out = Grid::from_value(n, T::default());
    for j in 0..n {
        for k in 0..n {
            *out.at_mut(k, j) = g.at(j, k);
        }
    }
    out
}

/// Derivative of a scalar field along v (the fast, contiguous axis).
fn d_rows(field: &Grid<f64>, sp: &Spectral) -> Grid<f64> {
    let n = field.n();
    let mut out = Grid::from_value(n, 0.0);
    out.values_mut()
        .par_chunks_mut(n)
        .zip(field.values().par_chunks(n))
        .for_each_init(Vec::new, |scratch, (orow, irow)| {
            sp.line_scalar(irow, orow, LineOp::Derivative, scratch);
        });
    out
}

/// d/dv of a scalar field on the torus.
pub fn d_dv(field: &Grid<f64>) -> Grid<f64> {
    d_rows(field, &Spectral::new(field.n()))
}

/// d/du of a scalar field on the torus.
pub fn d_du(field: &Grid<f64>) -> Grid<f64> {
    let t = transpose(field);
    let dt = d_rows(&t, &Spectral::new(field.n()));
    transpose(&dt)
}

fn coordinate(map: &GridTorusMap, coord: usize) -> Grid<f64> {
    map.points().map(|p| match coord {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    })
}

/// Spectral Jacobian of a map: per-sample 3x2 blocks [df/du | df/dv].
pub fn jacobian(map: &GridTorusMap) -> JacobianField {
    let n = map.n();
    let sp = Spectral::new(n);
    let mut jac = Grid::from_value(n, Mat32::default());
    for coord in 0..3 {
        let scalars = coordinate(map, coord);
        let dv = d_rows(&scalars, &sp);
        let t = transpose(&scalars);
        let du_t = d_rows(&t, &sp);
        let du = transpose(&du_t);
        for (idx, m) in jac.values_mut().iter_mut().enumerate() {
            let (a, b) = (du.values()[idx], dv.values()[idx]);
            match coord {
                0 => {
                    m.du.x = a;
                    m.dv.x = b;
                }
                1 => {
                    m.du.y = a;
                    m.dv.y = b;
                }
                _ => {
                    m.du.z = a;
                    m.dv.z = b;
                }
            }
        }
    }
    JacobianField::from_grid(jac)
}

fn upsample_spectrum_1d(src: &[Complex64], dst: &mut [Complex64]) {
    let n = src.len();
    let m = dst.len();
    for d in dst.iter_mut() {
        *d = Complex64::new(0.0, 0.0);
    }
    let half = n / 2;
    dst[..half].copy_from_slice(&src[..half]);
    dst[m - (half - 1)..].copy_from_slice(&src[half + 1..]);
    // The Nyquist bin holds the +n/2 and -n/2 modes folded together; split
    // it evenly so the refined signal stays real.
    dst[half] = src[half] * 0.5;
    dst[m - half] = src[half] * 0.5;
}

fn upsample_scalar(field: &Grid<f64>, factor: usize) -> Grid<f64> {
    let n = field.n();
    let m = n * factor;
    let sp_n = Spectral::new(n);
    let sp_m = Spectral::new(m);

    // Rows first: n rows of length n become n rows of length m.
    let mut rows = Grid::from_value(m, 0.0);
    let mut src = vec![Complex64::new(0.0, 0.0); n];
    let mut dst = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        for k in 0..n {
            src[k] = Complex64::new(field.at(j, k), 0.0);
        }
        sp_n.fwd.process(&mut src);
        upsample_spectrum_1d(&src, &mut dst);
        sp_m.inv.process(&mut dst);
        for k in 0..m {
            *rows.at_mut(j, k) = dst[k].re / n as f64;
        }
    }

    // Then columns: m columns of length n become length m.
    let mut out = Grid::from_value(m, 0.0);
    for k in 0..m {
        for j in 0..n {
            src[j] = Complex64::new(rows.at(j, k), 0.0);
        }
        sp_n.fwd.process(&mut src);
        upsample_spectrum_1d(&src, &mut dst);
        sp_m.inv.process(&mut dst);
        for j in 0..m {
            *out.at_mut(j, k) = dst[j].re / n as f64;
        }
    }
    out
}

/// Band-limited refinement of a map to a grid factor times finer. Exact on
/// the trigonometric interpolant, so original samples are reproduced.
pub fn upsample_map(map: &GridTorusMap, factor: usize) -> crate::error::Result<GridTorusMap> {
    assert!(factor >= 1);
    if factor == 1 {
        return Ok(map.clone());
    }
    let fields: Vec<Grid<f64>> = (0..3)
        .map(|c| upsample_scalar(&coordinate(map, c), factor))
        .collect();
    let m = map.n() * factor;
    GridTorusMap::new(Grid::from_fn(m, |j, k| {
        Vec3::new(fields[0].at(j, k), fields[1].at(j, k), fields[2].at(j, k))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_derivatives_match_closed_form() {
        let n = 32;
        let h = 1.0 / n as f64;
        let field = Grid::from_fn(n, |j, k| {
            let (u, v) = (j as f64 * h, k as f64 * h);
            (TAU * u).sin() + 0.5 * (2.0 * TAU * v).cos()
        });
        let du = d_du(&field);
        let dv = d_dv(&field);
        for j in 0..n {
            for k in 0..n {
                let (u, v) = (j as f64 * h, k as f64 * h);
                assert_relative_eq!(du.at(j, k), TAU * (TAU * u).cos(), epsilon = 1e-10);
                assert_relative_eq!(
                    dv.at(j, k),
                    -TAU * (2.0 * TAU * v).sin(),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn line_antiderivative_inverts_line_derivative() {
        let n = 64;
        let sp = Spectral::new(n);
        let line: Vec<Vec3> = (0..n)
            .map(|t| {
                let s = t as f64 / n as f64;
                Vec3::new(
                    (TAU * s).cos() + 0.3 * (3.0 * TAU * s).sin(),
                    (2.0 * TAU * s).sin(),
                    0.7 * (TAU * s).sin(),
                )
            })
            .collect();
        let mut deriv = vec![Vec3::ZERO; n];
        let mut back = vec![Vec3::ZERO; n];
        let mut scratch = Vec::new();
        sp.line_derivative_vec3(&line, &mut deriv, &mut scratch);
        sp.line_antiderivative_vec3(&deriv, &mut back, &mut scratch);
        // The round trip reproduces the line up to its mean, which is zero here
        // up to the constant terms; compare after recentering.
        let mean = line.iter().fold(Vec3::ZERO, |a, &p| a + p) * (1.0 / n as f64);
        for (b, l) in back.iter().zip(line.iter()) {
            assert!((*b - (*l - mean)).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_of_plane_wave_is_exact() {
        let n = 16;
        let map = GridTorusMap::from_fn(n, |u, v| {
            Vec3::new((TAU * u).sin(), (TAU * v).cos(), (TAU * (u + v)).sin())
        })
        .unwrap();
        let jac = jacobian(&map);
        let h = 1.0 / n as f64;
        for j in 0..n {
            for k in 0..n {
                let (u, v) = (j as f64 * h, k as f64 * h);
                let m = jac.at(j, k);
                assert_relative_eq!(m.du.x, TAU * (TAU * u).cos(), epsilon = 1e-10);
                assert_relative_eq!(m.dv.x, 0.0, epsilon = 1e-10);
                assert_relative_eq!(m.dv.y, -TAU * (TAU * v).sin(), epsilon = 1e-10);
                assert_relative_eq!(m.du.z, TAU * (TAU * (u + v)).cos(), epsilon = 1e-10);
                assert_relative_eq!(m.dv.z, TAU * (TAU * (u + v)).cos(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn upsample_reproduces_original_samples() {
        let n = 16;
        let map = GridTorusMap::from_fn(n, |u, v| {
            Vec3::new(
                (TAU * u).cos() * (2.0 + (TAU * v).cos()),
                (TAU * u).sin(),
                (TAU * v).sin(),
            )
        })
        .unwrap();
        let fine = upsample_map(&map, 2).unwrap();
        assert_eq!(fine.n(), 2 * n);
        for j in 0..n {
            for k in 0..n {
                let d = (fine.at(2 * j, 2 * k) - map.at(j, k)).norm();
                assert!(d < 1e-12, "sample ({j},{k}) moved by {d}");
            }
        }
        // Interpolated samples follow the closed form for band-limited data.
        let h = 0.5 / n as f64;
        let p = fine.at(3, 5);
        let (u, v) = (3.0 * h, 5.0 * h);
        assert_relative_eq!(p.z, (TAU * v).sin(), epsilon = 1e-10);
        assert_relative_eq!(p.y, (TAU * u).sin(), epsilon = 1e-10);
    }

}
