//! Approximately isometric immersions of flat tori with prescribed
//! conformal class.
//!
//! The crate connects three layers of machinery:
//!
//! 1. **Convex integration** (`convex`): a parametric Nash-Kuiper loop that
//!    corrugates a strictly short immersion of the torus along three line
//!    fields until its pullback metric is within a requested sup-norm
//!    tolerance of a target flat metric.
//! 2. **Teichmüller projection** (`teich`): the conformal class of the
//!    resulting induced metric, computed through a discrete Hodge solve and
//!    read off in the upper half plane chart of genus-1 moduli.
//! 3. **Topological control** (`fixed_point`, `invariants`): a degree
//!    certificate plus damped fixed-point iteration that steers the
//!    prescribed flat class until the immersion realizes a requested
//!    conformal class, and regular homotopy invariants that pin down which
//!    of the finitely many immersion components the output lives in.
//!
//! Supporting modules: `grid` (small tensors and periodic fields),
//! `spectral` (FFT derivatives, antiderivatives, upsampling), `geometry`
//! (pullbacks, defects, shortness and immersion checks, conformal jets),
//! `fixtures` (reference tori), `config`/`io`/`pipeline` (the file formats
//! and subcommand drivers behind the `confimm` binary).
//!
//! Each major capability has a runnable demonstration under `examples/`.

pub mod config;
pub mod convex;
pub mod error;
pub mod fixed_point;
pub mod fixtures;
pub mod geometry;
pub mod grid;
pub mod invariants;
pub mod io;
pub mod pipeline;
pub mod spectral;
pub mod teich;

pub use error::{Error, Result};
