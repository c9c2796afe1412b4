//! Variational computation of branched constant-mean-curvature 2-spheres in
//! a Riemannian 3-sphere.
//!
//! The unknown is a map `u: S² → S³ ⊂ R⁴`, discretized by piecewise-linear
//! elements on an icosphere. The functional is
//!
//! ```text
//! E_{H,ε}(u) = ½∫ ε²|Δu|² + |∇u|²  +  H·V(u)
//! ```
//!
//! where `V` is the enclosed volume, tracked incrementally along deformation
//! histories because it is only defined modulo the volume of the target.
//!
//! Modules, bottom-up:
//!
//! * [`mesh`] – the domain sphere and its discrete operators,
//! * [`metric`] – the target 3-sphere (round or conformally round),
//! * [`energy`] – energies, volume increments, gradient, Hessian, residuals,
//! * [`flow`] – preconditioned projected gradient descent,
//! * [`minmax`] – sweepouts and the string-method mountain pass,
//! * [`diagnostics`] – concentration, blow-up, Morse index, energy bounds,
//! * [`config`] and [`io`] – run configuration and file formats.

pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod maps;
pub mod mesh;
pub mod metric;
pub mod minmax;
pub mod quadrature;

pub use error::{Error, Result};

/// Point or vector in the ambient space of the target.
pub type Vec4 = nalgebra::Vector4<f64>;
/// Point or vector in the ambient space of the domain.
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
