//! The target 3-sphere `S³ ⊂ R⁴`, round or conformally round.
//!
//! Orientation: `Vol_y(X, Y, Z) = det[y, X, Y, Z]` (columns), so the outward
//! normal of `S³` comes first. With this choice a geodesic sphere of radius
//! `r < π/2` about `e₄` has mean curvature `+2 cot r` and the latitude
//! sweepout has degree `+1`.

use crate::quadrature::{gauss_legendre_unit, VolumeQuadrature};
use crate::{Error, Mat4, Result, Vec4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

/// Default minimum norm accepted by [`MetricModel::project`].
pub const DEFAULT_TUBE_RADIUS: f64 = 0.1;

/// Default bound on the vertexwise distance of two maps whose volume
/// difference is computed by a straight-line homotopy.
pub const DEFAULT_LOCALITY: f64 = 0.5;

/// `X` with `X·x = det[x, a, b, c]` for all `x`.
pub fn cross4(a: &Vec4, b: &Vec4, c: &Vec4) -> Vec4 {
    let minor = |r0: usize, r1: usize, r2: usize| {
        a[r0] * (b[r1] * c[r2] - b[r2] * c[r1]) - a[r1] * (b[r0] * c[r2] - b[r2] * c[r0])
            + a[r2] * (b[r0] * c[r1] - b[r1] * c[r0])
    };
    Vec4::new(minor(1, 2, 3), -minor(0, 2, 3), minor(0, 1, 3), -minor(0, 1, 2))
}

/// `det[a, b, c, d]` with the arguments as columns.
pub fn det4(a: &Vec4, b: &Vec4, c: &Vec4, d: &Vec4) -> f64 {
    cross4(b, c, d).dot(a)
}

/// Log conformal factor `φ` of `g = e^{2φ} g_round`, given through a smooth
/// extension to a neighborhood of `S³` in `R⁴`.
pub trait ConformalFactor: Send + Sync + Debug {
    fn value(&self, y: &Vec4) -> f64;
    /// Ambient gradient of the extension.
    fn gradient(&self, y: &Vec4) -> Vec4;
    /// Ambient Hessian of the extension.
    fn hessian(&self, y: &Vec4) -> Mat4;
}

/// `φ(y) = b + a·y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFactor {
    pub a: [f64; 4],
    pub b: f64,
}

impl ConformalFactor for LinearFactor {
    fn value(&self, y: &Vec4) -> f64 {
        self.b + Vec4::from(self.a).dot(y)
    }
    fn gradient(&self, _y: &Vec4) -> Vec4 {
        Vec4::from(self.a)
    }
    fn hessian(&self, _y: &Vec4) -> Mat4 {
        Mat4::zeros()
    }
}

/// Conformal factor of a Möbius dilation along `e₄`,
/// `φ(y) = −log(cosh t − sinh t · y₄)`; the resulting metric is again round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobiusFactor {
    pub t: f64,
}

impl ConformalFactor for MobiusFactor {
    fn value(&self, y: &Vec4) -> f64 {
        -(self.t.cosh() - self.t.sinh() * y[3]).ln()
    }
    fn gradient(&self, y: &Vec4) -> Vec4 {
        let d = self.t.cosh() - self.t.sinh() * y[3];
        Vec4::new(0.0, 0.0, 0.0, self.t.sinh() / d)
    }
    fn hessian(&self, y: &Vec4) -> Mat4 {
        let d = self.t.cosh() - self.t.sinh() * y[3];
        let mut h = Mat4::zeros();
        h[(3, 3)] = (self.t.sinh() / d).powi(2);
        h
    }
}

/// Serializable metric selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Round,
    ConformalLinear { a: [f64; 4], b: f64 },
    ConformalMobius { t: f64 },
}

impl MetricSpec {
    pub fn build(&self) -> MetricModel {
        match self {
            MetricSpec::Round => MetricModel::round_s3(),
            MetricSpec::ConformalLinear { a, b } => {
                MetricModel::conformal_round(Arc::new(LinearFactor { a: *a, b: *b }))
            }
            MetricSpec::ConformalMobius { t } => MetricModel::conformal_round(Arc::new(MobiusFactor { t: *t })),
        }
    }
}

/// Value, ambient gradient and Hessian of a function at a point.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: f64,
    pub gradient: Vec4,
    pub hessian: Mat4,
}

/// The target `(S³, g)`.
#[derive(Clone, Debug)]
pub struct MetricModel {
    phi: Option<Arc<dyn ConformalFactor>>,
    tube_radius: f64,
    total_volume: f64,
    locality: f64,
    quadrature: VolumeQuadrature,
}

impl MetricModel {
    pub fn round_s3() -> Self {
        MetricModel {
            phi: None,
            tube_radius: DEFAULT_TUBE_RADIUS,
            total_volume: 2.0 * PI * PI,
            locality: DEFAULT_LOCALITY,
            quadrature: VolumeQuadrature::default(),
        }
    }

    /// `g = e^{2φ} g_round`, realized intrinsically.
    pub fn conformal_round(phi: Arc<dyn ConformalFactor>) -> Self {
        let total = total_volume_quadrature(|y| (3.0 * phi.value(y)).exp(), 64);
        MetricModel {
            phi: Some(phi),
            tube_radius: DEFAULT_TUBE_RADIUS,
            total_volume: total,
            locality: DEFAULT_LOCALITY,
            quadrature: VolumeQuadrature::default(),
        }
    }

    pub fn with_tube_radius(mut self, radius: f64) -> Self {
        self.tube_radius = radius;
        self
    }

    pub fn tube_radius(&self) -> f64 {
        self.tube_radius
    }

    pub fn with_locality(mut self, delta0: f64) -> Self {
        self.locality = delta0;
        self
    }

    /// Locality bound `δ₀` for volume increments.
    pub fn locality(&self) -> f64 {
        self.locality
    }

    pub fn with_quadrature(mut self, quadrature: VolumeQuadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn quadrature(&self) -> VolumeQuadrature {
        self.quadrature
    }

    pub fn ambient_dim(&self) -> usize {
        4
    }

    pub fn is_round(&self) -> bool {
        self.phi.is_none()
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    /// Nearest-point projection `Π(v) = v/|v|`.
    pub fn project(&self, v: &Vec4) -> Result<Vec4> {
        let n = v.norm();
        if !(n > self.tube_radius) || !n.is_finite() {
            return Err(Error::OutsideTube {
                norm: n,
                min_norm: self.tube_radius,
            });
        }
        Ok(v / n)
    }

    /// `P_y = I − y yᵀ`.
    pub fn tangent_projector(&self, y: &Vec4) -> Mat4 {
        Mat4::identity() - y * y.transpose()
    }

    pub fn project_tangent(&self, y: &Vec4, v: &Vec4) -> Vec4 {
        v - y * y.dot(v)
    }

    /// Second fundamental form of `S³ ⊂ R⁴`, `A_y(X, Y) = −⟨X, Y⟩ y`.
    pub fn second_fundamental(&self, y: &Vec4, x: &Vec4, z: &Vec4) -> Vec4 {
        -y * x.dot(z)
    }

    /// Difference of the Levi-Civita connections of `g` and `g_round`,
    /// `dφ(X) Y + dφ(Y) X − ⟨X, Y⟩ ∇φ`; zero for the round model.
    pub fn christoffel_correction(&self, y: &Vec4, x: &Vec4, z: &Vec4) -> Vec4 {
        match &self.phi {
            None => Vec4::zeros(),
            Some(phi) => {
                let g = self.project_tangent(y, &phi.gradient(y));
                z * g.dot(x) + x * g.dot(z) - g * x.dot(z)
            }
        }
    }

    /// `φ(y)`; zero for the round model.
    pub fn log_factor(&self, y: &Vec4) -> f64 {
        self.phi.as_ref().map_or(0.0, |p| p.value(y))
    }

    pub fn inner(&self, y: &Vec4, x: &Vec4, z: &Vec4) -> f64 {
        (2.0 * self.log_factor(y)).exp() * x.dot(z)
    }

    /// `Q_y(X, Y)`, defined by `Vol_y(X, Y, Z) = g(Q_y(X, Y), Z)`.
    pub fn cross(&self, y: &Vec4, x: &Vec4, z: &Vec4) -> Vec4 {
        // det[y, X, Y, Z] = −cross4(y, X, Y)·Z
        -cross4(y, x, z) * self.log_factor(y).exp()
    }

    pub fn volume_form(&self, y: &Vec4, x: &Vec4, z: &Vec4, w: &Vec4) -> f64 {
        (3.0 * self.log_factor(y)).exp() * det4(y, x, z, w)
    }

    /// Ricci tensor of `g` on tangent vectors.
    pub fn ricci(&self, y: &Vec4, x: &Vec4, z: &Vec4) -> f64 {
        let round = 2.0 * x.dot(z);
        let Some(phi) = &self.phi else {
            return round;
        };
        let p = self.tangent_projector(y);
        let grad = phi.gradient(y);
        let hess = phi.hessian(y);
        let normal_derivative = grad.dot(y);
        let cov_hess = |a: &Vec4, b: &Vec4| a.dot(&(hess * b)) - normal_derivative * a.dot(b);
        let laplacian = (p * hess * p).trace() - 3.0 * normal_derivative;
        let gt = p * grad;
        round - (cov_hess(x, z) - grad.dot(x) * grad.dot(z)) - (laplacian + gt.norm_squared()) * x.dot(z)
    }

    /// Volume density `ρ` of the closed 3-form `ρ(y) det[y, ·, ·, ·]` on
    /// `R⁴ \ 0`, the pull-back of `Vol_g` under `Π`.
    pub fn volume_density(&self, y: &Vec4) -> (f64, Vec4) {
        let r2 = y.norm_squared();
        let base = 1.0 / (r2 * r2);
        let base_grad = y * (-4.0 * base / r2);
        match &self.phi {
            None => (base, base_grad),
            Some(_) => {
                let j = self.projected_phi(y);
                let e = (3.0 * j.value).exp();
                (e * base, base_grad * e + j.gradient * (3.0 * e * base))
            }
        }
    }

    /// Jet of `φ ∘ Π` at an arbitrary nonzero point.
    pub fn projected_phi(&self, y: &Vec4) -> Jet {
        let Some(phi) = &self.phi else {
            return Jet {
                value: 0.0,
                gradient: Vec4::zeros(),
                hessian: Mat4::zeros(),
            };
        };
        let r = y.norm();
        let yh = y / r;
        let p = Mat4::identity() - yh * yh.transpose();
        let g = phi.gradient(&yh);
        let h = phi.hessian(&yh);
        let gt = p * g;
        let gn = g.dot(&yh);
        let hessian = (p * h * p - p * gn - gt * yh.transpose() - yh * gt.transpose()) / (r * r);
        Jet {
            value: phi.value(&yh),
            gradient: gt / r,
            hessian,
        }
    }

    /// Jet of the Dirichlet weight `e^{2φ∘Π}`.
    pub fn dirichlet_weight(&self, y: &Vec4) -> Jet {
        if self.phi.is_none() {
            return Jet {
                value: 1.0,
                gradient: Vec4::zeros(),
                hessian: Mat4::zeros(),
            };
        }
        let j = self.projected_phi(y);
        let w = (2.0 * j.value).exp();
        Jet {
            value: w,
            gradient: j.gradient * (2.0 * w),
            hessian: (j.gradient * j.gradient.transpose() * 4.0 + j.hessian * 2.0) * w,
        }
    }
}

/// `∫_{S³} f dVol_round` by tensor Gauss quadrature in hyperspherical
/// coordinates, `n` nodes per polar angle and `2n` in azimuth.
pub fn total_volume_quadrature(f: impl Fn(&Vec4) -> f64, n: usize) -> f64 {
    let gl = gauss_legendre_unit(n);
    let m = 2 * n;
    let mut total = 0.0;
    for &(a, wa) in &gl {
        let chi = PI * a;
        for &(b, wb) in &gl {
            let theta = PI * b;
            let jac = chi.sin().powi(2) * theta.sin() * wa * wb * PI * PI * (2.0 * PI / m as f64);
            for k in 0..m {
                let az = 2.0 * PI * k as f64 / m as f64;
                let y = Vec4::new(
                    chi.sin() * theta.sin() * az.cos(),
                    chi.sin() * theta.sin() * az.sin(),
                    chi.sin() * theta.cos(),
                    chi.cos(),
                );
                total += jac * f(&y);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross4_matches_determinant() {
        let a = Vec4::new(0.3, -1.0, 2.0, 0.5);
        let b = Vec4::new(1.1, 0.2, -0.7, 0.9);
        let c = Vec4::new(-0.4, 0.8, 0.6, -1.3);
        let x = Vec4::new(0.25, 0.5, -0.75, 1.5);
        let m = Mat4::from_columns(&[x, a, b, c]);
        assert!((cross4(&a, &b, &c).dot(&x) - m.determinant()).abs() < 1e-13);
    }

    #[test]
    fn basic_round_values() {
        let g = MetricModel::round_s3();
        let e = |i| Vec4::ith(i, 1.0);
        assert!((g.cross(&e(3), &e(0), &e(1)) + e(2)).norm() < 1e-15);
        assert!((g.second_fundamental(&e(3), &e(0), &e(0)) + e(3)).norm() < 1e-15);
        assert_eq!(g.project(&Vec4::new(0.0, 0.0, 0.0, 2.0)).unwrap(), e(3));
        assert!((g.tangent_projector(&e(3)) * e(3)).norm() < 1e-15);
        assert!(matches!(g.project(&Vec4::zeros()), Err(Error::OutsideTube { .. })));
    }

    #[test]
    fn total_volume_of_linear_factor_matches_bessel_series() {
        // ∫ e^{a y₄} = 4π · π I₁(a)/a
        let a = 0.3;
        let i1: f64 = (0..20)
            .map(|k| {
                let fact = |n: i32| (1..=n).map(f64::from).product::<f64>();
                (a / 2.0f64).powi(2 * k + 1) / (fact(k) * fact(k + 1))
            })
            .sum();
        let exact = 4.0 * PI * PI * i1 / a;
        let g = MetricModel::conformal_round(Arc::new(LinearFactor {
            a: [0.0, 0.0, 0.0, 0.1],
            b: 0.0,
        }));
        assert!((g.total_volume() - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn mobius_factor_is_an_isometric_copy() {
        let g = MetricModel::conformal_round(Arc::new(MobiusFactor { t: 0.7 }));
        assert!((g.total_volume() - 2.0 * PI * PI).abs() < 1e-8);
        let y = Vec4::new(0.2, -0.4, 0.5, 0.3).normalize();
        let x = g.project_tangent(&y, &Vec4::new(1.0, 0.3, -0.2, 0.8));
        let z = g.project_tangent(&y, &Vec4::new(-0.5, 0.9, 0.1, 0.4));
        let ric = g.ricci(&y, &x, &z);
        assert!((ric - 2.0 * g.inner(&y, &x, &z)).abs() < 1e-12);
    }

    #[test]
    fn projected_phi_derivatives_match_differences() {
        let g = MetricModel::conformal_round(Arc::new(MobiusFactor { t: 0.4 }));
        let y = Vec4::new(0.3, -0.2, 0.6, 0.9);
        let j = g.projected_phi(&y);
        let h = 1e-5;
        for k in 0..4 {
            let d = Vec4::ith(k, h);
            let jp = g.projected_phi(&(y + d));
            let jm = g.projected_phi(&(y - d));
            assert!(((jp.value - jm.value) / (2.0 * h) - j.gradient[k]).abs() < 1e-8);
            let col = (jp.gradient - jm.gradient) / (2.0 * h);
            for l in 0..4 {
                assert!((col[l] - j.hessian[(l, k)]).abs() < 1e-7, "{k} {l}");
            }
        }
    }
}
