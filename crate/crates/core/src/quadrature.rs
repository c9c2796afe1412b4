//! Quadrature rules on the unit interval and the reference triangle.

use serde::{Deserialize, Serialize};

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`; weights sum to 1.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "need at least one node");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature point on the reference triangle `{λ₁, λ₂ ≥ 0, λ₁ + λ₂ ≤ 1}`.
#[derive(Clone, Copy, Debug)]
pub struct TrianglePoint {
    /// Barycentric weights of the three vertices.
    pub bary: [f64; 3],
    /// Weight; all weights of a rule sum to ½ (the reference area).
    pub weight: f64,
}

/// Collapsed (Duffy) tensor Gauss rule on the reference triangle.
///
/// With `order` points per direction the rule integrates polynomials of
/// total degree `2·order − 2` exactly.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    order: usize,
    points: Vec<TrianglePoint>,
}

impl TriangleRule {
    pub fn new(order: usize) -> Self {
        let gl = gauss_legendre_unit(order);
        let mut points = Vec::with_capacity(order * order);
        for &(xi, wx) in &gl {
            for &(eta, wy) in &gl {
                let l1 = xi;
                let l2 = eta * (1.0 - xi);
                points.push(TrianglePoint {
                    bary: [1.0 - l1 - l2, l1, l2],
                    weight: wx * wy * (1.0 - xi),
                });
            }
        }
        TriangleRule { order, points }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[TrianglePoint] {
        &self.points
    }
}

/// Quadrature settings for volume computations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeQuadrature {
    /// Gauss points per direction of the collapsed triangle rule.
    pub face_order: usize,
    /// Gauss points along the homotopy parameter.
    pub homotopy_points: usize,
}

impl Default for VolumeQuadrature {
    fn default() -> Self {
        VolumeQuadrature {
            face_order: 4,
            homotopy_points: 4,
        }
    }
}
