//! Reference maps: analytic solutions, bubbles, and seeded random maps.

use crate::energy::MapField;
use crate::mesh::SphereMesh;
use crate::metric::MetricModel;
use crate::{Result, Vec3, Vec4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Samples `f` at the vertices and projects onto the target.
pub fn from_fn(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, f: impl Fn(&Vec3) -> Vec4) -> Result<MapField> {
    let v: Vec<Vec4> = mesh.vertices().iter().map(f).collect();
    MapField::from_ambient(mesh.clone(), metric.clone(), &v)
}

pub fn constant(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, p: Vec4) -> Result<MapField> {
    MapField::constant(mesh.clone(), metric.clone(), p)
}

/// Totally geodesic sphere `x ↦ (x, 0)`.
pub fn equator(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>) -> Result<MapField> {
    from_fn(mesh, metric, |x| Vec4::new(x[0], x[1], x[2], 0.0))
}

/// `x ↦ (√(1 − c²) x, c)`; a constant map at `c = ±1`.
pub fn latitude(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, c: f64) -> Result<MapField> {
    let s = (1.0 - c * c).max(0.0).sqrt();
    let values = mesh.vertices().iter().map(|x| Vec4::new(s * x[0], s * x[1], s * x[2], c)).collect();
    // Built exactly; normalization would perturb the poles' bitwise constancy.
    let values: Vec<Vec4> = values_normalized(values);
    MapField::new(mesh.clone(), metric.clone(), values)
}

fn values_normalized(v: Vec<Vec4>) -> Vec<Vec4> {
    v.into_iter()
        .map(|y| {
            let n = y.norm();
            if (n - 1.0).abs() < 1e-15 {
                y
            } else {
                y / n
            }
        })
        .collect()
}

/// Geodesic sphere of radius `r` about `e₄`, `x ↦ (sin r · x, cos r)`.
pub fn geodesic_sphere(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, r: f64) -> Result<MapField> {
    latitude(mesh, metric, r.cos())
}

/// Conformal dilation of `S²` by `factor` fixing `center` and `−center`,
/// expanding a neighborhood of `center` (stereographic coordinates from
/// `−center` are multiplied by `factor`).
pub fn mobius_dilation(x: &Vec3, center: &Vec3, factor: f64) -> Vec3 {
    let c = center.normalize();
    // Stereographic projection from −c onto the plane orthogonal to c.
    let h = x.dot(&c);
    let tangential = x - c * h;
    let denom = 1.0 + h;
    if denom < 1e-300 {
        return -c;
    }
    let z = tangential / denom * factor;
    let r2 = z.norm_squared();
    // Inverse projection.
    (z * 2.0 + c * (1.0 - r2)) / (1.0 + r2)
}

/// Equator precomposed with a Möbius dilation whose Dirichlet energy
/// concentrates at `pole`: all but a cap of angular radius about
/// `2/factor` around `pole` is mapped into the hemisphere about `−pole`.
pub fn mobius_bubble(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, pole: &Vec3, factor: f64) -> Result<MapField> {
    let c = -pole.normalize();
    from_fn(mesh, metric, |x| {
        let y = mobius_dilation(x, &c, 1.0 / factor);
        Vec4::new(y[0], y[1], y[2], 0.0)
    })
}

/// The same bubble on a mesh whose vertices are pulled toward `pole` by a
/// dilation of factor `mesh_factor`, so the cap is resolved. Large mesh
/// factors invert the faces opposite the pole.
pub fn adapted_bubble(
    mesh: &SphereMesh,
    metric: &Arc<MetricModel>,
    pole: &Vec3,
    factor: f64,
    mesh_factor: f64,
) -> Result<(Arc<SphereMesh>, MapField)> {
    let c = -pole.normalize();
    let moved: Vec<Vec3> = mesh.vertices().iter().map(|x| mobius_dilation(x, &c, mesh_factor)).collect();
    let adapted = Arc::new(mesh.with_vertices(moved)?);
    let values: Vec<Vec4> = mesh
        .vertices()
        .iter()
        .map(|x| {
            let y = mobius_dilation(x, &c, mesh_factor / factor);
            Vec4::new(y[0], y[1], y[2], 0.0)
        })
        .collect();
    let u = MapField::from_ambient(adapted.clone(), metric.clone(), &values)?;
    Ok((adapted, u))
}

/// `x ↦ Π(2x₁, x₂, x₃, 0)`, a non-conformal map of degree one onto the equator.
pub fn anisotropic(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>) -> Result<MapField> {
    from_fn(mesh, metric, |x| Vec4::new(2.0 * x[0], x[1], x[2], 0.0))
}

/// Smooth random map `Π(b + A x + ½ B(x, x))` with seeded coefficients.
pub fn random_smooth(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, seed: u64, amplitude: f64) -> Result<MapField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || rng.gen::<f64>() * 2.0 - 1.0;
    let b = Vec4::new(g(), g(), g(), g());
    let a: Vec<Vec4> = (0..3).map(|_| Vec4::new(g(), g(), g(), g()) * amplitude).collect();
    let q: Vec<Vec4> = (0..6).map(|_| Vec4::new(g(), g(), g(), g()) * (0.5 * amplitude)).collect();
    let b = if b.norm() < 0.3 { b + Vec4::new(0.0, 0.0, 0.0, 0.5) } else { b };
    from_fn(mesh, metric, |x| {
        let quad = q[0] * (x[0] * x[0]) + q[1] * (x[1] * x[1]) + q[2] * (x[2] * x[2])
            + q[3] * (x[0] * x[1]) + q[4] * (x[1] * x[2]) + q[5] * (x[0] * x[2]);
        b * (1.0 + amplitude) + a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + quad
    })
}

/// Smooth random tangent field along `u`.
pub fn random_tangent(u: &MapField, seed: u64) -> Vec<Vec4> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || rng.gen::<f64>() * 2.0 - 1.0;
    let c: Vec<Vec4> = (0..4).map(|_| Vec4::new(g(), g(), g(), g())).collect();
    let v: Vec<Vec4> = u
        .mesh()
        .vertices()
        .iter()
        .map(|x| c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[2])
        .collect();
    u.project_tangent(&v)
}

/// Independent per-vertex random tangent vectors of length at most `amplitude`.
pub fn random_rough_tangent(u: &MapField, seed: u64, amplitude: f64) -> Vec<Vec4> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<Vec4> = (0..u.len())
        .map(|_| Vec4::new(rng.gen(), rng.gen(), rng.gen(), rng.gen()).map(|t: f64| (2.0 * t - 1.0) * amplitude * 0.5))
        .collect();
    u.project_tangent(&v)
}

/// `u ∘ D` with `D` the Möbius dilation; evaluated by moving the vertices
/// and sampling the analytic map `f`.
pub fn reparametrized(
    mesh: &Arc<SphereMesh>,
    metric: &Arc<MetricModel>,
    f: impl Fn(&Vec3) -> Vec4,
    center: &Vec3,
    factor: f64,
) -> Result<MapField> {
    from_fn(mesh, metric, |x| f(&mobius_dilation(x, center, factor)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_is_identity_at_factor_one_and_fixes_poles() {
        let c = Vec3::new(0.0, 0.0, 1.0);
        let x = Vec3::new(0.3, -0.4, 0.5).normalize();
        assert!((mobius_dilation(&x, &c, 1.0) - x).norm() < 1e-14);
        assert!((mobius_dilation(&c, &c, 7.0) - c).norm() < 1e-14);
        let y = mobius_dilation(&x, &c, 3.0);
        assert!((y.norm() - 1.0).abs() < 1e-14);
        // Composition of dilations multiplies factors.
        let z = mobius_dilation(&mobius_dilation(&x, &c, 2.0), &c, 1.5);
        assert!((z - y).norm() < 1e-13);
    }
}
