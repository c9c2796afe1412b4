//! Energies, enclosed volume, first and second variations, and residuals.
//!
//! A map is stored by its vertex values in `R⁴`. All ambient functionals are
//! functions of these values; restricted to the target they give the
//! discrete `E_{H,ε}`. Derivatives along `Π(u + tψ)` for tangent `ψ` are
//! exact derivatives of the discrete energy.
//!
//! The enclosed volume uses the closed 3-form `ω = ρ(y) det[y, dy, dy, dy]`
//! on `R⁴ \ 0` (the pull-back of `Vol_g` under `Π`), integrated over the P1
//! interpolant of each face. Because `ω` is closed, the volume swept between
//! two maps depends only on the homotopy class of the path, so increments
//! around a contractible loop cancel up to quadrature error.

use crate::linalg::CsrMatrix;
use crate::mesh::SphereMesh;
use crate::metric::{cross4, MetricModel};
use crate::quadrature::{gauss_legendre_unit, TriangleRule};
use crate::{Error, Mat4, Result, Vec4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// Tolerance of the on-target invariant `||u_i| − 1|`.
pub const ON_TARGET_TOL: f64 = 1e-10;

/// Default threshold on the L² gradient norm below which a map counts as
/// critical for second-variation purposes.
pub const DEFAULT_CRITICAL_TOL: f64 = 1e-3;

/// Piecewise-linear map `S² → S³`, stored by vertex values.
#[derive(Clone, Debug)]
pub struct MapField {
    mesh: Arc<SphereMesh>,
    metric: Arc<MetricModel>,
    values: Vec<Vec4>,
}

impl MapField {
    /// Checks that every value lies on the target.
    pub fn new(mesh: Arc<SphereMesh>, metric: Arc<MetricModel>, values: Vec<Vec4>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::MeshMismatch);
        }
        for (i, v) in values.iter().enumerate() {
            let defect = v.norm() - 1.0;
            if !(defect.abs() < ON_TARGET_TOL) {
                return Err(Error::OffTarget { vertex: i, defect });
            }
        }
        Ok(MapField { mesh, metric, values })
    }

    /// Projects arbitrary ambient values onto the target.
    pub fn from_ambient(mesh: Arc<SphereMesh>, metric: Arc<MetricModel>, values: &[Vec4]) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::MeshMismatch);
        }
        let projected = values.iter().map(|v| metric.project(v)).collect::<Result<Vec<_>>>()?;
        Ok(MapField {
            mesh,
            metric,
            values: projected,
        })
    }

    pub fn constant(mesh: Arc<SphereMesh>, metric: Arc<MetricModel>, point: Vec4) -> Result<Self> {
        let p = metric.project(&point)?;
        let n = mesh.num_vertices();
        Ok(MapField {
            mesh,
            metric,
            values: vec![p; n],
        })
    }

    pub fn mesh(&self) -> &Arc<SphereMesh> {
        &self.mesh
    }

    pub fn metric(&self) -> &Arc<MetricModel> {
        &self.metric
    }

    pub fn values(&self) -> &[Vec4] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vec4> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same map on a different mesh object with identical connectivity.
    pub fn with_values(&self, values: Vec<Vec4>) -> Result<Self> {
        MapField::new(self.mesh.clone(), self.metric.clone(), values)
    }

    /// `Π(u + t·dir)`.
    pub fn displaced(&self, dir: &[Vec4], t: f64) -> Result<Self> {
        if dir.len() != self.values.len() {
            return Err(Error::MeshMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(dir)
            .map(|(u, d)| self.metric.project(&(u + d * t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MapField {
            mesh: self.mesh.clone(),
            metric: self.metric.clone(),
            values,
        })
    }

    pub fn same_domain(&self, other: &MapField) -> bool {
        (Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.same_as(&other.mesh)) && self.values.len() == other.values.len()
    }

    /// `max_i |u_i − v_i|`.
    pub fn max_distance(&self, other: &MapField) -> Result<f64> {
        if !self.same_domain(other) {
            return Err(Error::MeshMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn is_constant(&self) -> bool {
        let first = self.values[0];
        self.values.iter().all(|v| (v - first).norm() <= 1e-14)
    }

    /// Pointwise tangent projection `P_{u_i} v_i`.
    pub fn project_tangent(&self, v: &[Vec4]) -> Vec<Vec4> {
        self.values.iter().zip(v).map(|(u, x)| x - u * u.dot(x)).collect()
    }

    /// Largest `|⟨ψ_i, u_i⟩| / |ψ_i|`.
    pub fn tangency_defect(&self, psi: &[Vec4]) -> f64 {
        self.values
            .iter()
            .zip(psi)
            .map(|(u, p)| {
                let n = p.norm();
                if n == 0.0 {
                    0.0
                } else {
                    u.dot(p).abs() / n
                }
            })
            .fold(0.0, f64::max)
    }

    /// Orthonormal basis of `T_{u_i}S³` at every vertex.
    pub fn tangent_bases(&self) -> Vec<[Vec4; 3]> {
        self.values.iter().map(tangent_basis).collect()
    }

    /// Area-weighted `L²` inner product of two vector fields.
    pub fn l2_inner(&self, a: &[Vec4], b: &[Vec4]) -> f64 {
        self.mesh
            .vertex_areas()
            .iter()
            .zip(a.iter().zip(b))
            .map(|(m, (x, y))| m * x.dot(y))
            .sum()
    }

    /// `u_{x¹}, u_{x²}` on face `f` in its orthonormal frame.
    pub fn face_derivatives(&self, f: usize) -> [Vec4; 2] {
        let face = self.mesh.faces()[f];
        let g = &self.mesh.geometry()[f].grad;
        let mut d = [Vec4::zeros(), Vec4::zeros()];
        for k in 0..3 {
            d[0] += self.values[face[k]] * g[k][0];
            d[1] += self.values[face[k]] * g[k][1];
        }
        d
    }
}

/// Orthonormal basis of the orthogonal complement of the unit vector `y`.
pub fn tangent_basis(y: &Vec4) -> [Vec4; 3] {
    // Skip the coordinate axis most aligned with y.
    let skip = (0..4).max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs())).unwrap_or(0);
    let mut out = [Vec4::zeros(); 3];
    let mut k = 0;
    for axis in (0..4).filter(|&a| a != skip) {
        let mut v = Vec4::ith(axis, 1.0) - y * y[axis];
        for prev in out.iter().take(k) {
            v -= prev * prev.dot(&v);
        }
        out[k] = v.normalize();
        k += 1;
    }
    out
}

/// Energy values of a map with a tracked volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub biharmonic: f64,
    pub d_eps: f64,
    pub volume: f64,
    pub total: f64,
    pub h: f64,
    pub eps: f64,
}

pub(crate) fn apply_scalar(a: &CsrMatrix, x: &[Vec4]) -> Vec<Vec4> {
    (0..a.nrows())
        .map(|i| {
            let mut acc = Vec4::zeros();
            for (j, v) in a.row(i) {
                acc += x[j] * v;
            }
            acc
        })
        .collect()
}

/// `S x` evaluated as `Σ_j S_ij (x_j − x_i)`, exact on constants because
/// the rows of a stiffness matrix sum to zero.
pub(crate) fn apply_stiffness(s: &CsrMatrix, x: &[Vec4]) -> Vec<Vec4> {
    (0..s.nrows())
        .map(|i| {
            let mut acc = Vec4::zeros();
            for (j, v) in s.row(i) {
                if j != i {
                    acc += (x[j] - x[i]) * v;
                }
            }
            acc
        })
        .collect()
}

fn dot_fields(a: &[Vec4], b: &[Vec4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Mean of a face's corner values, not projected.
pub fn face_barycenter(u: &MapField, f: usize) -> Vec4 {
    let face = u.mesh.faces()[f];
    (u.values[face[0]] + u.values[face[1]] + u.values[face[2]]) / 3.0
}

/// Local stiffness `A ∇λ_a·∇λ_b` of a face.
fn local_stiffness(mesh: &SphereMesh, f: usize) -> [[f64; 3]; 3] {
    let geo = &mesh.geometry()[f];
    let mut s = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            s[a][b] = geo.area * (geo.grad[a][0] * geo.grad[b][0] + geo.grad[a][1] * geo.grad[b][1]);
        }
    }
    s
}

/// `D(u) = ½∫|∇u|²`, in the target metric.
pub fn dirichlet(u: &MapField) -> f64 {
    if u.metric.is_round() {
        let s = u.mesh.stiffness();
        let mut total = 0.0;
        for (i, j, v) in s.triplets() {
            if i < j {
                total -= v * (u.values[i] - u.values[j]).norm_squared();
            }
        }
        return 0.5 * total;
    }
    let per_face: Vec<f64> = (0..u.mesh.num_faces())
        .into_par_iter()
        .map(|f| {
            let w = u.metric.dirichlet_weight(&face_barycenter(u, f)).value;
            let [a, b] = u.face_derivatives(f);
            0.5 * w * u.mesh.geometry()[f].area * (a.norm_squared() + b.norm_squared())
        })
        .collect();
    per_face.iter().sum()
}

/// Discrete `Δu = −M⁻¹ S u`, componentwise.
pub fn laplacian(u: &MapField) -> Vec<Vec4> {
    let su = apply_stiffness(u.mesh.stiffness(), &u.values);
    su.iter().zip(u.mesh.vertex_areas()).map(|(v, m)| -v / *m).collect()
}

/// `½ ε² ∫|Δu|²`.
pub fn biharmonic_part(u: &MapField, eps: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    let lap = laplacian(u);
    let s: f64 = lap
        .iter()
        .zip(u.mesh.vertex_areas())
        .map(|(l, m)| m * l.norm_squared())
        .sum();
    0.5 * eps * eps * s
}

/// `D_ε(u) = ½∫ ε²|Δu|² + |∇u|²`.
pub fn perturbed_energy(u: &MapField, eps: f64) -> f64 {
    dirichlet(u) + biharmonic_part(u, eps)
}

pub fn tracked_energy(u: &MapField, tracked_volume: f64, h: f64, eps: f64) -> EnergyBreakdown {
    let d = dirichlet(u);
    let b = biharmonic_part(u, eps);
    let d_eps = d + b;
    EnergyBreakdown {
        dirichlet: d,
        biharmonic: b,
        d_eps,
        volume: tracked_volume,
        total: d_eps + h * tracked_volume,
        h,
        eps,
    }
}

/// Signed volume swept by `s ↦ Π(s u₁ + (1 − s) u₀)`.
pub fn volume_increment(u0: &MapField, u1: &MapField) -> Result<f64> {
    if !u0.same_domain(u1) {
        return Err(Error::MeshMismatch);
    }
    let metric = u0.metric.clone();
    let bound = metric.locality();
    let distance = u0.max_distance(u1)?;
    if !(distance < bound) {
        return Err(Error::Locality { distance, bound });
    }
    if distance == 0.0 {
        return Ok(0.0);
    }
    let quad = metric.quadrature();
    let s_rule = gauss_legendre_unit(quad.homotopy_points);
    let tri = TriangleRule::new(quad.face_order);
    let mesh = &u0.mesh;
    let mut total = 0.0;
    for &(s, ws) in &s_rule {
        let mut w = Vec::with_capacity(u0.len());
        let mut dw = Vec::with_capacity(u0.len());
        for (a, b) in u0.values.iter().zip(&u1.values) {
            let z = b * s + a * (1.0 - s);
            let r = z.norm();
            let zh = z / r;
            let d = b - a;
            w.push(zh);
            dw.push((d - zh * zh.dot(&d)) / r);
        }
        let per_face: Vec<f64> = mesh
            .faces()
            .par_iter()
            .map(|face| {
                let p = [w[face[0]], w[face[1]], w[face[2]]];
                let dp = [dw[face[0]], dw[face[1]], dw[face[2]]];
                let e1 = p[1] - p[0];
                let e2 = p[2] - p[0];
                let mut acc = 0.0;
                for q in tri.points() {
                    let l = q.bary;
                    let y = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
                    let dy = dp[0] * l[0] + dp[1] * l[1] + dp[2] * l[2];
                    let (rho, _) = metric.volume_density(&y);
                    // det[y, ∂_s y, e1, e2]
                    acc -= q.weight * rho * cross4(&y, &e1, &e2).dot(&dy);
                }
                acc
            })
            .collect();
        total += ws * per_face.iter().sum::<f64>();
    }
    Ok(total)
}

/// Per-vertex vectors `a_i` with `dV(u)[ψ] = Σ_i a_i·ψ_i`.
pub fn volume_gradient(u: &MapField) -> Vec<Vec4> {
    let tri = TriangleRule::new(u.metric.quadrature().face_order);
    let metric = &u.metric;
    let per_face: Vec<[Vec4; 3]> = u
        .mesh
        .faces()
        .par_iter()
        .map(|face| {
            let p = [u.values[face[0]], u.values[face[1]], u.values[face[2]]];
            let e1 = p[1] - p[0];
            let e2 = p[2] - p[0];
            let mut out = [Vec4::zeros(); 3];
            for q in tri.points() {
                let l = q.bary;
                let y = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
                let (rho, _) = metric.volume_density(&y);
                let c = cross4(&y, &e1, &e2) * (-q.weight * rho);
                for k in 0..3 {
                    out[k] += c * l[k];
                }
            }
            out
        })
        .collect();
    let mut a = vec![Vec4::zeros(); u.len()];
    for (face, out) in u.mesh.faces().iter().zip(&per_face) {
        for k in 0..3 {
            a[face[k]] += out[k];
        }
    }
    a
}

/// Ambient gradient of `D` (in the target metric).
pub fn dirichlet_gradient(u: &MapField) -> Vec<Vec4> {
    if u.metric.is_round() {
        return apply_stiffness(u.mesh.stiffness(), &u.values);
    }
    let per_face: Vec<[Vec4; 3]> = (0..u.mesh.num_faces())
        .into_par_iter()
        .map(|f| {
            let face = u.mesh.faces()[f];
            let s = local_stiffness(&u.mesh, f);
            let jet = u.metric.dirichlet_weight(&face_barycenter(u, f));
            let mut su = [Vec4::zeros(); 3];
            let mut q = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    su[a] += u.values[face[b]] * s[a][b];
                }
                q += u.values[face[a]].dot(&su[a]);
            }
            let mut out = [Vec4::zeros(); 3];
            for a in 0..3 {
                out[a] = su[a] * jet.value + jet.gradient * (q / 6.0);
            }
            out
        })
        .collect();
    let mut g = vec![Vec4::zeros(); u.len()];
    for (face, out) in u.mesh.faces().iter().zip(&per_face) {
        for k in 0..3 {
            g[face[k]] += out[k];
        }
    }
    g
}

/// Ambient gradient of `½ε²∫|Δu|²`, `ε² S M⁻¹ S u`.
pub fn biharmonic_gradient(u: &MapField, eps: f64) -> Vec<Vec4> {
    if eps == 0.0 {
        return vec![Vec4::zeros(); u.len()];
    }
    let s = u.mesh.stiffness();
    let mut su = apply_stiffness(s, &u.values);
    for (v, m) in su.iter_mut().zip(u.mesh.vertex_areas()) {
        *v /= *m;
    }
    let mut out = apply_scalar(s, &su);
    out.iter_mut().for_each(|v| *v *= eps * eps);
    out
}

/// First variation of `E_{H,ε}`.
#[derive(Clone, Debug)]
pub struct Gradient {
    /// Ambient cofield; `Σ_i ambient_i·ψ_i` is the derivative along ψ.
    pub ambient: Vec<Vec4>,
    /// `P_{u_i}(ambient_i)`.
    pub tangent: Vec<Vec4>,
    pub dirichlet: Vec<Vec4>,
    pub biharmonic: Vec<Vec4>,
    pub volume: Vec<Vec4>,
}

impl Gradient {
    /// Dual `L²` norm `(Σ |g_i|² / M_i)^{1/2}` of the tangent cofield.
    pub fn l2_norm(&self, mesh: &SphereMesh) -> f64 {
        self.tangent
            .iter()
            .zip(mesh.vertex_areas())
            .map(|(g, m)| g.norm_squared() / m)
            .sum::<f64>()
            .sqrt()
    }

    /// `G·ψ`.
    pub fn apply(&self, psi: &[Vec4]) -> f64 {
        dot_fields(&self.ambient, psi)
    }
}

pub fn gradient(u: &MapField, h: f64, eps: f64) -> Gradient {
    let dirichlet = dirichlet_gradient(u);
    let biharmonic = biharmonic_gradient(u, eps);
    let volume = if h != 0.0 {
        volume_gradient(u)
    } else {
        vec![Vec4::zeros(); u.len()]
    };
    let ambient: Vec<Vec4> = (0..u.len())
        .map(|i| dirichlet[i] + biharmonic[i] + volume[i] * h)
        .collect();
    let tangent = u.project_tangent(&ambient);
    Gradient {
        ambient,
        tangent,
        dirichlet,
        biharmonic,
        volume,
    }
}

type Block12 = [[f64; 12]; 12];

/// Symmetrized second derivative of the face volume, as a 12×12 block over
/// the three vertex values.
fn volume_face_block(metric: &MetricModel, tri: &TriangleRule, p: [Vec4; 3]) -> Block12 {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let mut block = [[0.0; 12]; 12];
    // Column c of the unsymmetrized block is the cofield of B(·, ξ) + B(ξ, ·)
    // with ξ the c-th unit vector; B(ψ, ξ) = Dα[ξ](ψ).
    for q in tri.points() {
        let l = q.bary;
        let w = q.weight;
        let y = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
        let (rho, drho) = metric.volume_density(&y);
        let c0 = cross4(&y, &e1, &e2);
        for c in 0..12 {
            let (vj, comp) = (c / 4, c % 4);
            let mut xi = [Vec4::zeros(); 3];
            xi[vj][comp] = 1.0;
            let xl = xi[0] * l[0] + xi[1] * l[1] + xi[2] * l[2];
            let dx1 = xi[1] - xi[0];
            let dx2 = xi[2] - xi[0];
            // B(ψ, ξ) as a cofield on ψ(λ).
            let b = -(c0 * drho.dot(&xl)
                + (cross4(&xl, &e1, &e2) + cross4(&y, &dx1, &e2) + cross4(&y, &e1, &dx2)) * rho);
            // B(ξ, ψ): cofield on ψ(λ), dψ₁ and dψ₂.
            let on_psi = drho * (-c0.dot(&xl)) + cross4(&xl, &e1, &e2) * rho;
            let on_d1 = cross4(&y, &xl, &e2) * rho;
            let on_d2 = -cross4(&y, &xl, &e1) * rho;
            let mut col = [Vec4::zeros(); 3];
            for k in 0..3 {
                col[k] += (b + on_psi) * l[k];
            }
            col[1] += on_d1;
            col[0] -= on_d1;
            col[2] += on_d2;
            col[0] -= on_d2;
            for k in 0..3 {
                for d in 0..4 {
                    block[4 * k + d][c] += 0.5 * w * col[k][d];
                }
            }
        }
    }
    // Exact symmetry regardless of quadrature.
    for i in 0..12 {
        for j in 0..i {
            let s = 0.5 * (block[i][j] + block[j][i]);
            block[i][j] = s;
            block[j][i] = s;
        }
    }
    block
}

/// Hessian of the conformally weighted face Dirichlet energy.
fn conformal_dirichlet_block(u: &MapField, f: usize) -> Block12 {
    let face = u.mesh.faces()[f];
    let s = local_stiffness(&u.mesh, f);
    let jet = u.metric.dirichlet_weight(&face_barycenter(u, f));
    let mut gq = [Vec4::zeros(); 3];
    let mut q = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            gq[a] += u.values[face[b]] * (2.0 * s[a][b]);
        }
        q += 0.5 * u.values[face[a]].dot(&gq[a]);
    }
    let gw = jet.gradient / 3.0;
    let hw = jet.hessian / 9.0;
    let mut block = [[0.0; 12]; 12];
    for a in 0..3 {
        for b in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut v = q * hw[(i, j)] + gw[i] * gq[b][j] + gq[a][i] * gw[j];
                    if i == j {
                        v += 2.0 * jet.value * s[a][b];
                    }
                    block[4 * a + i][4 * b + j] = 0.5 * v;
                }
            }
        }
    }
    block
}

fn block_apply(block: &Block12, face: [usize; 3], x: &[Vec4], out: &mut [Vec4]) {
    let mut xv = [0.0; 12];
    for k in 0..3 {
        for d in 0..4 {
            xv[4 * k + d] = x[face[k]][d];
        }
    }
    for k in 0..3 {
        for d in 0..4 {
            let row = &block[4 * k + d];
            out[face[k]][d] += row.iter().zip(&xv).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Second variation of `E_{H,ε}` at a map, as a matrix-free operator on
/// tangent fields.
///
/// The bilinear form is `d²/dt² E(Π(u + tψ))` polarized; for tangent `ψ` it
/// equals `ψᵀKψ − Σ_i (g_i·u_i)|ψ_i|²` with `K` the ambient Hessian and `g`
/// the ambient gradient.
pub struct Hessian {
    u: MapField,
    h: f64,
    eps: f64,
    gradient: Gradient,
    normal_weight: Vec<f64>,
    volume_blocks: Vec<Block12>,
    dirichlet_blocks: Vec<Block12>,
    smm: Option<CsrMatrix>,
    gradient_norm: f64,
    critical: bool,
}

impl Hessian {
    pub fn new(u: &MapField, h: f64, eps: f64) -> Self {
        Self::with_tolerance(u, h, eps, DEFAULT_CRITICAL_TOL)
    }

    pub fn with_tolerance(u: &MapField, h: f64, eps: f64, critical_tol: f64) -> Self {
        let gradient = gradient(u, h, eps);
        let normal_weight: Vec<f64> = gradient.ambient.iter().zip(&u.values).map(|(g, y)| g.dot(y)).collect();
        let tri = TriangleRule::new(u.metric.quadrature().face_order);
        let volume_blocks = if h != 0.0 {
            u.mesh
                .faces()
                .par_iter()
                .map(|face| volume_face_block(&u.metric, &tri, [u.values[face[0]], u.values[face[1]], u.values[face[2]]]))
                .collect()
        } else {
            Vec::new()
        };
        let dirichlet_blocks = if u.metric.is_round() {
            Vec::new()
        } else {
            (0..u.mesh.num_faces())
                .into_par_iter()
                .map(|f| conformal_dirichlet_block(u, f))
                .collect()
        };
        let smm = (eps != 0.0).then(|| {
            let inv: Vec<f64> = u.mesh.vertex_areas().iter().map(|m| 1.0 / m).collect();
            u.mesh.stiffness().mul_diag_mul(&inv, u.mesh.stiffness())
        });
        let gradient_norm = gradient.l2_norm(&u.mesh);
        if gradient_norm > critical_tol {
            log::warn!("second variation evaluated away from a critical point (gradient norm {gradient_norm:.3e})");
        }
        Hessian {
            u: u.clone(),
            h,
            eps,
            gradient,
            normal_weight,
            volume_blocks,
            dirichlet_blocks,
            smm,
            gradient_norm,
            critical: gradient_norm <= critical_tol,
        }
    }

    pub fn map(&self) -> &MapField {
        &self.u
    }

    pub fn gradient(&self) -> &Gradient {
        &self.gradient
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient_norm
    }

    /// `false` flags evaluation away from a critical point.
    pub fn is_critical(&self) -> bool {
        self.critical
    }

    /// Ambient Hessian `Kψ`.
    pub fn ambient_apply(&self, psi: &[Vec4]) -> Vec<Vec4> {
        let mesh = &self.u.mesh;
        let mut out = if self.dirichlet_blocks.is_empty() {
            apply_scalar(mesh.stiffness(), psi)
        } else {
            let mut out = vec![Vec4::zeros(); psi.len()];
            for (face, block) in mesh.faces().iter().zip(&self.dirichlet_blocks) {
                block_apply(block, *face, psi, &mut out);
            }
            out
        };
        if let Some(smm) = &self.smm {
            let b = apply_scalar(smm, psi);
            for (o, v) in out.iter_mut().zip(&b) {
                *o += v * (self.eps * self.eps);
            }
        }
        if !self.volume_blocks.is_empty() {
            let mut v = vec![Vec4::zeros(); psi.len()];
            for (face, block) in mesh.faces().iter().zip(&self.volume_blocks) {
                block_apply(block, *face, psi, &mut v);
            }
            for (o, x) in out.iter_mut().zip(&v) {
                *o += x * self.h;
            }
        }
        out
    }

    /// Tangent cofield of the second variation applied to `ψ`.
    pub fn apply(&self, psi: &[Vec4]) -> Vec<Vec4> {
        let psi = self.u.project_tangent(psi);
        let k = self.ambient_apply(&psi);
        let corrected: Vec<Vec4> = k
            .iter()
            .zip(&psi)
            .zip(&self.normal_weight)
            .map(|((kv, p), w)| kv - p * *w)
            .collect();
        self.u.project_tangent(&corrected)
    }

    /// `δ²E(u)(ψ, ξ)`.
    pub fn form(&self, psi: &[Vec4], xi: &[Vec4]) -> f64 {
        dot_fields(&self.apply(psi), &self.u.project_tangent(xi))
    }

    /// The form in the per-vertex tangent bases, a `3V × 3V` sparse matrix.
    pub fn reduced_matrix(&self) -> CsrMatrix {
        let mesh = &self.u.mesh;
        let n = mesh.num_vertices();
        let bases = self.u.tangent_bases();
        let mut blocks: HashMap<(usize, usize), Mat4> = HashMap::new();
        let mut add = |i: usize, j: usize, m: Mat4| {
            *blocks.entry((i, j)).or_insert_with(Mat4::zeros) += m;
        };
        if self.dirichlet_blocks.is_empty() {
            for (i, j, v) in mesh.stiffness().triplets() {
                add(i, j, Mat4::identity() * v);
            }
        } else {
            for (face, block) in mesh.faces().iter().zip(&self.dirichlet_blocks) {
                add_face_block(&mut add, *face, block, 1.0);
            }
        }
        if let Some(smm) = &self.smm {
            for (i, j, v) in smm.triplets() {
                add(i, j, Mat4::identity() * (v * self.eps * self.eps));
            }
        }
        for (face, block) in mesh.faces().iter().zip(&self.volume_blocks) {
            add_face_block(&mut add, *face, block, self.h);
        }
        for i in 0..n {
            add(i, i, -Mat4::identity() * self.normal_weight[i]);
        }
        let mut keys: Vec<_> = blocks.keys().copied().collect();
        keys.sort_unstable();
        let mut triplets = Vec::with_capacity(keys.len() * 9);
        for (i, j) in keys {
            let m = blocks[&(i, j)];
            for a in 0..3 {
                let ma = m.transpose() * bases[i][a];
                for b in 0..3 {
                    triplets.push((3 * i + a, 3 * j + b, ma.dot(&bases[j][b])));
                }
            }
        }
        let r = CsrMatrix::from_triplets(3 * n, 3 * n, &triplets);
        // Remove roundoff asymmetry.
        let sym: Vec<_> = r.triplets().map(|(i, j, v)| (i, j, 0.5 * (v + r.get(j, i)))).collect();
        CsrMatrix::from_triplets(3 * n, 3 * n, &sym)
    }

    /// Lumped mass for the reduced matrix (each vertex area repeated thrice).
    pub fn reduced_mass(&self) -> Vec<f64> {
        self.u.mesh.vertex_areas().iter().flat_map(|&m| [m, m, m]).collect()
    }

    /// Expands a reduced vector into a tangent field.
    pub fn expand(&self, coords: &[f64]) -> Vec<Vec4> {
        self.u
            .tangent_bases()
            .iter()
            .enumerate()
            .map(|(i, b)| b[0] * coords[3 * i] + b[1] * coords[3 * i + 1] + b[2] * coords[3 * i + 2])
            .collect()
    }
}

fn add_face_block(add: &mut impl FnMut(usize, usize, Mat4), face: [usize; 3], block: &Block12, scale: f64) {
    for a in 0..3 {
        for b in 0..3 {
            let m = Mat4::from_fn(|i, j| block[4 * a + i][4 * b + j] * scale);
            add(face[a], face[b], m);
        }
    }
}

/// `Hψ` together with a flag that is `false` away from critical points.
pub fn hessian_apply(u: &MapField, psi: &[Vec4], h: f64, eps: f64) -> (Vec<Vec4>, bool) {
    let hess = Hessian::new(u, h, eps);
    (hess.apply(psi), hess.is_critical())
}

/// Pointwise residual of the CMC equation.
#[derive(Clone, Debug)]
pub struct CmcResidual {
    /// `τ(u) − H Q(u_{x¹}, u_{x²})` at each vertex.
    pub field: Vec<Vec4>,
    /// Area-weighted `L²` norm in the target metric.
    pub norm: f64,
}

/// Discrete tension field and `*(u*Q)` at the vertices.
///
/// Both are read off the discrete first variation: `τ_i = −P(∂D/∂u_i)/M_i`
/// and `q_i = P(∂V/∂u_i)/M_i`, rescaled by `e^{−2φ}` so they are vectors
/// for the target metric.
pub fn tension_and_cross(u: &MapField) -> (Vec<Vec4>, Vec<Vec4>) {
    let gd = dirichlet_gradient(u);
    let gv = volume_gradient(u);
    let pd = u.project_tangent(&gd);
    let pv = u.project_tangent(&gv);
    let m = u.mesh.vertex_areas();
    let mut tau = Vec::with_capacity(u.len());
    let mut q = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        let s = (-2.0 * u.metric.log_factor(&u.values[i])).exp() / m[i];
        tau.push(-pd[i] * s);
        q.push(pv[i] * s);
    }
    (tau, q)
}

fn metric_l2(u: &MapField, a: &[Vec4], b: &[Vec4]) -> f64 {
    let m = u.mesh.vertex_areas();
    (0..u.len())
        .map(|i| m[i] * u.metric.inner(&u.values[i], &a[i], &b[i]))
        .sum()
}

pub fn cmc_residual(u: &MapField, h: f64) -> CmcResidual {
    let (tau, q) = tension_and_cross(u);
    let field: Vec<Vec4> = tau.iter().zip(&q).map(|(t, c)| t - c * h).collect();
    let norm = metric_l2(u, &field, &field).sqrt();
    CmcResidual { field, norm }
}

/// The `H` minimizing the residual norm, `⟨τ, q⟩ / ⟨q, q⟩`.
pub fn fit_mean_curvature(u: &MapField) -> f64 {
    let (tau, q) = tension_and_cross(u);
    let qq = metric_l2(u, &q, &q);
    if qq == 0.0 {
        0.0
    } else {
        metric_l2(u, &tau, &q) / qq
    }
}

/// Conformality defect of a map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfResidual {
    /// `(Σ_f A_f |φ_f|²)^{1/2} / D(u)`.
    pub value: f64,
    /// Set when `D(u)` vanishes and the normalization is undefined.
    pub degenerate: bool,
}

/// Per-face Hopf differential `¼(|u₁|² − |u₂|²) − (i/2)⟨u₁, u₂⟩`.
pub fn hopf_density(u: &MapField) -> Vec<(f64, f64)> {
    (0..u.mesh.num_faces())
        .map(|f| {
            let [a, b] = u.face_derivatives(f);
            let w = u.metric.dirichlet_weight(&face_barycenter(u, f)).value;
            (0.25 * w * (a.norm_squared() - b.norm_squared()), -0.5 * w * a.dot(&b))
        })
        .collect()
}

pub fn hopf_residual(u: &MapField) -> HopfResidual {
    let d = dirichlet(u);
    if !(d > 1e-14) {
        return HopfResidual {
            value: 0.0,
            degenerate: true,
        };
    }
    let s: f64 = hopf_density(u)
        .iter()
        .zip(u.mesh.geometry())
        .map(|((re, im), g)| g.area * (re * re + im * im))
        .sum();
    HopfResidual {
        value: s.sqrt() / d,
        degenerate: false,
    }
}
