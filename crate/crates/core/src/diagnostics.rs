//! Certificates for critical points: concentration scans, blow-up
//! rescaling, Morse indices and the area bound.

use crate::energy::{dirichlet, face_barycenter, laplacian, Hessian, MapField};
use crate::linalg::{dense_smallest, gershgorin_lower, shift_invert_smallest, CsrMatrix, EigenPairs, LanczosOptions};
use crate::{Error, Result, Vec3, Vec4};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_ETA0: f64 = 0.3;
pub const DEFAULT_SCAN_RADIUS: f64 = 0.02;
pub const DEFAULT_NULL_TOL: f64 = 0.1;

/// Point sample of the energy density `ε²|Δu|² + |∇u|²` (no factor ½).
#[derive(Clone, Copy, Debug)]
struct Sample {
    position: Vec3,
    energy: f64,
}

/// Splits every face in `faces` into `m²` congruent pieces and places each
/// piece's share of the energy at its centroid.
fn energy_samples(u: &MapField, eps: f64, faces: &[usize], m: usize) -> Vec<Sample> {
    let mesh = u.mesh();
    let lap = if eps != 0.0 { Some(laplacian(u)) } else { None };
    let m = m.max(1);
    // Centroids of the sub-triangles in barycentric coordinates.
    let mut bary = Vec::with_capacity(m * m);
    let step = 1.0 / m as f64;
    for i in 0..m {
        for j in 0..m - i {
            let (a, b) = (i as f64, j as f64);
            bary.push([(a + 1.0 / 3.0) * step, (b + 1.0 / 3.0) * step]);
            if i + j + 1 < m {
                bary.push([(a + 2.0 / 3.0) * step, (b + 2.0 / 3.0) * step]);
            }
        }
    }
    let share = 1.0 / bary.len() as f64;
    faces
        .par_iter()
        .flat_map_iter(|&f| {
            let face = mesh.faces()[f];
            let x = [mesh.vertices()[face[0]], mesh.vertices()[face[1]], mesh.vertices()[face[2]]];
            let area = mesh.geometry()[f].area;
            let [d1, d2] = u.face_derivatives(f);
            let w = u.metric().dirichlet_weight(&face_barycenter(u, f)).value;
            let grad = w * (d1.norm_squared() + d2.norm_squared());
            let lap = lap.as_ref();
            bary.iter().map(move |&[s, t]| {
                let l = [1.0 - s - t, s, t];
                let position = (x[0] * l[0] + x[1] * l[1] + x[2] * l[2]).normalize();
                let bi = lap.map_or(0.0, |lap| {
                    let v = lap[face[0]] * l[0] + lap[face[1]] * l[1] + lap[face[2]] * l[2];
                    eps * eps * v.norm_squared()
                });
                Sample {
                    position,
                    energy: area * share * (grad + bi),
                }
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub radius: f64,
    pub threshold: f64,
    pub eps: f64,
    /// Energy of `B_{4r}` about each vertex, indexed by vertex.
    pub local_energies: Vec<f64>,
    pub flagged: Vec<usize>,
    pub max_local_energy: f64,
    pub max_center: usize,
}

/// Local energies `∫_{B_{4r}(x_i)} ε²|Δu|² + |∇u|²` about every vertex,
/// flagging those above `eta0`.
pub fn concentration_scan(u: &MapField, eps: f64, r: f64, eta0: f64) -> Result<ConcentrationReport> {
    if !(r > 0.0) || !(eta0 > 0.0) {
        return Err(Error::Precondition("scan radius and threshold must be positive".into()));
    }
    if !(eps >= 0.0 && eps <= r) {
        return Err(Error::Precondition(format!("need 0 ≤ ε ≤ r, got ε = {eps}, r = {r}")));
    }
    let all: Vec<usize> = (0..u.mesh().num_faces()).collect();
    let samples = energy_samples(u, eps, &all, 2);
    let cos_r = (4.0 * r).min(PI).cos();
    let local_energies: Vec<f64> = u
        .mesh()
        .vertices()
        .par_iter()
        .map(|c| samples.iter().filter(|s| s.position.dot(c) >= cos_r).map(|s| s.energy).sum())
        .collect();
    let flagged: Vec<usize> = (0..local_energies.len()).filter(|&i| local_energies[i] > eta0).collect();
    let mut max_center = 0;
    for (i, &e) in local_energies.iter().enumerate() {
        if e > local_energies[max_center] {
            max_center = i;
        }
    }
    Ok(ConcentrationReport {
        radius: r,
        threshold: eta0,
        eps,
        max_local_energy: local_energies.get(max_center).copied().unwrap_or(0.0),
        max_center,
        local_energies,
        flagged,
    })
}

/// Angular radius of each face about its normalized centroid, and that centroid.
fn face_caps(u: &MapField) -> Vec<(Vec3, f64)> {
    let mesh = u.mesh();
    mesh.faces()
        .iter()
        .map(|f| {
            let x = [mesh.vertices()[f[0]], mesh.vertices()[f[1]], mesh.vertices()[f[2]]];
            let c = (x[0] + x[1] + x[2]).normalize();
            let r = x.iter().map(|v| v.dot(&c).clamp(-1.0, 1.0).acos()).fold(0.0, f64::max);
            (c, r)
        })
        .collect()
}

fn faces_near(caps: &[(Vec3, f64)], center: &Vec3, radius: f64) -> Vec<usize> {
    (0..caps.len())
        .filter(|&f| caps[f].0.dot(center).clamp(-1.0, 1.0).acos() <= radius + caps[f].1)
        .collect()
}

/// Cumulative energy as a piecewise-linear function of geodesic distance.
fn cumulative(samples: &[Sample], center: &Vec3) -> (Vec<f64>, Vec<f64>) {
    let mut pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.position.dot(center).clamp(-1.0, 1.0).acos(), s.energy))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut dist = vec![0.0];
    let mut acc = vec![0.0];
    for (d, e) in pts {
        dist.push(d);
        acc.push(acc[acc.len() - 1] + e);
    }
    (dist, acc)
}

/// Bisection for `C(t) = target` on a nondecreasing piecewise-linear `C`.
fn invert_cumulative(dist: &[f64], acc: &[f64], target: f64) -> Option<f64> {
    if acc[acc.len() - 1] < target {
        return None;
    }
    let (mut lo, mut hi) = (0, acc.len() - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if acc[mid] < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let de = acc[hi] - acc[lo];
    let theta = if de > 0.0 { (target - acc[lo]) / de } else { 1.0 };
    Some(dist[lo] + theta * (dist[hi] - dist[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowupConfig {
    pub eta0: f64,
    /// Scales larger than this are not treated as concentration.
    pub max_scale: f64,
    /// Grid nodes per side of the planar patch on `[−1, 1]²`.
    pub grid: usize,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig {
            eta0: DEFAULT_ETA0,
            max_scale: 0.1,
            grid: 161,
        }
    }
}

/// The radius `t` with `∫_{B_t(center)} ε²|Δu|² + |∇u|² = η₀/3`.
pub fn blowup_scale(u: &MapField, center: &Vec3, eps: f64, cfg: &BlowupConfig) -> Result<f64> {
    let center = center.normalize();
    let target = cfg.eta0 / 3.0;
    let caps = face_caps(u);
    let all: Vec<usize> = (0..caps.len()).collect();
    let (mut dist, mut acc) = cumulative(&energy_samples(u, eps, &all, 1), &center);
    let Some(mut t) = invert_cumulative(&dist, &acc, target) else {
        return Err(Error::NoConcentration {
            target,
            reached: acc[acc.len() - 1],
        });
    };
    // Refine the sampling on the faces that matter until it resolves t.
    for _ in 0..4 {
        let near = faces_near(&caps, &center, 2.0 * t);
        let size = near.iter().map(|&f| caps[f].1).fold(0.0, f64::max);
        let m = ((8.0 * size / t.max(1e-12)).ceil() as usize).clamp(1, 64);
        let (d, a) = cumulative(&energy_samples(u, eps, &near, m), &center);
        let Some(next) = invert_cumulative(&d, &a, target) else {
            break;
        };
        (dist, acc) = (d, a);
        let done = (next - t).abs() <= 1e-3 * t;
        t = next;
        if done {
            break;
        }
    }
    if t > cfg.max_scale {
        let k = dist.partition_point(|&d| d <= cfg.max_scale);
        return Err(Error::NoConcentration {
            target,
            reached: acc[k.saturating_sub(1)],
        });
    }
    Ok(t)
}

/// `u` resampled on a planar grid in the exponential chart at `center`,
/// scaled by `1/t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupPatch {
    pub center: [f64; 3],
    pub t_scale: f64,
    pub rescaled_eps: f64,
    pub grid: usize,
    /// Row-major grid values on `[−1, 1]²` (P1 interpolation, not projected).
    #[serde(skip)]
    pub values: Vec<Vec4>,
    /// `∫_{|y|≤1} ε̃²|Δũ|² + |∇ũ|²`.
    pub patch_energy: f64,
    pub hopf_residual: f64,
    pub cmc_residual: f64,
}

struct Locator {
    faces: Vec<usize>,
    inverses: Vec<Matrix3<f64>>,
}

impl Locator {
    fn new(u: &MapField, faces: Vec<usize>) -> Self {
        let mesh = u.mesh();
        let inverses = faces
            .iter()
            .map(|&f| {
                let t = mesh.faces()[f];
                let m = Matrix3::from_columns(&[mesh.vertices()[t[0]], mesh.vertices()[t[1]], mesh.vertices()[t[2]]]);
                m.try_inverse().unwrap_or_else(Matrix3::zeros)
            })
            .collect();
        Locator { faces, inverses }
    }

    /// Face containing the ray through `p` with normalized barycentrics.
    fn locate(&self, p: &Vec3) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for (k, inv) in self.inverses.iter().enumerate() {
            let l = inv * p;
            let s = l[0] + l[1] + l[2];
            if s <= 0.0 {
                continue;
            }
            let l = [l[0] / s, l[1] / s, l[2] / s];
            let worst = l[0].min(l[1]).min(l[2]);
            if worst >= -1e-12 {
                return Some((self.faces[k], l));
            }
            if best.is_none_or(|b| worst > b.2) {
                best = Some((self.faces[k], l, worst));
            }
        }
        best.filter(|b| b.2 > -1e-6).map(|b| (b.0, b.1))
    }
}

/// Resamples `u` at scale `t` about `center`, reporting the patch energy with
/// `ε̃ = ε/t`, its Hopf residual, and its CMC residual at `h`.
pub fn blowup_rescale(u: &MapField, center: &Vec3, t_scale: f64, eps: f64, h: f64, grid: usize) -> Result<BlowupPatch> {
    if !(t_scale > 0.0) || grid < 3 {
        return Err(Error::Precondition("blow-up needs t > 0 and a grid of at least 3 nodes".into()));
    }
    let p = center.normalize();
    let a = if p[0].abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (a - p * a.dot(&p)).normalize();
    let e2 = p.cross(&e1);
    let caps = face_caps(u);
    let locator = Locator::new(u, faces_near(&caps, &p, t_scale * 2f64.sqrt() * 1.01));
    let lap = laplacian(u);
    let n = grid;
    let hstep = 2.0 / (n - 1) as f64;
    let nodes: Vec<Result<(Vec4, Vec4)>> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let y = [-1.0 + j as f64 * hstep, -1.0 + i as f64 * hstep];
            let rho = (y[0] * y[0] + y[1] * y[1]).sqrt();
            let x = if rho == 0.0 {
                p
            } else {
                p * (t_scale * rho).cos() + (e1 * y[0] + e2 * y[1]) * ((t_scale * rho).sin() / rho)
            };
            let (f, l) = locator
                .locate(&x)
                .ok_or_else(|| Error::Precondition("blow-up chart leaves the sampled region".into()))?;
            let face = u.mesh().faces()[f];
            let v = u.values()[face[0]] * l[0] + u.values()[face[1]] * l[1] + u.values()[face[2]] * l[2];
            let d = lap[face[0]] * l[0] + lap[face[1]] * l[1] + lap[face[2]] * l[2];
            Ok((v, d))
        })
        .collect();
    let nodes = nodes.into_iter().collect::<Result<Vec<_>>>()?;
    let values: Vec<Vec4> = nodes.iter().map(|x| x.0).collect();
    let rescaled_eps = eps / t_scale;
    let metric = u.metric();
    let mut energy = 0.0;
    let mut dir = 0.0;
    let mut hopf = 0.0;
    let mut cmc = 0.0;
    let cell = hstep * hstep;
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let yc = [-1.0 + (j as f64 + 0.5) * hstep, -1.0 + (i as f64 + 0.5) * hstep];
            if yc[0] * yc[0] + yc[1] * yc[1] > 1.0 {
                continue;
            }
            let c = [i * n + j, i * n + j + 1, (i + 1) * n + j, (i + 1) * n + j + 1];
            let v = [values[c[0]], values[c[1]], values[c[2]], values[c[3]]];
            let ux = ((v[1] - v[0]) + (v[3] - v[2])) / (2.0 * hstep);
            let uy = ((v[2] - v[0]) + (v[3] - v[1])) / (2.0 * hstep);
            let ybar = (v[0] + v[1] + v[2] + v[3]) / 4.0;
            let w = metric.dirichlet_weight(&ybar).value;
            // The chart Laplacian of ũ(y) = u(exp(t y)) is t² Δu.
            let lap_c = (nodes[c[0]].1 + nodes[c[1]].1 + nodes[c[2]].1 + nodes[c[3]].1) * (t_scale * t_scale / 4.0);
            let grad2 = w * (ux.norm_squared() + uy.norm_squared());
            energy += cell * (grad2 + rescaled_eps * rescaled_eps * lap_c.norm_squared());
            dir += 0.5 * cell * grad2;
            let re = 0.25 * w * (ux.norm_squared() - uy.norm_squared());
            let im = -0.5 * w * ux.dot(&uy);
            hopf += cell * (re * re + im * im);
            // Round-metric tension Δũ + |∇ũ|²ũ against H·Q(ũ_x, ũ_y).
            if let Ok(yp) = metric.project(&ybar) {
                let pux = metric.project_tangent(&yp, &ux);
                let puy = metric.project_tangent(&yp, &uy);
                let tension = metric.project_tangent(&yp, &lap_c);
                let r = tension - metric.cross(&yp, &pux, &puy) * h;
                cmc += cell * metric.inner(&yp, &r, &r);
            }
        }
    }
    let hopf_residual = if dir > 1e-14 { hopf.sqrt() / dir } else { 0.0 };
    Ok(BlowupPatch {
        center: [p[0], p[1], p[2]],
        t_scale,
        rescaled_eps,
        grid: n,
        values,
        patch_energy: energy,
        hopf_residual,
        cmc_residual: cmc.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexForm {
    /// `δ²E_{H,ε}` on tangent fields.
    SecondVariation,
    /// The scalar comparison form `B_H`.
    Comparison,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexOptions {
    pub null_tol: f64,
    /// Problems up to this size are solved densely.
    pub dense_limit: usize,
    /// Largest acceptable eigenpair residual.
    pub residual_tol: f64,
    pub lanczos_steps: usize,
    pub seed: u64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions {
            null_tol: DEFAULT_NULL_TOL,
            dense_limit: 1200,
            residual_tol: 1e-8,
            lanczos_steps: 300,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub form: IndexForm,
    pub h: f64,
    pub eps: f64,
    pub index: usize,
    pub nullity: usize,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Per-vertex eigenfields: four components per vertex for the second
    /// variation, one for the comparison form.
    #[serde(skip)]
    pub eigenfields: Vec<Vec<f64>>,
}

/// Per-vertex weight `(|∇u|²/2)(H²/2 + Ric(n, n))` of the comparison form,
/// averaged from faces; zero where the gradient degenerates.
pub fn comparison_weight(u: &MapField, h: f64) -> Vec<f64> {
    let mesh = u.mesh();
    let metric = u.metric();
    let per_face: Vec<(f64, f64)> = (0..mesh.num_faces())
        .into_par_iter()
        .map(|f| {
            let ybar = face_barycenter(u, f);
            let Ok(y) = metric.project(&ybar) else {
                return (0.0, 0.0);
            };
            let [d1, d2] = u.face_derivatives(f);
            let w = metric.dirichlet_weight(&ybar).value;
            let grad2 = w * (d1.norm_squared() + d2.norm_squared());
            let q = metric.cross(&y, &metric.project_tangent(&y, &d1), &metric.project_tangent(&y, &d2));
            let qn = metric.inner(&y, &q, &q).sqrt();
            if qn == 0.0 {
                return (grad2, 0.0);
            }
            let n = q / qn;
            (grad2, 0.5 * grad2 * (0.5 * h * h + metric.ricci(&y, &n, &n)))
        })
        .collect();
    let total_area = mesh.total_area();
    let mean: f64 = per_face
        .iter()
        .zip(mesh.geometry())
        .map(|(p, g)| p.0 * g.area)
        .sum::<f64>()
        / total_area;
    let mut acc = vec![0.0; mesh.num_vertices()];
    for (f, face) in mesh.faces().iter().enumerate() {
        let (grad2, w) = per_face[f];
        let w = if grad2 < 1e-8 * mean { 0.0 } else { w };
        for &i in face {
            acc[i] += mesh.geometry()[f].area / 3.0 * w;
        }
    }
    acc.iter().zip(mesh.vertex_areas()).map(|(a, m)| a / m).collect()
}

/// The comparison form as a matrix, `S − diag(M w)`.
pub fn comparison_matrix(u: &MapField, h: f64) -> CsrMatrix {
    let mesh = u.mesh();
    let w = comparison_weight(u, h);
    let d: Vec<f64> = w.iter().zip(mesh.vertex_areas()).map(|(w, m)| w * m).collect();
    mesh.stiffness().add_scaled(1.0, &CsrMatrix::diagonal(&d), -1.0)
}

fn smallest_pairs(a: &CsrMatrix, mass: &[f64], k: usize, opts: &IndexOptions) -> Result<EigenPairs> {
    let pairs = if a.nrows() <= opts.dense_limit {
        dense_smallest(&a.to_dense(), mass, k)
    } else {
        let lanczos = LanczosOptions {
            max_steps: opts.lanczos_steps,
            tolerance: 1e-10,
            seed: opts.seed,
        };
        // A shift far below the spectrum converges slowly, one on an
        // eigenvalue factors badly.
        let shift = (gershgorin_lower(a, mass) - 0.5).max(-10.0);
        shift_invert_smallest(a, mass, k, shift, lanczos)?
    };
    let worst = pairs.residuals.iter().copied().fold(0.0, f64::max);
    if !(worst <= opts.residual_tol) {
        return Err(Error::EigenNonConvergence {
            residual: worst,
            iterations: opts.lanczos_steps,
        });
    }
    Ok(pairs)
}

/// Index and nullity of the selected form from its `k` smallest eigenvalues.
pub fn morse_index(u: &MapField, h: f64, eps: f64, k: usize, which: IndexForm, opts: &IndexOptions) -> Result<IndexReport> {
    if k == 0 {
        return Err(Error::Precondition("eigencount must be positive".into()));
    }
    let (pairs, eigenfields) = match which {
        IndexForm::SecondVariation => {
            let hess = Hessian::new(u, h, eps);
            let a = hess.reduced_matrix();
            let pairs = smallest_pairs(&a, &hess.reduced_mass(), k, opts)?;
            let fields = pairs
                .vectors
                .iter()
                .map(|v| hess.expand(v).iter().flat_map(|x| [x[0], x[1], x[2], x[3]]).collect())
                .collect();
            (pairs, fields)
        }
        IndexForm::Comparison => {
            let a = comparison_matrix(u, h);
            let pairs = smallest_pairs(&a, u.mesh().vertex_areas(), k, opts)?;
            let fields = pairs.vectors.clone();
            (pairs, fields)
        }
    };
    let index = pairs.values.iter().filter(|&&l| l < -opts.null_tol).count();
    let nullity = pairs.values.iter().filter(|&&l| l.abs() < opts.null_tol).count();
    if index + nullity == pairs.values.len() {
        log::warn!("all {} computed eigenvalues are non-positive or null; index may exceed the count", pairs.values.len());
    }
    Ok(IndexReport {
        form: which,
        h,
        eps,
        index,
        nullity,
        eigenvalues: pairs.values,
        residuals: pairs.residuals,
        eigenfields,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexComparison {
    pub comparison_index: usize,
    pub second_variation_index: usize,
    pub holds: bool,
}

/// Whether `index(B_H) ≤ index(δ²E_H)` at `ε = 0`; a failure is logged,
/// not raised.
pub fn index_comparison_check(u: &MapField, h: f64, k: usize, opts: &IndexOptions) -> Result<IndexComparison> {
    let b = morse_index(u, h, 0.0, k, IndexForm::Comparison, opts)?;
    let e = morse_index(u, h, 0.0, k, IndexForm::SecondVariation, opts)?;
    let holds = b.index <= e.index;
    if !holds {
        log::warn!("comparison index {} exceeds second-variation index {}", b.index, e.index);
    }
    Ok(IndexComparison {
        comparison_index: b.index,
        second_variation_index: e.index,
        holds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBound {
    pub dirichlet: f64,
    pub bound: f64,
    /// `D / bound`.
    pub ratio: f64,
    /// `bound − D`.
    pub margin: f64,
    pub holds: bool,
}

/// `c₀` for the round metric, `2 + H²/2`.
pub fn round_c0(h: f64) -> f64 {
    2.0 + 0.5 * h * h
}

/// Checks `D(u) ≤ 8π/c₀`.
pub fn energy_bound_check(u: &MapField, c0: f64) -> Result<EnergyBound> {
    if !(c0 > 0.0) {
        return Err(Error::Precondition("c₀ must be positive".into()));
    }
    let d = dirichlet(u);
    let bound = 8.0 * PI / c0;
    Ok(EnergyBound {
        dirichlet: d,
        bound,
        ratio: d / bound,
        margin: bound - d,
        holds: d <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps;
    use crate::mesh::build_icosphere;
    use crate::metric::MetricModel;
    use std::sync::Arc;

    #[test]
    fn cumulative_inversion_is_linear_between_samples() {
        let dist = [0.0, 1.0, 2.0];
        let acc = [0.0, 1.0, 3.0];
        assert_eq!(invert_cumulative(&dist, &acc, 2.0), Some(1.5));
        assert_eq!(invert_cumulative(&dist, &acc, 4.0), None);
    }

    #[test]
    fn samples_carry_twice_the_energy() {
        let mesh = Arc::new(build_icosphere(2).unwrap());
        let metric = Arc::new(MetricModel::round_s3());
        let u = maps::random_smooth(&mesh, &metric, 3, 0.5).unwrap();
        let faces: Vec<usize> = (0..mesh.num_faces()).collect();
        for m in [1, 3] {
            let total: f64 = energy_samples(&u, 0.1, &faces, m).iter().map(|s| s.energy).sum();
            let de = crate::energy::perturbed_energy(&u, 0.1);
            // The ε term is P1-interpolated rather than lumped.
            assert!((total - 2.0 * de).abs() < 0.05 * de, "{total} vs {de}");
        }
        let total: f64 = energy_samples(&u, 0.0, &faces, 2).iter().map(|s| s.energy).sum();
        assert!((total - 2.0 * dirichlet(&u)).abs() < 1e-12 * total);
    }

    #[test]
    fn comparison_weight_is_two_on_geodesic_spheres() {
        let mesh = Arc::new(build_icosphere(3).unwrap());
        let metric = Arc::new(MetricModel::round_s3());
        let r = PI / 3.0;
        let u = maps::geodesic_sphere(&mesh, &metric, r).unwrap();
        let w = comparison_weight(&u, 2.0 / r.tan());
        for x in w {
            assert!((x - 2.0).abs() < 0.02, "{x}");
        }
    }
}
