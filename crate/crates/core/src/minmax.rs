//! Sweepouts, the min-max value, and a string-method mountain pass.

use crate::energy::{tracked_energy, volume_increment, EnergyBreakdown, MapField};
use crate::flow::{descend, descent_direction, line_search, CriticalPointRecord, FlowConfig, Preconditioner};
use crate::maps;
use crate::mesh::SphereMesh;
use crate::metric::MetricModel;
use crate::{Error, Result, Vec4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Ordered family of maps from a constant to a constant, with volumes
/// accumulated slice to slice from `V₀ = 0`.
#[derive(Clone, Debug)]
pub struct Sweepout {
    slices: Vec<MapField>,
    volumes: Vec<f64>,
}

/// `Π((1 − θ) a + θ b)`.
fn interpolate(a: &MapField, b: &MapField, theta: f64) -> Result<MapField> {
    let v: Vec<Vec4> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x * (1.0 - theta) + y * theta)
        .collect();
    MapField::from_ambient(a.mesh().clone(), a.metric().clone(), &v)
}

fn accumulate(slices: &[MapField]) -> Result<Vec<f64>> {
    let increments: Vec<Result<f64>> = slices.par_windows(2).map(|w| volume_increment(&w[0], &w[1])).collect();
    let mut volumes = Vec::with_capacity(slices.len());
    volumes.push(0.0);
    for inc in increments {
        let last = *volumes.last().unwrap();
        volumes.push(last + inc?);
    }
    Ok(volumes)
}

impl Sweepout {
    /// Builds a sweepout, inserting interpolated slices wherever consecutive
    /// slices violate the locality bound.
    pub fn new(slices: Vec<MapField>) -> Result<Self> {
        if slices.len() < 3 {
            return Err(Error::Precondition("a sweepout needs at least three slices".into()));
        }
        if !slices[0].is_constant() || !slices[slices.len() - 1].is_constant() {
            return Err(Error::Precondition("sweepout endpoints must be constant maps".into()));
        }
        let bound = slices[0].metric().locality();
        let mut refined = Vec::with_capacity(slices.len());
        refined.push(slices[0].clone());
        for w in slices.windows(2) {
            let d = w[0].max_distance(&w[1])?;
            let pieces = (d / (0.5 * bound)).ceil().max(1.0) as usize;
            for k in 1..pieces {
                refined.push(interpolate(&w[0], &w[1], k as f64 / pieces as f64)?);
            }
            refined.push(w[1].clone());
        }
        let volumes = accumulate(&refined)?;
        Ok(Sweepout {
            slices: refined,
            volumes,
        })
    }

    pub fn slices(&self) -> &[MapField] {
        &self.slices
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// `round(V_{S−1} / Vol_g(S³))`.
    pub fn degree(&self) -> i64 {
        let total = self.slices[0].metric().total_volume();
        (self.volumes[self.volumes.len() - 1] / total).round() as i64
    }

    pub fn energies(&self, h: f64, eps: f64) -> Vec<EnergyBreakdown> {
        self.slices
            .par_iter()
            .zip(self.volumes.par_iter())
            .map(|(u, v)| tracked_energy(u, *v, h, eps))
            .collect()
    }
}

/// Slices `x ↦ (√(1 − c²) x, c)` with `c = 2k/(S − 1) − 1`.
pub fn latitude_sweepout(mesh: &Arc<SphereMesh>, metric: &Arc<MetricModel>, slices: usize) -> Result<Sweepout> {
    if slices < 3 {
        return Err(Error::Precondition("latitude sweepout needs S ≥ 3".into()));
    }
    let maps = (0..slices)
        .map(|k| {
            let c = 2.0 * k as f64 / (slices - 1) as f64 - 1.0;
            maps::latitude(mesh, metric, c)
        })
        .collect::<Result<Vec<_>>>()?;
    Sweepout::new(maps)
}

/// Index and value of the largest `E_{H,ε}` over the slices; ties go to the
/// lowest index.
pub fn sweepout_max(sw: &Sweepout, h: f64, eps: f64) -> (usize, f64) {
    argmax(&sw.energies(h, eps))
}

fn argmax(e: &[EnergyBreakdown]) -> (usize, f64) {
    let mut best = (0, e[0].total);
    for (k, x) in e.iter().enumerate().skip(1) {
        if x.total > best.1 {
            best = (k, x.total);
        }
    }
    best
}

fn interior_argmax(e: &[EnergyBreakdown]) -> usize {
    let n = e.len();
    let mut best = 1;
    for k in 2..n - 1 {
        if e[k].total > e[best].total {
            best = k;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinMaxConfig {
    pub max_outer_iterations: usize,
    /// Descent steps per interior slice and outer iteration; 0 disables the
    /// deformation entirely.
    pub descent_steps: usize,
    /// Stop when the climbing slice's preconditioned gradient norm is below this.
    pub tolerance: f64,
    /// Fixed step of the climbing slice.
    pub climb_step: f64,
    pub redistribute: bool,
    pub flow: FlowConfig,
}

impl Default for MinMaxConfig {
    fn default() -> Self {
        MinMaxConfig {
            max_outer_iterations: 300,
            descent_steps: 2,
            tolerance: 1e-5,
            climb_step: 0.5,
            redistribute: true,
            flow: FlowConfig::default(),
        }
    }
}

impl MinMaxConfig {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        if !(self.tolerance > 0.0) || !(self.climb_step > 0.0) {
            return Err(Error::Config("min-max tolerance and climb step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinMaxStatus {
    Converged,
    MaxIter,
    /// No deformation was requested.
    Unchanged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxIteration {
    pub iteration: usize,
    pub max_energy: f64,
    pub argmax: usize,
    pub climb_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxRecord {
    pub h: f64,
    pub eps: f64,
    pub omega: f64,
    pub argmax: usize,
    pub d_eps_at_argmax: f64,
    pub climb_grad_norm: f64,
    pub degree: i64,
    pub history: Vec<MinMaxIteration>,
    pub status: MinMaxStatus,
}

/// Equal-arclength reparametrization of `slices[lo..=hi]` in the
/// mass-weighted `L²` distance, keeping both ends fixed.
fn redistribute_segment(slices: &mut [MapField], lo: usize, hi: usize) -> Result<()> {
    if hi <= lo + 1 {
        return Ok(());
    }
    let mass = slices[lo].mesh().vertex_areas().to_vec();
    let dist = |a: &MapField, b: &MapField| -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .zip(&mass)
            .map(|((x, y), m)| m * (x - y).norm_squared())
            .sum::<f64>()
            .sqrt()
    };
    let mut arc = vec![0.0; hi - lo + 1];
    for k in lo..hi {
        arc[k - lo + 1] = arc[k - lo] + dist(&slices[k], &slices[k + 1]);
    }
    let total = arc[hi - lo];
    if total == 0.0 {
        return Ok(());
    }
    let old: Vec<MapField> = slices[lo..=hi].to_vec();
    let targets: Vec<(usize, f64)> = (lo + 1..hi)
        .map(|k| {
            let s = total * (k - lo) as f64 / (hi - lo) as f64;
            let mut j = 0;
            while j + 1 < arc.len() - 1 && arc[j + 1] < s {
                j += 1;
            }
            let seg = arc[j + 1] - arc[j];
            let theta = if seg > 0.0 { ((s - arc[j]) / seg).clamp(0.0, 1.0) } else { 0.0 };
            (j, theta)
        })
        .collect();
    let new: Vec<Result<MapField>> = targets
        .par_iter()
        .map(|&(j, theta)| interpolate(&old[j], &old[j + 1], theta))
        .collect();
    for (k, m) in (lo + 1..hi).zip(new) {
        slices[k] = m?;
    }
    Ok(())
}

/// Climbing-image step: ascend along the path tangent, descend across it.
fn climb(
    u: &MapField,
    prev: &MapField,
    next: &MapField,
    h: f64,
    eps: f64,
    pre: &Preconditioner,
    cfg: &MinMaxConfig,
) -> Result<(MapField, f64)> {
    let dir = descent_direction(u, h, eps, pre);
    let raw: Vec<Vec4> = next.values().iter().zip(prev.values()).map(|(a, b)| a - b).collect();
    let tangent = u.project_tangent(&raw);
    let ta = pre.norm_squared(&tangent);
    let mut d = dir.direction.clone();
    if ta > 0.0 {
        let gt: f64 = dir.tangent_gradient.iter().zip(&tangent).map(|(g, t)| g.dot(t)).sum();
        let c = 2.0 * gt / ta;
        for (di, ti) in d.iter_mut().zip(&tangent) {
            *di -= ti * c;
        }
        d = u.project_tangent(&d);
    }
    let max_len = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max_len == 0.0 {
        return Ok((u.clone(), dir.norm));
    }
    let tau = cfg.climb_step.min(cfg.flow.max_displacement / max_len);
    Ok((u.displaced(&d, -tau)?, dir.norm))
}

/// String method: descend every interior slice, move the highest slice by a
/// climbing-image step, reparametrize by arclength, re-accumulate volumes.
pub fn mountain_pass(sw0: &Sweepout, h: f64, eps: f64, cfg: &MinMaxConfig) -> Result<(Sweepout, MinMaxRecord)> {
    cfg.validate()?;
    let degree = sw0.degree();
    if degree != 1 {
        return Err(Error::Precondition(format!("sweepout has degree {degree}, expected 1")));
    }
    let mut sw = sw0.clone();
    let mut energies = sw.energies(h, eps);
    let mut history = Vec::new();
    if cfg.descent_steps == 0 {
        let (k, omega) = argmax(&energies);
        return Ok((
            sw,
            MinMaxRecord {
                h,
                eps,
                omega,
                argmax: k,
                d_eps_at_argmax: energies[k].d_eps,
                climb_grad_norm: f64::NAN,
                degree,
                history,
                status: MinMaxStatus::Unchanged,
            },
        ));
    }
    let pre = Preconditioner::new(sw.slices[0].mesh(), eps, cfg.flow.preconditioner)?;
    let n = sw.len();
    let mut taus = vec![cfg.flow.initial_step; n];
    let mut status = MinMaxStatus::MaxIter;
    let mut climb_norm = f64::INFINITY;
    for iteration in 0..cfg.max_outer_iterations {
        let top = interior_argmax(&energies);
        let prev_max = argmax(&energies).1;

        // Descent on all interior slices but the climbing one.
        let updates: Vec<Result<Option<(MapField, f64)>>> = (1..n - 1)
            .into_par_iter()
            .map(|k| {
                if k == top {
                    return Ok(None);
                }
                let mut u = sw.slices[k].clone();
                let mut v = sw.volumes[k];
                let mut e = energies[k].total;
                let mut tau = taus[k];
                for _ in 0..cfg.descent_steps {
                    let dir = descent_direction(&u, h, eps, &pre);
                    if dir.norm <= cfg.tolerance {
                        break;
                    }
                    match line_search(&u, v, e, &dir, h, eps, &cfg.flow, tau * cfg.flow.step_growth)? {
                        Some(step) => {
                            tau = step.tau;
                            u = step.map;
                            v = step.volume;
                            e = step.energy.total;
                        }
                        None => break,
                    }
                }
                Ok(Some((u, tau)))
            })
            .collect();
        let (climbed, norm) = climb(&sw.slices[top], &sw.slices[top - 1], &sw.slices[top + 1], h, eps, &pre, cfg)?;
        climb_norm = norm;
        history.push(MinMaxIteration {
            iteration,
            max_energy: prev_max,
            argmax: top,
            climb_grad_norm: norm,
        });
        if norm <= cfg.tolerance {
            status = MinMaxStatus::Converged;
            break;
        }
        for (k, up) in (1..n - 1).zip(updates) {
            if let Some((u, tau)) = up? {
                sw.slices[k] = u;
                taus[k] = tau;
            }
        }
        sw.slices[top] = climbed;
        if cfg.redistribute {
            redistribute_segment(&mut sw.slices, 0, top)?;
            redistribute_segment(&mut sw.slices, top, n - 1)?;
        }
        sw.volumes = accumulate(&sw.slices)?;
        let now = sw.degree();
        if now != degree {
            return Err(Error::DegreeChanged {
                before: degree,
                after: now,
            });
        }
        energies = sw.energies(h, eps);
        let new_max = argmax(&energies).1;
        if new_max > prev_max + 1e-8 * prev_max.abs().max(1.0) {
            log::debug!("max energy rose from {prev_max} to {new_max} at iteration {iteration}");
        }
    }
    let (k, omega) = argmax(&energies);
    Ok((
        sw,
        MinMaxRecord {
            h,
            eps,
            omega,
            argmax: k,
            d_eps_at_argmax: energies[k].d_eps,
            climb_grad_norm: climb_norm,
            degree,
            history,
            status,
        },
    ))
}

/// Relative drop below `ω` beyond which a descent is taken to have left
/// the saddle.
pub const EXTRACT_DROP: f64 = 1e-2;

/// Critical point at the top of a mountain pass: the argmax slice,
/// descended with `cfg.flow`. The argmax of a converged pass is a saddle,
/// so descent can slide off it; when it collapses or loses more than
/// `EXTRACT_DROP·ω`, the slice itself is returned, certified at the
/// mountain-pass tolerance.
pub fn extract_critical_point(sw: &Sweepout, rec: &MinMaxRecord, cfg: &MinMaxConfig) -> Result<CriticalPointRecord> {
    let k = rec.argmax;
    let (u, v) = (&sw.slices[k], sw.volumes[k]);
    let out = descend(u, v, rec.h, rec.eps, &cfg.flow)?;
    let s = &out.summary;
    let left = s.status == crate::flow::FlowStatus::CollapsedToConstant
        || rec.omega - s.energy.total > EXTRACT_DROP * rec.omega.abs().max(1.0);
    if !left {
        return Ok(out);
    }
    log::info!(
        "descent left the saddle (E {:.6} vs ω {:.6}); keeping slice {k}",
        s.energy.total,
        rec.omega
    );
    let hold = FlowConfig {
        tolerance: cfg.flow.tolerance.max(cfg.tolerance),
        max_iterations: 0,
        ..cfg.flow
    };
    descend(u, v, rec.h, rec.eps, &hold)
}

/// One row of an `ω/H` scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub h: f64,
    pub omega: f64,
    pub omega_over_h: f64,
    /// Forward difference of `−ω/H` to the next grid point.
    pub neg_derivative: Option<f64>,
}

pub fn omega_over_h_scan(hs: &[f64], eps: f64, base: &Sweepout, cfg: &MinMaxConfig) -> Result<Vec<ScanRow>> {
    if hs.is_empty() || hs.windows(2).any(|w| !(w[1] > w[0])) || !(hs[0] > 0.0) {
        return Err(Error::Precondition("H grid must be positive and strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(hs.len());
    for &h in hs {
        let (_, rec) = mountain_pass(base, h, eps, cfg)?;
        rows.push(ScanRow {
            h,
            omega: rec.omega,
            omega_over_h: rec.omega / h,
            neg_derivative: None,
        });
    }
    for k in 0..rows.len().saturating_sub(1) {
        let d = -(rows[k + 1].omega_over_h - rows[k].omega_over_h) / (rows[k + 1].h - rows[k].h);
        if d < 0.0 {
            log::warn!("ω/H increases between H = {} and H = {}", rows[k].h, rows[k + 1].h);
        }
        rows[k].neg_derivative = Some(d);
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodSlice {
    pub index: usize,
    pub energy: f64,
    pub d_eps: f64,
    pub within_bound: bool,
}

/// Slices with `E ≥ ω − α`, annotated with whether `D_ε ≤ C`.
pub fn good_slice_extract(sw: &Sweepout, h: f64, eps: f64, omega: f64, alpha: f64, c: f64) -> Vec<GoodSlice> {
    let e = sw.energies(h, eps);
    (1..sw.len() - 1)
        .filter(|&k| e[k].total >= omega - alpha)
        .map(|k| GoodSlice {
            index: k,
            energy: e[k].total,
            d_eps: e[k].d_eps,
            within_bound: e[k].d_eps <= c,
        })
        .collect()
}
