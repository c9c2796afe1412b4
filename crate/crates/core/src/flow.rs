//! Preconditioned projected gradient descent for `E_{H,ε}`.

use crate::energy::{
    cmc_residual, gradient, hopf_residual, tracked_energy, volume_increment, EnergyBreakdown, MapField,
};
use crate::linalg::{CsrMatrix, SparseCholesky};
use crate::mesh::SphereMesh;
use crate::{Error, Result, Vec4};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Fixed {
        tau: f64,
    },
    Armijo {
        c1: f64,
        shrink: f64,
        max_backtracks: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    /// Lumped mass.
    Mass,
    /// `ε² S M⁻¹ S + S + M`.
    Sobolev,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub step: StepRule,
    pub preconditioner: PreconditionerKind,
    /// Stop once the preconditioned gradient norm is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Largest vertex displacement of a single step; must stay below the
    /// locality bound of the metric.
    pub max_displacement: f64,
    /// `β`: below this `D_ε` a non-stationary map counts as collapsing.
    pub collapse_threshold: f64,
    pub initial_step: f64,
    /// Factor applied to the previous accepted step to start a line search.
    pub step_growth: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step: StepRule::Armijo {
                c1: 1e-4,
                shrink: 0.5,
                max_backtracks: 40,
            },
            preconditioner: PreconditionerKind::Sobolev,
            tolerance: 1e-6,
            max_iterations: 2000,
            max_displacement: 0.25,
            collapse_threshold: 1e-3,
            initial_step: 1.0,
            step_growth: 2.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tolerance > 0.0) {
            return bad("flow tolerance must be positive");
        }
        if !(self.max_displacement > 0.0) {
            return bad("max displacement must be positive");
        }
        if !(self.collapse_threshold > 0.0) {
            return bad("collapse threshold must be positive");
        }
        if !(self.initial_step > 0.0) || !(self.step_growth >= 1.0) {
            return bad("initial step must be positive and growth at least 1");
        }
        match self.step {
            StepRule::Fixed { tau } if !(tau > 0.0) => bad("fixed step must be positive"),
            StepRule::Armijo { c1, shrink, .. } if !(c1 > 0.0 && c1 < 1.0) || !(shrink > 0.0 && shrink < 1.0) => {
                bad("Armijo parameters need c1, shrink in (0, 1)")
            }
            _ => Ok(()),
        }
    }
}

/// Factored inner product used to turn gradients into descent directions.
pub struct Preconditioner {
    kind: PreconditionerKind,
    mass: Vec<f64>,
    matrix: CsrMatrix,
    factor: Option<SparseCholesky>,
}

impl Preconditioner {
    pub fn new(mesh: &SphereMesh, eps: f64, kind: PreconditionerKind) -> Result<Self> {
        let mass = mesh.vertex_areas().to_vec();
        match kind {
            PreconditionerKind::Mass => Ok(Preconditioner {
                kind,
                matrix: CsrMatrix::diagonal(&mass),
                mass,
                factor: None,
            }),
            PreconditionerKind::Sobolev => {
                let s = mesh.stiffness();
                let mut a = s.add_scaled(1.0, &CsrMatrix::diagonal(&mass), 1.0);
                if eps != 0.0 {
                    let inv: Vec<f64> = mass.iter().map(|m| 1.0 / m).collect();
                    a = a.add_scaled(1.0, &s.mul_diag_mul(&inv, s), eps * eps);
                }
                let factor = SparseCholesky::factor(&a)?;
                Ok(Preconditioner {
                    kind,
                    mass,
                    matrix: a,
                    factor: Some(factor),
                })
            }
        }
    }

    pub fn kind(&self) -> PreconditionerKind {
        self.kind
    }

    /// `A⁻¹ g`, componentwise.
    pub fn solve(&self, g: &[Vec4]) -> Vec<Vec4> {
        match &self.factor {
            None => g.iter().zip(&self.mass).map(|(v, m)| v / *m).collect(),
            Some(f) => {
                let n = g.len();
                let mut cols = vec![0.0; 4 * n];
                for (i, v) in g.iter().enumerate() {
                    for c in 0..4 {
                        cols[c * n + i] = v[c];
                    }
                }
                f.solve_columns_in_place(&mut cols, 4);
                (0..n)
                    .map(|i| Vec4::new(cols[i], cols[n + i], cols[2 * n + i], cols[3 * n + i]))
                    .collect()
            }
        }
    }

    /// `ψᵀ A ψ`, componentwise.
    pub fn norm_squared(&self, psi: &[Vec4]) -> f64 {
        let n = psi.len();
        (0..4)
            .map(|c| {
                let x: Vec<f64> = (0..n).map(|i| psi[i][c]).collect();
                self.matrix.bilinear(&x, &x)
            })
            .sum()
    }
}

/// Outcome classification of a descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowStatus {
    Converged,
    MaxIter,
    CollapsedToConstant,
}

/// One row of an energy trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub dirichlet: f64,
    pub d_eps: f64,
    pub volume: f64,
    pub energy: f64,
    pub grad_norm: f64,
}

/// A converged (or stopped) map with its certificate data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointSummary {
    pub h: f64,
    pub eps: f64,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub iterations: usize,
    pub cmc_residual: f64,
    pub hopf_residual: f64,
    pub status: FlowStatus,
    /// Set when the line search failed to find a decrease.
    #[serde(default)]
    pub line_search_failed: bool,
}

#[derive(Clone, Debug)]
pub struct CriticalPointRecord {
    pub map: MapField,
    pub summary: CriticalPointSummary,
    pub trace: Vec<TraceRow>,
}

impl CriticalPointSummary {
    /// Recomputes the map-dependent values and compares them to the stored ones.
    pub fn revalidate(&self, map: &MapField, tol: f64) -> Result<()> {
        let e = tracked_energy(map, self.energy.volume, self.h, self.eps);
        let cmc = cmc_residual(map, self.h).norm;
        let hopf = hopf_residual(map).value;
        let checks = [
            ("dirichlet", e.dirichlet, self.energy.dirichlet),
            ("d_eps", e.d_eps, self.energy.d_eps),
            ("total", e.total, self.energy.total),
            ("cmc_residual", cmc, self.cmc_residual),
            ("hopf_residual", hopf, self.hopf_residual),
        ];
        for (name, now, stored) in checks {
            if (now - stored).abs() > tol * stored.abs().max(1.0) {
                return Err(Error::Precondition(format!(
                    "record does not match its map: {name} is {now:e}, stored {stored:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Preconditioned tangent gradient at a map.
pub struct Direction {
    /// `P(A⁻¹ g_T)`.
    pub direction: Vec<Vec4>,
    /// `(g_Tᵀ A⁻¹ g_T)^{1/2}`.
    pub norm: f64,
    pub tangent_gradient: Vec<Vec4>,
}

pub fn descent_direction(u: &MapField, h: f64, eps: f64, pre: &Preconditioner) -> Direction {
    let g = gradient(u, h, eps);
    let d = pre.solve(&g.tangent);
    let norm2: f64 = g.tangent.iter().zip(&d).map(|(a, b)| a.dot(b)).sum();
    Direction {
        direction: u.project_tangent(&d),
        norm: norm2.max(0.0).sqrt(),
        tangent_gradient: g.tangent,
    }
}

/// Result of one line search.
pub struct StepOutcome {
    pub map: MapField,
    pub volume: f64,
    pub energy: EnergyBreakdown,
    pub tau: f64,
}

/// Step from `u` along `−d`, with Armijo backtracking unless the rule is fixed.
/// Returns `None` if no acceptable step was found.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    u: &MapField,
    volume: f64,
    energy: f64,
    dir: &Direction,
    h: f64,
    eps: f64,
    cfg: &FlowConfig,
    tau0: f64,
) -> Result<Option<StepOutcome>> {
    let max_len = dir.direction.iter().map(|d| d.norm()).fold(0.0, f64::max);
    if max_len == 0.0 {
        return Ok(None);
    }
    let cap = cfg.max_displacement / max_len;
    let slope = dir.norm * dir.norm;
    let try_step = |tau: f64| -> Result<StepOutcome> {
        let cand = u.displaced(&dir.direction, -tau)?;
        let dv = if h != 0.0 { volume_increment(u, &cand)? } else { 0.0 };
        let e = tracked_energy(&cand, volume + dv, h, eps);
        Ok(StepOutcome {
            map: cand,
            volume: volume + dv,
            energy: e,
            tau,
        })
    };
    match cfg.step {
        StepRule::Fixed { tau } => Ok(Some(try_step(tau.min(cap))?)),
        StepRule::Armijo {
            c1,
            shrink,
            max_backtracks,
        } => {
            let mut tau = tau0.min(cap);
            for _ in 0..=max_backtracks {
                let out = try_step(tau)?;
                if out.energy.total <= energy - c1 * tau * slope && out.energy.total < energy {
                    return Ok(Some(out));
                }
                tau *= shrink;
            }
            Ok(None)
        }
    }
}

/// Runs the flow from `u0` with tracked volume `volume0`.
pub fn descend(u0: &MapField, volume0: f64, h: f64, eps: f64, cfg: &FlowConfig) -> Result<CriticalPointRecord> {
    let pre = Preconditioner::new(u0.mesh(), eps, cfg.preconditioner)?;
    descend_with(u0, volume0, h, eps, cfg, &pre)
}

pub fn descend_with(
    u0: &MapField,
    volume0: f64,
    h: f64,
    eps: f64,
    cfg: &FlowConfig,
    pre: &Preconditioner,
) -> Result<CriticalPointRecord> {
    cfg.validate()?;
    if eps < 0.0 {
        return Err(Error::Precondition("eps must be nonnegative".into()));
    }
    if cfg.max_displacement >= u0.metric().locality() {
        return Err(Error::Config(format!(
            "max displacement {} must be below the locality bound {}",
            cfg.max_displacement,
            u0.metric().locality()
        )));
    }
    let mut u = u0.clone();
    let mut volume = volume0;
    let mut energy = tracked_energy(&u, volume, h, eps);
    let mut trace = Vec::new();
    let mut tau = cfg.initial_step;
    let mut iterations = 0;
    let mut failed = false;
    let (status, grad_norm) = loop {
        let dir = descent_direction(&u, h, eps, pre);
        trace.push(TraceRow {
            iteration: iterations,
            dirichlet: energy.dirichlet,
            d_eps: energy.d_eps,
            volume,
            energy: energy.total,
            grad_norm: dir.norm,
        });
        if dir.norm <= cfg.tolerance {
            break (FlowStatus::Converged, dir.norm);
        }
        if energy.d_eps < cfg.collapse_threshold {
            break (FlowStatus::CollapsedToConstant, dir.norm);
        }
        if iterations >= cfg.max_iterations {
            break (FlowStatus::MaxIter, dir.norm);
        }
        let tau0 = tau * cfg.step_growth;
        match line_search(&u, volume, energy.total, &dir, h, eps, cfg, tau0)? {
            Some(step) => {
                tau = step.tau;
                u = step.map;
                volume = step.volume;
                energy = step.energy;
                iterations += 1;
            }
            None => {
                log::warn!(
                    "line search failed at iteration {iterations} (gradient norm {:.3e})",
                    dir.norm
                );
                failed = true;
                break (FlowStatus::MaxIter, dir.norm);
            }
        }
    };
    let summary = CriticalPointSummary {
        h,
        eps,
        energy,
        grad_norm,
        iterations,
        cmc_residual: cmc_residual(&u, h).norm,
        hopf_residual: hopf_residual(&u).value,
        status,
        line_search_failed: failed,
    };
    Ok(CriticalPointRecord {
        map: u,
        summary,
        trace,
    })
}

/// CSV rendering of a trace: `iteration,dirichlet,d_eps,volume,energy,grad_norm`.
pub fn energy_trace(record: &CriticalPointRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &record.trace {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
