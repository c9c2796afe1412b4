//! Run configuration: a TOML file read as flat dotted keys, with
//! `key=value` overrides.
//!
//! | key | type | default |
//! |---|---|---|
//! | `mesh.level` | integer 0–8 | required |
//! | `metric.kind` | `round`, `conformal_linear`, `conformal_mobius` | `round` |
//! | `metric.a`, `metric.b` | 4 floats, float | `[0,0,0,0]`, `0` |
//! | `metric.t` | float | `0` |
//! | `metric.tube_radius`, `metric.locality` | float | `0.1`, `0.5` |
//! | `energy.h` | float or list | required |
//! | `energy.h_mode` | `single`, `grid`, `continuation` | `single` for one value, else `grid` |
//! | `energy.eps` | float or strictly decreasing list | required |
//! | `sweepout.slices` | integer ≥ 3 | `64` |
//! | `flow.step` | `armijo`, `fixed` | `armijo` |
//! | `flow.tau` | float, fixed step | `0.1` |
//! | `flow.c1`, `flow.shrink`, `flow.max_backtracks` | Armijo | `1e-4`, `0.5`, `40` |
//! | `flow.preconditioner` | `sobolev`, `mass` | `sobolev` |
//! | `flow.tolerance`, `flow.max_iterations` | | `1e-6`, `2000` |
//! | `flow.max_displacement`, `flow.collapse_threshold` | | `0.25`, `1e-3` |
//! | `flow.initial_step`, `flow.step_growth` | | `1`, `2` |
//! | `minmax.max_outer_iterations`, `minmax.descent_steps` | | `300`, `2` |
//! | `minmax.tolerance`, `minmax.climb_step`, `minmax.redistribute` | | `1e-5`, `0.5`, `true` |
//! | `diagnostics.eta0`, `diagnostics.scan_radius` | | `0.3`, `0.02` |
//! | `diagnostics.null_tol`, `diagnostics.eigencount` | | `0.1`, `12` |
//! | `diagnostics.blowup_max_scale`, `diagnostics.blowup_grid` | | `0.1`, `161` |
//! | `diagnostics.dense_limit`, `diagnostics.residual_tol` | | `1200`, `1e-8` |
//! | `run.seed`, `run.threads` | integers; 0 threads = all cores | `0`, `0` |
//! | `output.dir` | path | `out` |

use crate::diagnostics::{BlowupConfig, IndexOptions, DEFAULT_ETA0, DEFAULT_NULL_TOL, DEFAULT_SCAN_RADIUS};
use crate::flow::{FlowConfig, PreconditionerKind, StepRule};
use crate::mesh::MAX_LEVEL;
use crate::metric::{MetricModel, MetricSpec, DEFAULT_LOCALITY, DEFAULT_TUBE_RADIUS};
use crate::minmax::MinMaxConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use toml::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "values", rename_all = "snake_case")]
pub enum HSchedule {
    Single(f64),
    /// Independent runs, for monotonicity scans.
    Grid(Vec<f64>),
    /// Warm-started runs, each from the previous solution.
    Continuation(Vec<f64>),
}

impl HSchedule {
    pub fn values(&self) -> Vec<f64> {
        match self {
            HSchedule::Single(h) => vec![*h],
            HSchedule::Grid(v) | HSchedule::Continuation(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub eta0: f64,
    pub scan_radius: f64,
    pub eigencount: usize,
    pub index: IndexOptions,
    pub blowup: BlowupConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            eta0: DEFAULT_ETA0,
            scan_radius: DEFAULT_SCAN_RADIUS,
            eigencount: 12,
            index: IndexOptions::default(),
            blowup: BlowupConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub level: usize,
    pub metric: MetricSpec,
    pub tube_radius: f64,
    pub locality: f64,
    pub h: HSchedule,
    /// Decreasing `ε` schedule.
    pub eps: Vec<f64>,
    pub slices: usize,
    pub flow: FlowConfig,
    pub minmax: MinMaxConfig,
    pub diagnostics: DiagnosticsConfig,
    pub seed: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parses an override `key=value`; the value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let key = k.trim();
    if key.is_empty() || key.split('.').any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let raw = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

struct Keys(BTreeMap<String, Value>);

impl Keys {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<Value> {
        self.take(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    fn as_f64(key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(x) => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(Error::Config(format!("'{key}' must be a number"))),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.take(key).map_or(Ok(default), |v| Self::as_f64(key, &v))
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as usize),
            Some(_) => Err(Error::Config(format!("'{key}' must be a non-negative integer"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(_) => Err(Error::Config(format!("'{key}' must be true or false"))),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(Error::Config(format!("'{key}' must be a string"))),
        }
    }

    fn list(key: &str, v: &Value) -> Result<Vec<f64>> {
        match v {
            Value::Array(a) => a.iter().map(|x| Self::as_f64(key, x)).collect(),
            other => Ok(vec![Self::as_f64(key, other)?]),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[(String, Value)]) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        for (k, v) in overrides {
            flat.insert(k.clone(), v.clone());
        }
        Self::from_keys(flat)
    }

    pub fn from_file(path: &std::path::Path, overrides: &[(String, Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    fn from_keys(flat: BTreeMap<String, Value>) -> Result<Self> {
        let mut k = Keys(flat);
        let level = match k.required("mesh.level")? {
            Value::Integer(i) if (0..=MAX_LEVEL as i64).contains(&i) => i as usize,
            _ => return Err(Error::Config(format!("'mesh.level' must be an integer in 0..={MAX_LEVEL}"))),
        };
        let kind = k.string("metric.kind", "round")?;
        let metric = match kind.as_str() {
            "round" => MetricSpec::Round,
            "conformal_linear" => {
                let a = match k.take("metric.a") {
                    None => vec![0.0; 4],
                    Some(v) => Keys::list("metric.a", &v)?,
                };
                let a: [f64; 4] = a
                    .try_into()
                    .map_err(|_| Error::Config("'metric.a' must have four entries".into()))?;
                MetricSpec::ConformalLinear {
                    a,
                    b: k.f64("metric.b", 0.0)?,
                }
            }
            "conformal_mobius" => MetricSpec::ConformalMobius {
                t: k.f64("metric.t", 0.0)?,
            },
            other => return Err(Error::Config(format!("unknown metric kind '{other}'"))),
        };
        let tube_radius = k.f64("metric.tube_radius", DEFAULT_TUBE_RADIUS)?;
        let locality = k.f64("metric.locality", DEFAULT_LOCALITY)?;

        let hv = k.required("energy.h")?;
        let hs = Keys::list("energy.h", &hv)?;
        let default_mode = if matches!(hv, Value::Array(_)) { "grid" } else { "single" };
        let h = match k.string("energy.h_mode", default_mode)?.as_str() {
            "single" if hs.len() == 1 => HSchedule::Single(hs[0]),
            "single" => return Err(Error::Config("'energy.h_mode = single' needs one H".into())),
            "grid" => HSchedule::Grid(hs),
            "continuation" => HSchedule::Continuation(hs),
            other => return Err(Error::Config(format!("unknown H mode '{other}'"))),
        };
        let ev = k.required("energy.eps")?;
        let eps = Keys::list("energy.eps", &ev)?;
        let slices = k.usize("sweepout.slices", 64)?;

        let d = FlowConfig::default();
        let step = match k.string("flow.step", "armijo")?.as_str() {
            "armijo" => StepRule::Armijo {
                c1: k.f64("flow.c1", 1e-4)?,
                shrink: k.f64("flow.shrink", 0.5)?,
                max_backtracks: k.usize("flow.max_backtracks", 40)?,
            },
            "fixed" => StepRule::Fixed {
                tau: k.f64("flow.tau", 0.1)?,
            },
            other => return Err(Error::Config(format!("unknown step rule '{other}'"))),
        };
        let preconditioner = match k.string("flow.preconditioner", "sobolev")?.as_str() {
            "sobolev" => PreconditionerKind::Sobolev,
            "mass" => PreconditionerKind::Mass,
            other => return Err(Error::Config(format!("unknown preconditioner '{other}'"))),
        };
        let flow = FlowConfig {
            step,
            preconditioner,
            tolerance: k.f64("flow.tolerance", d.tolerance)?,
            max_iterations: k.usize("flow.max_iterations", d.max_iterations)?,
            max_displacement: k.f64("flow.max_displacement", d.max_displacement)?,
            collapse_threshold: k.f64("flow.collapse_threshold", d.collapse_threshold)?,
            initial_step: k.f64("flow.initial_step", d.initial_step)?,
            step_growth: k.f64("flow.step_growth", d.step_growth)?,
        };
        let m = MinMaxConfig::default();
        let minmax = MinMaxConfig {
            max_outer_iterations: k.usize("minmax.max_outer_iterations", m.max_outer_iterations)?,
            descent_steps: k.usize("minmax.descent_steps", m.descent_steps)?,
            tolerance: k.f64("minmax.tolerance", m.tolerance)?,
            climb_step: k.f64("minmax.climb_step", m.climb_step)?,
            redistribute: k.bool("minmax.redistribute", m.redistribute)?,
            flow,
        };
        let io = IndexOptions::default();
        let bc = BlowupConfig::default();
        let eta0 = k.f64("diagnostics.eta0", DEFAULT_ETA0)?;
        let diagnostics = DiagnosticsConfig {
            eta0,
            scan_radius: k.f64("diagnostics.scan_radius", DEFAULT_SCAN_RADIUS)?,
            eigencount: k.usize("diagnostics.eigencount", 12)?,
            index: IndexOptions {
                null_tol: k.f64("diagnostics.null_tol", DEFAULT_NULL_TOL)?,
                dense_limit: k.usize("diagnostics.dense_limit", io.dense_limit)?,
                residual_tol: k.f64("diagnostics.residual_tol", io.residual_tol)?,
                ..io
            },
            blowup: BlowupConfig {
                eta0,
                max_scale: k.f64("diagnostics.blowup_max_scale", bc.max_scale)?,
                grid: k.usize("diagnostics.blowup_grid", bc.grid)?,
            },
        };
        let seed = k.usize("run.seed", 0)? as u64;
        let threads = k.usize("run.threads", 0)?;
        let output_dir = PathBuf::from(k.string("output.dir", "out")?);
        if let Some(extra) = k.0.keys().next() {
            return Err(Error::Config(format!("unknown key '{extra}'")));
        }
        let cfg = RunConfig {
            level,
            metric,
            tube_radius,
            locality,
            h,
            eps,
            slices,
            flow,
            minmax,
            diagnostics,
            seed,
            threads,
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.eps.is_empty() {
            return bad("'energy.eps' is empty".into());
        }
        let n = self.eps.len();
        for (i, &e) in self.eps.iter().enumerate() {
            let last = i + 1 == n;
            if !(e > 0.0 || (last && e == 0.0)) {
                return bad(format!("ε = {e} must be positive (0 allowed only last)"));
            }
        }
        if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("'energy.eps' must be strictly decreasing".into());
        }
        let hs = self.h.values();
        if hs.is_empty() || hs.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return bad("H values must be finite and non-negative".into());
        }
        if let HSchedule::Grid(v) | HSchedule::Continuation(v) = &self.h {
            if v.windows(2).any(|w| !(w[1] > w[0])) {
                return bad("H grid must be strictly increasing".into());
            }
        }
        if self.slices < 3 {
            return bad("'sweepout.slices' must be at least 3".into());
        }
        if !(self.tube_radius > 0.0 && self.tube_radius < 1.0) || !(self.locality > 0.0) {
            return bad("tube radius must lie in (0, 1) and locality be positive".into());
        }
        if self.flow.max_displacement >= self.locality {
            return bad("flow.max_displacement must be below metric.locality".into());
        }
        let d = &self.diagnostics;
        if !(d.eta0 > 0.0) || !(d.scan_radius > 0.0) || !(d.index.null_tol > 0.0) || d.eigencount == 0 {
            return bad("diagnostics thresholds must be positive".into());
        }
        if d.blowup.grid < 3 || !(d.blowup.max_scale > 0.0) {
            return bad("blow-up grid must have at least 3 nodes and a positive scale".into());
        }
        if let MetricSpec::ConformalLinear { a, b } = &self.metric {
            if a.iter().chain(std::iter::once(b)).any(|x| !x.is_finite()) {
                return bad("metric coefficients must be finite".into());
            }
        }
        if let MetricSpec::ConformalMobius { t } = &self.metric {
            if !t.is_finite() || t.abs() > 5.0 {
                return bad("metric.t must be finite with |t| ≤ 5".into());
            }
        }
        self.minmax.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_metric(&self) -> MetricModel {
        self.metric
            .build()
            .with_tube_radius(self.tube_radius)
            .with_locality(self.locality)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "[mesh]\nlevel = 3\n[energy]\nh = 0.5\neps = [0.1, 0.05]\n";

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::from_toml_str(MIN, &[]).unwrap();
        assert_eq!(c.h, HSchedule::Single(0.5));
        assert_eq!(c.slices, 64);
        let o = [parse_override("flow.tolerance=1e-4").unwrap(), parse_override("output.dir=runs/a").unwrap()];
        let c = RunConfig::from_toml_str(MIN, &o).unwrap();
        assert_eq!(c.flow.tolerance, 1e-4);
        assert_eq!(c.minmax.flow.tolerance, 1e-4);
        assert_eq!(c.output_dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[mesh]\nlevel = 3\n[energy]\nh = 0.5\n",
            "[mesh]\nlevel = 3\n[energy]\nh = 0.5\neps = [0.05, 0.1]\n",
            "[mesh]\nlevel = 3\n[energy]\nh = 0.5\neps = 0.1\nbogus = 1\n",
            "[mesh]\nlevel = 30\n[energy]\nh = 0.5\neps = 0.1\n",
            "not toml [",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text, &[]), Err(Error::Config(_))), "{text}");
        }
    }
}
