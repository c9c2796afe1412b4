use crate::{ConfigArgs, ModeArg};
use cmcsweep::config::{parse_override, HSchedule, RunConfig};
use cmcsweep::diagnostics::{
    blowup_rescale, blowup_scale, concentration_scan, energy_bound_check, morse_index, round_c0, BlowupPatch,
    EnergyBound, IndexForm, IndexReport,
};
use cmcsweep::energy::{cmc_residual, hopf_residual, tracked_energy, EnergyBreakdown, MapField};
use cmcsweep::flow::{descend, CriticalPointSummary};
use cmcsweep::io::{self, ExportMode};
use cmcsweep::mesh::build_icosphere;
use cmcsweep::metric::MetricModel;
use cmcsweep::minmax::{extract_critical_point, latitude_sweepout, mountain_pass, omega_over_h_scan, MinMaxRecord, Sweepout};
use cmcsweep::{Error, Result};
use log::{info, warn};
use serde::Serialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

fn overrides(set: &[String]) -> Result<Vec<(String, toml::Value)>> {
    set.iter().map(|s| parse_override(s)).collect()
}

fn load(args: &ConfigArgs, threads: Option<usize>) -> Result<RunConfig> {
    let mut ov = overrides(&args.set)?;
    if let Some(dir) = &args.output {
        ov.push(("output.dir".into(), toml::Value::String(dir.to_string_lossy().into_owned())));
    }
    let cfg = RunConfig::from_file(&args.config, &ov)?;
    init_threads(threads.unwrap_or(cfg.threads));
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg)
}

fn init_threads(n: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        warn!("thread pool: {e}");
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    started_unix: f64,
    finished_unix: f64,
    config: &'a RunConfig,
}

/// Runs `body` and records timing next to its outputs. Timestamps live only
/// here so every other output is reproducible byte for byte.
fn with_metadata(command: &str, cfg: &RunConfig, body: impl FnOnce() -> Result<()>) -> Result<()> {
    let started_unix = unix_seconds();
    body()?;
    io::write_json(
        &cfg.output_dir.join("metadata.json"),
        &Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            started_unix,
            finished_unix: unix_seconds(),
            config: cfg,
        },
    )
}

fn setup(cfg: &RunConfig) -> Result<Sweepout> {
    let metric = Arc::new(cfg.build_metric());
    let mesh = Arc::new(build_icosphere(cfg.level)?);
    latitude_sweepout(&mesh, &metric, cfg.slices)
}

#[derive(Serialize)]
struct ProfileRow {
    t: f64,
    dirichlet: f64,
    d_eps: f64,
    volume: f64,
    energy: f64,
}

pub fn sweepout(args: &ConfigArgs, threads: Option<usize>) -> Result<()> {
    let cfg = load(args, threads)?;
    with_metadata("sweepout", &cfg, || {
        let sw = setup(&cfg)?;
        let (h, eps) = (cfg.h.values()[0], cfg.eps[0]);
        let n = sw.len();
        let rows: Vec<ProfileRow> = sw
            .energies(h, eps)
            .iter()
            .enumerate()
            .map(|(i, e)| ProfileRow {
                t: i as f64 / (n - 1) as f64,
                dirichlet: e.dirichlet,
                d_eps: e.d_eps,
                volume: e.volume,
                energy: e.total,
            })
            .collect();
        io::write_sweepout(&cfg.output_dir.join("sweepout"), &sw)?;
        io::write_csv(&cfg.output_dir.join("profile.csv"), &rows)?;
        let max_d = rows.iter().map(|r| r.dirichlet).fold(0.0, f64::max);
        println!(
            "{n} slices, degree {}, max D/4π = {:.5}, V/2π² = {:.5}",
            sw.degree(),
            max_d / (4.0 * PI),
            sw.volumes()[n - 1] / (2.0 * PI * PI)
        );
        Ok(())
    })
}

#[derive(Serialize)]
struct ChainEntry {
    h_index: usize,
    eps_index: usize,
    minmax: MinMaxRecord,
    critical_point: String,
    summary: CriticalPointSummary,
    /// `D_ε` bound `8H²c + 1` with `c = D_ε/H²` at the first run's argmax.
    d_eps_cap: Option<f64>,
}

#[derive(Serialize)]
struct MinMaxOutput {
    h_mode: &'static str,
    runs: Vec<ChainEntry>,
}

#[derive(Serialize)]
struct ContinuationRow {
    h: f64,
    eps: f64,
    omega: f64,
    dirichlet: f64,
    d_eps: f64,
    cmc_residual: f64,
    hopf_residual: f64,
    /// `8π/c₀` with the round-metric `c₀`; empty for other metrics.
    energy_bound: Option<f64>,
    d_eps_cap: Option<f64>,
}

pub fn minmax(args: &ConfigArgs, threads: Option<usize>) -> Result<()> {
    let cfg = load(args, threads)?;
    with_metadata("minmax", &cfg, || {
        let base = setup(&cfg)?;
        let round = base.slices()[0].metric().is_round();
        let warm = matches!(cfg.h, HSchedule::Continuation(_));
        let mut runs = Vec::new();
        let mut rows = Vec::new();
        let mut carried: Option<Sweepout> = None;
        let mut cap: Option<f64> = None;
        for (i, h) in cfg.h.values().into_iter().enumerate() {
            let mut start = match (&carried, warm) {
                (Some(sw), true) => sw.clone(),
                _ => base.clone(),
            };
            for (j, &eps) in cfg.eps.iter().enumerate() {
                info!("mountain pass H = {h}, ε = {eps}");
                let (sw, rec) = mountain_pass(&start, h, eps, &cfg.minmax)?;
                let crit = extract_critical_point(&sw, &rec, &cfg.minmax)?;
                if cap.is_none() && h > 0.0 {
                    let c = rec.d_eps_at_argmax / (h * h);
                    cap = Some(8.0 * h * h * c + 1.0);
                }
                let stem = format!("critical_h{i}_e{j}");
                io::write_critical_point(&cfg.output_dir, &stem, &crit)?;
                let s = &crit.summary;
                println!(
                    "H = {h}, ε = {eps}: ω = {:.6}, D = {:.6}, cmc {:.3e}, hopf {:.3e}, {:?}",
                    rec.omega, s.energy.dirichlet, s.cmc_residual, s.hopf_residual, s.status
                );
                rows.push(ContinuationRow {
                    h,
                    eps,
                    omega: rec.omega,
                    dirichlet: s.energy.dirichlet,
                    d_eps: s.energy.d_eps,
                    cmc_residual: s.cmc_residual,
                    hopf_residual: s.hopf_residual,
                    energy_bound: round.then(|| 8.0 * PI / round_c0(h)),
                    d_eps_cap: cap,
                });
                if let Some(c) = cap {
                    if s.energy.d_eps > c {
                        warn!("D_ε = {} exceeds the first run's cap {c}", s.energy.d_eps);
                    }
                }
                runs.push(ChainEntry {
                    h_index: i,
                    eps_index: j,
                    minmax: rec,
                    critical_point: format!("{stem}.json"),
                    summary: crit.summary.clone(),
                    d_eps_cap: cap,
                });
                if j == 0 {
                    carried = Some(sw.clone());
                }
                start = sw;
            }
        }
        let h_mode = match cfg.h {
            HSchedule::Single(_) => "single",
            HSchedule::Grid(_) => "grid",
            HSchedule::Continuation(_) => "continuation",
        };
        io::write_json(&cfg.output_dir.join("minmax.json"), &MinMaxOutput { h_mode, runs })?;
        io::write_csv(&cfg.output_dir.join("continuation.csv"), &rows)
    })
}

#[derive(Serialize)]
struct HsweepRow {
    eps: f64,
    h: f64,
    omega: f64,
    omega_over_h: f64,
    neg_derivative: Option<f64>,
}

#[derive(Serialize)]
struct EpsweepRow {
    h: f64,
    eps: f64,
    omega: f64,
}

pub fn hsweep(args: &ConfigArgs, threads: Option<usize>) -> Result<()> {
    let cfg = load(args, threads)?;
    with_metadata("hsweep", &cfg, || {
        let base = setup(&cfg)?;
        let hs = cfg.h.values();
        let mut rows = Vec::new();
        for &eps in &cfg.eps {
            for r in omega_over_h_scan(&hs, eps, &base, &cfg.minmax)? {
                println!("ε = {eps}, H = {}: ω = {:.6}, ω/H = {:.6}", r.h, r.omega, r.omega_over_h);
                rows.push(HsweepRow {
                    eps,
                    h: r.h,
                    omega: r.omega,
                    omega_over_h: r.omega_over_h,
                    neg_derivative: r.neg_derivative,
                });
            }
        }
        io::write_csv(&cfg.output_dir.join("hsweep.csv"), &rows)?;
        if cfg.eps.len() > 1 {
            let mut by_h: Vec<EpsweepRow> = rows
                .iter()
                .map(|r| EpsweepRow {
                    h: r.h,
                    eps: r.eps,
                    omega: r.omega,
                })
                .collect();
            by_h.sort_by(|a, b| a.h.total_cmp(&b.h).then(a.eps.total_cmp(&b.eps)));
            for w in by_h.windows(2).filter(|w| w[0].h == w[1].h) {
                if w[0].omega > w[1].omega * 1.02 {
                    warn!("ω decreases in ε at H = {}: {} > {}", w[0].h, w[0].omega, w[1].omega);
                }
            }
            io::write_csv(&cfg.output_dir.join("epsweep.csv"), &by_h)?;
        }
        Ok(())
    })
}

pub fn flow(args: &ConfigArgs, threads: Option<usize>, input: &Path, volume: f64) -> Result<()> {
    let cfg = load(args, threads)?;
    with_metadata("flow", &cfg, || {
        let u = io::read_map(input, Arc::new(cfg.build_metric()))?;
        let (h, eps) = (cfg.h.values()[0], cfg.eps[0]);
        let rec = descend(&u, volume, h, eps, &cfg.flow)?;
        io::write_critical_point(&cfg.output_dir, "flow", &rec)?;
        let s = &rec.summary;
        println!(
            "{:?} after {} iterations: E = {:.6}, D = {:.6}, gradient {:.3e}",
            s.status, s.iterations, s.energy.total, s.energy.dirichlet, s.grad_norm
        );
        Ok(())
    })
}

pub struct DiagnoseArgs {
    pub input: PathBuf,
    pub h: Option<f64>,
    pub eps: Option<f64>,
    pub volume: f64,
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct ConcentrationSummary {
    radius: f64,
    threshold: f64,
    flagged: Vec<usize>,
    max_local_energy: f64,
    max_center: [f64; 3],
}

#[derive(Serialize)]
struct Diagnosis {
    level: usize,
    vertices: usize,
    h: f64,
    eps: f64,
    energy: EnergyBreakdown,
    cmc_residual: f64,
    hopf_residual: f64,
    hopf_degenerate: bool,
    concentration: Option<ConcentrationSummary>,
    blowup: Option<BlowupPatch>,
    notes: Vec<String>,
    comparison_index: IndexReport,
    second_variation_index: IndexReport,
    energy_bound: Option<EnergyBound>,
}

pub fn diagnose(args: &DiagnoseArgs, threads: Option<usize>) -> Result<()> {
    let ov = overrides(&args.set)?;
    let cfg = match &args.config {
        Some(p) => Some(RunConfig::from_file(p, &ov)?),
        None if !ov.is_empty() => return Err(Error::Config("--set needs --config".into())),
        None => None,
    };
    init_threads(threads.or(cfg.as_ref().map(|c| c.threads)).unwrap_or(0));
    let h = args
        .h
        .or(cfg.as_ref().map(|c| c.h.values()[0]))
        .ok_or_else(|| Error::Config("H is required (--h or a config)".into()))?;
    let eps = args
        .eps
        .or(cfg.as_ref().map(|c| c.eps[0]))
        .ok_or_else(|| Error::Config("ε is required (--eps or a config)".into()))?;
    if !(eps >= 0.0) || !h.is_finite() {
        return Err(Error::Config("need finite H and ε ≥ 0".into()));
    }
    let metric = Arc::new(cfg.as_ref().map(|c| c.build_metric()).unwrap_or_else(MetricModel::round_s3));
    let d = cfg.as_ref().map(|c| c.diagnostics).unwrap_or_default();
    let u = io::read_map(&args.input, metric)?;
    let report = diagnose_map(&u, h, eps, args.volume, &d)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.output {
        Some(p) => std::fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn diagnose_map(
    u: &MapField,
    h: f64,
    eps: f64,
    volume: f64,
    d: &cmcsweep::config::DiagnosticsConfig,
) -> Result<Diagnosis> {
    let mut notes = Vec::new();
    let hopf = hopf_residual(u);
    let concentration = if eps <= d.scan_radius {
        let rep = concentration_scan(u, eps, d.scan_radius, d.eta0)?;
        let c = u.mesh().vertices()[rep.max_center];
        Some(ConcentrationSummary {
            radius: rep.radius,
            threshold: rep.threshold,
            flagged: rep.flagged,
            max_local_energy: rep.max_local_energy,
            max_center: [c[0], c[1], c[2]],
        })
    } else {
        notes.push(format!("concentration scan skipped: ε = {eps} exceeds the scan radius {}", d.scan_radius));
        None
    };
    let mut blowup = None;
    if let Some(c) = concentration.as_ref().filter(|c| !c.flagged.is_empty()) {
        let center = cmcsweep::Vec3::new(c.max_center[0], c.max_center[1], c.max_center[2]);
        match blowup_scale(u, &center, eps, &d.blowup) {
            Ok(t) => blowup = Some(blowup_rescale(u, &center, t, eps, h, d.blowup.grid)?),
            Err(e @ Error::NoConcentration { .. }) => notes.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    let k = d.eigencount;
    let comparison_index = morse_index(u, h, 0.0, k, IndexForm::Comparison, &d.index)?;
    let second_variation_index = morse_index(u, h, eps, k, IndexForm::SecondVariation, &d.index)?;
    let energy_bound = if u.metric().is_round() {
        Some(energy_bound_check(u, round_c0(h))?)
    } else {
        notes.push("energy bound needs c₀, known only for the round metric".into());
        None
    };
    Ok(Diagnosis {
        level: u.mesh().subdivision_level(),
        vertices: u.len(),
        h,
        eps,
        energy: tracked_energy(u, volume, h, eps),
        cmc_residual: cmc_residual(u, h).norm,
        hopf_residual: hopf.value,
        hopf_degenerate: hopf.degenerate,
        concentration,
        blowup,
        notes,
        comparison_index,
        second_variation_index,
        energy_bound,
    })
}

pub fn export(input: &Path, mode: ModeArg, auto_rotate: bool, output: &Path) -> Result<()> {
    let u = io::read_map(input, Arc::new(MetricModel::round_s3()))?;
    let mode = match mode {
        ModeArg::Stereographic => ExportMode::Stereographic,
        ModeArg::Slice => ExportMode::Slice,
    };
    let ply = io::export_r3(&u, mode, auto_rotate)?;
    std::fs::write(output, io::write_ply(&ply)?)?;
    Ok(())
}
