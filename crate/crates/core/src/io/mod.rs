//! File formats: maps as PLY, matrices as COO text, records as JSON, tables
//! as CSV, and sweepout checkpoints.

pub mod coo;
pub mod ply;

use crate::energy::MapField;
use crate::flow::{energy_trace, CriticalPointRecord, CriticalPointSummary};
use crate::mesh::SphereMesh;
use crate::metric::MetricModel;
use crate::minmax::Sweepout;
use crate::{Error, Result, Vec3, Vec4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use coo::{parse_coo, write_coo};
pub use ply::{parse_ply, write_ply, PlyMesh};

const MAP_COMPONENTS: [&str; 4] = ["u0", "u1", "u2", "u3"];

/// Domain mesh plus map values as vertex attributes `u0..u3`.
pub fn map_to_ply(u: &MapField) -> PlyMesh {
    let mesh = u.mesh();
    PlyMesh {
        comments: vec![format!("level {}", mesh.subdivision_level())],
        vertices: mesh.vertices().iter().map(|v| [v[0], v[1], v[2]]).collect(),
        attributes: (0..4)
            .map(|k| (MAP_COMPONENTS[k].to_string(), u.values().iter().map(|y| y[k]).collect()))
            .collect(),
        faces: mesh.faces().iter().map(|f| [f[0] as u32, f[1] as u32, f[2] as u32]).collect(),
    }
}

/// Rebuilds the domain mesh and the map; the values must lie on the target.
pub fn map_from_ply(ply: &PlyMesh, metric: Arc<MetricModel>) -> Result<MapField> {
    let level = match ply.comment_value("level") {
        Some(s) => s.parse().map_err(|_| Error::parse(0, format!("bad level comment '{s}'")))?,
        None => 0,
    };
    let vertices: Vec<Vec3> = ply.vertices.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect();
    // Loose enough for single-precision files.
    if let Some(i) = vertices.iter().position(|v| !((v.norm() - 1.0).abs() <= 1e-6)) {
        return Err(Error::parse(0, format!("vertex {i} is not on the unit sphere")));
    }
    let faces = ply.faces.iter().map(|f| [f[0] as usize, f[1] as usize, f[2] as usize]).collect();
    let mesh = Arc::new(SphereMesh::new(vertices, faces, level)?);
    let mut cols = Vec::with_capacity(4);
    for name in MAP_COMPONENTS {
        cols.push(
            ply.attribute(name)
                .ok_or_else(|| Error::parse(0, format!("vertex attribute '{name}' missing")))?,
        );
    }
    let values = (0..ply.vertices.len())
        .map(|i| Vec4::new(cols[0][i], cols[1][i], cols[2][i], cols[3][i]))
        .collect();
    MapField::new(mesh, metric, values)
}

pub fn read_map(path: &Path, metric: Arc<MetricModel>) -> Result<MapField> {
    let bytes = std::fs::read(path)?;
    map_from_ply(&parse_ply(&bytes)?, metric)
}

pub fn write_map(path: &Path, u: &MapField) -> Result<()> {
    std::fs::write(path, write_ply(&map_to_ply(u))?)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// On-disk form of a critical point: `<stem>.json`, `<stem>.ply` and
/// `<stem>_trace.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPointFile {
    pub map: String,
    pub trace: String,
    pub summary: CriticalPointSummary,
}

pub fn write_critical_point(dir: &Path, stem: &str, rec: &CriticalPointRecord) -> Result<PathBuf> {
    let map = format!("{stem}.ply");
    let trace = format!("{stem}_trace.csv");
    write_map(&dir.join(&map), &rec.map)?;
    std::fs::write(dir.join(&trace), energy_trace(rec)?)?;
    let json = dir.join(format!("{stem}.json"));
    write_json(
        &json,
        &CriticalPointFile {
            map,
            trace,
            summary: rec.summary.clone(),
        },
    )?;
    Ok(json)
}

/// Loads a critical point and checks the stored residuals against the map.
pub fn read_critical_point(json: &Path, metric: Arc<MetricModel>, tol: f64) -> Result<(MapField, CriticalPointSummary)> {
    let file: CriticalPointFile = read_json(json)?;
    let dir = json.parent().unwrap_or(Path::new("."));
    let map = read_map(&dir.join(&file.map), metric)?;
    file.summary.revalidate(&map, tol)?;
    Ok((map, file.summary))
}

/// Volume ledger of a sweepout checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepoutLedger {
    pub slices: Vec<String>,
    pub volumes: Vec<f64>,
    pub degree: i64,
}

/// Writes `slice_NNN.ply` files and `volumes.json` into `dir`.
pub fn write_sweepout(dir: &Path, sw: &Sweepout) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(sw.len());
    for (k, u) in sw.slices().iter().enumerate() {
        let name = format!("slice_{k:03}.ply");
        write_map(&dir.join(&name), u)?;
        names.push(name);
    }
    write_json(
        &dir.join("volumes.json"),
        &SweepoutLedger {
            slices: names,
            volumes: sw.volumes().to_vec(),
            degree: sw.degree(),
        },
    )
}

/// Reads a checkpoint; volumes are re-accumulated and compared to the ledger.
pub fn read_sweepout(dir: &Path, metric: Arc<MetricModel>) -> Result<Sweepout> {
    let ledger: SweepoutLedger = read_json(&dir.join("volumes.json"))?;
    let mut slices = Vec::with_capacity(ledger.slices.len());
    let mut mesh: Option<Arc<SphereMesh>> = None;
    for name in &ledger.slices {
        let u = read_map(&dir.join(name), metric.clone())?;
        // Share one domain mesh across slices.
        let u = match &mesh {
            Some(m) if m.same_as(u.mesh()) => MapField::new(m.clone(), metric.clone(), u.into_values())?,
            Some(_) => return Err(Error::MeshMismatch),
            None => {
                mesh = Some(u.mesh().clone());
                u
            }
        };
        slices.push(u);
    }
    let sw = Sweepout::new(slices)?;
    if sw.len() != ledger.volumes.len()
        || sw
            .volumes()
            .iter()
            .zip(&ledger.volumes)
            .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
    {
        return Err(Error::Precondition("checkpoint volumes do not match its slices".into()));
    }
    Ok(sw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    /// Stereographic projection from `−e₄`.
    Stereographic,
    /// Drops the fourth coordinate.
    Slice,
}

/// Distance below which a value counts as hitting the projection pole.
const POLE_TOL: f64 = 1e-6;

/// Rotation of `R⁴` taking `p` to `−e₄` (two reflections, so orientation
/// is kept).
fn rotation_to_south(p: &Vec4) -> crate::Mat4 {
    let target = Vec4::new(0.0, 0.0, 0.0, -1.0);
    let reflect = |v: Vec4| -> crate::Mat4 {
        let n = v.norm_squared();
        if n < 1e-30 {
            crate::Mat4::identity()
        } else {
            crate::Mat4::identity() - v * v.transpose() * (2.0 / n)
        }
    };
    // Reflection through the hyperplane orthogonal to e₁ or e₂ keeps the
    // target fixed and fixes the orientation.
    let fix = if p[0].abs() < 0.9 { Vec4::x() } else { Vec4::y() };
    reflect(fix) * reflect(p - target)
}

/// Mesh in `R³` for viewing. A constant map gives a single point and no
/// faces. In stereographic mode a map reaching `−e₄` is first rotated
/// away from it if `auto_rotate` is set, else rejected.
pub fn export_r3(u: &MapField, mode: ExportMode, auto_rotate: bool) -> Result<PlyMesh> {
    let mut comments = vec![format!("mode {}", match mode {
        ExportMode::Stereographic => "stereographic",
        ExportMode::Slice => "slice",
    })];
    let mut values: Vec<Vec4> = u.values().to_vec();
    if mode == ExportMode::Stereographic {
        let hit = values.iter().position(|y| (y + Vec4::new(0.0, 0.0, 0.0, 1.0)).norm() < POLE_TOL);
        if let Some(vertex) = hit {
            if !auto_rotate {
                return Err(Error::PoleHit { vertex });
            }
            // Farthest of a fixed candidate set from the image.
            let mean = values.iter().fold(Vec4::zeros(), |a, y| a + y);
            let mut candidates: Vec<Vec4> = Vec::new();
            if mean.norm() > 1e-9 {
                candidates.push(-mean.normalize());
            }
            for k in 0..4 {
                let mut e = Vec4::zeros();
                e[k] = 1.0;
                candidates.push(e);
                candidates.push(-e);
            }
            let clearance = |p: &Vec4| values.iter().map(|y| (y - p).norm()).fold(f64::INFINITY, f64::min);
            let best = candidates
                .iter()
                .copied()
                .max_by(|a, b| clearance(a).total_cmp(&clearance(b)))
                .unwrap_or(Vec4::w());
            let rot = rotation_to_south(&best);
            values = values.iter().map(|y| rot * y).collect();
            comments.push(format!("rotated {} {} {} {}", best[0], best[1], best[2], best[3]));
        }
    }
    let project = |y: &Vec4| -> [f64; 3] {
        match mode {
            ExportMode::Stereographic => {
                let d = 1.0 + y[3];
                [y[0] / d, y[1] / d, y[2] / d]
            }
            ExportMode::Slice => [y[0], y[1], y[2]],
        }
    };
    if u.is_constant() {
        return Ok(PlyMesh {
            comments,
            vertices: vec![project(&values[0])],
            attributes: Vec::new(),
            faces: Vec::new(),
        });
    }
    Ok(PlyMesh {
        comments,
        vertices: values.iter().map(project).collect(),
        attributes: Vec::new(),
        faces: u.mesh().faces().iter().map(|f| [f[0] as u32, f[1] as u32, f[2] as u32]).collect(),
    })
}
