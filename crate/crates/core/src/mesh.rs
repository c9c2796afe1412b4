//! Triangulated domain sphere and its P1 finite element operators.

use crate::linalg::CsrMatrix;
use crate::{Error, Result, Vec3};
use std::collections::HashMap;

/// Largest accepted subdivision level (level 8 has 655 362 vertices).
pub const MAX_LEVEL: usize = 8;

/// Per-face data for P1 elements on the flat triangle.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    pub area: f64,
    /// Orthonormal in-plane frame `(t1, t2)` with `t1 × t2` the outward normal.
    pub frame: [Vec3; 2],
    /// Gradients of the three hat functions in frame coordinates.
    pub grad: [[f64; 2]; 3],
}

/// Immutable triangulated unit sphere with assembled operators.
#[derive(Clone, Debug)]
pub struct SphereMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    level: usize,
    geometry: Vec<FaceGeometry>,
    vertex_areas: Vec<f64>,
    stiffness: CsrMatrix,
    vertex_faces: Vec<Vec<usize>>,
    edge_count: usize,
}

/// Builds the icosahedron refined `level` times with vertices on the unit sphere.
pub fn build_icosphere(level: usize) -> Result<SphereMesh> {
    if level > MAX_LEVEL {
        return Err(Error::Capacity {
            level,
            max: MAX_LEVEL,
        });
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut vertices: Vec<Vec3> = raw.iter().map(|p| Vec3::new(p[0], p[1], p[2]).normalize()).collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3 / 2);
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    vertices.push((vertices[a] + vertices[b]).normalize());
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    SphereMesh::new(vertices, faces, level)
}

impl SphereMesh {
    /// Validates topology and assembles operators.
    ///
    /// Vertices are renormalized to the unit sphere; faces must be
    /// counterclockwise seen from outside and form a closed sphere.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, level: usize) -> Result<Self> {
        let nv = vertices.len();
        let mut vertices = vertices;
        for (i, v) in vertices.iter_mut().enumerate() {
            let n = v.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Topology(format!("vertex {i} has no direction")));
            }
            *v /= n;
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} has invalid indices {f:?}")));
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if edges.insert((a, b), fi).is_some() {
                    return Err(Error::Topology(format!("directed edge ({a},{b}) used twice")));
                }
            }
        }
        for &(a, b) in edges.keys() {
            if !edges.contains_key(&(b, a)) {
                return Err(Error::Topology(format!("edge ({a},{b}) is on a boundary")));
            }
        }
        let edge_count = edges.len() / 2;
        let euler = nv as i64 - edge_count as i64 + faces.len() as i64;
        if euler != 2 {
            return Err(Error::Topology(format!("Euler characteristic is {euler}, expected 2")));
        }
        let mut vertex_faces = vec![Vec::new(); nv];
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                vertex_faces[i].push(fi);
            }
        }
        if let Some(i) = vertex_faces.iter().position(|v| v.is_empty()) {
            return Err(Error::Topology(format!("vertex {i} is isolated")));
        }

        let mut mesh = SphereMesh {
            vertices,
            faces,
            level,
            geometry: Vec::new(),
            vertex_areas: Vec::new(),
            stiffness: CsrMatrix::identity(0),
            vertex_faces,
            edge_count,
        };
        mesh.assemble_operators()?;
        Ok(mesh)
    }

    /// Cotangent stiffness and lumped barycentric mass.
    fn assemble_operators(&mut self) -> Result<()> {
        let nv = self.vertices.len();
        let scale = self
            .faces
            .iter()
            .map(|f| (self.vertices[f[1]] - self.vertices[f[0]]).norm_squared())
            .fold(0.0, f64::max);
        let mut geometry = Vec::with_capacity(self.faces.len());
        let mut areas = vec![0.0; nv];
        let mut triplets = Vec::with_capacity(self.faces.len() * 9);
        for (fi, f) in self.faces.iter().enumerate() {
            let p = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
            let e1 = p[1] - p[0];
            let e2 = p[2] - p[0];
            let normal = e1.cross(&e2);
            let area = 0.5 * normal.norm();
            if !(area > 1e-14 * scale) || normal.dot(&(p[0] + p[1] + p[2])) <= 0.0 {
                return Err(Error::DegenerateFace { face: fi, area });
            }
            let n = normal / (2.0 * area);
            let t1 = e1.normalize();
            let t2 = n.cross(&t1);
            // ∇λ_k = n × (opposite edge, counterclockwise) / (2A)
            let mut grad = [[0.0; 2]; 3];
            for k in 0..3 {
                let edge = p[(k + 2) % 3] - p[(k + 1) % 3];
                let g = n.cross(&edge) / (2.0 * area);
                grad[k] = [g.dot(&t1), g.dot(&t2)];
            }
            for a in 0..3 {
                areas[f[a]] += area / 3.0;
                for b in 0..3 {
                    let v = area * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                    triplets.push((f[a], f[b], v));
                }
            }
            geometry.push(FaceGeometry {
                area,
                frame: [t1, t2],
                grad,
            });
        }
        let mut stiffness = CsrMatrix::from_triplets(nv, nv, &triplets);
        // Summation order differs between (i,j) and (j,i); make it bitwise symmetric.
        let sym: Vec<_> = stiffness
            .triplets()
            .map(|(i, j, v)| {
                let w = stiffness.get(j, i);
                (i, j, 0.5 * (v + w))
            })
            .collect();
        stiffness = CsrMatrix::from_triplets(nv, nv, &sym);
        self.geometry = geometry;
        self.vertex_areas = areas;
        self.stiffness = stiffness;
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_count
    }

    pub fn subdivision_level(&self) -> usize {
        self.level
    }

    pub fn geometry(&self) -> &[FaceGeometry] {
        &self.geometry
    }

    /// Lumped mass, the diagonal of the mass matrix.
    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    pub fn total_area(&self) -> f64 {
        self.vertex_areas.iter().sum()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> CsrMatrix {
        CsrMatrix::diagonal(&self.vertex_areas)
    }

    pub fn vertex_faces(&self, i: usize) -> &[usize] {
        &self.vertex_faces[i]
    }

    /// Longest edge length.
    pub fn mesh_size(&self) -> f64 {
        self.faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| (f[k], f[(k + 1) % 3])))
            .map(|(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .fold(0.0, f64::max)
    }

    /// `fᵀ S g`, the discrete `∫⟨∇f, ∇g⟩`.
    pub fn dirichlet_pairing(&self, f: &[f64], g: &[f64]) -> f64 {
        self.stiffness.bilinear(f, g)
    }

    /// Discrete Laplacian `Δf ≈ −M⁻¹ S f`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness.mul_vec(f);
        for (yi, m) in y.iter_mut().zip(&self.vertex_areas) {
            *yi = -*yi / m;
        }
        y
    }

    /// Vertices within geodesic distance `radius` of `center`.
    pub fn local_ball_indices(&self, center: &Vec3, radius: f64) -> Vec<usize> {
        let c = center.normalize();
        let cos_r = radius.cos();
        let mut out: Vec<usize> = self
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| {
                let d = v.dot(&c).clamp(-1.0, 1.0);
                d >= cos_r || d.acos() <= radius
            })
            .map(|(i, _)| i)
            .collect();
        if out.is_empty() {
            // Degenerate radius: fall back to the nearest vertex.
            if let Some((i, _)) = self
                .vertices
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.dot(&c).total_cmp(&b.1.dot(&c)))
            {
                if (self.vertices[i] - c).norm() < 1e-12 {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Index of the vertex closest to `point`.
    pub fn nearest_vertex(&self, point: &Vec3) -> usize {
        let c = point.normalize();
        self.vertices
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.dot(&c).total_cmp(&b.1.dot(&c)).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Replaces vertex positions keeping the connectivity.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<SphereMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::MeshMismatch);
        }
        SphereMesh::new(vertices, self.faces.clone(), self.level)
    }

    /// Whether two meshes have the same connectivity and vertex positions.
    pub fn same_as(&self, other: &SphereMesh) -> bool {
        std::ptr::eq(self, other) || (self.faces == other.faces && self.vertices == other.vertices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn counts_follow_subdivision() {
        for k in 0..4 {
            let m = build_icosphere(k).unwrap();
            assert_eq!(m.num_vertices(), 10 * 4usize.pow(k as u32) + 2);
            assert_eq!(m.num_faces(), 20 * 4usize.pow(k as u32));
            assert_eq!(m.num_vertices() + m.num_faces(), m.num_edges() + 2);
        }
        assert!(matches!(build_icosphere(9), Err(Error::Capacity { .. })));
    }

    #[test]
    fn stiffness_is_exactly_symmetric_with_constant_kernel() {
        let m = build_icosphere(2).unwrap();
        assert_eq!(m.stiffness().max_asymmetry(), 0.0);
        let ones = vec![1.0; m.num_vertices()];
        let s1 = m.stiffness().mul_vec(&ones);
        assert!(s1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn degenerate_face_is_reported() {
        let m = build_icosphere(0).unwrap();
        let mut v = m.vertices().to_vec();
        // Collapse vertex 5 onto vertex 0; every face holding both degenerates.
        v[5] = v[0];
        match SphereMesh::new(v, m.faces().to_vec(), 0) {
            Err(Error::DegenerateFace { face, .. }) => assert!(m.faces()[face].contains(&5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ball_queries() {
        let m = build_icosphere(4).unwrap();
        assert_eq!(m.local_ball_indices(&Vec3::z(), PI - 1e-9).len(), m.num_vertices());
        let c = m.vertices()[17];
        assert_eq!(m.local_ball_indices(&c, 1e-12), vec![17]);
        let half = m.local_ball_indices(&Vec3::z(), PI / 2.0).len() as f64;
        assert!((half / m.num_vertices() as f64 - 0.5).abs() < 0.05 * 0.5);
    }
}
