//! Binary little-endian PLY with triangle faces and per-vertex scalars.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

/// Triangle mesh with named per-vertex scalar attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyMesh {
    pub comments: Vec<String>,
    pub vertices: Vec<[f64; 3]>,
    /// Extra vertex properties, each with one value per vertex.
    pub attributes: Vec<(String, Vec<f64>)>,
    pub faces: Vec<[u32; 3]>,
}

impl PlyMesh {
    pub fn attribute(&self, name: &str) -> Option<&[f64]> {
        self.attributes.iter().find(|a| a.0 == name).map(|a| a.1.as_slice())
    }

    /// Value of the first `comment key value` line with this key.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let mut it = c.splitn(2, ' ');
            (it.next() == Some(key)).then(|| it.next().unwrap_or("").trim())
        })
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_graphic())
}

/// Serializes `mesh`; vertex coordinates and attributes are written as doubles.
pub fn write_ply(mesh: &PlyMesh) -> Result<Vec<u8>> {
    let n = mesh.vertices.len();
    for (name, values) in &mesh.attributes {
        if !valid_name(name) || values.len() != n {
            return Err(Error::Precondition(format!("bad vertex attribute {name:?}")));
        }
    }
    if mesh.comments.iter().any(|c| c.contains('\n') || c.contains('\r')) {
        return Err(Error::Precondition("PLY comments must be single lines".into()));
    }
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in &mesh.comments {
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!("element vertex {n}\n"));
    for axis in ["x", "y", "z"] {
        header.push_str(&format!("property double {axis}\n"));
    }
    for (name, _) in &mesh.attributes {
        header.push_str(&format!("property double {name}\n"));
    }
    header.push_str(&format!("element face {}\n", mesh.faces.len()));
    header.push_str("property list uchar int vertex_indices\nend_header\n");
    let mut out = header.into_bytes();
    out.reserve(n * 8 * (3 + mesh.attributes.len()) + mesh.faces.len() * 13);
    for i in 0..n {
        for x in mesh.vertices[i] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for (_, values) in &mesh.attributes {
            out.extend_from_slice(&values[i].to_le_bytes());
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            if i >= n as u32 || i > i32::MAX as u32 {
                return Err(Error::Precondition(format!("face index {i} out of range")));
            }
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Prop>,
}

enum Prop {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

/// Parses a binary little-endian PLY. Errors carry the byte offset at which
/// the input stopped making sense.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyMesh> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| Error::parse(start, "header is not UTF-8"))?;
        *pos = start + end + 1;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };
    let (at, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(Error::parse(at, "missing 'ply' magic"));
    }
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    loop {
        let (at, line) = next_line(&mut pos)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("binary_little_endian") {
                    return Err(Error::parse(at, "only binary_little_endian is supported"));
                }
                if words.next() != Some("1.0") {
                    return Err(Error::parse(at, "unsupported format version"));
                }
                format_seen = true;
            }
            Some("comment") => {
                let rest = &line.trim_start()["comment".len()..];
                comments.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| Error::parse(at, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(at, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| Error::parse(at, "property before any element"))?;
                let kind = words.next().ok_or_else(|| Error::parse(at, "property without type"))?;
                if kind == "list" {
                    let c = words.next().and_then(Scalar::parse);
                    let v = words.next().and_then(Scalar::parse);
                    let name = words.next();
                    match (c, v, name) {
                        (Some(c), Some(v), Some(name)) if c.is_integer() && v.is_integer() => {
                            el.props.push(Prop::List(name.to_string(), c, v))
                        }
                        _ => return Err(Error::parse(at, "malformed list property")),
                    }
                } else {
                    let t = Scalar::parse(kind).ok_or_else(|| Error::parse(at, format!("unknown type '{kind}'")))?;
                    let name = words.next().ok_or_else(|| Error::parse(at, "property without name"))?;
                    el.props.push(Prop::Scalar(name.to_string(), t));
                }
            }
            Some("end_header") => break,
            _ => return Err(Error::parse(at, "unrecognized header line")),
        }
    }
    if !format_seen {
        return Err(Error::parse(pos, "header lacks a format line"));
    }

    let mut mesh = PlyMesh {
        comments,
        ..Default::default()
    };
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
        match end {
            Some(e) => {
                let s = &bytes[*pos..e];
                *pos = e;
                Ok(s)
            }
            None => Err(Error::parse(*pos, "unexpected end of data")),
        }
    };
    let mut have_vertices = false;
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                have_vertices = true;
                // Reject counts that cannot fit before allocating.
                let min_row: usize = el
                    .props
                    .iter()
                    .map(|p| match p {
                        Prop::Scalar(_, t) => t.size(),
                        Prop::List(_, c, _) => c.size(),
                    })
                    .sum();
                if el.count.saturating_mul(min_row) > bytes.len() - pos {
                    return Err(Error::parse(pos, "vertex count exceeds the data"));
                }
                let mut xyz = [None, None, None];
                let mut names = Vec::new();
                for (k, p) in el.props.iter().enumerate() {
                    match p {
                        Prop::Scalar(name, _) => match name.as_str() {
                            "x" => xyz[0] = Some(k),
                            "y" => xyz[1] = Some(k),
                            "z" => xyz[2] = Some(k),
                            _ => names.push((k, name.clone())),
                        },
                        Prop::List(..) => return Err(Error::parse(pos, "list properties on vertices are not supported")),
                    }
                }
                let [Some(ix), Some(iy), Some(iz)] = xyz else {
                    return Err(Error::parse(pos, "vertex element lacks x, y or z"));
                };
                let mut row = vec![0.0; el.props.len()];
                let mut attrs: Vec<Vec<f64>> = names.iter().map(|_| Vec::with_capacity(el.count)).collect();
                mesh.vertices.reserve(el.count);
                for _ in 0..el.count {
                    for (k, p) in el.props.iter().enumerate() {
                        if let Prop::Scalar(_, t) = p {
                            let at = pos;
                            row[k] = t.read(take(&mut pos, t.size())?);
                            if !row[k].is_finite() {
                                return Err(Error::parse(at, "non-finite vertex value"));
                            }
                        }
                    }
                    mesh.vertices.push([row[ix], row[iy], row[iz]]);
                    for (a, (k, _)) in attrs.iter_mut().zip(&names) {
                        a.push(row[*k]);
                    }
                }
                mesh.attributes = names.into_iter().map(|(_, n)| n).zip(attrs).collect();
            }
            "face" => {
                if el.count > (bytes.len() - pos) {
                    return Err(Error::parse(pos, "face count exceeds the data"));
                }
                mesh.faces.reserve(el.count);
                for _ in 0..el.count {
                    let mut face = None;
                    for p in &el.props {
                        match p {
                            Prop::List(name, c, v) => {
                                let at = pos;
                                let len = c.read(take(&mut pos, c.size())?);
                                if !(0.0..=255.0).contains(&len) {
                                    return Err(Error::parse(at, "bad list length"));
                                }
                                let len = len as usize;
                                let mut idx = Vec::with_capacity(len);
                                for _ in 0..len {
                                    let at = pos;
                                    let i = v.read(take(&mut pos, v.size())?);
                                    if i < 0.0 || i > u32::MAX as f64 {
                                        return Err(Error::parse(at, "negative or oversized vertex index"));
                                    }
                                    idx.push(i as u32);
                                }
                                if name == "vertex_indices" || name == "vertex_index" {
                                    if len != 3 {
                                        return Err(Error::parse(at, "only triangular faces are supported"));
                                    }
                                    face = Some([idx[0], idx[1], idx[2]]);
                                }
                            }
                            Prop::Scalar(_, t) => {
                                take(&mut pos, t.size())?;
                            }
                        }
                    }
                    let face = face.ok_or_else(|| Error::parse(pos, "face element lacks vertex_indices"))?;
                    mesh.faces.push(face);
                }
            }
            _ => {
                // Skip unknown elements; every row takes at least one byte.
                if el.props.is_empty() {
                    continue;
                }
                if el.count > bytes.len() - pos {
                    return Err(Error::parse(pos, format!("{} count exceeds the data", el.name)));
                }
                for _ in 0..el.count {
                    for p in &el.props {
                        match p {
                            Prop::Scalar(_, t) => {
                                take(&mut pos, t.size())?;
                            }
                            Prop::List(_, c, v) => {
                                let at = pos;
                                let len = c.read(take(&mut pos, c.size())?);
                                if !(0.0..=1e9).contains(&len) {
                                    return Err(Error::parse(at, "bad list length"));
                                }
                                take(&mut pos, len as usize * v.size())?;
                            }
                        }
                    }
                }
            }
        }
    }
    if !have_vertices {
        return Err(Error::parse(pos, "no vertex element"));
    }
    let n = mesh.vertices.len() as u32;
    if let Some(f) = mesh.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
        return Err(Error::parse(pos, format!("face {f:?} references a missing vertex")));
    }
    if pos != bytes.len() {
        return Err(Error::parse(pos, "trailing bytes after the last element"));
    }
    Ok(mesh)
}
