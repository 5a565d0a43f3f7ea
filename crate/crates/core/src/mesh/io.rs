use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, Result, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

/// Reads an OBJ or PLY file. Polygons are fan-triangulated around their first
/// vertex; triangles that repeat a vertex are dropped with a warning.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    if !path.exists() {
        return Err(MeshError::FileNotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    match format {
        MeshFormat::Obj => parse_obj(&String::from_utf8_lossy(&bytes)),
        MeshFormat::Ply => parse_ply(&bytes),
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        reason: reason.into(),
    }
}

fn finish(vertices: Vec<Point3<f64>>, polygons: Vec<(usize, Vec<usize>)>) -> Result<TriangleMesh> {
    let mut faces = Vec::new();
    for (line, poly) in polygons {
        if let Some(&bad) = poly.iter().find(|&&i| i >= vertices.len()) {
            return Err(parse_err(
                line,
                format!("vertex index {} out of range ({} vertices)", bad + 1, vertices.len()),
            ));
        }
        for k in 1..poly.len() - 1 {
            let tri = [poly[0], poly[k], poly[k + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                log::warn!("line {line}: dropping degenerate triangle {tri:?}");
                continue;
            }
            faces.push(tri);
        }
    }
    if faces.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    TriangleMesh::new(vertices, faces)
}

/// Parses ASCII OBJ `v` and `f` records; everything else is ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut polygons = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(line_no, format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(parse_err(line_no, "vertex needs three coordinates"));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tokens {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("bad face index {t:?}: {e}")))?;
                    let resolved = match i {
                        0 => return Err(parse_err(line_no, "face index 0 is invalid in OBJ")),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(parse_err(line_no, format!("relative index {i} before first vertex")));
                            }
                            vertices.len() - back
                        }
                    };
                    poly.push(resolved);
                }
                if poly.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least three vertices"));
                }
                polygons.push((line_no, poly));
            }
            _ => {}
        }
    }
    finish(vertices, polygons)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parses ASCII or binary little-endian PLY with `vertex` (x, y, z) and
/// `face` (vertex_indices) elements. Other elements and properties are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };

    line_no += 1;
    if next_line(&mut pos).as_deref().map(str::trim) != Some("ply") {
        return Err(parse_err(1, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let line = next_line(&mut pos).ok_or_else(|| parse_err(line_no, "header ended without end_header"))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(parse_err(line_no, format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(line_no, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(line_no, "property before element"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| parse_err(line_no, format!("unknown type {count}")))?,
                    item: Scalar::parse(item).ok_or_else(|| parse_err(line_no, format!("unknown type {item}")))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(line_no, "property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| parse_err(line_no, format!("unknown type {ty}")))?,
                });
            }
            _ => return Err(parse_err(line_no, format!("unrecognized header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(line_no, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut polygons = Vec::new();
    let body = &bytes[pos..];
    let mut cursor = 0usize;
    let mut ascii_lines = if binary {
        None
    } else {
        Some(String::from_utf8_lossy(body).lines().map(str::to_owned).collect::<Vec<_>>().into_iter())
    };

    for el in &elements {
        let xyz: Vec<Option<usize>> = ["x", "y", "z"]
            .iter()
            .map(|axis| el.props.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == axis)))
            .collect();
        for _ in 0..el.count {
            line_no += 1;
            let mut scalars: Vec<f64> = Vec::with_capacity(el.props.len());
            let mut lists: Vec<Vec<f64>> = Vec::new();
            let mut list_names: Vec<&str> = Vec::new();
            if let Some(lines) = ascii_lines.as_mut() {
                let line = lines.next().ok_or_else(|| parse_err(line_no, "unexpected end of data"))?;
                let mut toks = line.split_whitespace();
                let mut next_num = || -> Result<f64> {
                    toks.next()
                        .ok_or_else(|| parse_err(line_no, "too few values"))?
                        .parse::<f64>()
                        .map_err(|e| parse_err(line_no, format!("bad number: {e}")))
                };
                for p in &el.props {
                    match p {
                        Property::Scalar { .. } => scalars.push(next_num()?),
                        Property::List { name, .. } => {
                            let n = next_num()? as usize;
                            let items = (0..n).map(|_| next_num()).collect::<Result<Vec<_>>>()?;
                            scalars.push(f64::NAN);
                            lists.push(items);
                            list_names.push(name);
                        }
                    }
                }
            } else {
                let mut take = |ty: Scalar| -> Result<f64> {
                    let end = cursor + ty.size();
                    if end > body.len() {
                        return Err(parse_err(line_no, "binary data truncated"));
                    }
                    let v = ty.read_le(&body[cursor..end]);
                    cursor = end;
                    Ok(v)
                };
                for p in &el.props {
                    match p {
                        Property::Scalar { ty, .. } => scalars.push(take(*ty)?),
                        Property::List { name, count, item } => {
                            let n = take(*count)? as usize;
                            let items = (0..n).map(|_| take(*item)).collect::<Result<Vec<_>>>()?;
                            scalars.push(f64::NAN);
                            lists.push(items);
                            list_names.push(name);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let get = |k: usize| {
                        xyz[k]
                            .map(|i| scalars[i])
                            .ok_or_else(|| parse_err(line_no, "vertex element lacks x/y/z"))
                    };
                    vertices.push(Point3::new(get(0)?, get(1)?, get(2)?));
                }
                "face" => {
                    let idx = list_names
                        .iter()
                        .position(|n| *n == "vertex_indices" || *n == "vertex_index")
                        .ok_or_else(|| parse_err(line_no, "face element lacks vertex_indices"))?;
                    let poly: Vec<usize> = lists[idx]
                        .iter()
                        .map(|&v| {
                            if v < 0.0 || v.fract() != 0.0 {
                                Err(parse_err(line_no, format!("bad vertex index {v}")))
                            } else {
                                Ok(v as usize)
                            }
                        })
                        .collect::<Result<_>>()?;
                    if poly.len() < 3 {
                        return Err(parse_err(line_no, "face needs at least three vertices"));
                    }
                    polygons.push((line_no, poly));
                }
                _ => {}
            }
        }
    }
    finish(vertices, polygons)
}

/// Debug dump: one small octahedron per marker position.
pub fn write_marker_obj(markers: &[Point3<f64>], radius: f64) -> String {
    let mut out = String::from("# keypoint markers\n");
    let dirs = [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let tris = [
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    for (m, p) in markers.iter().enumerate() {
        let _ = writeln!(out, "o marker_{m}");
        for d in dirs {
            let _ = writeln!(out, "v {} {} {}", p.x + d[0] * radius, p.y + d[1] * radius, p.z + d[2] * radius);
        }
        let base = m * 6 + 1;
        for t in tris {
            let _ = writeln!(out, "f {} {} {}", base + t[0], base + t[1], base + t[2]);
        }
    }
    out
}
