//! Mesh file I/O: ASCII OBJ and PLY (ascii 1.0 / binary_little_endian 1.0).
//!
//! OBJ carries full f64 precision. PLY stores positions as float32 and
//! colors as uchar per the format contract, so PLY round trips are exact
//! only for values representable in those types.

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use nalgebra::Vector3;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    /// Guess from the file extension; defaults to OBJ.
    pub fn from_path(path: &Path) -> MeshFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => MeshFormat::Ply,
            _ => MeshFormat::Obj,
        }
    }
}

/// Load a mesh, validating all invariants. Vertex order is preserved.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    match MeshFormat::from_path(path) {
        MeshFormat::Obj => load_obj(path),
        MeshFormat::Ply => load_ply(path),
    }
}

/// Save a mesh; format chosen from the extension.
pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match MeshFormat::from_path(path) {
        MeshFormat::Obj => save_obj(mesh, path),
        MeshFormat::Ply => save_ply_binary(mesh, path),
    }
}

fn load_obj(path: &Path) -> Result<TriMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut positions = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = lineno + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = |name: &str| -> Result<f64> {
                    it.next()
                        .ok_or_else(|| {
                            Error::parse(path, format!("line {lineno}"), format!("missing {name}"))
                        })?
                        .parse::<f64>()
                        .map_err(|e| {
                            Error::parse(path, format!("line {lineno}"), format!("bad {name}: {e}"))
                        })
                };
                let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
                positions.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(4);
                for tok in it {
                    // accept v, v/vt, v//vn, v/vt/vn; only the vertex index is used
                    let v = tok.split('/').next().unwrap_or("");
                    let i: i64 = v.parse().map_err(|e| {
                        Error::parse(path, format!("line {lineno}"), format!("bad face index '{tok}': {e}"))
                    })?;
                    if i < 1 {
                        return Err(Error::parse(
                            path,
                            format!("line {lineno}"),
                            format!("face index {i} not positive (only 1-based indices supported)"),
                        ));
                    }
                    idx.push((i - 1) as u32);
                }
                if idx.len() != 3 {
                    return Err(Error::parse(
                        path,
                        format!("line {lineno}"),
                        format!("face with {} vertices (triangles only)", idx.len()),
                    ));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {} // comments, empty lines, unsupported records
        }
    }
    TriMesh::new(positions, faces, None)
}

fn save_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let r: Result<()> = (|| {
        for p in mesh.positions() {
            // {:?} prints the shortest representation that round-trips f64
            writeln!(w, "v {:?} {:?} {:?}", p.x, p.y, p.z)?;
        }
        for f in mesh.faces() {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e));
    r
}

/// PLY header description collected while parsing.
struct PlyHeader {
    binary: bool,
    vertex_count: usize,
    face_count: usize,
    vertex_props: Vec<(String, String)>, // (type, name)
    header_len: usize,
}

fn parse_ply_header(path: &Path, data: &[u8]) -> Result<PlyHeader> {
    let mut pos = 0usize;
    let mut lineno = 0usize;
    let next_line = |pos: &mut usize, lineno: usize| -> Result<String> {
        let start = *pos;
        while *pos < data.len() && data[*pos] != b'\n' {
            *pos += 1;
        }
        if *pos >= data.len() {
            return Err(Error::parse(path, format!("line {lineno}"), "unterminated header"));
        }
        let line = String::from_utf8_lossy(&data[start..*pos]).trim_end_matches('\r').to_string();
        *pos += 1;
        Ok(line)
    };

    lineno += 1;
    if next_line(&mut pos, lineno)? != "ply" {
        return Err(Error::parse(path, "line 1", "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut vertex_count = None;
    let mut face_count = None;
    let mut vertex_props = Vec::new();
    let mut current_element = String::new();
    loop {
        lineno += 1;
        let line = next_line(&mut pos, lineno)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", "1.0"] => binary = Some(false),
            ["format", "binary_little_endian", "1.0"] => binary = Some(true),
            ["format", other, ..] => {
                return Err(Error::parse(
                    path,
                    format!("line {lineno}"),
                    format!("unsupported PLY format '{other}'"),
                ))
            }
            ["comment", ..] => {}
            ["element", name, count] => {
                current_element = name.to_string();
                let count: usize = count.parse().map_err(|e| {
                    Error::parse(path, format!("line {lineno}"), format!("bad element count: {e}"))
                })?;
                match current_element.as_str() {
                    "vertex" => vertex_count = Some(count),
                    "face" => face_count = Some(count),
                    _ => {}
                }
            }
            ["property", "list", ..] if current_element == "face" => {}
            ["property", ty, name] if current_element == "vertex" => {
                vertex_props.push((ty.to_string(), name.to_string()));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            [] => {}
            _ => {
                return Err(Error::parse(
                    path,
                    format!("line {lineno}"),
                    format!("unrecognized header line '{line}'"),
                ))
            }
        }
    }
    let binary = binary
        .ok_or_else(|| Error::parse(path, "header", "missing 'format' line"))?;
    Ok(PlyHeader {
        binary,
        vertex_count: vertex_count.unwrap_or(0),
        face_count: face_count.unwrap_or(0),
        vertex_props,
        header_len: pos,
    })
}

fn prop_size(path: &Path, ty: &str) -> Result<usize> {
    Ok(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => {
            return Err(Error::parse(
                path,
                "header",
                format!("unsupported property type '{ty}'"),
            ))
        }
    })
}

fn load_ply(path: &Path) -> Result<TriMesh> {
    let mut data = Vec::new();
    File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_ply_header(path, &data)?;

    // locate x,y,z and optional red,green,blue among vertex properties
    let find = |name: &str| header.vertex_props.iter().position(|(_, n)| n == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::parse(path, "header", "vertex element lacks x,y,z properties")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let mut positions = Vec::with_capacity(header.vertex_count);
    let mut colors: Option<Vec<[f64; 3]>> = rgb.map(|_| Vec::with_capacity(header.vertex_count));
    let mut faces = Vec::with_capacity(header.face_count);

    if header.binary {
        let mut off = header.header_len;
        let prop_sizes: Vec<usize> = header
            .vertex_props
            .iter()
            .map(|(t, _)| prop_size(path, t))
            .collect::<Result<_>>()?;
        let stride: usize = prop_sizes.iter().sum();
        let prop_offsets: Vec<usize> = prop_sizes
            .iter()
            .scan(0usize, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let read_scalar = |data: &[u8], at: usize, ty: &str| -> Result<f64> {
            let need = prop_size(path, ty)?;
            if at + need > data.len() {
                return Err(Error::format(path, at as u64, "truncated vertex data"));
            }
            Ok(match ty {
                "float" | "float32" => f32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64,
                "double" | "float64" => f64::from_le_bytes(data[at..at + 8].try_into().unwrap()),
                "uchar" | "uint8" => data[at] as f64,
                "char" | "int8" => data[at] as i8 as f64,
                "short" | "int16" => i16::from_le_bytes(data[at..at + 2].try_into().unwrap()) as f64,
                "ushort" | "uint16" => u16::from_le_bytes(data[at..at + 2].try_into().unwrap()) as f64,
                "int" | "int32" => i32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64,
                "uint" | "uint32" => u32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64,
                _ => unreachable!(),
            })
        };
        for _ in 0..header.vertex_count {
            if off + stride > data.len() {
                return Err(Error::format(path, off as u64, "truncated vertex data"));
            }
            let get = |i: usize| read_scalar(&data, off + prop_offsets[i], &header.vertex_props[i].0);
            positions.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
            if let (Some((r, g, b)), Some(cs)) = (rgb, colors.as_mut()) {
                cs.push([get(r)? / 255.0, get(g)? / 255.0, get(b)? / 255.0]);
            }
            off += stride;
        }
        for _ in 0..header.face_count {
            if off + 1 > data.len() {
                return Err(Error::format(path, off as u64, "truncated face data"));
            }
            let n = data[off] as usize;
            off += 1;
            if n != 3 {
                return Err(Error::format(
                    path,
                    off as u64 - 1,
                    format!("face with {n} vertices (triangles only)"),
                ));
            }
            if off + 12 > data.len() {
                return Err(Error::format(path, off as u64, "truncated face data"));
            }
            let mut f = [0u32; 3];
            for k in 0..3 {
                f[k] = u32::from_le_bytes(data[off..off + 4].try_into().unwrap());
                off += 4;
            }
            faces.push(f);
        }
    } else {
        let body = &data[header.header_len..];
        let text = String::from_utf8_lossy(body);
        let mut lines = text.lines().enumerate();
        for _ in 0..header.vertex_count {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::parse(path, "vertex data", "file ends before all vertices read")
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < header.vertex_props.len() {
                return Err(Error::parse(
                    path,
                    format!("body line {}", lineno + 1),
                    "too few vertex properties",
                ));
            }
            let get = |i: usize| -> Result<f64> {
                toks[i].parse::<f64>().map_err(|e| {
                    Error::parse(path, format!("body line {}", lineno + 1), format!("bad number: {e}"))
                })
            };
            positions.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
            if let (Some((r, g, b)), Some(cs)) = (rgb, colors.as_mut()) {
                cs.push([get(r)? / 255.0, get(g)? / 255.0, get(b)? / 255.0]);
            }
        }
        for _ in 0..header.face_count {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::parse(path, "face data", "file ends before all faces read")
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                return Err(Error::parse(path, format!("body line {}", lineno + 1), "empty face line"));
            }
            if toks[0] != "3" || toks.len() < 4 {
                return Err(Error::parse(
                    path,
                    format!("body line {}", lineno + 1),
                    "face is not a triangle",
                ));
            }
            let mut f = [0u32; 3];
            for k in 0..3 {
                f[k] = toks[k + 1].parse().map_err(|e| {
                    Error::parse(path, format!("body line {}", lineno + 1), format!("bad index: {e}"))
                })?;
            }
            faces.push(f);
        }
    }
    TriMesh::new(positions, faces, colors)
}

/// Write binary_little_endian PLY with float32 positions and, if present,
/// uchar colors.
pub fn save_ply_binary(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let has_colors = mesh.colors().is_some();
    let r: std::io::Result<()> = (|| {
        write!(w, "ply\nformat binary_little_endian 1.0\n")?;
        write!(w, "element vertex {}\n", mesh.vertex_count())?;
        write!(w, "property float x\nproperty float y\nproperty float z\n")?;
        if has_colors {
            write!(w, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
        }
        write!(w, "element face {}\n", mesh.face_count())?;
        write!(w, "property list uchar uint vertex_indices\nend_header\n")?;
        for (i, p) in mesh.positions().iter().enumerate() {
            for c in [p.x, p.y, p.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
            if let Some(cols) = mesh.colors() {
                for c in cols[i] {
                    w.write_all(&[(c.clamp(0.0, 1.0) * 255.0).round() as u8])?;
                }
            }
        }
        for f in mesh.faces() {
            w.write_all(&[3u8])?;
            for &i in f {
                w.write_all(&i.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    r.map_err(|e| Error::io(path, e))
}
