use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::TriangleMesh;
use crate::error::{HsrError, Result};
use crate::fsutil::write_atomic;

/// ASCII OBJ with `v` and 1-based `f` records.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, w: &mut W) -> Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Binary little-endian PLY with float vertices and `uchar`/`int` face lists.
pub fn write_ply<W: Write>(mesh: &TriangleMesh, w: &mut W) -> Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        for c in v {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for i in t {
            w.write_all(&(*i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn is_ply(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Writes OBJ or PLY by extension through a temporary file.
pub fn write_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    if is_ply(path) {
        write_ply(mesh, &mut bytes)?;
    } else {
        write_obj(mesh, &mut bytes)?;
    }
    write_atomic(path, &bytes)
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    if is_ply(path) {
        read_ply(path)
    } else {
        read_obj(path)
    }
}

/// Reads `v` and `f` records; polygons are fan-triangulated and
/// `v/vt/vn` index forms accepted.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path)?;
    let mut mesh = TriangleMesh::default();
    let err = |line: usize, reason: String| HsrError::MeshParse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| err(n + 1, e.to_string())))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err(n + 1, "vertex needs three coordinates".into()));
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|s| {
                        let first = s.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| err(n + 1, format!("bad index {s:?}")))?;
                        let count = mesh.vertices.len() as i64;
                        let resolved = if i < 0 { count + i } else { i - 1 };
                        if resolved < 0 || resolved >= count {
                            return Err(err(n + 1, format!("index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(n + 1, "face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Reads the binary little-endian layout written by [`write_ply`]; vertex
/// coordinates may be `float` or `double`.
pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let err = |line: usize, reason: &str| HsrError::MeshParse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let (mut vertices, mut faces, mut double) = (0usize, 0usize, false);
    let mut line_no = 0;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(err(line_no, "missing end_header"));
        }
        line_no += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "binary_little_endian" => {
                return Err(err(line_no, "only binary_little_endian is supported"))
            }
            ["element", "vertex", n] => vertices = n.parse().map_err(|_| err(line_no, "bad count"))?,
            ["element", "face", n] => faces = n.parse().map_err(|_| err(line_no, "bad count"))?,
            ["property", "double", _] => double = true,
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::default();
    for _ in 0..vertices {
        let mut v = [0.0; 3];
        for c in &mut v {
            *c = if double {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            } else {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                f32::from_le_bytes(b) as f64
            };
        }
        mesh.vertices.push(v);
    }
    for _ in 0..faces {
        let mut count = [0u8; 1];
        r.read_exact(&mut count)?;
        let mut idx = Vec::with_capacity(count[0] as usize);
        for _ in 0..count[0] {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            let i = i32::from_le_bytes(b);
            if i < 0 || i as usize >= vertices {
                return Err(err(line_no, "face index out of range"));
            }
            idx.push(i as u32);
        }
        for k in 1..idx.len().saturating_sub(1) {
            mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    Ok(mesh)
}
