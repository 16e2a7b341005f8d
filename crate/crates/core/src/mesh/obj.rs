use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Load an ASCII OBJ file (`v` and triangular `f` records only).
pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path)?;
    parse_obj(&text)
}

/// Parse OBJ text. Normals, texture coordinates, groups and materials are
/// ignored; face indices may use the `v/vt/vn` forms and negative indices.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<&str> = parts.collect();
                if coords.len() < 3 {
                    return Err(parse_err(line, "vertex needs three coordinates"));
                }
                let mut p = [0.0; 3];
                for (k, tok) in coords.iter().take(3).enumerate() {
                    p[k] = tok
                        .parse::<f64>()
                        .map_err(|_| parse_err(line, &format!("bad coordinate `{tok}`")))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let toks: Vec<&str> = parts.collect();
                if toks.len() != 3 {
                    return Err(parse_err(
                        line,
                        &format!("only triangles are supported, got {} indices", toks.len()),
                    ));
                }
                let mut f = [0usize; 3];
                for (k, tok) in toks.iter().enumerate() {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head
                        .parse()
                        .map_err(|_| parse_err(line, &format!("bad face index `{tok}`")))?;
                    f[k] = match idx {
                        0 => return Err(parse_err(line, "face index 0 (OBJ indices are 1-based)")),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(parse_err(line, "relative index before first vertex"));
                            }
                            vertices.len() - back
                        }
                    };
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

/// Render a mesh as OBJ text. Coordinates use the shortest representation
/// that parses back to the same `f64`.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.face_count() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_obj(mesh))?;
    Ok(())
}
