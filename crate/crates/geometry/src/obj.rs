//! ASCII Wavefront OBJ (`v` and `f` records only).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{GeometryError, Result};
use crate::mesh::TriMesh;

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    parse_obj(&fs::read_to_string(path)?)
}

/// Parses OBJ text. Polygons are fan-triangulated; `v/vt/vn` index forms and
/// negative (relative) indices are accepted, other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for c in p.iter_mut() {
                    let t = tok.next().ok_or_else(|| err(line, "vertex needs 3 coordinates"))?;
                    *c = t
                        .parse()
                        .map_err(|_| err(line, &format!("bad coordinate `{t}`")))?;
                    if !c.is_finite() {
                        return Err(err(line, "non-finite coordinate"));
                    }
                }
                vertices.push(p);
            }
            Some("f") => {
                let idx = tok
                    .map(|t| resolve_index(t, vertices.len(), line))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(err(line, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, faces)?.cleaned())
}

fn resolve_index(token: &str, count: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| err(line, &format!("bad face index `{token}`")))?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(err(line, &format!("face index {i} out of range")));
    }
    Ok(resolved as usize)
}

fn err(line: usize, msg: &str) -> GeometryError {
    GeometryError::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_obj(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_obj<W: Write>(mesh: &TriMesh, w: &mut W) -> Result<()> {
    for v in &mesh.vertices {
        // `{:?}` prints the shortest representation that round-trips exactly.
        writeln!(w, "v {:?} {:?} {:?}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
