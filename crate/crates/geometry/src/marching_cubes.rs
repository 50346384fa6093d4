//! Iso-surface extraction on a regular grid.

use std::collections::HashMap;

use crate::error::{GeometryError, Result};
use crate::mesh::{Aabb, TriMesh};
use crate::tables::{CORNERS, EDGES, EDGE_TABLE, TRI_TABLE};
use crate::vec3::{self, Vec3};

/// Sample lattice of `cells[k] + 1` points per axis spanning `bbox`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub bbox: Aabb,
    pub cells: [usize; 3],
}

impl Lattice {
    pub fn new(bbox: Aabb, cells: [usize; 3]) -> Result<Self> {
        if cells.iter().any(|&c| c < 1) {
            return Err(GeometryError::InvalidParameter(
                "marching cubes needs at least 2 samples per axis".into(),
            ));
        }
        if (0..3).any(|k| !(bbox.max[k] > bbox.min[k])) {
            return Err(GeometryError::InvalidParameter("empty bounding box".into()));
        }
        Ok(Self { bbox, cells })
    }

    /// Same number of cells on every axis.
    pub fn cubic(bbox: Aabb, cells: usize) -> Result<Self> {
        Self::new(bbox, [cells; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn len(&self) -> usize {
        let d = self.dims();
        d[0] * d[1] * d[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear index with x varying fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let d = self.dims();
        i + d[0] * (j + d[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.bbox.extent();
        [
            self.bbox.min[0] + e[0] * i as f64 / self.cells[0] as f64,
            self.bbox.min[1] + e[1] * j as f64 / self.cells[1] as f64,
            self.bbox.min[2] + e[2] * k as f64 / self.cells[2] as f64,
        ]
    }

    /// All lattice points in [`Lattice::index`] order.
    pub fn points(&self) -> Vec<Vec3> {
        let d = self.dims();
        let mut out = Vec::with_capacity(self.len());
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    out.push(self.point(i, j, k));
                }
            }
        }
        out
    }

    pub fn cell_size(&self) -> Vec3 {
        let e = self.bbox.extent();
        [
            e[0] / self.cells[0] as f64,
            e[1] / self.cells[1] as f64,
            e[2] / self.cells[2] as f64,
        ]
    }
}

/// Extracts the `level` set of `field` sampled on `lattice`.
pub fn marching_cubes(field: impl Fn(Vec3) -> f64, level: f64, lattice: Lattice) -> Result<TriMesh> {
    let values: Vec<f64> = lattice.points().into_iter().map(field).collect();
    marching_cubes_values(&values, level, lattice)
}

/// Like [`marching_cubes`] for values already sampled in lattice order.
///
/// Faces are wound so that their normals point toward lower field values,
/// i.e. outward when the field is an occupancy.
pub fn marching_cubes_values(values: &[f64], level: f64, lattice: Lattice) -> Result<TriMesh> {
    if values.len() != lattice.len() {
        return Err(GeometryError::LengthMismatch(values.len(), lattice.len()));
    }
    if values.iter().any(|v| !v.is_finite()) || !level.is_finite() {
        return Err(GeometryError::NonFinite("marching cubes field"));
    }
    let [nx, ny, nz] = lattice.cells;
    let mut vertex_of_edge: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut ids = [0usize; 8];
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    ids[c] = lattice.index(i + off[0], j + off[1], k + off[2]);
                    vals[c] = values[ids[c]];
                    if vals[c] < level {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut edge_vertex = |e: usize| -> usize {
                    let [a, b] = EDGES[e];
                    let (lo, hi) = if ids[a] < ids[b] { (a, b) } else { (b, a) };
                    let axis = (0..3).find(|&x| CORNERS[lo][x] != CORNERS[hi][x]).unwrap_or(0);
                    *vertex_of_edge.entry(ids[lo] * 3 + axis).or_insert_with(|| {
                        let (plo, phi) = (corner_point(&lattice, i, j, k, lo), corner_point(&lattice, i, j, k, hi));
                        let t = (level - vals[lo]) / (vals[hi] - vals[lo]);
                        vertices.push(vec3::lerp(plo, phi, t));
                        vertices.len() - 1
                    })
                };
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let a = edge_vertex(tri[0] as usize);
                    let b = edge_vertex(tri[1] as usize);
                    let c = edge_vertex(tri[2] as usize);
                    faces.push([a, b, c]);
                }
            }
        }
    }
    Ok(TriMesh::new(vertices, faces)?.cleaned().compacted())
}

fn corner_point(l: &Lattice, i: usize, j: usize, k: usize, c: usize) -> Vec3 {
    let o = CORNERS[c];
    l.point(i + o[0], j + o[1], k + o[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_empty() {
        let l = Lattice::cubic(Aabb::centered_cube(1.0), 8).unwrap();
        assert!(marching_cubes(|_| 0.0, 0.2, l).unwrap().is_empty());
        assert!(marching_cubes(|_| 1.0, 0.2, l).unwrap().is_empty());
    }

    #[test]
    fn sphere_faces_point_outward() {
        let l = Lattice::cubic(Aabb::centered_cube(1.0), 16).unwrap();
        let m = marching_cubes(|q| 1.0 - vec3::norm(q), 0.47, l).unwrap();
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        for f in 0..m.faces.len() {
            let [a, _, _] = m.triangle(f);
            assert!(vec3::dot(m.face_normal(f), a) > 0.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Lattice::cubic(Aabb::centered_cube(1.0), 0).is_err());
        let l = Lattice::cubic(Aabb::centered_cube(1.0), 2).unwrap();
        assert!(marching_cubes(|_| f64::NAN, 0.2, l).is_err());
        assert!(marching_cubes_values(&[0.0; 3], 0.2, l).is_err());
    }
}
