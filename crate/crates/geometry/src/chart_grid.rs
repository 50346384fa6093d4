//! Regular uv grids on the unit square and meshes built from chart maps.

use crate::error::{GeometryError, Result};
use crate::mesh::TriMesh;
use crate::vec3::Vec3;

/// `R x R` lattice of uv corners on `[0,1]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChartGrid {
    resolution: usize,
}

impl ChartGrid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(GeometryError::InvalidParameter(format!(
                "chart grid resolution {resolution} < 2"
            )));
        }
        Ok(Self { resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn vertices_per_chart(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn triangles_per_chart(&self) -> usize {
        2 * (self.resolution - 1) * (self.resolution - 1)
    }

    /// Corner `(i, j)` at `(i/(R-1), j/(R-1))`, stored at `i * R + j`.
    pub fn uv(&self) -> Vec<[f64; 2]> {
        let r = self.resolution;
        let step = (r - 1) as f64;
        (0..r)
            .flat_map(|i| (0..r).map(move |j| [i as f64 / step, j as f64 / step]))
            .collect()
    }

    /// Two triangles per grid cell, wound so that `d/du x d/dv` is the front side.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let r = self.resolution;
        let id = |i: usize, j: usize| i * r + j;
        let mut out = Vec::with_capacity(self.triangles_per_chart());
        for i in 0..r - 1 {
            for j in 0..r - 1 {
                out.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                out.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        out
    }
}

/// Maps the grid through each of `charts` chart functions and concatenates
/// the pieces. Seams stay unwelded and degenerate faces are kept, so the
/// result always has `charts * 2 * (R-1)^2` triangles.
pub fn atlas_to_mesh<F>(charts: usize, grid: ChartGrid, mut chart_map: F) -> Result<TriMesh>
where
    F: FnMut(usize, &[[f64; 2]]) -> Result<Vec<Vec3>>,
{
    let uv = grid.uv();
    let tris = grid.triangles();
    let mut vertices = Vec::with_capacity(charts * uv.len());
    let mut faces = Vec::with_capacity(charts * tris.len());
    for k in 0..charts {
        let pts = chart_map(k, &uv)?;
        if pts.len() != uv.len() {
            return Err(GeometryError::LengthMismatch(pts.len(), uv.len()));
        }
        let off = vertices.len();
        vertices.extend(pts);
        faces.extend(tris.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }
    TriMesh::new(vertices, faces)
}
