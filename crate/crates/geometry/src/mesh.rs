use std::collections::HashMap;

use crate::error::{GeometryError, Result};
use crate::vec3::{self, Vec3};

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Cube `[-h, h]^3`.
    pub fn centered_cube(half: f64) -> Self {
        Self::new([-half; 3], [half; 3])
    }

    pub fn from_points(points: &[Vec3]) -> Option<Self> {
        let first = *points.first()?;
        let mut b = Self::new(first, first);
        for p in &points[1..] {
            for k in 0..3 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        Some(b)
    }

    pub fn extent(&self) -> Vec3 {
        vec3::sub(self.max, self.min)
    }

    pub fn center(&self) -> Vec3 {
        vec3::scale(vec3::add(self.min, self.max), 0.5)
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    /// Grows every side by `frac` of the largest extent.
    pub fn padded(&self, frac: f64) -> Self {
        let pad = frac * self.max_extent();
        Self::new(
            vec3::sub(self.min, [pad; 3]),
            vec3::add(self.max, [pad; 3]),
        )
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn union(&self, o: &Aabb) -> Self {
        let mut b = *self;
        for k in 0..3 {
            b.min[k] = b.min[k].min(o.min[k]);
            b.max[k] = b.max[k].max(o.max[k]);
        }
        b
    }
}

/// Indexed triangle mesh with counter-clockwise (outward) winding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validates indices and finiteness. Degenerate faces are kept; see [`TriMesh::cleaned`].
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("mesh vertices"));
        }
        let count = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= count) {
                return Err(GeometryError::InvalidIndex {
                    face: fi,
                    index,
                    count,
                });
            }
        }
        Ok(Self { vertices, faces })
    }

    /// Drops faces with repeated indices or zero area.
    pub fn cleaned(mut self) -> Self {
        let verts = &self.vertices;
        self.faces.retain(|f| {
            f[0] != f[1]
                && f[1] != f[2]
                && f[0] != f[2]
                && vec3::norm(face_cross(verts, f)) > 0.0
        });
        self
    }

    /// Removes vertices not referenced by any face, preserving order.
    pub fn compacted(self) -> Self {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let faces = self
            .faces
            .iter()
            .map(|f| {
                f.map(|i| {
                    if remap[i] == usize::MAX {
                        remap[i] = vertices.len();
                        vertices.push(self.vertices[i]);
                    }
                    remap[i]
                })
            })
            .collect();
        Self { vertices, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unit normal of face `f` (zero for a degenerate face).
    pub fn face_normal(&self, f: usize) -> Vec3 {
        vec3::normalize(face_cross(&self.vertices, &self.faces[f]))
    }

    pub fn face_normals(&self) -> Vec<Vec3> {
        (0..self.faces.len()).map(|f| self.face_normal(f)).collect()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * vec3::norm(face_cross(&self.vertices, &self.faces[f]))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn bbox(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        self.directed_edges().keys().map(|&(a, b)| (a.min(b), a.max(b))).collect::<std::collections::HashSet<_>>().len()
    }

    /// V - E + F over vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let used: std::collections::HashSet<usize> = self.faces.iter().flatten().copied().collect();
        used.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Every directed edge appears once and is matched by its reverse.
    pub fn is_watertight(&self) -> bool {
        let edges = self.directed_edges();
        !self.faces.is_empty()
            && edges
                .iter()
                .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    fn directed_edges(&self) -> HashMap<(usize, usize), u32> {
        let mut edges = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                *edges.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| vec3::add(v, t)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Translates and uniformly scales so the bounding box is centered at the
    /// origin with largest side `size`.
    pub fn normalized(&self, size: f64) -> Result<Self> {
        let b = self.bbox().ok_or(GeometryError::EmptyMesh)?;
        let ext = b.max_extent();
        if ext <= 0.0 {
            return Err(GeometryError::InvalidParameter(
                "mesh has zero extent".into(),
            ));
        }
        let c = b.center();
        let s = size / ext;
        Ok(Self {
            vertices: self
                .vertices
                .iter()
                .map(|&v| vec3::scale(vec3::sub(v, c), s))
                .collect(),
            faces: self.faces.clone(),
        })
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }
}

fn face_cross(v: &[Vec3], f: &[usize; 3]) -> Vec3 {
    let a = v[f[0]];
    vec3::cross(vec3::sub(v[f[1]], a), vec3::sub(v[f[2]], a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_topology() {
        let t = tetra();
        assert!(t.is_watertight());
        assert_eq!(t.euler_characteristic(), 2);
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        assert!(t.flipped().signed_volume() < 0.0);
        assert_eq!(t.face_normal(0), [0.0, 0.0, -1.0]);
    }

    #[test]
    fn invalid_index_is_rejected() {
        let err = TriMesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidIndex { face: 0, index: 1, .. }));
    }

    #[test]
    fn cleanup_drops_degenerate_faces() {
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 1, 3], [0, 0, 3]],
        )
        .unwrap()
        .cleaned();
        assert_eq!(m.faces, vec![[0, 1, 3]]);
    }

    #[test]
    fn normalization_centers_and_scales() {
        let m = tetra().translated([1.0, 1.0, 1.0]);
        let n = m.normalized(1.0).unwrap();
        let b = n.bbox().unwrap();
        assert_eq!(b.min, [-0.5; 3]);
        assert_eq!(b.max, [0.5; 3]);
    }
}
