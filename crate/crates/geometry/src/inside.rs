//! Inside/outside classification by ray parity.

use crate::error::{GeometryError, Result};
use crate::mesh::{Aabb, TriMesh};
use crate::vec3::{self, Vec3};

/// Fixed, deliberately non-axis-aligned ray directions. Three rays with a
/// majority vote make grazing hits on edges and vertices harmless.
const RAYS: [Vec3; 3] = [
    [0.992_345_1, 0.122_510_7, 0.015_309_2],
    [-0.045_413_2, 0.987_716_0, 0.149_499_6],
    [0.131_938_1, -0.067_053_8, 0.988_987_3],
];

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    bbox: Aabb,
    /// Leaf: `[start, end)` into `order`. Inner: children at `left` and `left + 1`.
    start: usize,
    end: usize,
    left: Option<usize>,
}

/// Ray-parity inside test over a bounding-volume hierarchy.
#[derive(Clone, Debug)]
pub struct InsideTester {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    watertight: bool,
}

impl InsideTester {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        let watertight = mesh.is_watertight();
        if !watertight {
            log::warn!("inside test on an open mesh; labels are best effort");
        }
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut t = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
            watertight,
        };
        let root = t.make_node(0, t.tris.len());
        t.nodes.push(root);
        t.split(0);
        Ok(t)
    }

    pub fn watertight(&self) -> bool {
        self.watertight
    }

    fn make_node(&self, start: usize, end: usize) -> Node {
        let mut b = tri_box(&self.tris[self.order[start]]);
        for &i in &self.order[start + 1..end] {
            b = b.union(&tri_box(&self.tris[i]));
        }
        Node {
            bbox: b,
            start,
            end,
            left: None,
        }
    }

    fn split(&mut self, node: usize) {
        let (start, end) = (self.nodes[node].start, self.nodes[node].end);
        if end - start <= LEAF_SIZE {
            return;
        }
        let e = self.nodes[node].bbox.extent();
        let axis = if e[0] >= e[1] && e[0] >= e[2] {
            0
        } else if e[1] >= e[2] {
            1
        } else {
            2
        };
        let tris = &self.tris;
        let centroid = |i: usize| tris[i][0][axis] + tris[i][1][axis] + tris[i][2][axis];
        let mid = (start + end) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroid(a).total_cmp(&centroid(b)));
        let left = self.nodes.len();
        let l = self.make_node(start, mid);
        let r = self.make_node(mid, end);
        self.nodes.push(l);
        self.nodes.push(r);
        self.nodes[node].left = Some(left);
        self.split(left);
        self.split(left + 1);
    }

    /// Parity of crossings along direction `d`.
    fn crossings(&self, q: Vec3, d: Vec3) -> usize {
        let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
        let mut count = 0;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !ray_hits_box(q, inv, &node.bbox) {
                continue;
            }
            match node.left {
                Some(l) => {
                    stack.push(l);
                    stack.push(l + 1);
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        if ray_hits_triangle(q, d, &self.tris[i]) {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    /// Majority vote over three ray parities.
    pub fn contains(&self, q: Vec3) -> bool {
        let votes = RAYS
            .iter()
            .filter(|&&d| self.crossings(q, d) % 2 == 1)
            .count();
        votes >= 2
    }
}

/// Labels each query point; the flag reports whether the mesh was closed.
pub fn occupancy_labels(mesh: &TriMesh, queries: &[Vec3]) -> Result<(Vec<bool>, bool)> {
    let t = InsideTester::new(mesh)?;
    Ok((queries.iter().map(|&q| t.contains(q)).collect(), t.watertight()))
}

fn tri_box(t: &[Vec3; 3]) -> Aabb {
    Aabb::from_points(t).expect("triangle has points")
}

fn ray_hits_box(o: Vec3, inv: Vec3, b: &Aabb) -> bool {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for k in 0..3 {
        let t1 = (b.min[k] - o[k]) * inv[k];
        let t2 = (b.max[k] - o[k]) * inv[k];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

/// Moller-Trumbore, counting hits strictly in front of the origin.
fn ray_hits_triangle(o: Vec3, d: Vec3, t: &[Vec3; 3]) -> bool {
    let e1 = vec3::sub(t[1], t[0]);
    let e2 = vec3::sub(t[2], t[0]);
    let p = vec3::cross(d, e2);
    let det = vec3::dot(e1, p);
    if det == 0.0 {
        return false;
    }
    let inv = 1.0 / det;
    let s = vec3::sub(o, t[0]);
    let u = vec3::dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = vec3::cross(s, e1);
    let v = vec3::dot(d, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    vec3::dot(e2, q) * inv > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Primitive;

    #[test]
    fn sphere_center_and_far_point() {
        let m = Primitive::Sphere { radius: 1.0 }.mesh(16).unwrap();
        let t = InsideTester::new(&m).unwrap();
        assert!(t.watertight());
        assert!(t.contains([0.0, 0.0, 0.0]));
        assert!(!t.contains([2.0, 0.0, 0.0]));
    }

    #[test]
    fn torus_hole_is_outside() {
        let m = Primitive::Torus { major: 0.6, minor: 0.25 }.mesh(24).unwrap();
        let t = InsideTester::new(&m).unwrap();
        assert!(!t.contains([0.0, 0.0, 0.0]));
        assert!(t.contains([0.6, 0.0, 0.0]));
        assert!(t.contains([0.0, -0.6, 0.1]));
    }

    #[test]
    fn open_mesh_is_flagged() {
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (_, closed) = occupancy_labels(&m, &[[0.1, 0.1, 1.0]]).unwrap();
        assert!(!closed);
    }
}
