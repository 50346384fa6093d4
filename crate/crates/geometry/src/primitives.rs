//! Procedural watertight primitives centered at the origin.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{GeometryError, Result};
use crate::mesh::TriMesh;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Axis-aligned box with the given side lengths.
    Box { size: Vec3 },
    /// Torus around the z axis.
    Torus { major: f64, minor: f64 },
    /// Capped cylinder along the z axis.
    Cylinder { radius: f64, height: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Sphere { .. } => "sphere",
            Primitive::Box { .. } => "box",
            Primitive::Torus { .. } => "torus",
            Primitive::Cylinder { .. } => "cylinder",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius } => radius > 0.0,
            Primitive::Box { size } => size.iter().all(|&s| s > 0.0),
            Primitive::Torus { major, minor } => minor > 0.0 && major > minor,
            Primitive::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
        };
        let finite = match *self {
            Primitive::Sphere { radius } => radius.is_finite(),
            Primitive::Box { size } => size.iter().all(|s| s.is_finite()),
            Primitive::Torus { major, minor } => major.is_finite() && minor.is_finite(),
            Primitive::Cylinder { radius, height } => radius.is_finite() && height.is_finite(),
        };
        if ok && finite {
            Ok(())
        } else {
            Err(GeometryError::InvalidParameter(format!("{self:?}")))
        }
    }

    /// Exact inside test of the analytic solid (not the tessellation).
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Primitive::Sphere { radius } => p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < radius * radius,
            Primitive::Box { size } => (0..3).all(|k| p[k].abs() < 0.5 * size[k]),
            Primitive::Torus { major, minor } => {
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                rho * rho + p[2] * p[2] < minor * minor
            }
            Primitive::Cylinder { radius, height } => {
                p[0] * p[0] + p[1] * p[1] < radius * radius && p[2].abs() < 0.5 * height
            }
        }
    }

    /// Triangulates the primitive. `tessellation` is the number of segments
    /// around each circular direction (or subdivisions per box edge).
    pub fn mesh(&self, tessellation: usize) -> Result<TriMesh> {
        self.validate()?;
        if tessellation < 3 {
            return Err(GeometryError::InvalidParameter(format!(
                "tessellation {tessellation} < 3"
            )));
        }
        let t = tessellation;
        let mesh = match *self {
            Primitive::Sphere { radius } => sphere(radius, t),
            Primitive::Box { size } => box_mesh(size, t),
            Primitive::Torus { major, minor } => torus(major, minor, t),
            Primitive::Cylinder { radius, height } => cylinder(radius, height, t),
        };
        Ok(TriMesh::new(mesh.0, mesh.1)?.cleaned())
    }
}

pub fn make_primitive(kind: Primitive, tessellation: usize) -> Result<TriMesh> {
    kind.mesh(tessellation)
}

type Raw = (Vec<Vec3>, Vec<[usize; 3]>);

/// Pushes the two triangles of quad `a b c d` (counter-clockwise).
fn quad(faces: &mut Vec<[usize; 3]>, a: usize, b: usize, c: usize, d: usize) {
    faces.push([a, b, c]);
    faces.push([a, c, d]);
}

fn sphere(r: f64, t: usize) -> Raw {
    let (seg, stacks) = (t, t);
    let mut v = vec![[0.0, 0.0, r]];
    for i in 1..stacks {
        let th = PI * i as f64 / stacks as f64;
        for j in 0..seg {
            let ph = 2.0 * PI * j as f64 / seg as f64;
            v.push([r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()]);
        }
    }
    let south = v.len();
    v.push([0.0, 0.0, -r]);
    let ring = |i: usize, j: usize| 1 + (i - 1) * seg + j % seg;
    let mut f = Vec::new();
    for j in 0..seg {
        f.push([0, ring(1, j), ring(1, j + 1)]);
        for i in 1..stacks - 1 {
            quad(&mut f, ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1));
        }
        f.push([ring(stacks - 1, j), south, ring(stacks - 1, j + 1)]);
    }
    (v, f)
}

fn box_mesh(size: Vec3, n: usize) -> Raw {
    let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
    let mut v = Vec::new();
    let mut f = Vec::new();
    let mut vid = |l: [usize; 3], v: &mut Vec<Vec3>| {
        *lookup.entry(l).or_insert_with(|| {
            v.push([
                size[0] * (l[0] as f64 / n as f64 - 0.5),
                size[1] * (l[1] as f64 / n as f64 - 0.5),
                size[2] * (l[2] as f64 / n as f64 - 0.5),
            ]);
            v.len() - 1
        })
    };
    for k in 0..3 {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let mut c = [[0usize; 3]; 4];
                    for (q, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                        c[q][k] = side;
                        c[q][a] = i + di;
                        c[q][b] = j + dj;
                    }
                    let ids: Vec<usize> = c.iter().map(|&l| vid(l, &mut v)).collect();
                    if side == n {
                        quad(&mut f, ids[0], ids[1], ids[2], ids[3]);
                    } else {
                        quad(&mut f, ids[0], ids[3], ids[2], ids[1]);
                    }
                }
            }
        }
    }
    (v, f)
}

fn torus(big: f64, small: f64, t: usize) -> Raw {
    let mut v = Vec::with_capacity(t * t);
    for i in 0..t {
        let th = 2.0 * PI * i as f64 / t as f64;
        for j in 0..t {
            let ph = 2.0 * PI * j as f64 / t as f64;
            let rho = big + small * ph.cos();
            v.push([rho * th.cos(), rho * th.sin(), small * ph.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % t) * t + j % t;
    let mut f = Vec::with_capacity(2 * t * t);
    for i in 0..t {
        for j in 0..t {
            quad(&mut f, id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
        }
    }
    (v, f)
}

fn cylinder(r: f64, h: f64, t: usize) -> Raw {
    let bands = (t / 4).max(1);
    let mut v = Vec::new();
    for k in 0..=bands {
        let z = h * (k as f64 / bands as f64 - 0.5);
        for i in 0..t {
            let th = 2.0 * PI * i as f64 / t as f64;
            v.push([r * th.cos(), r * th.sin(), z]);
        }
    }
    let id = |i: usize, k: usize| k * t + i % t;
    let mut f = Vec::new();
    for k in 0..bands {
        for i in 0..t {
            quad(&mut f, id(i, k), id(i + 1, k), id(i + 1, k + 1), id(i, k + 1));
        }
    }
    let bottom = v.len();
    v.push([0.0, 0.0, -0.5 * h]);
    let top = v.len();
    v.push([0.0, 0.0, 0.5 * h]);
    for i in 0..t {
        f.push([bottom, id(i + 1, 0), id(i, 0)]);
        f.push([top, id(i, bands), id(i + 1, bands)]);
    }
    (v, f)
}
