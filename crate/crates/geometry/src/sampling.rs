use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GeometryError, Result};
use crate::inside::InsideTester;
use crate::mesh::{Aabb, TriMesh};
use crate::vec3::{self, Vec3};

/// Oriented points on a surface.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    /// Unit normals, one per point.
    pub normals: Vec<Vec3>,
}

impl SurfaceSamples {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(GeometryError::LengthMismatch(points.len(), normals.len()));
        }
        if points.is_empty() {
            return Err(GeometryError::EmptyPoints);
        }
        Ok(Self { points, normals })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rows `idx` of this sample set.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

/// Query points with binary inside labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OccupancySamples {
    pub points: Vec<Vec3>,
    pub labels: Vec<bool>,
    /// Box the points were drawn from.
    pub bbox: Option<Aabb>,
    /// Whether the labeling mesh was closed; labels are best effort otherwise.
    pub watertight: bool,
}

impl OccupancySamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inside_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.labels.len().max(1) as f64
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            bbox: self.bbox,
            watertight: self.watertight,
        }
    }
}

/// Area-weighted samples over the faces; normals are face normals.
/// Degenerate faces have zero weight.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    if n == 0 {
        return Err(GeometryError::InvalidParameter("sample count 0".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
        cdf.push(acc);
    }
    if mesh.faces.is_empty() || acc <= 0.0 {
        return Err(GeometryError::EmptyMesh);
    }
    let normals = mesh.face_normals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut out_normals = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen::<f64>() * acc;
        let f = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let p = vec3::add(
            vec3::add(vec3::scale(a, 1.0 - s), vec3::scale(b, s * (1.0 - r2))),
            vec3::scale(c, s * r2),
        );
        points.push(p);
        out_normals.push(normals[f]);
    }
    SurfaceSamples::new(points, out_normals)
}

/// Uniform points in `bbox` labeled by ray parity against `mesh`.
pub fn sample_occupancy(mesh: &TriMesh, bbox: Aabb, n: usize, seed: u64) -> Result<OccupancySamples> {
    let tester = InsideTester::new(mesh)?;
    let points = sample_box(bbox, n, seed);
    let labels = points.iter().map(|&q| tester.contains(q)).collect();
    Ok(OccupancySamples {
        points,
        labels,
        bbox: Some(bbox),
        watertight: tester.watertight(),
    })
}

/// Points near the surface: surface samples displaced by isotropic gaussian
/// noise of standard deviation `sigma`, clipped to `bbox`.
pub fn sample_occupancy_near_surface(
    mesh: &TriMesh,
    bbox: Aabb,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<OccupancySamples> {
    let tester = InsideTester::new(mesh)?;
    let base = sample_surface(mesh, n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let points: Vec<Vec3> = base
        .points
        .iter()
        .map(|p| {
            let mut q = *p;
            for k in 0..3 {
                q[k] = (q[k] + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(bbox.min[k], bbox.max[k]);
            }
            q
        })
        .collect();
    let labels = points.iter().map(|&q| tester.contains(q)).collect();
    Ok(OccupancySamples {
        points,
        labels,
        bbox: Some(bbox),
        watertight: tester.watertight(),
    })
}

/// Uniform points in a box.
pub fn sample_box(bbox: Aabb, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut q = [0.0; 3];
            for k in 0..3 {
                q[k] = bbox.min[k] + rng.gen::<f64>() * (bbox.max[k] - bbox.min[k]);
            }
            q
        })
        .collect()
}
