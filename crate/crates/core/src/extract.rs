//! Surface extraction from a trained model and the timing benchmark.

use std::time::Instant;

use hsurf_autodiff::Mat;
use hsurf_geometry::{atlas_to_mesh, marching_cubes_values, Aabb, ChartGrid, Lattice, TriMesh};
use ndarray::{s, Array2};

use crate::error::{CoreError, Result};
use crate::networks::HybridModel;
use crate::trainer::grid_uv_mat;

/// Occupancy queries are evaluated in blocks of this many rows.
const QUERY_BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    Atlas,
    Implicit,
}

impl BranchKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Atlas => "atlas",
            Self::Implicit => "implicit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "atlas" => Some(Self::Atlas),
            "implicit" => Some(Self::Implicit),
            _ => None,
        }
    }
}

/// Mesh and the wall time spent on decoder queries and meshing.
#[derive(Clone, Debug)]
pub struct Extraction {
    pub mesh: TriMesh,
    pub seconds: f64,
}

/// Region searched by the implicit route: the unit cube around the origin
/// grown by the occupancy sampling padding.
pub fn implicit_bbox(padding: f64) -> Aabb {
    Aabb::centered_cube(0.5).padded(padding)
}

/// Maps the corners of an `R x R` grid on every chart.
pub fn extract_atlas(model: &HybridModel, latent: &Mat, grid_resolution: usize) -> Result<Extraction> {
    let start = Instant::now();
    let grid = ChartGrid::new(grid_resolution)?;
    let uv = grid_uv_mat(grid);
    let set = &model.atlas_branch.params;
    let per_chart = (0..model.atlas.len())
        .map(|c| model.atlas.eval_plain(set, latent, c, &uv))
        .collect::<Result<Vec<Mat>>>()?;
    let mesh = atlas_to_mesh(per_chart.len(), grid, |c, _| {
        Ok(per_chart[c].rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    })?;
    Ok(Extraction {
        mesh,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Occupancy probabilities at every lattice point, in lattice order.
pub fn occupancy_grid(model: &HybridModel, latent: &Mat, lattice: &Lattice) -> Mat {
    let points = lattice.points();
    let set = &model.occ_branch.params;
    let mut out = Array2::zeros((points.len(), 1));
    for start in (0..points.len()).step_by(QUERY_BLOCK) {
        let end = (start + QUERY_BLOCK).min(points.len());
        let q = Array2::from_shape_fn((end - start, 3), |(i, k)| points[start + i][k]);
        let p = model.occupancy.eval_plain(set, latent, &q);
        out.slice_mut(s![start..end, ..]).assign(&p);
    }
    out
}

/// Marching cubes of the occupancy at level `tau` on a `resolution^3` cell
/// lattice over `bbox`.
pub fn extract_implicit(
    model: &HybridModel,
    latent: &Mat,
    resolution: usize,
    bbox: Aabb,
) -> Result<Extraction> {
    let start = Instant::now();
    let lattice = Lattice::cubic(bbox, resolution)?;
    let values = occupancy_grid(model, latent, &lattice);
    let mesh = marching_cubes_values(values.as_slice().expect("standard layout"), model.tau(), lattice)?;
    if mesh.is_empty() {
        log::warn!("implicit extraction found no level set at tau = {}", model.tau());
    }
    Ok(Extraction {
        mesh,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean and standard deviation of the timed repetitions of one route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
    pub vertices: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub atlas: Timing,
    pub implicit: Timing,
    pub grid_resolution: usize,
    pub mc_resolution: usize,
    pub repetitions: usize,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.implicit.mean / self.atlas.mean
    }

    pub fn to_csv(&self) -> String {
        format!(
            "route,resolution,vertices,mean_seconds,std_seconds,repetitions\n\
             atlas,{},{},{:?},{:?},{}\nimplicit,{},{},{:?},{:?},{}\n",
            self.grid_resolution,
            self.atlas.vertices,
            self.atlas.mean,
            self.atlas.std,
            self.repetitions,
            self.mc_resolution,
            self.implicit.vertices,
            self.implicit.mean,
            self.implicit.std,
            self.repetitions
        )
    }
}

fn timing(samples: &[f64], vertices: usize) -> Timing {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Timing {
        mean,
        std: var.sqrt(),
        vertices,
    }
}

/// Smallest marching-cubes resolution whose vertex count reaches the
/// atlas budget, or the one closest to it if none is within a factor 2.
pub fn matched_mc_resolution(
    model: &HybridModel,
    latent: &Mat,
    target_vertices: usize,
    bbox: Aabb,
) -> Result<usize> {
    let mut best = (f64::INFINITY, 16);
    for res in (8..=128).step_by(4) {
        let n = extract_implicit(model, latent, res, bbox)?.mesh.vertices.len();
        if n == 0 {
            continue;
        }
        let ratio = (n as f64 / target_vertices as f64).ln().abs();
        if ratio < best.0 {
            best = (ratio, res);
        }
        if n >= target_vertices {
            break;
        }
    }
    Ok(best.1)
}

/// Times both routes `repetitions` times after one discarded warm-up run.
/// The marching-cubes resolution is matched to the atlas vertex count.
pub fn bench_extract(
    model: &HybridModel,
    atlas_latent: &Mat,
    occ_latent: &Mat,
    grid_resolution: usize,
    bbox: Aabb,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 5 {
        return Err(CoreError::InvalidArgument("at least 5 repetitions are required".into()));
    }
    let atlas_vertices = extract_atlas(model, atlas_latent, grid_resolution)?.mesh.vertices.len();
    let mc_resolution = matched_mc_resolution(model, occ_latent, atlas_vertices, bbox)?;
    let mut at = Vec::new();
    let mut it = Vec::new();
    let mut implicit_vertices = 0;
    for rep in 0..=repetitions {
        let a = extract_atlas(model, atlas_latent, grid_resolution)?;
        let i = extract_implicit(model, occ_latent, mc_resolution, bbox)?;
        implicit_vertices = i.mesh.vertices.len();
        if rep > 0 {
            at.push(a.seconds);
            it.push(i.seconds);
        }
    }
    Ok(BenchReport {
        atlas: timing(&at, atlas_vertices),
        implicit: timing(&it, implicit_vertices),
        grid_resolution,
        mc_resolution,
        repetitions,
    })
}
