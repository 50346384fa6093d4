//! Chamfer-L1 and normal-consistency evaluation of both extraction routes.

use std::fmt::Write as _;

use hsurf_geometry::{chamfer_l1, normal_consistency, sample_surface, SurfaceSamples, TriMesh};

use crate::dataset::{shape_seed, Dataset, ShapeData};
use crate::error::Result;
use crate::extract::{extract_atlas, extract_implicit, BranchKind, Extraction};
use crate::networks::HybridModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub grid_resolution: usize,
    pub mc_resolution: usize,
    pub bbox_padding: f64,
    /// Points sampled from each mesh.
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            grid_resolution: 10,
            mc_resolution: 64,
            bbox_padding: 0.1,
            samples: 20_000,
            seed: 0,
        }
    }
}

/// One shape, one route.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub shape: String,
    pub branch: BranchKind,
    /// `None` when extraction or sampling failed.
    pub chamfer_l1: Option<f64>,
    pub normal_consistency: Option<f64>,
    pub seconds: f64,
    pub vertices: usize,
}

impl EvalRow {
    pub fn ok(&self) -> bool {
        self.chamfer_l1.is_some()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BranchMeans {
    pub chamfer_l1: f64,
    pub normal_consistency: f64,
    pub seconds: f64,
    /// Rows that contributed.
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Means over the successful rows of `branch`.
    pub fn means(&self, branch: BranchKind) -> BranchMeans {
        let ok: Vec<&EvalRow> = self.rows.iter().filter(|r| r.branch == branch && r.ok()).collect();
        let n = ok.len();
        if n == 0 {
            return BranchMeans::default();
        }
        let mean = |f: &dyn Fn(&EvalRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n as f64;
        BranchMeans {
            chamfer_l1: mean(&|r| r.chamfer_l1.unwrap_or(0.0)),
            normal_consistency: mean(&|r| r.normal_consistency.unwrap_or(0.0)),
            seconds: mean(&|r| r.seconds),
            count: n,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("shape,branch,chamfer_l1,normal_consistency,seconds,vertices,ok\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:?},{},{}",
                r.shape,
                r.branch.name(),
                opt(r.chamfer_l1),
                opt(r.normal_consistency),
                r.seconds,
                r.vertices,
                u8::from(r.ok())
            );
        }
        for b in [BranchKind::Atlas, BranchKind::Implicit] {
            let m = self.means(b);
            let _ = writeln!(
                out,
                "mean,{},{:?},{:?},{:?},,{}",
                b.name(),
                m.chamfer_l1,
                m.normal_consistency,
                m.seconds,
                m.count
            );
        }
        out
    }
}

/// Scores `mesh` against `gt` with equal-size area-weighted samples.
pub fn score_mesh(mesh: &TriMesh, gt: &SurfaceSamples, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let pred = sample_surface(mesh, samples, seed)?;
    Ok((
        chamfer_l1(&pred.points, &gt.points)?,
        normal_consistency(&pred, gt)?,
    ))
}

fn row(shape: &str, branch: BranchKind, ex: Result<Extraction>, gt: &SurfaceSamples, s: &EvalSettings) -> EvalRow {
    let (chamfer, normal, seconds, vertices) = match ex {
        Ok(ex) => match score_mesh(&ex.mesh, gt, s.samples, s.seed ^ 0x5eed) {
            Ok((c, n)) => (Some(c), Some(n), ex.seconds, ex.mesh.vertices.len()),
            Err(e) => {
                log::warn!("{shape}/{}: scoring failed: {e}", branch.name());
                (None, None, ex.seconds, ex.mesh.vertices.len())
            }
        },
        Err(e) => {
            log::warn!("{shape}/{}: extraction failed: {e}", branch.name());
            (None, None, 0.0, 0)
        }
    };
    EvalRow {
        shape: shape.to_string(),
        branch,
        chamfer_l1: chamfer,
        normal_consistency: normal,
        seconds,
        vertices,
    }
}

/// Ground-truth samples used for scoring one shape.
pub fn reference_samples(index: usize, shape: &ShapeData, s: &EvalSettings) -> Result<SurfaceSamples> {
    Ok(sample_surface(&shape.mesh, s.samples, shape_seed(&shape.name, index, s.seed) ^ 0xe7a1)?)
}

/// Extracts both routes for every shape of `dataset` and scores them.
pub fn evaluate(model: &HybridModel, dataset: &Dataset, s: &EvalSettings) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let bbox = crate::extract::implicit_bbox(s.bbox_padding);
    for (i, shape) in dataset.shapes.iter().enumerate() {
        let gt = reference_samples(i, shape, s)?;
        let la = model.atlas_branch.latent_plain(i, &shape.cloud);
        let lo = model.occ_branch.latent_plain(i, &shape.cloud);
        let atlas = la.and_then(|l| extract_atlas(model, &l, s.grid_resolution));
        report.rows.push(row(&shape.name, BranchKind::Atlas, atlas, &gt, s));
        let implicit = lo.and_then(|l| extract_implicit(model, &l, s.mc_resolution, bbox));
        report.rows.push(row(&shape.name, BranchKind::Implicit, implicit, &gt, s));
    }
    Ok(report)
}
