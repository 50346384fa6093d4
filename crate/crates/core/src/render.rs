//! Normal-map renders of both extraction routes and the ground truth, and
//! a per-vertex view of how far atlas points sit from the occupancy level.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hsurf_autodiff::Mat;
use hsurf_geometry::TriMesh;
use hsurf_raster::{normalize_to_unit_cube, render_images, Camera, NormalMapImage, RenderSettings};

use crate::dataset::ShapeData;
use crate::error::Result;
use crate::extract::{extract_atlas, extract_implicit, implicit_bbox};
use crate::networks::HybridModel;
use crate::nn::points_to_mat;

/// Renders `mesh` from every camera after unit-cube normalization. An
/// empty mesh renders as background.
pub fn render_mesh(mesh: &TriMesh, cameras: &[Camera], settings: &RenderSettings) -> Result<Vec<NormalMapImage>> {
    if mesh.is_empty() {
        return Ok(cameras
            .iter()
            .map(|c| NormalMapImage::filled(c.width, c.height, settings.background))
            .collect());
    }
    let m = normalize_to_unit_cube(mesh)?;
    Ok(render_images(&m.vertices, &m.faces, cameras, settings)?)
}

/// `|g(p) - tau|` at each point for the occupancy latent `latent`.
pub fn level_deviation(model: &HybridModel, latent: &Mat, points: &[[f64; 3]]) -> Vec<f64> {
    let probs = model.occupancy.eval_plain(&model.occ_branch.params, latent, &points_to_mat(points));
    probs.iter().map(|g| (g - model.tau()).abs()).collect()
}

/// Blue at zero deviation, red at the largest possible one.
pub fn deviation_color(dev: f64, tau: f64) -> [f64; 3] {
    let t = (dev / tau.max(1.0 - tau)).clamp(0.0, 1.0);
    [t, 0.2 * (1.0 - t), 1.0 - t]
}

/// OBJ with `v x y z r g b` vertex colors.
pub fn write_colored_obj(mesh: &TriMesh, colors: &[[f64; 3]], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (v, c) in mesh.vertices.iter().zip(colors) {
        writeln!(w, "v {} {} {} {:.4} {:.4} {:.4}", v[0], v[1], v[2], c[0], c[1], c[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub atlas: Vec<NormalMapImage>,
    pub implicit: Vec<NormalMapImage>,
    pub ground_truth: Vec<NormalMapImage>,
    /// Per atlas-vertex `|g(f(p)) - tau|`.
    pub deviation: Vec<f64>,
    pub atlas_mesh: TriMesh,
}

impl RenderOutput {
    pub fn mean_deviation(&self) -> f64 {
        self.deviation.iter().sum::<f64>() / self.deviation.len().max(1) as f64
    }

    /// Writes `{route}_{view:02}.png` for each route and
    /// `consistency.obj` into `dir`, returning the written paths.
    pub fn save(&self, dir: &Path, tau: f64) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (route, images) in [("atlas", &self.atlas), ("implicit", &self.implicit), ("gt", &self.ground_truth)] {
            for (v, img) in images.iter().enumerate() {
                let path = dir.join(format!("{route}_{v:02}.png"));
                img.save_png(&path)?;
                files.push(path);
            }
        }
        let colors: Vec<[f64; 3]> = self.deviation.iter().map(|&d| deviation_color(d, tau)).collect();
        let obj = dir.join("consistency.obj");
        write_colored_obj(&self.atlas_mesh, &colors, &obj)?;
        files.push(obj);
        Ok(files)
    }
}

/// Cameras, shading and extraction resolutions for [`render_shape`].
#[derive(Clone, Debug)]
pub struct RenderSpec {
    pub cameras: Vec<Camera>,
    pub settings: RenderSettings,
    pub grid_resolution: usize,
    pub mc_resolution: usize,
    pub bbox_padding: f64,
}

/// Extracts both routes for shape `index` and renders them next to the
/// ground truth, which goes through the same path as the training
/// references.
pub fn render_shape(
    model: &HybridModel,
    index: usize,
    shape: &ShapeData,
    spec: &RenderSpec,
) -> Result<RenderOutput> {
    let (cameras, settings) = (&spec.cameras, &spec.settings);
    let la = model.atlas_branch.latent_plain(index, &shape.cloud)?;
    let lo = model.occ_branch.latent_plain(index, &shape.cloud)?;
    let atlas = extract_atlas(model, &la, spec.grid_resolution)?.mesh;
    let implicit = extract_implicit(model, &lo, spec.mc_resolution, implicit_bbox(spec.bbox_padding))?.mesh;
    let ground_truth = render_images(&shape.mesh.vertices, &shape.mesh.faces, cameras, settings)?;
    Ok(RenderOutput {
        atlas: render_mesh(&atlas, cameras, settings)?,
        implicit: render_mesh(&implicit, cameras, settings)?,
        ground_truth,
        deviation: level_deviation(model, &lo, &atlas.vertices),
        atlas_mesh: atlas,
    })
}
