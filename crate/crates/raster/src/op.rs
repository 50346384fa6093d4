//! Tape integration: rendering and unit-cube normalization as differentiable ops.

use std::sync::Arc;

use hsurf_autodiff::{AutodiffError, CustomOp, Mat, Var};
use hsurf_geometry::vec3::Vec3;
use ndarray::Array2;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{RasterError, Result};
use crate::image::NormalMapImage;
use crate::render::{backward, render_views, RenderSettings, ViewCache};

struct RenderOp {
    vertices: Vec<Vec3>,
    faces: Arc<Vec<[usize; 3]>>,
    cameras: Vec<Camera>,
    settings: RenderSettings,
    caches: Vec<ViewCache>,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "render_normal_map"
    }

    fn backward(&self, _inputs: &[&Mat], _output: &Mat, grad_output: &Mat) -> Vec<Option<Mat>> {
        let per_view: Vec<Vec<Vec3>> = (0..self.cameras.len())
            .into_par_iter()
            .map(|v| {
                let g: Vec<Vec3> = grad_output
                    .row(v)
                    .as_slice()
                    .map(|s| s.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
                    .unwrap_or_else(|| {
                        let r: Vec<f64> = grad_output.row(v).to_vec();
                        r.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
                    });
                backward(
                    &self.vertices,
                    &self.faces,
                    &self.cameras[v],
                    &self.settings,
                    &self.caches[v],
                    &g,
                )
            })
            .collect();
        // Fixed view order keeps the reduction deterministic.
        let mut out = Array2::zeros((self.vertices.len(), 3));
        for g in &per_view {
            for (i, gi) in g.iter().enumerate() {
                for k in 0..3 {
                    out[[i, k]] += gi[k];
                }
            }
        }
        vec![Some(out)]
    }
}

/// Renders an `N x 3` vertex var from every camera. The result is a
/// `views x (H * W * 3)` var of pixel colors; images are also returned.
pub fn render_var<'t>(
    vertices: Var<'t>,
    faces: Arc<Vec<[usize; 3]>>,
    cameras: &[Camera],
    settings: &RenderSettings,
) -> Result<(Var<'t>, Vec<NormalMapImage>)> {
    let shape = vertices.shape();
    if shape.1 != 3 {
        return Err(AutodiffError::ShapeMismatch {
            op: "render",
            lhs: shape,
            rhs: (shape.0, 3),
        }
        .into());
    }
    let first = cameras
        .first()
        .ok_or_else(|| RasterError::InvalidParameter("no cameras".into()))?;
    if cameras
        .iter()
        .any(|c| c.width != first.width || c.height != first.height)
    {
        return Err(RasterError::InvalidParameter("cameras differ in resolution".into()));
    }
    let value = vertices.value();
    let verts: Vec<Vec3> = value.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    let views = render_views(&verts, &faces, cameras, settings)?;
    let npix = first.width * first.height * 3;
    let mut out = Array2::zeros((cameras.len(), npix));
    let mut images = Vec::with_capacity(views.len());
    let mut caches = Vec::with_capacity(views.len());
    for (v, (img, cache)) in views.into_iter().enumerate() {
        for (i, x) in img.flat().into_iter().enumerate() {
            out[[v, i]] = x;
        }
        images.push(img);
        caches.push(cache);
    }
    let op = RenderOp {
        vertices: verts,
        faces,
        cameras: cameras.to_vec(),
        settings: *settings,
        caches,
    };
    let var = vertices.tape().custom(&[vertices], out, Box::new(op))?;
    Ok((var, images))
}

/// Centers the bounding box of an `N x 3` point var at the origin and scales
/// its largest side to 1, on the tape.
pub fn normalize_to_unit_cube_var(points: Var<'_>) -> Result<Var<'_>> {
    let lo = points.min_rows()?;
    let hi = points.max_rows()?;
    let extent = hi.sub(lo)?.max_cols()?;
    if !(extent.item() > 0.0) {
        return Err(RasterError::InvalidParameter("zero-extent point set".into()));
    }
    let center = lo.add(hi)?.scale(0.5)?;
    Ok(points.sub(center)?.div(extent)?)
}
