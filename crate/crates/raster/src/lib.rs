//! Differentiable normal-map rendering.
//!
//! Meshes are drawn with an orthographic camera; each front-facing triangle is
//! colored by its view-space face normal `(n + 1) / 2` and blended softly so
//! that pixel colors are smooth functions of the vertex positions. Back faces
//! are culled. The renderer is exposed both as plain functions and as a tape
//! operation for image-space training losses.

mod camera;
mod error;
mod image;
mod op;
mod render;

pub use camera::{make_view_grid, Camera, ViewBasis, GRID_AZIMUTHS_DEG, GRID_ELEVATIONS_DEG};
pub use error::{RasterError, Result};
pub use image::NormalMapImage;
pub use op::{normalize_to_unit_cube_var, render_var};
pub use render::{
    backward, render_hard, render_images, render_view, render_views, RenderSettings, ViewCache,
};

use hsurf_geometry::TriMesh;

/// Translates and uniformly scales `mesh` so its bounding box is centered at
/// the origin with largest side 1.
pub fn normalize_to_unit_cube(mesh: &TriMesh) -> Result<TriMesh> {
    Ok(mesh.normalized(1.0)?)
}
