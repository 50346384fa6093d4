use hsurf_geometry::vec3::{self, Vec3};

use crate::error::{RasterError, Result};

/// Orthographic camera on a viewing sphere around the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub width: usize,
    pub height: usize,
    /// The frame covers `[-half_extent, half_extent]` on both image axes.
    pub half_extent: f64,
}

/// Right-handed view basis: `right x up = toward`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewBasis {
    pub right: Vec3,
    pub up: Vec3,
    /// Unit vector from the origin toward the camera.
    pub toward: Vec3,
}

impl ViewBasis {
    /// Image-plane coordinates and depth (larger is closer to the camera).
    #[inline]
    pub fn project(&self, p: Vec3) -> Vec3 {
        [
            vec3::dot(p, self.right),
            vec3::dot(p, self.up),
            vec3::dot(p, self.toward),
        ]
    }

    /// Inverse of [`ViewBasis::project`] for direction vectors.
    #[inline]
    pub fn unproject(&self, v: Vec3) -> Vec3 {
        vec3::add(
            vec3::add(vec3::scale(self.right, v[0]), vec3::scale(self.up, v[1])),
            vec3::scale(self.toward, v[2]),
        )
    }
}

impl Camera {
    pub fn new(azimuth: f64, elevation: f64, width: usize, height: usize, half_extent: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidParameter("empty image".into()));
        }
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(RasterError::InvalidParameter(format!("half extent {half_extent}")));
        }
        if !(elevation.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(RasterError::InvalidParameter(format!(
                "elevation {elevation} must lie strictly between the poles"
            )));
        }
        Ok(Self {
            azimuth,
            elevation,
            width,
            height,
            half_extent,
        })
    }

    pub fn basis(&self) -> ViewBasis {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        let toward = [ce * sa, se, ce * ca];
        let right = vec3::normalize(vec3::cross([0.0, 1.0, 0.0], toward));
        let up = vec3::cross(toward, right);
        ViewBasis { right, up, toward }
    }

    pub fn pixel_size(&self) -> [f64; 2] {
        [
            2.0 * self.half_extent / self.width as f64,
            2.0 * self.half_extent / self.height as f64,
        ]
    }

    /// Image-plane center of pixel (`row`, `col`); row 0 is the top.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let [sx, sy] = self.pixel_size();
        [
            -self.half_extent + (col as f64 + 0.5) * sx,
            self.half_extent - (row as f64 + 0.5) * sy,
        ]
    }
}

pub const GRID_ELEVATIONS_DEG: [f64; 5] = [-60.0, -30.0, 0.0, 30.0, 60.0];
pub const GRID_AZIMUTHS_DEG: [f64; 5] = [0.0, 72.0, 144.0, 216.0, 288.0];

/// 5 elevations x 5 azimuths, elevation-major.
pub fn make_view_grid(width: usize, height: usize, half_extent: f64) -> Result<Vec<Camera>> {
    let mut out = Vec::with_capacity(25);
    for &el in &GRID_ELEVATIONS_DEG {
        for &az in &GRID_AZIMUTHS_DEG {
            out.push(Camera::new(az.to_radians(), el.to_radians(), width, height, half_extent)?);
        }
    }
    Ok(out)
}
