//! Soft rasterization of per-face normal colors.
//!
//! For a pixel center `p` and a front-facing triangle `j` with projected
//! corners, `d_j` is the distance from `p` to the triangle boundary, positive
//! inside. Coverage is `D_j = sigmoid(d_j / sigma)` with `sigma` given in
//! normalized frame units (the frame spans `[-1, 1]`). Triangles blend by
//! `w_j = D_j exp((z_j - z_max) / gamma)` where `z_j` is the depth at `p` from
//! clamped barycentric interpolation. The pixel is
//! `alpha * sum(w_j C_j) / sum(w_j) + (1 - alpha) * background` with
//! `alpha = 1 - prod(1 - D_j)`.

use hsurf_geometry::vec3::{self, Vec3};
use rayon::prelude::*;

use crate::camera::{Camera, ViewBasis};
use crate::error::{RasterError, Result};
use crate::image::NormalMapImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    /// Edge softness in normalized frame units.
    pub sigma: f64,
    /// Depth softness in object units.
    pub gamma: f64,
    pub background: [f64; 3],
    /// Fragments with `d < -cutoff * sigma` are dropped.
    pub cutoff: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sigma: 1.0 / 64.0,
            gamma: 1e-2,
            background: [0.5; 3],
            cutoff: 8.0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.gamma > 0.0 && self.cutoff > 0.0) {
            return Err(RasterError::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Per-pixel contribution of one triangle.
#[derive(Clone, Copy, Debug)]
struct Fragment {
    tri: u32,
    /// Coverage `D_j`.
    cov: f64,
    depth: f64,
}

/// Forward state needed for the backward pass of one view.
#[derive(Clone, Debug)]
pub struct ViewCache {
    basis: ViewBasis,
    /// Projected vertices `(x, y, depth)`.
    proj: Vec<Vec3>,
    /// Indices of front-facing triangles.
    front: Vec<usize>,
    /// Flat colors of all triangles (only front ones are meaningful).
    colors: Vec<Vec3>,
    /// Fragment ranges per pixel into `frags`.
    offsets: Vec<u32>,
    frags: Vec<Fragment>,
    /// Blended color `S` per pixel (before background compositing).
    blend: Vec<Vec3>,
    alpha: Vec<f64>,
    zmax: Vec<f64>,
}

#[inline]
fn cross2(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

#[inline]
fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Distance from `p` to segment `ab` and the closest-point parameter.
#[inline]
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let ab = sub2(b, a);
    let ap = sub2(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    ((q[0] * q[0] + q[1] * q[1]).sqrt(), t)
}

/// Signed boundary distance and clamped-barycentric depth of `p`.
struct Probe {
    signed_dist: f64,
    depth: f64,
}

#[inline]
fn probe(p: [f64; 2], t: &[Vec3; 3]) -> Probe {
    let c = [[t[0][0], t[0][1]], [t[1][0], t[1][1]], [t[2][0], t[2][1]]];
    let area = [
        cross2(sub2(c[1], p), sub2(c[2], p)),
        cross2(sub2(c[2], p), sub2(c[0], p)),
        cross2(sub2(c[0], p), sub2(c[1], p)),
    ];
    let inside = area.iter().all(|&a| a >= 0.0);
    let dist = segment_distance(p, c[0], c[1])
        .0
        .min(segment_distance(p, c[1], c[2]).0)
        .min(segment_distance(p, c[2], c[0]).0);
    let mu = area.map(|a| a.max(0.0));
    let s = mu[0] + mu[1] + mu[2];
    let depth = if s > 0.0 {
        (mu[0] * t[0][2] + mu[1] * t[1][2] + mu[2] * t[2][2]) / s
    } else {
        (t[0][2] + t[1][2] + t[2][2]) / 3.0
    };
    Probe {
        signed_dist: if inside { dist } else { -dist },
        depth,
    }
}

/// Accumulates `g_d * d(signed_dist)/d(corner xy)` and `g_z * d(depth)/d(corner xyz)` into `out`.
fn probe_backward(p: [f64; 2], t: &[Vec3; 3], g_d: f64, g_z: f64, out: &mut [Vec3; 3]) {
    let c = [[t[0][0], t[0][1]], [t[1][0], t[1][1]], [t[2][0], t[2][1]]];
    let r = [sub2(c[0], p), sub2(c[1], p), sub2(c[2], p)];
    let area = [cross2(r[1], r[2]), cross2(r[2], r[0]), cross2(r[0], r[1])];
    if g_d != 0.0 {
        let inside = area.iter().all(|&a| a >= 0.0);
        let sign = if inside { 1.0 } else { -1.0 };
        // Nearest edge; ties go to the first, matching `min` in the forward pass.
        let mut best = (f64::INFINITY, 0, 0.0);
        for e in 0..3 {
            let (d, tt) = segment_distance(p, c[e], c[(e + 1) % 3]);
            if d < best.0 {
                best = (d, e, tt);
            }
        }
        let (dist, e, tt) = best;
        if dist > 0.0 {
            let (i, j) = (e, (e + 1) % 3);
            let q = [c[i][0] + tt * (c[j][0] - c[i][0]), c[i][1] + tt * (c[j][1] - c[i][1])];
            // d|q - p| / dq, and q moves with the corners as (1 - t, t).
            let u = [(q[0] - p[0]) / dist, (q[1] - p[1]) / dist];
            let g = g_d * sign;
            out[i][0] += g * (1.0 - tt) * u[0];
            out[i][1] += g * (1.0 - tt) * u[1];
            out[j][0] += g * tt * u[0];
            out[j][1] += g * tt * u[1];
        }
    }
    if g_z != 0.0 {
        let mu = area.map(|a| a.max(0.0));
        let s = mu[0] + mu[1] + mu[2];
        if s > 0.0 {
            let depth = (mu[0] * t[0][2] + mu[1] * t[1][2] + mu[2] * t[2][2]) / s;
            for k in 0..3 {
                out[k][2] += g_z * mu[k] / s;
            }
            // Gradient w.r.t. each sub-area through the clamp.
            let g_area: [f64; 3] = std::array::from_fn(|k| {
                if area[k] > 0.0 {
                    g_z * (t[k][2] - depth) / s
                } else {
                    0.0
                }
            });
            // area[0] = cross2(r1, r2), area[1] = cross2(r2, r0), area[2] = cross2(r0, r1);
            // d cross2(u, v)/du = (v.y, -v.x), d/dv = (-u.y, u.x).
            let mut add = |k: usize, g: f64, v: [f64; 2]| {
                out[k][0] += g * v[0];
                out[k][1] += g * v[1];
            };
            add(1, g_area[0], [r[2][1], -r[2][0]]);
            add(2, g_area[0], [-r[1][1], r[1][0]]);
            add(2, g_area[1], [r[0][1], -r[0][0]]);
            add(0, g_area[1], [-r[2][1], r[2][0]]);
            add(0, g_area[2], [r[1][1], -r[1][0]]);
            add(1, g_area[2], [-r[0][1], r[0][0]]);
        } else {
            for k in 0..3 {
                out[k][2] += g_z / 3.0;
            }
        }
    }
}

/// Color `(n_view + 1) / 2` for a view-space unit normal.
#[inline]
fn normal_color(n_view: Vec3) -> Vec3 {
    [0.5 * (n_view[0] + 1.0), 0.5 * (n_view[1] + 1.0), 0.5 * (n_view[2] + 1.0)]
}

fn face_normal(v: &[Vec3], f: &[usize; 3]) -> Vec3 {
    vec3::normalize(vec3::cross(
        vec3::sub(v[f[1]], v[f[0]]),
        vec3::sub(v[f[2]], v[f[0]]),
    ))
}

/// Renders one view and keeps the state required for [`backward`].
pub fn render_view(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<(NormalMapImage, ViewCache)> {
    settings.validate()?;
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= vertices.len()) {
        return Err(RasterError::InvalidParameter(format!("face index {bad} out of range")));
    }
    let basis = camera.basis();
    let proj: Vec<Vec3> = vertices.iter().map(|&v| basis.project(v)).collect();
    let (w, h) = (camera.width, camera.height);
    let sigma = settings.sigma * camera.half_extent;
    let reach = settings.cutoff * sigma;
    let [sx, sy] = camera.pixel_size();

    let mut colors = vec![[0.0; 3]; faces.len()];
    let mut front = Vec::new();
    let mut per_pixel: Vec<Vec<Fragment>> = vec![Vec::new(); w * h];
    for (fi, f) in faces.iter().enumerate() {
        let t = [proj[f[0]], proj[f[1]], proj[f[2]]];
        let signed_area = cross2(
            [t[1][0] - t[0][0], t[1][1] - t[0][1]],
            [t[2][0] - t[0][0], t[2][1] - t[0][1]],
        );
        if !(signed_area > 0.0) {
            continue;
        }
        front.push(fi);
        colors[fi] = normal_color(basis.project(face_normal(vertices, f)));
        let xmin = t.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - reach;
        let xmax = t.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + reach;
        let ymin = t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - reach;
        let ymax = t.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + reach;
        let e = camera.half_extent;
        let col0 = ((xmin + e) / sx - 0.5).ceil().max(0.0) as usize;
        let col1 = ((xmax + e) / sx - 0.5).floor().min(w as f64 - 1.0);
        let row0 = ((e - ymax) / sy - 0.5).ceil().max(0.0) as usize;
        let row1 = ((e - ymin) / sy - 0.5).floor().min(h as f64 - 1.0);
        if col1 < 0.0 || row1 < 0.0 {
            continue;
        }
        for row in row0..=row1 as usize {
            for col in col0..=col1 as usize {
                let p = camera.pixel_center(row, col);
                let pr = probe(p, &t);
                if pr.signed_dist <= -reach {
                    continue;
                }
                per_pixel[row * w + col].push(Fragment {
                    tri: fi as u32,
                    cov: sigmoid(pr.signed_dist / sigma),
                    depth: pr.depth,
                });
            }
        }
    }

    let mut image = NormalMapImage::filled(w, h, settings.background);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut frags = Vec::new();
    let mut blend = vec![[0.0; 3]; w * h];
    let mut alpha = vec![0.0; w * h];
    let mut zmax = vec![0.0; w * h];
    offsets.push(0u32);
    for (px, list) in per_pixel.into_iter().enumerate() {
        if !list.is_empty() {
            let zm = list.iter().map(|f| f.depth).fold(f64::NEG_INFINITY, f64::max);
            let mut wsum = 0.0;
            let mut s = [0.0; 3];
            let mut transmit = 1.0;
            for fr in &list {
                let wj = fr.cov * ((fr.depth - zm) / settings.gamma).exp();
                wsum += wj;
                let c = colors[fr.tri as usize];
                for k in 0..3 {
                    s[k] += wj * c[k];
                }
                transmit *= 1.0 - fr.cov;
            }
            let s = vec3::scale(s, 1.0 / wsum);
            let a = 1.0 - transmit;
            for k in 0..3 {
                image.color[px][k] = a * s[k] + (1.0 - a) * settings.background[k];
            }
            image.coverage[px] = a;
            blend[px] = s;
            alpha[px] = a;
            zmax[px] = zm;
            frags.extend(list);
        }
        offsets.push(frags.len() as u32);
    }
    let cache = ViewCache {
        basis,
        proj,
        front,
        colors,
        offsets,
        frags,
        blend,
        alpha,
        zmax,
    };
    Ok((image, cache))
}

/// Gradient of `sum(grad_color . pixel_color)` with respect to the vertices.
pub fn backward(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    settings: &RenderSettings,
    cache: &ViewCache,
    grad_color: &[Vec3],
) -> Vec<Vec3> {
    let w = camera.width;
    let sigma = settings.sigma * camera.half_extent;
    // Per triangle: gradient w.r.t. projected corners, and w.r.t. its color.
    let mut g_proj = vec![[[0.0; 3]; 3]; faces.len()];
    let mut g_col = vec![[0.0; 3]; faces.len()];
    let mut transmit_excl = Vec::new();
    for px in 0..grad_color.len() {
        let (lo, hi) = (cache.offsets[px] as usize, cache.offsets[px + 1] as usize);
        if lo == hi {
            continue;
        }
        let g = grad_color[px];
        if g == [0.0; 3] {
            continue;
        }
        let frags = &cache.frags[lo..hi];
        let a = cache.alpha[px];
        let s = cache.blend[px];
        let zm = cache.zmax[px];
        let g_alpha = vec3::dot(g, vec3::sub(s, settings.background));
        // prod_{k != j} (1 - D_k) via prefix/suffix products.
        transmit_excl.clear();
        let mut prefix = 1.0;
        for fr in frags {
            transmit_excl.push(prefix);
            prefix *= 1.0 - fr.cov;
        }
        let mut suffix = 1.0;
        for (j, fr) in frags.iter().enumerate().rev() {
            transmit_excl[j] *= suffix;
            suffix *= 1.0 - fr.cov;
        }
        let weights: Vec<f64> = frags
            .iter()
            .map(|fr| fr.cov * ((fr.depth - zm) / settings.gamma).exp())
            .collect();
        let wsum: f64 = weights.iter().sum();
        let p = camera.pixel_center(px / w, px % w);
        for (j, fr) in frags.iter().enumerate() {
            let tri = fr.tri as usize;
            let c = cache.colors[tri];
            let share = weights[j] / wsum;
            for k in 0..3 {
                g_col[tri][k] += a * share * g[k];
            }
            let g_w = a * vec3::dot(g, vec3::sub(c, s)) / wsum;
            let e = ((fr.depth - zm) / settings.gamma).exp();
            let g_cov = g_alpha * transmit_excl[j] + g_w * e;
            let g_depth = g_w * weights[j] / settings.gamma;
            let g_dist = g_cov * fr.cov * (1.0 - fr.cov) / sigma;
            if g_dist == 0.0 && g_depth == 0.0 {
                continue;
            }
            let f = faces[tri];
            let t = [cache.proj[f[0]], cache.proj[f[1]], cache.proj[f[2]]];
            probe_backward(p, &t, g_dist, g_depth, &mut g_proj[tri]);
        }
    }

    let mut grad = vec![[0.0; 3]; vertices.len()];
    for &tri in &cache.front {
        let f = faces[tri];
        for k in 0..3 {
            let gv = cache.basis.unproject(g_proj[tri][k]);
            grad[f[k]] = vec3::add(grad[f[k]], gv);
        }
        let gc = g_col[tri];
        if gc == [0.0; 3] {
            continue;
        }
        // color = (n_view + 1) / 2 with n_view = project(n), n = m / |m|.
        let g_n = cache.basis.unproject(vec3::scale(gc, 0.5));
        let e1 = vec3::sub(vertices[f[1]], vertices[f[0]]);
        let e2 = vec3::sub(vertices[f[2]], vertices[f[0]]);
        let m = vec3::cross(e1, e2);
        let len = vec3::norm(m);
        if len == 0.0 {
            continue;
        }
        let n = vec3::scale(m, 1.0 / len);
        let g_m = vec3::scale(vec3::sub(g_n, vec3::scale(n, vec3::dot(n, g_n))), 1.0 / len);
        let g_e1 = vec3::cross(e2, g_m);
        let g_e2 = vec3::cross(g_m, e1);
        grad[f[1]] = vec3::add(grad[f[1]], g_e1);
        grad[f[2]] = vec3::add(grad[f[2]], g_e2);
        grad[f[0]] = vec3::sub(grad[f[0]], vec3::add(g_e1, g_e2));
    }
    grad
}

/// Renders every camera; views are processed in parallel and returned in order.
pub fn render_views(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    cameras: &[Camera],
    settings: &RenderSettings,
) -> Result<Vec<(NormalMapImage, ViewCache)>> {
    cameras
        .par_iter()
        .map(|c| render_view(vertices, faces, c, settings))
        .collect()
}

/// Images only.
pub fn render_images(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    cameras: &[Camera],
    settings: &RenderSettings,
) -> Result<Vec<NormalMapImage>> {
    Ok(render_views(vertices, faces, cameras, settings)?
        .into_iter()
        .map(|(img, _)| img)
        .collect())
}

/// Hard rasterization: nearest front-facing triangle containing each pixel center.
pub fn render_hard(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    background: [f64; 3],
) -> NormalMapImage {
    let basis = camera.basis();
    let proj: Vec<Vec3> = vertices.iter().map(|&v| basis.project(v)).collect();
    let mut img = NormalMapImage::filled(camera.width, camera.height, background);
    let mut depth = vec![f64::NEG_INFINITY; camera.width * camera.height];
    for f in faces {
        let t = [proj[f[0]], proj[f[1]], proj[f[2]]];
        let c = [[t[0][0], t[0][1]], [t[1][0], t[1][1]], [t[2][0], t[2][1]]];
        let area = cross2(sub2(c[1], c[0]), sub2(c[2], c[0]));
        if !(area > 0.0) {
            continue;
        }
        let color = normal_color(basis.project(face_normal(vertices, f)));
        for row in 0..camera.height {
            for col in 0..camera.width {
                let p = camera.pixel_center(row, col);
                let l = [
                    cross2(sub2(c[1], p), sub2(c[2], p)) / area,
                    cross2(sub2(c[2], p), sub2(c[0], p)) / area,
                    cross2(sub2(c[0], p), sub2(c[1], p)) / area,
                ];
                if l.iter().any(|&x| x < 0.0) {
                    continue;
                }
                let z = l[0] * t[0][2] + l[1] * t[1][2] + l[2] * t[2][2];
                let px = row * camera.width + col;
                if z > depth[px] {
                    depth[px] = z;
                    img.color[px] = color;
                    img.coverage[px] = 1.0;
                }
            }
        }
    }
    img
}
