use std::sync::Arc;

use hsurf_autodiff::finite_diff::{central_gradient, cosine, relative_error};
use hsurf_autodiff::{Mat, ParameterSet, Tape};
use hsurf_geometry::vec3::{self, Vec3};
use hsurf_geometry::{Primitive, TriMesh};
use hsurf_raster::{
    backward, make_view_grid, normalize_to_unit_cube, normalize_to_unit_cube_var, render_hard,
    render_images, render_var, render_view, Camera, RenderSettings,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn front_camera(res: usize) -> Camera {
    Camera::new(0.0, 0.0, res, res, 1.0).unwrap()
}

fn to_mat(v: &[Vec3]) -> Mat {
    Array2::from_shape_fn((v.len(), 3), |(i, k)| v[i][k])
}

fn from_mat(m: &Mat) -> Vec<Vec3> {
    m.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

#[test]
fn facing_triangle_has_plus_z_color() {
    let verts = vec![[-3.0, -3.0, 0.0], [3.0, -3.0, 0.0], [0.0, 3.0, 0.0]];
    let cam = front_camera(16);
    let (img, _) = render_view(&verts, &[[0, 1, 2]], &cam, &RenderSettings::default()).unwrap();
    for row in 4..12 {
        for col in 4..12 {
            let c = img.pixel(row, col);
            assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9 && (c[2] - 1.0).abs() < 1e-9, "{c:?}");
        }
    }
    let (back, _) = render_view(&verts, &[[0, 2, 1]], &cam, &RenderSettings::default()).unwrap();
    assert!(back.color.iter().all(|&c| c == [0.5; 3]));
    assert!(back.coverage.iter().all(|&a| a == 0.0));
}

fn two_triangle_scene() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let verts = vec![
        [-0.6, -0.5, 0.1],
        [0.5, -0.4, -0.2],
        [0.1, 0.6, 0.0],
        [-0.2, -0.1, 0.3],
        [0.7, 0.2, 0.25],
        [0.0, 0.7, 0.4],
    ];
    (verts, vec![[0, 1, 2], [3, 4, 5]])
}

#[test]
fn vertex_gradient_matches_finite_differences() {
    let (verts, faces) = two_triangle_scene();
    let cam = Camera::new(0.3, 0.2, 24, 24, 1.0).unwrap();
    let settings = RenderSettings {
        sigma: 0.05,
        gamma: 0.05,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights: Vec<Vec3> = (0..24 * 24)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let loss = |m: &Mat| -> f64 {
        let (img, _) = render_view(&from_mat(m), &faces, &cam, &settings).unwrap();
        img.color.iter().zip(&weights).map(|(c, w)| vec3::dot(*c, *w)).sum()
    };
    let (_, cache) = render_view(&verts, &faces, &cam, &settings).unwrap();
    let analytic = to_mat(&backward(&verts, &faces, &cam, &settings, &cache, &weights));
    let numeric = central_gradient(&to_mat(&verts), 1e-3, loss);
    let cos = cosine(&analytic, &numeric);
    assert!(cos >= 0.98, "cosine {cos}");
    assert!(analytic.iter().all(|g| g.is_finite()));
}

#[test]
fn image_loss_gradient_within_one_percent() {
    // Squared difference to a reference render of a perturbed scene.
    let (verts, faces) = two_triangle_scene();
    let cam = Camera::new(-0.4, 0.5, 20, 20, 1.0).unwrap();
    let settings = RenderSettings {
        sigma: 0.06,
        gamma: 0.05,
        ..Default::default()
    };
    let target: Vec<Vec3> = verts.iter().map(|v| [v[0] * 0.9 + 0.05, v[1], v[2] * 1.1]).collect();
    let (reference, _) = render_view(&target, &faces, &cam, &settings).unwrap();
    let loss = |m: &Mat| -> f64 {
        let (img, _) = render_view(&from_mat(m), &faces, &cam, &settings).unwrap();
        img.squared_distance(&reference)
    };
    let (img, cache) = render_view(&verts, &faces, &cam, &settings).unwrap();
    let g: Vec<Vec3> = img
        .color
        .iter()
        .zip(&reference.color)
        .map(|(a, b)| vec3::scale(vec3::sub(*a, *b), 2.0))
        .collect();
    let analytic = to_mat(&backward(&verts, &faces, &cam, &settings, &cache, &g));
    let numeric = central_gradient(&to_mat(&verts), 1e-4, loss);
    let err = relative_error(&analytic, &numeric, 1e-6);
    assert!(err <= 1e-2, "relative error {err}");
}

#[test]
fn soft_render_converges_to_hard_render() {
    let mesh = Primitive::Sphere { radius: 0.5 }.mesh(12).unwrap();
    let cam = Camera::new(0.4, 0.3, 48, 48, 0.75).unwrap();
    let basis = cam.basis();
    let hard = render_hard(&mesh.vertices, &mesh.faces, &cam, [0.5; 3]);
    let proj: Vec<[f64; 2]> = mesh.vertices.iter().map(|&v| {
        let p = basis.project(v);
        [p[0], p[1]]
    }).collect();
    // Distance from a pixel center to the nearest projected front-face edge.
    let edge_distance = |p: [f64; 2]| -> f64 {
        let mut best = f64::INFINITY;
        for f in &mesh.faces {
            let c = [proj[f[0]], proj[f[1]], proj[f[2]]];
            let area = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[1][1] - c[0][1]) * (c[2][0] - c[0][0]);
            if area <= 0.0 {
                continue;
            }
            for e in 0..3 {
                let (a, b) = (c[e], c[(e + 1) % 3]);
                let ab = [b[0] - a[0], b[1] - a[1]];
                let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
                let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
                best = best.min((q[0] * q[0] + q[1] * q[1]).sqrt());
            }
        }
        best
    };
    let mut previous = usize::MAX;
    for sigma in [1e-2, 1e-3, 1e-4] {
        let settings = RenderSettings {
            sigma,
            gamma: 1e-3,
            ..Default::default()
        };
        let (soft, _) = render_view(&mesh.vertices, &mesh.faces, &cam, &settings).unwrap();
        let band = settings.cutoff * sigma * cam.half_extent;
        let mut disagree = 0;
        for row in 0..48 {
            for col in 0..48 {
                let px = row * 48 + col;
                let diff = vec3::norm(vec3::sub(soft.color[px], hard.color[px]));
                if diff > 1e-2 {
                    disagree += 1;
                    let d = edge_distance(cam.pixel_center(row, col));
                    assert!(d <= band, "sigma {sigma}: disagreement {d} outside band {band}");
                }
            }
        }
        assert!(disagree <= previous, "sigma {sigma}: {disagree} > {previous}");
        previous = disagree;
    }
}

#[test]
fn face_vertex_permutations() {
    let (verts, faces) = two_triangle_scene();
    let cam = front_camera(20);
    let s = RenderSettings::default();
    let (base, _) = render_view(&verts, &faces, &cam, &s).unwrap();
    let rotated: Vec<[usize; 3]> = faces.iter().map(|f| [f[1], f[2], f[0]]).collect();
    let (even, _) = render_view(&verts, &rotated, &cam, &s).unwrap();
    for (a, b) in base.color.iter().zip(&even.color) {
        assert!(vec3::norm(vec3::sub(*a, *b)) <= 1e-12);
    }
    let swapped: Vec<[usize; 3]> = faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
    let (odd, _) = render_view(&verts, &swapped, &cam, &s).unwrap();
    assert!(odd.coverage.iter().all(|&a| a == 0.0));
}

#[test]
fn rendering_is_deterministic() {
    let mesh = Primitive::Torus { major: 0.3, minor: 0.12 }.mesh(12).unwrap();
    let cams = make_view_grid(24, 24, 0.9).unwrap();
    let a = render_images(&mesh.vertices, &mesh.faces, &cams, &RenderSettings::default()).unwrap();
    let b = render_images(&mesh.vertices, &mesh.faces, &cams, &RenderSettings::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 25);
}

#[test]
fn unit_cube_normalization() {
    let cube = Primitive::Box { size: [2.0; 3] }.mesh(3).unwrap().translated([1.0; 3]);
    let n = normalize_to_unit_cube(&cube).unwrap();
    let b = n.bbox().unwrap();
    assert_eq!((b.min, b.max), ([-0.5; 3], [0.5; 3]));
    let again = normalize_to_unit_cube(&n).unwrap();
    for (p, q) in n.vertices.iter().zip(&again.vertices) {
        assert!(vec3::norm(vec3::sub(*p, *q)) <= 1e-12);
    }
    let slab = Primitive::Box { size: [4.0, 1.0, 2.0] }.mesh(3).unwrap();
    let e = normalize_to_unit_cube(&slab).unwrap().bbox().unwrap().extent();
    assert!((e[0] - 1.0).abs() < 1e-15 && (e[1] - 0.25).abs() < 1e-15 && (e[2] - 0.5).abs() < 1e-15);
    let flat = TriMesh::new(vec![[1.0; 3]; 3], vec![[0, 1, 2]]).unwrap();
    assert!(normalize_to_unit_cube(&flat).is_err());
}

#[test]
fn tape_render_matches_direct_backward() {
    let (verts, faces) = two_triangle_scene();
    let cams = vec![front_camera(16), Camera::new(1.0, -0.3, 16, 16, 1.0).unwrap()];
    let s = RenderSettings {
        sigma: 0.05,
        ..Default::default()
    };
    let mut p = ParameterSet::new("v");
    p.add("v", to_mat(&verts)).unwrap();
    let tape = Tape::new();
    let v = p.var(&tape, 0).unwrap();
    let faces = Arc::new(faces);
    let (img, images) = render_var(v, faces.clone(), &cams, &s).unwrap();
    assert_eq!(img.shape(), (2, 16 * 16 * 3));
    let loss = img.sum().unwrap();
    let g = tape.backward(loss).unwrap();
    let mut expected = vec![[0.0; 3]; verts.len()];
    for (c, im) in cams.iter().zip(&images) {
        let (again, cache) = render_view(&verts, &faces, c, &s).unwrap();
        assert_eq!(&again, im);
        let gv = backward(&verts, &faces, c, &s, &cache, &vec![[1.0; 3]; 256]);
        for i in 0..verts.len() {
            expected[i] = vec3::add(expected[i], gv[i]);
        }
    }
    assert_eq!(g.param(p.key(0)).unwrap(), &to_mat(&expected));
}

#[test]
fn tape_normalization_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-2.0..2.0));
    let r = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-1.0..1.0));
    let mut p = ParameterSet::new("x");
    p.add("x", x0.clone()).unwrap();
    let tape = Tape::new();
    let y = normalize_to_unit_cube_var(p.var(&tape, 0).unwrap()).unwrap();
    let loss = y.mul(tape.constant(r.clone()).unwrap()).unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    let numeric = central_gradient(&x0, 1e-6, |x| {
        let t = Tape::new();
        let y = normalize_to_unit_cube_var(t.constant(x.clone()).unwrap()).unwrap();
        (&*y.value() * &r).sum()
    });
    assert!(relative_error(g.param(p.key(0)).unwrap(), &numeric, 1e-6) <= 1e-4);
}

fn rotate_y(v: Vec3, th: f64) -> Vec3 {
    let (s, c) = th.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rotating_mesh_and_camera_together(th in -3.0f64..3.0, az in -3.0f64..3.0, el in -1.2f64..1.2) {
        let mesh = Primitive::Torus { major: 0.3, minor: 0.12 }.mesh(10).unwrap();
        let s = RenderSettings::default();
        let cam = Camera::new(az, el, 20, 20, 0.6).unwrap();
        let moved: Vec<Vec3> = mesh.vertices.iter().map(|&v| rotate_y(v, th)).collect();
        let cam2 = Camera::new(az + th, el, 20, 20, 0.6).unwrap();
        let (a, _) = render_view(&mesh.vertices, &mesh.faces, &cam, &s).unwrap();
        let (b, _) = render_view(&moved, &mesh.faces, &cam2, &s).unwrap();
        for (x, y) in a.coverage.iter().zip(&b.coverage) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
        for (x, y) in a.color.iter().zip(&b.color) {
            prop_assert!(vec3::norm(vec3::sub(*x, *y)) <= 1e-6);
        }
    }

    #[test]
    fn gradients_are_finite(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let verts: Vec<Vec3> = (0..9).map(|_| [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)]).collect();
        let faces = vec![[0, 1, 2], [3, 4, 5], [6, 7, 8], [0, 4, 8]];
        let cam = Camera::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0), 12, 12, 1.0).unwrap();
        let s = RenderSettings::default();
        let (img, cache) = render_view(&verts, &faces, &cam, &s).unwrap();
        prop_assert!(img.color.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        let g = backward(&verts, &faces, &cam, &s, &cache, &vec![[1.0, -1.0, 0.5]; 144]);
        prop_assert!(g.iter().flatten().all(|x| x.is_finite()));
    }
}

#[test]
fn png_export_writes_rgba() {
    let mesh = Primitive::Sphere { radius: 0.4 }.mesh(16).unwrap();
    let (img, _) = render_view(&mesh.vertices, &mesh.faces, &front_camera(32), &RenderSettings::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("view.png");
    img.save_png(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    // IHDR: width, height, bit depth 8, color type 6 (RGBA).
    assert_eq!(u32::from_be_bytes(bytes[16..20].try_into().unwrap()), 32);
    assert_eq!(u32::from_be_bytes(bytes[20..24].try_into().unwrap()), 32);
    assert_eq!((bytes[24], bytes[25]), (8, 6));
}
