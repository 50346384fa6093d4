use std::f64::consts::PI;

use hsurf_geometry::vec3::{self, Vec3};
use hsurf_geometry::{
    atlas_to_mesh, chamfer_l1, chamfer_l2, load_obj, marching_cubes, normal_consistency, parse_obj,
    sample_occupancy, sample_surface, save_obj, Aabb, ChartGrid, InsideTester, KdTree, Lattice,
    Primitive, SurfaceSamples, TriMesh,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_nearest(q: Vec3, pts: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in pts.iter().enumerate() {
        let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

/// Worst-case distance between the unit sphere and its `t x t` tessellation:
/// sagitta of the largest facet's angular half-diagonal.
fn sphere_sagitta(t: usize) -> f64 {
    let half_diag = ((PI / t as f64).powi(2) + (PI / (2 * t) as f64).powi(2)).sqrt();
    1.0 - half_diag.cos()
}

#[test]
fn obj_round_trip_on_torus() {
    let m = Primitive::Torus { major: 0.6, minor: 0.25 }.mesh(20).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("torus.obj");
    save_obj(&m, &path).unwrap();
    let back = load_obj(&path).unwrap();
    assert_eq!(back.faces, m.faces);
    for (a, b) in m.vertices.iter().zip(&back.vertices) {
        assert!(vec3::norm(vec3::sub(*a, *b)) <= 1e-9);
    }
    assert!(load_obj(dir.path().join("missing.obj")).is_err());
}

#[test]
fn primitive_oracles() {
    let sphere = Primitive::Sphere { radius: 1.0 }.mesh(32).unwrap();
    assert!((sphere.area() - 4.0 * PI).abs() / (4.0 * PI) < 0.01);
    let unit_box = Primitive::Box { size: [1.0; 3] }.mesh(3).unwrap();
    assert!((unit_box.area() - 6.0).abs() < 1e-12);
    let torus = Primitive::Torus { major: 0.6, minor: 0.25 }.mesh(32).unwrap();
    assert_eq!(torus.euler_characteristic(), 0);
    assert!(torus.is_watertight());
}

#[test]
fn box_samples_follow_face_areas() {
    let m = Primitive::Box { size: [1.0, 2.0, 3.0] }.mesh(3).unwrap();
    let n = 60_000;
    let s = sample_surface(&m, n, 4).unwrap();
    // Faces normal to axis k have total area 2 * (product of the other two sides).
    let sides = [1.0, 2.0, 3.0];
    let total = 2.0 * (2.0 + 3.0 + 6.0);
    for k in 0..3 {
        for sign in [-1.0, 1.0] {
            let count = s.normals.iter().filter(|nrm| nrm[k] * sign > 0.5).count() as f64;
            let p = sides[(k + 1) % 3] * sides[(k + 2) % 3] / total;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() <= 3.0 * sigma, "axis {k} sign {sign}: {count}");
        }
    }
}

#[test]
fn single_triangle_samples_are_inside() {
    let a = [0.2, -0.1, 0.3];
    let b = [1.0, 0.4, -0.2];
    let c = [-0.3, 0.9, 0.1];
    let m = TriMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
    let s = sample_surface(&m, 2000, 1).unwrap();
    let e1 = vec3::sub(b, a);
    let e2 = vec3::sub(c, a);
    let nrm = vec3::cross(e1, e2);
    for p in &s.points {
        // Barycentric coordinates by area ratios.
        let d = vec3::sub(*p, a);
        let beta = vec3::dot(vec3::cross(d, e2), nrm) / vec3::dot(nrm, nrm);
        let gamma = vec3::dot(vec3::cross(e1, d), nrm) / vec3::dot(nrm, nrm);
        assert!(beta >= -1e-12 && gamma >= -1e-12 && beta + gamma <= 1.0 + 1e-12);
        assert!(vec3::dot(d, nrm).abs() < 1e-12);
    }
    assert!(sample_surface(&TriMesh::default(), 10, 1).is_err());
}

#[test]
fn sphere_samples_lie_within_chord_error() {
    let t = 32;
    let m = Primitive::Sphere { radius: 1.0 }.mesh(t).unwrap();
    let s = sample_surface(&m, 5000, 2).unwrap();
    let sag = sphere_sagitta(t);
    for (p, nrm) in s.points.iter().zip(&s.normals) {
        let r = vec3::norm(*p);
        assert!(r <= 1.0 + 1e-12 && r >= 1.0 - sag, "r = {r}");
        assert!((vec3::norm(*nrm) - 1.0).abs() < 1e-9);
    }
    assert_eq!(s, sample_surface(&m, 5000, 2).unwrap());
    assert_ne!(s, sample_surface(&m, 5000, 3).unwrap());
}

#[test]
fn sphere_labels_match_analytic_test() {
    let t = 128;
    let m = Primitive::Sphere { radius: 1.0 }.mesh(t).unwrap();
    let tester = InsideTester::new(&m).unwrap();
    assert!(tester.contains([0.0; 3]));
    assert!(!tester.contains([2.0, 0.0, 0.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let qs = random_points(&mut rng, 10_000);
    let sag = sphere_sagitta(t);
    let mut agree = 0;
    for q in &qs {
        let r = vec3::norm(*q);
        if tester.contains(*q) == (r < 1.0) {
            agree += 1;
        } else {
            assert!(r <= 1.0 && r >= 1.0 - sag, "disagreement outside chord band at r = {r}");
        }
    }
    assert!(agree as f64 / qs.len() as f64 >= 0.999, "agreement {agree}");
}

#[test]
fn occupancy_samples_stay_in_box() {
    let m = Primitive::Cylinder { radius: 0.3, height: 1.0 }.mesh(16).unwrap();
    let b = m.bbox().unwrap().padded(0.1);
    let o = sample_occupancy(&m, b, 2000, 5).unwrap();
    assert!(o.watertight);
    assert!(o.points.iter().all(|&q| b.contains(q)));
    let frac = o.inside_fraction();
    assert!(frac > 0.1 && frac < 0.6, "{frac}");
}

#[test]
fn chamfer_examples() {
    let a = [[0.0, 0.0, 0.0]];
    let b = [[1.0, 0.0, 0.0]];
    assert_eq!(chamfer_l2(&a, &b).unwrap(), 2.0);
    assert_eq!(chamfer_l1(&a, &b).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_points(&mut rng, 50);
    assert_eq!(chamfer_l2(&p, &p).unwrap(), 0.0);
    assert_eq!(chamfer_l1(&p, &p).unwrap(), 0.0);
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let a = random_points(&mut rng, 100);
        let b = random_points(&mut rng, 100);
        let na: Vec<Vec3> = random_points(&mut rng, 100).into_iter().map(vec3::normalize).collect();
        let nb: Vec<Vec3> = random_points(&mut rng, 100).into_iter().map(vec3::normalize).collect();

        let ab: Vec<(usize, f64)> = a.iter().map(|&q| brute_nearest(q, &b)).collect();
        let ba: Vec<(usize, f64)> = b.iter().map(|&q| brute_nearest(q, &a)).collect();
        let l2 = ab.iter().map(|x| x.1).sum::<f64>() + ba.iter().map(|x| x.1).sum::<f64>();
        assert_eq!(chamfer_l2(&a, &b).unwrap(), l2);

        let mean_sqrt = |v: &[(usize, f64)]| v.iter().map(|x| x.1.sqrt()).sum::<f64>() / v.len() as f64;
        let l1 = 0.5 * (mean_sqrt(&ab) + mean_sqrt(&ba));
        assert_eq!(chamfer_l1(&a, &b).unwrap(), l1);

        let score_ab = ab.iter().enumerate().map(|(i, &(j, _))| vec3::dot(na[i], nb[j]).abs()).sum::<f64>() / 100.0;
        let score_ba = ba.iter().enumerate().map(|(i, &(j, _))| vec3::dot(nb[i], na[j]).abs()).sum::<f64>() / 100.0;
        let sa = SurfaceSamples::new(a.clone(), na.clone()).unwrap();
        let sb = SurfaceSamples::new(b.clone(), nb.clone()).unwrap();
        assert_eq!(normal_consistency(&sa, &sb).unwrap(), 0.5 * (score_ab + score_ba));
    }
}

#[test]
fn marching_cubes_sphere_indicator() {
    let l = Lattice::cubic(Aabb::centered_cube(1.0), 64).unwrap();
    let m = marching_cubes(|q| if vec3::norm(q) < 0.5 { 1.0 } else { 0.0 }, 0.2, l).unwrap();
    assert!(!m.is_empty());
    for v in &m.vertices {
        assert!((vec3::norm(*v) - 0.5).abs() <= 2.0 * 2.0 / 64.0);
    }
    assert_eq!(m.euler_characteristic(), 2);
    assert!(m.is_watertight());
    assert!(m.signed_volume() > 0.0);
}

#[test]
fn marching_cubes_half_space() {
    let l = Lattice::cubic(Aabb::centered_cube(1.0), 10).unwrap();
    let m = marching_cubes(|q| if q[0] < 0.0 { 1.0 } else { 0.0 }, 0.2, l).unwrap();
    assert!(!m.is_empty());
    for v in &m.vertices {
        assert!(v[0].abs() <= 0.2);
    }
    for f in 0..m.faces.len() {
        // Occupied side is -x, so faces point toward +x.
        assert!((m.face_normal(f)[0] - 1.0).abs() < 1e-12);
    }
}

fn blobs(q: Vec3) -> f64 {
    let centers = [[0.2, 0.1, -0.1], [-0.3, -0.2, 0.2], [0.1, -0.35, -0.3]];
    let s: f64 = centers
        .iter()
        .map(|c| (-vec3::dist2(q, *c) / 0.08).exp())
        .sum();
    s / (1.0 + s)
}

fn blob_gradient(q: Vec3) -> Vec3 {
    let h = 1e-6;
    let mut g = [0.0; 3];
    for k in 0..3 {
        let mut a = q;
        let mut b = q;
        a[k] += h;
        b[k] -= h;
        g[k] = (blobs(a) - blobs(b)) / (2.0 * h);
    }
    g
}

#[test]
fn marching_cubes_complement_flips_orientation() {
    let l = Lattice::cubic(Aabb::centered_cube(0.8), 24).unwrap();
    let level = 0.3;
    let a = marching_cubes(blobs, level, l).unwrap();
    let b = marching_cubes(|q| 1.0 - blobs(q), 1.0 - level, l).unwrap();
    assert!(!a.is_empty());
    let key = |v: &Vec3| (v[0].to_bits(), v[1].to_bits(), v[2].to_bits());
    let mut va = a.vertices.clone();
    let mut vb = b.vertices.clone();
    va.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert_eq!(va.len(), vb.len());
    for (x, y) in va.iter().zip(&vb) {
        assert!(vec3::norm(vec3::sub(*x, *y)) <= 1e-9, "{:?} vs {:?}", key(x), key(y));
    }
    for f in 0..a.faces.len() {
        let c = a.triangle(f);
        let centroid = vec3::scale(vec3::add(vec3::add(c[0], c[1]), c[2]), 1.0 / 3.0);
        assert!(vec3::dot(a.face_normal(f), blob_gradient(centroid)) < 0.0);
    }
    for f in 0..b.faces.len() {
        let c = b.triangle(f);
        let centroid = vec3::scale(vec3::add(vec3::add(c[0], c[1]), c[2]), 1.0 / 3.0);
        assert!(vec3::dot(b.face_normal(f), blob_gradient(centroid)) > 0.0);
    }
}

#[test]
fn atlas_mesh_vertices_are_chart_outputs() {
    let g = ChartGrid::new(4).unwrap();
    let chart = |k: usize, uv: [f64; 2]| [uv[0] + k as f64, uv[1] * uv[1], (uv[0] * uv[1]).sin()];
    let m = atlas_to_mesh(3, g, |k, uv| Ok(uv.iter().map(|&p| chart(k, p)).collect())).unwrap();
    for k in 0..3 {
        for (i, p) in g.uv().iter().enumerate() {
            assert_eq!(m.vertices[k * 16 + i], chart(k, *p));
        }
    }
    // (u, v) -> (v, u, 0) swaps the orientation.
    let m = atlas_to_mesh(1, g, |_, uv| Ok(uv.iter().map(|p| [p[1], p[0], 0.0]).collect())).unwrap();
    assert!(m.face_normals().iter().all(|n| *n == [0.0, 0.0, -1.0]));
}

#[test]
fn obj_errors_report_lines() {
    let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n").unwrap_err();
    assert!(err.to_string().starts_with("line 4"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kdtree_equals_exhaustive_search(
        pts in proptest::collection::vec((-4i32..4, -4i32..4, -4i32..4), 1..200),
        qs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..50),
    ) {
        // Integer lattice coordinates make exact distance ties common.
        let pts: Vec<Vec3> = pts.into_iter().map(|(a, b, c)| [a as f64 * 0.5, b as f64 * 0.5, c as f64 * 0.5]).collect();
        let tree = KdTree::new(&pts);
        for (x, y, z) in qs {
            let q = [x, y, z];
            prop_assert_eq!(tree.nearest(q).unwrap(), brute_nearest(q, &pts));
        }
        let q = pts[pts.len() / 2];
        prop_assert_eq!(tree.nearest(q).unwrap(), brute_nearest(q, &pts));
    }

    #[test]
    fn chamfer_is_symmetric(seed in 0u64..1000, na in 1usize..60, nb in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_points(&mut rng, na);
        let b = random_points(&mut rng, nb);
        prop_assert_eq!(chamfer_l2(&a, &b).unwrap(), chamfer_l2(&b, &a).unwrap());
        prop_assert_eq!(chamfer_l1(&a, &b).unwrap(), chamfer_l1(&b, &a).unwrap());
        prop_assert!(chamfer_l1(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn labels_are_translation_equivariant(
        q in (-1.2f64..1.2, -1.2f64..1.2, -0.6f64..0.6),
        t in (-8i32..8, -8i32..8, -8i32..8),
    ) {
        let m = Primitive::Torus { major: 0.6, minor: 0.25 }.mesh(16).unwrap();
        let t = [t.0 as f64 * 0.25, t.1 as f64 * 0.25, t.2 as f64 * 0.25];
        let moved = m.translated(t);
        let q = [q.0, q.1, q.2];
        let a = InsideTester::new(&m).unwrap().contains(q);
        let b = InsideTester::new(&moved).unwrap().contains(vec3::add(q, t));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn atlas_triangle_count(k in 1usize..8, r in 2usize..12) {
        let g = ChartGrid::new(r).unwrap();
        let m = atlas_to_mesh(k, g, |_, uv| Ok(uv.iter().map(|p| [p[0], p[1], 0.0]).collect())).unwrap();
        prop_assert_eq!(m.faces.len(), k * 2 * (r - 1) * (r - 1));
        prop_assert!(g.uv().iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
