//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.
//!
//! Training runs are shared between criteria: the sphere fit feeds the
//! level-gap, timing and determinism checks.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hsurf_autodiff::{Mat, ParameterSet, Tape};
use hsurf_core::config::{ModeKind, TrainConfig};
use hsurf_core::dataset::Dataset;
use hsurf_core::evaluate::{evaluate, EvalReport, EvalSettings};
use hsurf_core::extract::{bench_extract, implicit_bbox, BranchKind};
use hsurf_core::gradcheck::run_all;
use hsurf_core::losses::{consistency_value, loss_consistency, LossReport};
use hsurf_core::networks::HybridModel;
use hsurf_core::render::level_deviation;
use hsurf_core::trainer::{checkpoint_path, prepare_dataset, Trainer};
use hsurf_geometry::vec3::{self, Vec3};
use hsurf_geometry::{
    chamfer_l1, chamfer_l2, marching_cubes, normal_consistency, InsideTester, Lattice, Primitive, SurfaceSamples,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 0.2;

struct Outcome {
    id: String,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(id: impl ToString, passed: bool, detail: String) -> Self {
        let o = Self {
            id: id.to_string(),
            passed,
            detail,
        };
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.detail);
        o
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

// ---------------------------------------------------------------- 1

fn gradient_integrity() -> Outcome {
    let t = Instant::now();
    let checks = run_all().expect("gradient checks run");
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.line()).collect();
    for f in &failed {
        println!("    {f}");
    }
    let elapsed = secs(t);
    Outcome::new(
        1,
        failed.is_empty() && elapsed < 120.0,
        format!(
            "gradient integrity: {}/{} checks within tolerance, {elapsed:.2}s < 120s",
            checks.len() - failed.len(),
            checks.len()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn consistency_analytics() -> Outcome {
    let minimum = consistency_value(TAU, TAU);
    let entropy = -(TAU * TAU.ln() + (1.0 - TAU) * (1.0 - TAU).ln());

    let mut set = ParameterSet::new("g");
    set.add("g", Array2::from_elem((1, 1), TAU)).unwrap();
    let tape = Tape::new();
    let g = set.var(&tape, 0).unwrap();
    let grad = tape.backward(loss_consistency(g, TAU).unwrap()).unwrap();
    let slope = grad.param(set.key(0)).unwrap()[[0, 0]];

    // Second differences on an interior grid.
    let h = 1e-3;
    let grid: Vec<f64> = (1..999).map(|i| i as f64 * 1e-3).collect();
    let convex = grid.windows(3).all(|w| {
        let [a, b, c] = [w[0], w[1], w[2]].map(|x| consistency_value(x, TAU));
        (a - 2.0 * b + c) / (h * h) > 0.0
    });
    let below = grid.iter().all(|&x| consistency_value(x, TAU) >= minimum - 1e-15);

    let ok = (minimum - 0.5004).abs() <= 1e-4 && (minimum - entropy).abs() < 1e-12 && slope.abs() < 1e-9 && convex && below;
    Outcome::new(
        2,
        ok,
        format!("consistency analytics: min {minimum:.6} (0.5004 +- 1e-4), slope at tau {slope:.1e}, convex {convex}, global min {below}"),
    )
}

// ---------------------------------------------------------------- 3

fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| [rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half)])
        .collect()
}

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

fn metric_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = 0;
    for _ in 0..50 {
        let a = random_points(&mut rng, 100, 1.0);
        let b = random_points(&mut rng, 100, 1.0);
        let na: Vec<Vec3> = random_points(&mut rng, 100, 1.0).into_iter().map(vec3::normalize).collect();
        let nb: Vec<Vec3> = random_points(&mut rng, 100, 1.0).into_iter().map(vec3::normalize).collect();
        let ab: Vec<(usize, f64)> = a.iter().map(|&q| brute_nearest(q, &b)).collect();
        let ba: Vec<(usize, f64)> = b.iter().map(|&q| brute_nearest(q, &a)).collect();

        let l2 = ab.iter().map(|x| x.1).sum::<f64>() + ba.iter().map(|x| x.1).sum::<f64>();
        let mean_sqrt = |v: &[(usize, f64)]| v.iter().map(|x| x.1.sqrt()).sum::<f64>() / v.len() as f64;
        let l1 = 0.5 * (mean_sqrt(&ab) + mean_sqrt(&ba));
        let score = |v: &[(usize, f64)], from: &[Vec3], to: &[Vec3]| {
            v.iter().enumerate().map(|(i, &(j, _))| vec3::dot(from[i], to[j]).abs()).sum::<f64>() / v.len() as f64
        };
        let nc = 0.5 * (score(&ab, &na, &nb) + score(&ba, &nb, &na));
        let sa = SurfaceSamples::new(a.clone(), na).unwrap();
        let sb = SurfaceSamples::new(b.clone(), nb).unwrap();
        if chamfer_l2(&a, &b).unwrap() == l2
            && chamfer_l1(&a, &b).unwrap() == l1
            && normal_consistency(&sa, &sb).unwrap() == nc
        {
            exact += 1;
        }
    }

    let sphere = Primitive::Sphere { radius: 0.5 }.mesh(128).unwrap();
    let tester = InsideTester::new(&sphere).unwrap();
    let queries = random_points(&mut rng, 10_000, 1.0);
    let agree = queries.iter().filter(|&&q| tester.contains(q) == (vec3::norm(q) < 0.5)).count();
    let agreement = agree as f64 / queries.len() as f64;
    let elapsed = secs(t);
    Outcome::new(
        3,
        exact == 50 && agreement >= 0.999 && elapsed < 60.0,
        format!("metric oracles: {exact}/50 exact, sphere labels agree {:.2}% (>= 99.9%), {elapsed:.2}s < 60s", 100.0 * agreement),
    )
}

// ---------------------------------------------------------------- 4

fn marching_cubes_sphere() -> Outcome {
    let t = Instant::now();
    let bbox = implicit_bbox(0.1);
    let lattice = Lattice::cubic(bbox, 64).unwrap();
    let cell = lattice.cell_size()[0];
    let mesh = marching_cubes(|q| if vec3::norm(q) < 0.5 { 1.0 } else { 0.0 }, TAU, lattice).unwrap();
    let worst = mesh.vertices.iter().map(|v| (vec3::norm(*v) - 0.5).abs()).fold(0.0, f64::max);
    let euler = mesh.euler_characteristic();
    let elapsed = secs(t);
    Outcome::new(
        4,
        !mesh.is_empty() && worst <= 2.0 * cell && euler == 2 && elapsed < 30.0,
        format!(
            "marching cubes: max radial error {worst:.4} <= {:.4} (2 cells), euler {euler}, {elapsed:.2}s < 30s",
            2.0 * cell
        ),
    )
}

// ---------------------------------------------------------------- training

/// Single-shape desk configuration: narrower networks and cheaper renders
/// than the defaults so that one fit stays well inside ten minutes.
fn desk(shape: &str, variant: &str) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.shapes = vec![shape.into()];
    c.mode = ModeKind::AutoDecoder;
    c.atlas_width = 64;
    c.atlas_depth = 3;
    c.occ_width = 64;
    c.occ_depth = 4;
    c.latent_dim = 32;
    c.render_resolution = 32;
    c.render_sigma = 1.0 / 32.0;
    c.views_per_step = 5;
    c.steps = 1500;
    c.apply_variant(variant).unwrap();
    c
}

/// Four primitives with smaller per-step samples, for the seed sweep.
fn sweep(variant: &str, seed: u64) -> TrainConfig {
    let mut c = desk("sphere", variant);
    c.shapes = ["sphere", "box", "torus", "cylinder"].map(String::from).to_vec();
    c.samples_per_chart = 40;
    c.occupancy_samples = 1000;
    c.gt_points = 1000;
    c.image_every = 4;
    c.steps = 600;
    c.seed = seed;
    c
}

struct Fit {
    cfg: TrainConfig,
    model: HybridModel,
    dataset: Dataset,
    reports: Vec<LossReport>,
    eval: EvalReport,
    seconds: f64,
    dir: Option<PathBuf>,
}

fn fit(cfg: TrainConfig, dir: Option<&Path>) -> Fit {
    let t = Instant::now();
    let dataset = prepare_dataset(&cfg).expect("dataset");
    let mut tr = Trainer::new(cfg.clone(), &dataset).expect("trainer");
    let reports = tr.run(dir).expect("training");
    let model = tr.model;
    let eval = evaluate(&model, &dataset, &EvalSettings::default()).expect("evaluation");
    Fit {
        cfg,
        model,
        dataset,
        reports,
        eval,
        seconds: secs(t),
        dir: dir.map(Path::to_path_buf),
    }
}

fn row(f: &Fit, branch: BranchKind) -> (f64, f64) {
    let r = f.eval.rows.iter().find(|r| r.branch == branch).expect("row");
    (r.chamfer_l1.unwrap_or(f64::INFINITY), r.normal_consistency.unwrap_or(0.0))
}

// ---------------------------------------------------------------- 5

fn single_shape_fit(sphere: &Fit, torus: &Fit) -> Outcome {
    let (sa, sn) = row(sphere, BranchKind::Atlas);
    let (si, _) = row(sphere, BranchKind::Implicit);
    let (ta, _) = row(torus, BranchKind::Atlas);
    let (ti, _) = row(torus, BranchKind::Implicit);
    let ok = sa <= 0.02
        && ta <= 0.02
        && sn >= 0.95
        && si <= 0.03
        && ti <= 0.03
        && sphere.seconds <= 600.0
        && torus.seconds <= 600.0;
    Outcome::new(
        5,
        ok,
        format!(
            "single-shape fit ({} steps): atlas chamfer sphere {sa:.4} torus {ta:.4} (<= 0.02), \
             sphere normal consistency {sn:.4} (>= 0.95), implicit chamfer sphere {si:.4} torus {ti:.4} (<= 0.03), \
             {:.0}s / {:.0}s (<= 600s)",
            sphere.cfg.steps, sphere.seconds, torus.seconds
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Mean `|g(f(p)) - tau|` over 2500 atlas points at random chart
/// coordinates, spread evenly over the charts.
fn level_gap(f: &Fit) -> f64 {
    let m = &f.model;
    let cloud = &f.dataset.shapes[0].cloud;
    let la = m.atlas_branch.latent_plain(0, cloud).unwrap();
    let lo = m.occ_branch.latent_plain(0, cloud).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let per_chart = 2500 / m.atlas.len();
    let mut points = Vec::new();
    for c in 0..m.atlas.len() {
        let uv: Mat = Array2::from_shape_fn((per_chart, 2), |_| rng.gen::<f64>());
        let p = m.atlas.eval_plain(&m.atlas_branch.params, &la, c, &uv).unwrap();
        points.extend(p.rows().into_iter().map(|r| [r[0], r[1], r[2]]));
    }
    let dev = level_deviation(m, &lo, &points);
    dev.iter().sum::<f64>() / dev.len() as f64
}

fn level_alignment(hybrid: &Fit, ablation: &Fit) -> Outcome {
    let (h, a) = (level_gap(hybrid), level_gap(ablation));
    Outcome::new(
        6,
        a >= 3.0 * h,
        format!("level-set alignment: hybrid gap {h:.4}, no-consistency gap {a:.4}, ratio {:.2} (>= 3)", a / h),
    )
}

// ---------------------------------------------------------------- 7

fn directional_pattern(runs: &[(Fit, Fit, Fit)]) -> Outcome {
    let mean = |pick: &dyn Fn(&(Fit, Fit, Fit)) -> &Fit, nc: bool| {
        runs.iter()
            .map(|r| {
                let m = pick(r).eval.means(BranchKind::Atlas);
                if nc { m.normal_consistency } else { m.chamfer_l1 }
            })
            .sum::<f64>()
            / runs.len() as f64
    };
    let (hc, vc, nc_h) = (mean(&|r| &r.0, false), mean(&|r| &r.1, false), mean(&|r| &r.0, true));
    let (nc_v, nc_nn) = (mean(&|r| &r.1, true), mean(&|r| &r.2, true));
    for (i, (h, v, n)) in runs.iter().enumerate() {
        let a = |f: &Fit| f.eval.means(BranchKind::Atlas);
        println!(
            "    seed {i}: chamfer hybrid {:.4} vanilla {:.4} no-norm {:.4}; normal consistency hybrid {:.4} vanilla {:.4} no-norm {:.4}",
            a(h).chamfer_l1,
            a(v).chamfer_l1,
            a(n).chamfer_l1,
            a(h).normal_consistency,
            a(v).normal_consistency,
            a(n).normal_consistency
        );
    }
    Outcome::new(
        7,
        hc <= vc && nc_h >= nc_v && nc_nn < nc_h,
        format!(
            "directional pattern over {} seeds, atlas route: chamfer hybrid {hc:.4} <= vanilla {vc:.4}, \
             normal consistency hybrid {nc_h:.4} >= vanilla {nc_v:.4}, no-norm {nc_nn:.4} < hybrid",
            runs.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn extraction_timing(f: &Fit) -> Outcome {
    let t = Instant::now();
    let cloud = &f.dataset.shapes[0].cloud;
    let la = f.model.atlas_branch.latent_plain(0, cloud).unwrap();
    let lo = f.model.occ_branch.latent_plain(0, cloud).unwrap();
    let b = bench_extract(&f.model, &la, &lo, 10, implicit_bbox(0.1), 10).unwrap();
    let elapsed = secs(t);
    Outcome::new(
        8,
        b.speedup() >= 5.0 && b.repetitions >= 10 && elapsed < 120.0,
        format!(
            "extraction timing: atlas {:.4}s ({} vertices) vs marching cubes {:.4}s (res {}, {} vertices), \
             speedup {:.1}x (>= 5) over {} repetitions, {elapsed:.1}s < 120s",
            b.atlas.mean,
            b.atlas.vertices,
            b.implicit.mean,
            b.mc_resolution,
            b.implicit.vertices,
            b.speedup(),
            b.repetitions
        ),
    )
}

// ---------------------------------------------------------------- trainer

/// Two-thousand-step sphere run with the image term every fourth step.
fn long_sphere() -> TrainConfig {
    let mut c = desk("sphere", "hybrid");
    c.samples_per_chart = 40;
    c.occupancy_samples = 1000;
    c.gt_points = 1000;
    c.image_every = 4;
    c.steps = 2000;
    c
}

fn convergence(f: &Fit) -> Outcome {
    let (first, last) = (f.reports[10].total, f.reports.last().unwrap().total);
    Outcome::new(
        "trainer-convergence",
        last < 0.1 * first,
        format!(
            "{}-step sphere: final total {last:.4e} is {:.2}% of step-10 total {first:.4e} (< 10%)",
            f.reports.len(),
            100.0 * last / first
        ),
    )
}

fn gap_trend(f: &Fit) -> Outcome {
    let windows: Vec<f64> = f
        .reports
        .chunks(500)
        .map(|w| w.iter().map(|r| r.level_gap).sum::<f64>() / w.len() as f64)
        .collect();
    let violations = windows.windows(2).filter(|w| w[1] > w[0]).count();
    Outcome::new(
        "trainer-gap-trend",
        violations <= 1,
        format!("level gap per 500-step window {windows:.4?}: {violations} increases (<= 1)"),
    )
}

// ---------------------------------------------------------------- 9

fn determinism(first: &Fit, second: &Fit) -> Outcome {
    let read = |f: &Fit| {
        let dir = f.dir.as_ref().expect("run directory");
        (
            std::fs::read(dir.join("losses.csv")).unwrap(),
            std::fs::read(checkpoint_path(dir)).unwrap(),
        )
    };
    let (csv_a, ckpt_a) = read(first);
    let (csv_b, ckpt_b) = read(second);
    let (same_csv, same_ckpt) = (csv_a == csv_b, ckpt_a == ckpt_b);
    Outcome::new(
        9,
        same_csv && same_ckpt,
        format!(
            "determinism: loss CSV identical {same_csv} ({} bytes), checkpoint identical {same_ckpt} ({} bytes)",
            csv_a.len(),
            ckpt_a.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filtered runs should not start training.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return;
    }

    let start = Instant::now();
    let mut outcomes = vec![
        gradient_integrity(),
        consistency_analytics(),
        metric_oracles(),
        marching_cubes_sphere(),
    ];

    let tmp = tempfile::tempdir().expect("temp dir");
    let sphere = fit(desk("sphere", "hybrid"), Some(&tmp.path().join("sphere-a")));
    let torus = fit(desk("torus", "hybrid"), None);
    outcomes.push(single_shape_fit(&sphere, &torus));

    let ablation = fit(desk("sphere", "no-consistency"), None);
    outcomes.push(level_alignment(&sphere, &ablation));

    let runs: Vec<(Fit, Fit, Fit)> = (0..3)
        .map(|seed| {
            (
                fit(sweep("hybrid", seed), None),
                fit(sweep("vanilla", seed), None),
                fit(sweep("no-norm", seed), None),
            )
        })
        .collect();
    outcomes.push(directional_pattern(&runs));

    outcomes.push(extraction_timing(&sphere));

    let again = fit(desk("sphere", "hybrid"), Some(&tmp.path().join("sphere-b")));
    outcomes.push(determinism(&sphere, &again));

    let long = fit(long_sphere(), None);
    outcomes.push(convergence(&long));
    outcomes.push(gap_trend(&long));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.as_str()).collect();
    println!(
        "acceptance: {} passed, {} failed {:?} in {:.0}s",
        outcomes.len() - failed.len(),
        failed.len(),
        failed,
        secs(start)
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
