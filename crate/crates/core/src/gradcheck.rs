//! Finite-difference checks of every differentiable piece, runnable from
//! the command line.

use std::sync::Arc;

use hsurf_autodiff::finite_diff::{central_gradient, cosine, relative_error};
use hsurf_autodiff::{Mat, ParameterSet, Tape, Var};
use hsurf_raster::{render_var, render_view, Camera, NormalMapImage, RenderSettings};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    loss_chamfer, loss_consistency, loss_image, loss_normal, loss_occupancy, Reduction,
};
use crate::networks::{
    atlas_normal, occupancy_gradient, Architecture, HybridModel, LatentMode,
};
use crate::nn::mat_to_points;

/// First-order tolerance on relative error.
pub const FIRST_ORDER_TOL: f64 = 1e-4;
/// Tolerance for gradients of input-derivatives (nested differences).
pub const NESTED_TOL: f64 = 1e-3;
pub const RASTER_REL_TOL: f64 = 1e-2;
pub const RASTER_COSINE: f64 = 0.98;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    RelativeError,
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub metric: Metric,
    pub value: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        match self.metric {
            Metric::RelativeError => self.value <= self.tolerance,
            Metric::Cosine => self.value >= self.tolerance,
        }
    }

    pub fn line(&self) -> String {
        let (m, op) = match self.metric {
            Metric::RelativeError => ("rel", "<="),
            Metric::Cosine => ("cos", ">="),
        };
        format!(
            "{} {}: {m} {:.3e} {op} {:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

fn model_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&HybridModel, &'t Tape) -> Result<Var<'t>>,
{
    f
}

fn var_fn<F>(f: F) -> F
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    f
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(lo..hi))
}

/// Reverse gradient of `f(x)` (a scalar var) against central differences.
fn check_input(
    name: &str,
    x: &Mat,
    h: f64,
    tol: f64,
    f: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
) -> Result<GradCheck> {
    let mut p = ParameterSet::new(name);
    p.add("x", x.clone())?;
    let tape = Tape::new();
    let loss = f(p.var(&tape, 0)?)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.param(p.key(0)).cloned().unwrap_or_else(|| Mat::zeros(x.dim()));
    let numeric = central_gradient(x, h, |m| {
        let t = Tape::new();
        f(t.constant(m.clone()).expect("finite")).map(|v| v.item()).unwrap_or(f64::NAN)
    });
    Ok(GradCheck {
        name: name.to_string(),
        metric: Metric::RelativeError,
        value: relative_error(&analytic, &numeric, 1e-3),
        tolerance: tol,
    })
}

/// Weighted sum `sum(r * v)` with a fixed random `r`, turning any output
/// into a scalar.
fn project<'t>(v: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let (n, m) = v.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, n, m, -1.0, 1.0);
    Ok(v.mul(v.tape().constant(r)?)?.sum()?)
}

fn op_checks(out: &mut Vec<GradCheck>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, 4, 3, -2.0, 2.0);
    let b = random(&mut rng, 4, 3, -2.0, 2.0);
    let w = random(&mut rng, 3, 5, -2.0, 2.0);
    let pos = a.mapv(|x| x.abs() + 0.5);
    let bc = b.clone();
    let wc = w.clone();
    type Unary = Box<dyn for<'t> Fn(Var<'t>) -> Result<Var<'t>>>;
    let unary: Vec<(&str, &Mat, Unary)> = vec![
        ("op/neg", &a, Box::new(|x| Ok(x.neg()?))),
        ("op/scale", &a, Box::new(|x| Ok(x.scale(-1.3)?))),
        ("op/offset", &a, Box::new(|x| Ok(x.offset(0.4)?))),
        ("op/softplus", &a, Box::new(|x| Ok(x.softplus()?))),
        ("op/sigmoid", &a, Box::new(|x| Ok(x.sigmoid()?))),
        ("op/tanh", &a, Box::new(|x| Ok(x.tanh()?))),
        ("op/exp", &a, Box::new(|x| Ok(x.exp()?))),
        ("op/square", &a, Box::new(|x| Ok(x.square()?))),
        ("op/log", &pos, Box::new(|x| Ok(x.log()?))),
        ("op/sqrt", &pos, Box::new(|x| Ok(x.sqrt()?))),
        ("op/abs", &a, Box::new(|x| Ok(x.abs()?))),
        ("op/clamp", &a, Box::new(|x| Ok(x.clamp(-0.7, 0.9)?))),
        ("op/row_norm", &a, Box::new(|x| Ok(x.row_norm()?))),
        ("op/sum_rows", &a, Box::new(|x| Ok(x.sum_rows()?))),
        ("op/sum_cols", &a, Box::new(|x| Ok(x.sum_cols()?))),
        ("op/mean", &a, Box::new(|x| Ok(x.mean()?))),
        ("op/max_rows", &a, Box::new(|x| Ok(x.max_rows()?))),
        ("op/min_rows", &a, Box::new(|x| Ok(x.min_rows()?))),
        ("op/max_cols", &a, Box::new(|x| Ok(x.max_cols()?))),
        ("op/slice_cols", &a, Box::new(|x| Ok(x.slice_cols(1, 2)?))),
        ("op/gather_rows", &a, Box::new(|x| Ok(x.gather_rows(std::rc::Rc::new(vec![2, 0, 2]))?))),
        ("op/broadcast_rows", &a, Box::new(|x| Ok(x.sum_rows()?.broadcast_rows(3)?))),
        ("op/add", &a, Box::new(move |x| Ok(x.add(x.tape().constant(bc.clone())?)?))),
        ("op/mul", &a, {
            let b = b.clone();
            Box::new(move |x| Ok(x.mul(x.tape().constant(b.clone())?)?))
        }),
        ("op/div", &a, {
            let p = pos.clone();
            Box::new(move |x| Ok(x.div(x.tape().constant(p.clone())?)?))
        }),
        ("op/matmul", &a, Box::new(move |x| Ok(x.matmul(x.tape().constant(wc.clone())?)?))),
        ("op/cross", &a, {
            let b = b.clone();
            Box::new(move |x| Ok(x.cross(x.tape().constant(b.clone())?)?))
        }),
        ("op/row_dot", &a, {
            let b = b.clone();
            Box::new(move |x| Ok(x.row_dot(x.tape().constant(b.clone())?)?))
        }),
        ("op/concat_cols", &a, Box::new(|x| Ok(Var::concat_cols(&[x, x.slice_cols(0, 1)?])?))),
        ("op/concat_rows", &a, Box::new(|x| Ok(Var::concat_rows(&[x, x.sum_rows()?])?))),
    ];
    for (k, (name, x, f)) in unary.iter().enumerate() {
        out.push(check_input(name, x, 1e-5, FIRST_ORDER_TOL, |v| project(f(v)?, k as u64))?);
    }
    Ok(())
}

fn tiny_model(seed: u64, mode: LatentMode) -> Result<HybridModel> {
    let arch = Architecture {
        charts: 2,
        atlas_width: 8,
        atlas_depth: 2,
        occ_width: 8,
        occ_depth: 2,
        latent_dim: 4,
        enc_width: 8,
        enc_point_layers: 2,
        enc_head_layers: 2,
        mode,
        ..Architecture::default()
    };
    HybridModel::new(arch, seed)
}

/// Which parameter set a check perturbs.
#[derive(Clone, Copy)]
enum Side {
    Atlas,
    Occupancy,
}

/// Parameter gradient of `f(model, tape)` for parameter `index` of `side`.
fn check_param(
    name: &str,
    model: &HybridModel,
    side: Side,
    index: usize,
    h: f64,
    tol: f64,
    f: impl for<'t> Fn(&HybridModel, &'t Tape) -> Result<Var<'t>>,
) -> Result<GradCheck> {
    let set = |m: &HybridModel| match side {
        Side::Atlas => m.atlas_branch.params.clone(),
        Side::Occupancy => m.occ_branch.params.clone(),
    };
    let tape = Tape::new();
    let loss = f(model, &tape)?;
    let grads = tape.backward(loss)?;
    let params = set(model);
    let x = params.value(index).clone();
    let analytic = grads.param(params.key(index)).cloned().unwrap_or_else(|| Mat::zeros(x.dim()));
    let numeric = central_gradient(&x, h, |v| {
        let mut m = model.clone();
        let target = match side {
            Side::Atlas => &mut m.atlas_branch.params,
            Side::Occupancy => &mut m.occ_branch.params,
        };
        target.set_value(index, v.clone()).expect("same shape");
        let t = Tape::new();
        f(&m, &t).map(|v| v.item()).unwrap_or(f64::NAN)
    });
    Ok(GradCheck {
        name: name.to_string(),
        metric: Metric::RelativeError,
        value: relative_error(&analytic, &numeric, 1e-3),
        tolerance: tol,
    })
}

fn network_checks(out: &mut Vec<GradCheck>) -> Result<()> {
    let model = tiny_model(3, LatentMode::AutoDecoder { shapes: 1 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let uv = random(&mut rng, 6, 2, 0.0, 1.0);
    let q = random(&mut rng, 6, 3, -0.6, 0.6);
    let cloud = random(&mut rng, 12, 3, -0.5, 0.5);
    let aset = &model.atlas_branch.params;
    let oset = &model.occ_branch.params;

    let atlas_points = model_fn(|m, t| {
        let lat = m.atlas_branch.latent(t, 0, &cloud)?;
        project(m.atlas.eval(&m.atlas_branch.params, lat, 1, &uv)?, 1)
    });
    let first = model.atlas.charts[1].first_weight();
    let latent = model.atlas_branch.latents[0];
    out.push(check_param("atlas/weights", &model, Side::Atlas, first, 1e-5, FIRST_ORDER_TOL, atlas_points)?);
    out.push(check_param("atlas/latent", &model, Side::Atlas, latent, 1e-5, FIRST_ORDER_TOL, atlas_points)?);

    let occ_logits = model_fn(|m, t| {
        let lat = m.occ_branch.latent(t, 0, &cloud)?;
        let (p, _) = m.occupancy.eval(&m.occ_branch.params, lat, t.constant(q.clone())?)?;
        project(p, 2)
    });
    let w_occ = model.occupancy.mlp.first_weight();
    out.push(check_param("occupancy/weights", &model, Side::Occupancy, w_occ, 1e-5, FIRST_ORDER_TOL, occ_logits)?);

    // Input derivatives against differences of the plain decoders.
    let la = aset.value(latent).clone();
    let (n_tape, _) = {
        let t = Tape::new();
        let lat = t.constant(la.clone())?;
        let (n, d) = atlas_normal(&model.atlas, aset, lat, 1, &uv)?;
        ((*n.value()).clone(), d)
    };
    let h = 1e-5;
    let fd_normal = Array2::from_shape_fn((uv.nrows(), 3), |(i, k)| {
        let at = |du: f64, dv: f64| {
            let mut p = uv.row(i).to_owned().insert_axis(ndarray::Axis(0));
            p[[0, 0]] += du;
            p[[0, 1]] += dv;
            model.atlas.eval_plain(aset, &la, 1, &p).expect("valid chart")
        };
        let fu = (&at(h, 0.0) - &at(-h, 0.0)) / (2.0 * h);
        let fv = (&at(0.0, h) - &at(0.0, -h)) / (2.0 * h);
        let c = [
            fu[[0, 1]] * fv[[0, 2]] - fu[[0, 2]] * fv[[0, 1]],
            fu[[0, 2]] * fv[[0, 0]] - fu[[0, 0]] * fv[[0, 2]],
            fu[[0, 0]] * fv[[0, 1]] - fu[[0, 1]] * fv[[0, 0]],
        ];
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        c[k] / n
    });
    out.push(GradCheck {
        name: "atlas_normal/finite_difference".into(),
        metric: Metric::RelativeError,
        value: relative_error(&n_tape, &fd_normal, 1e-3),
        tolerance: FIRST_ORDER_TOL,
    });

    let lo = oset.value(model.occ_branch.latents[0]).clone();
    let g_tape = {
        let t = Tape::new();
        let (g, _) = occupancy_gradient(&model.occupancy, oset, t.constant(lo.clone())?, t.constant(q.clone())?)?;
        (*g.value()).clone()
    };
    let g_fd = Array2::from_shape_fn(q.dim(), |(i, k)| {
        let mut p = q.row(i).to_owned().insert_axis(ndarray::Axis(0));
        p[[0, k]] += h;
        let plus = model.occupancy.eval_plain(oset, &lo, &p)[[0, 0]];
        p[[0, k]] -= 2.0 * h;
        let minus = model.occupancy.eval_plain(oset, &lo, &p)[[0, 0]];
        (plus - minus) / (2.0 * h)
    });
    out.push(GradCheck {
        name: "occupancy_gradient/finite_difference".into(),
        metric: Metric::RelativeError,
        value: relative_error(&g_tape, &g_fd, 1e-3),
        tolerance: FIRST_ORDER_TOL,
    });

    // Parameter gradients of functions of the input-derivatives.
    let normal_fn = model_fn(|m, t| {
        let lat = m.atlas_branch.latent(t, 0, &cloud)?;
        project(atlas_normal(&m.atlas, &m.atlas_branch.params, lat, 1, &uv)?.0, 3)
    });
    out.push(check_param("atlas_normal/parameters", &model, Side::Atlas, first, 1e-4, NESTED_TOL, normal_fn)?);
    let grad_fn = model_fn(|m, t| {
        let lat = m.occ_branch.latent(t, 0, &cloud)?;
        let (g, _) = occupancy_gradient(&m.occupancy, &m.occ_branch.params, lat, t.constant(q.clone())?)?;
        project(g, 4)
    });
    out.push(check_param("occupancy_gradient/parameters", &model, Side::Occupancy, w_occ, 1e-4, NESTED_TOL, grad_fn)?);

    let enc_model = tiny_model(4, LatentMode::Encoder)?;
    let enc_fn = model_fn(|m, t| {
        let lat = m.atlas_branch.latent(t, 0, &cloud)?;
        project(m.atlas.eval(&m.atlas_branch.params, lat, 0, &uv)?, 5)
    });
    let enc_w = enc_model.atlas_branch.encoder.as_ref().expect("encoder mode").point.first_weight();
    out.push(check_param("encoder/weights", &enc_model, Side::Atlas, enc_w, 1e-5, FIRST_ORDER_TOL, enc_fn)?);
    Ok(())
}

fn loss_checks(out: &mut Vec<GradCheck>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pred = random(&mut rng, 10, 3, -1.0, 1.0);
    let gt = mat_to_points(&random(&mut rng, 10, 3, -1.0, 1.0));
    out.push(check_input("loss/chamfer", &pred, 1e-6, 1e-6, |p| {
        loss_chamfer(p, &gt, None, Reduction::Sum)
    })?);
    let logits = random(&mut rng, 8, 1, -3.0, 3.0);
    let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    out.push(check_input("loss/occupancy", &logits, 1e-5, FIRST_ORDER_TOL, |l| loss_occupancy(l, &labels))?);
    let probs = random(&mut rng, 8, 1, 0.05, 0.95);
    out.push(check_input("loss/consistency", &probs, 1e-6, FIRST_ORDER_TOL, |g| loss_consistency(g, 0.2))?);
    let occ_dirs = random(&mut rng, 6, 3, -1.0, 1.0);
    let atlas_dirs = random(&mut rng, 6, 3, -1.0, 1.0);
    out.push(check_input("loss/normal/atlas", &atlas_dirs, 1e-6, FIRST_ORDER_TOL, |a| {
        let o = a.tape().constant(occ_dirs.clone())?;
        Ok(loss_normal(a, o, Reduction::Mean)?.value.expect("nondegenerate"))
    })?);

    // Nested: normal loss between a toy atlas and occupancy pair.
    let model = tiny_model(6, LatentMode::AutoDecoder { shapes: 1 })?;
    let uv = random(&mut rng, 5, 2, 0.0, 1.0);
    let empty = Mat::zeros((1, 3));
    let nested = model_fn(|m, t| {
        let la = m.atlas_branch.latent(t, 0, &empty)?;
        let lo = m.occ_branch.latent(t, 0, &empty)?;
        let d = m.atlas.eval_with_tangents(&m.atlas_branch.params, la, 0, &uv)?;
        let cross = crate::networks::atlas_cross(&d)?;
        let (g, _) = occupancy_gradient(&m.occupancy, &m.occ_branch.params, lo, d.primal)?;
        Ok(loss_normal(cross, g.neg()?, Reduction::Mean)?.value.expect("nondegenerate"))
    });
    let wa = model.atlas.charts[0].first_weight();
    let wo = model.occupancy.mlp.first_weight();
    out.push(check_param("loss/normal/nested_atlas", &model, Side::Atlas, wa, 1e-4, NESTED_TOL, nested)?);
    out.push(check_param("loss/normal/nested_occupancy", &model, Side::Occupancy, wo, 1e-4, NESTED_TOL, nested)?);

    // Image loss through the rasterizer.
    let (verts, faces) = raster_scene();
    let cam = Camera::new(-0.4, 0.5, 20, 20, 1.0)?;
    let settings = RenderSettings {
        sigma: 0.06,
        gamma: 0.05,
        ..Default::default()
    };
    let target: Vec<[f64; 3]> = mat_to_points(&verts)
        .iter()
        .map(|v| [v[0] * 0.9 + 0.05, v[1], v[2] * 1.1])
        .collect();
    let (reference, _) = render_view(&target, &faces, &cam, &settings)?;
    let faces = Arc::new(faces);
    let image_loss = |v: Var<'_>, refs: &NormalMapImage| -> Result<f64> {
        let (img, _) = render_var(v, faces.clone(), &[cam], &settings)?;
        Ok(loss_image(img, &[refs], Reduction::Sum)?.item())
    };
    let mut p = ParameterSet::new("verts");
    p.add("v", verts.clone())?;
    let tape = Tape::new();
    let (img, _) = render_var(p.var(&tape, 0)?, faces.clone(), &[cam], &settings)?;
    let loss = loss_image(img, &[&reference], Reduction::Sum)?;
    let analytic = tape.backward(loss)?.param(p.key(0)).cloned().expect("vertex gradient");
    let numeric = central_gradient(&verts, 1e-4, |m| {
        let t = Tape::new();
        image_loss(t.constant(m.clone()).expect("finite"), &reference).unwrap_or(f64::NAN)
    });
    out.push(GradCheck {
        name: "loss/image".into(),
        metric: Metric::RelativeError,
        value: relative_error(&analytic, &numeric, 1e-6),
        tolerance: RASTER_REL_TOL,
    });
    Ok(())
}

fn raster_scene() -> (Mat, Vec<[usize; 3]>) {
    let verts = ndarray::array![
        [-0.6, -0.5, 0.1],
        [0.5, -0.4, -0.2],
        [0.1, 0.6, 0.0],
        [-0.2, -0.1, 0.3],
        [0.7, 0.2, 0.25],
        [0.0, 0.7, 0.4]
    ];
    (verts, vec![[0, 1, 2], [3, 4, 5]])
}

fn raster_checks(out: &mut Vec<GradCheck>) -> Result<()> {
    let (verts, faces) = raster_scene();
    let cam = Camera::new(0.3, 0.2, 24, 24, 1.0)?;
    let settings = RenderSettings {
        sigma: 0.05,
        gamma: 0.05,
        ..Default::default()
    };
    let faces = Arc::new(faces);
    let f = var_fn(|v| {
        let (img, _) = render_var(v, faces.clone(), &[cam], &settings)?;
        project(img, 9)
    });
    let mut p = ParameterSet::new("verts");
    p.add("v", verts.clone())?;
    let tape = Tape::new();
    let loss = f(p.var(&tape, 0)?)?;
    let analytic = tape.backward(loss)?.param(p.key(0)).cloned().expect("vertex gradient");
    let numeric = central_gradient(&verts, 1e-3, |m| {
        let t = Tape::new();
        f(t.constant(m.clone()).expect("finite")).map(|v| v.item()).unwrap_or(f64::NAN)
    });
    out.push(GradCheck {
        name: "rasterizer/vertices".into(),
        metric: Metric::Cosine,
        value: cosine(&analytic, &numeric),
        tolerance: RASTER_COSINE,
    });
    Ok(())
}

/// Runs every check in a fixed order.
pub fn run_all() -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    op_checks(&mut out)?;
    network_checks(&mut out)?;
    loss_checks(&mut out)?;
    raster_checks(&mut out)?;
    Ok(out)
}
