//! Training losses and their weighted combination.

use std::fmt::Write as _;
use std::rc::Rc;

use hsurf_autodiff::{Mat, Var};
use hsurf_geometry::{KdTree, Vec3};
use hsurf_raster::NormalMapImage;
use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::networks::DEGENERATE_NORM;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// How a per-element loss is reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl Reduction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Self::Sum),
            "mean" => Some(Self::Mean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
        }
    }

    fn apply(self, v: Var<'_>) -> Result<Var<'_>> {
        Ok(match self {
            Self::Sum => v.sum()?,
            Self::Mean => v.mean()?,
        })
    }
}

fn rows_to_mat(points: &[Vec3], idx: impl Iterator<Item = usize>) -> Mat {
    let rows: Vec<Vec3> = idx.map(|i| points[i]).collect();
    Array2::from_shape_fn((rows.len(), 3), |(i, k)| rows[i][k])
}

/// Squared chamfer distance between predicted rows `pred` (`n x 3`) and the
/// fixed set `gt`; each direction is summed (or averaged) over its points.
/// Gradients reach `pred` only.
pub fn loss_chamfer<'t>(
    pred: Var<'t>,
    gt: &[Vec3],
    gt_tree: Option<&KdTree>,
    reduction: Reduction,
) -> Result<Var<'t>> {
    let pv = pred.value();
    if pv.nrows() == 0 || gt.is_empty() {
        return Err(CoreError::InvalidArgument("chamfer needs two nonempty sets".into()));
    }
    let pred_points: Vec<Vec3> = pv.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    let own_tree;
    let gt_tree = match gt_tree {
        Some(t) => t,
        None => {
            own_tree = KdTree::new(gt);
            &own_tree
        }
    };
    let pred_tree = KdTree::new(&pred_points);
    let to_gt = pred_points.iter().map(|&p| gt_tree.nearest(p).expect("nonempty").0);
    let tape = pred.tape();
    let forward = pred
        .sub(tape.constant(rows_to_mat(gt, to_gt))?)?
        .square()?
        .sum_cols()?;
    let to_pred: Vec<usize> = gt.iter().map(|&g| pred_tree.nearest(g).expect("nonempty").0).collect();
    let backward = pred
        .gather_rows(Rc::new(to_pred))?
        .sub(tape.constant(rows_to_mat(gt, 0..gt.len()))?)?
        .square()?
        .sum_cols()?;
    Ok(reduction.apply(forward)?.add(reduction.apply(backward)?)?)
}

/// Binary cross-entropy in nats summed over the batch, from logits:
/// `softplus(l) - y l`.
pub fn loss_occupancy<'t>(logits: Var<'t>, labels: &[f64]) -> Result<Var<'t>> {
    let (n, m) = logits.shape();
    if m != 1 || n != labels.len() {
        return Err(CoreError::InvalidArgument(format!(
            "occupancy loss: {n}x{m} logits for {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(CoreError::InvalidArgument(format!("occupancy label {bad} is not binary")));
    }
    let y = logits.tape().constant(Array2::from_shape_fn((n, 1), |(i, _)| labels[i]))?;
    Ok(logits.softplus()?.sub(logits.mul(y)?)?.sum()?)
}

/// Cross-entropy of the probabilities at atlas points against the level
/// `tau`, summed over points: `-(tau ln g + (1 - tau) ln(1 - g))`.
pub fn loss_consistency<'t>(probs: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let g = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let a = g.log()?.scale(tau)?;
    let b = g.neg()?.offset(1.0)?.log()?.scale(1.0 - tau)?;
    Ok(a.add(b)?.sum()?.neg()?)
}

/// Per-point consistency value, for analytic checks.
pub fn consistency_value(g: f64, tau: f64) -> f64 {
    let g = g.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(tau * g.ln() + (1.0 - tau) * (1.0 - g).ln())
}

/// Normal alignment term and its bookkeeping.
#[derive(Debug)]
pub struct NormalLoss<'t> {
    /// `None` when every row was degenerate.
    pub value: Option<Var<'t>>,
    pub excluded_atlas: usize,
    pub excluded_occ: usize,
}

impl NormalLoss<'_> {
    pub fn all_excluded(&self) -> bool {
        self.value.is_none()
    }
}

/// `|1 - a_hat . o_hat|` reduced over rows where neither vector is
/// degenerate. Inputs are unnormalized `n x 3` rows.
pub fn loss_normal<'t>(
    n_atlas: Var<'t>,
    n_occ: Var<'t>,
    reduction: Reduction,
) -> Result<NormalLoss<'t>> {
    if n_atlas.shape() != n_occ.shape() || n_atlas.shape().1 != 3 {
        return Err(CoreError::InvalidArgument(format!(
            "normal loss: shapes {:?} and {:?}",
            n_atlas.shape(),
            n_occ.shape()
        )));
    }
    let short = |m: &Mat| -> Vec<bool> {
        m.rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt() < DEGENERATE_NORM)
            .collect()
    };
    let (bad_a, bad_o) = (short(&n_atlas.value()), short(&n_occ.value()));
    let excluded_atlas = bad_a.iter().filter(|&&b| b).count();
    let excluded_occ = bad_o.iter().filter(|&&b| b).count();
    let keep: Vec<usize> = (0..bad_a.len()).filter(|&i| !bad_a[i] && !bad_o[i]).collect();
    if keep.is_empty() {
        return Ok(NormalLoss {
            value: None,
            excluded_atlas,
            excluded_occ,
        });
    }
    let (a, o) = if keep.len() == bad_a.len() {
        (n_atlas, n_occ)
    } else {
        let keep = Rc::new(keep);
        (n_atlas.gather_rows(keep.clone())?, n_occ.gather_rows(keep)?)
    };
    let a = crate::networks::normalize_rows(a)?;
    let o = crate::networks::normalize_rows(o)?;
    let mis = a.row_dot(o)?.neg()?.offset(1.0)?.abs()?;
    Ok(NormalLoss {
        value: Some(reduction.apply(mis)?),
        excluded_atlas,
        excluded_occ,
    })
}

/// Mean over views of the squared image difference. `rendered` holds one
/// flattened view per row as produced by `render_var`. With
/// [`Reduction::Mean`] the per-view sum is divided by the pixel count.
pub fn loss_image<'t>(
    rendered: Var<'t>,
    reference: &[&NormalMapImage],
    reduction: Reduction,
) -> Result<Var<'t>> {
    let (views, len) = rendered.shape();
    if views != reference.len() || views == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "image loss: {views} rendered views, {} references",
            reference.len()
        )));
    }
    let mut target = Array2::zeros((views, len));
    for (v, img) in reference.iter().enumerate() {
        let flat = img.flat();
        if flat.len() != len {
            return Err(CoreError::InvalidArgument("image loss: resolution mismatch".into()));
        }
        target.row_mut(v).assign(&ndarray::ArrayView1::from(&flat));
    }
    let sq = rendered.sub(rendered.tape().constant(target)?)?.square()?.sum()?;
    let pixels = (len / 3) as f64;
    let denom = match reduction {
        Reduction::Sum => views as f64,
        Reduction::Mean => views as f64 * pixels,
    };
    Ok(sq.scale(1.0 / denom)?)
}

/// Weights of the combined objective and the ablation switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub use_image: bool,
    pub use_normal: bool,
    pub use_consistency: bool,
    /// Off only for atlas-only baselines.
    pub use_occupancy: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 2.5e4,
            beta: 1e3,
            gamma: 0.04,
            delta: 0.05,
            use_image: true,
            use_normal: true,
            use_consistency: true,
            use_occupancy: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CoreError::Config(format!("weight {name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }

    /// Whether each optional term is computed at all.
    pub fn image_active(&self) -> bool {
        self.use_image && self.beta > 0.0
    }

    pub fn normal_active(&self) -> bool {
        self.use_normal && self.delta > 0.0
    }

    pub fn consistency_active(&self) -> bool {
        self.use_consistency && self.gamma > 0.0
    }
}

/// Loss terms on one tape; absent terms contribute nothing.
#[derive(Debug, Default)]
pub struct LossTerms<'t> {
    pub occupancy: Option<Var<'t>>,
    pub chamfer: Option<Var<'t>>,
    pub image: Option<Var<'t>>,
    pub consistency: Option<Var<'t>>,
    pub normal: Option<Var<'t>>,
    pub excluded_atlas: usize,
    pub excluded_occ: usize,
    pub normal_all_excluded: bool,
}

pub const TERM_NAMES: [&str; 5] = ["occupancy", "chamfer", "image", "consistency", "normal"];

/// Values of one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    /// Unweighted terms in [`TERM_NAMES`] order; 0 when absent.
    pub raw: [f64; 5],
    pub weighted: [f64; 5],
    pub total: f64,
    pub excluded_atlas: usize,
    pub excluded_occ: usize,
    pub normal_all_excluded: bool,
    /// Mean `|g(f(p)) - tau|` at the sampled atlas points.
    pub level_gap: f64,
}

impl LossReport {
    pub fn csv_header() -> String {
        let mut h = String::from("step");
        for n in TERM_NAMES {
            let _ = write!(h, ",{n}");
        }
        for n in TERM_NAMES {
            let _ = write!(h, ",w_{n}");
        }
        h.push_str(",total,excluded_atlas,excluded_occ,normal_all_excluded,level_gap");
        h
    }

    pub fn csv_row(&self, step: usize) -> String {
        let mut r = step.to_string();
        for v in self.raw.iter().chain(&self.weighted) {
            let _ = write!(r, ",{v:?}");
        }
        let _ = write!(
            r,
            ",{:?},{},{},{},{:?}",
            self.total,
            self.excluded_atlas,
            self.excluded_occ,
            u8::from(self.normal_all_excluded),
            self.level_gap
        );
        r
    }

    /// Element-wise mean of several reports.
    pub fn average(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            for k in 0..5 {
                out.raw[k] += r.raw[k] / n;
                out.weighted[k] += r.weighted[k] / n;
            }
            out.total += r.total / n;
            out.excluded_atlas += r.excluded_atlas;
            out.excluded_occ += r.excluded_occ;
            out.normal_all_excluded |= r.normal_all_excluded;
            out.level_gap += r.level_gap / n;
        }
        out
    }
}

/// `L_occ + alpha L_chamfer + beta L_img + gamma L_cons + delta L_norm`
/// over the terms present and enabled.
pub fn total_loss<'t>(terms: &LossTerms<'t>, w: &LossWeights) -> Result<(Var<'t>, LossReport)> {
    w.validate()?;
    let slots = [
        (terms.occupancy, 1.0, w.use_occupancy),
        (terms.chamfer, w.alpha, true),
        (terms.image, w.beta, w.use_image),
        (terms.consistency, w.gamma, w.use_consistency),
        (terms.normal, w.delta, w.use_normal),
    ];
    let mut report = LossReport {
        excluded_atlas: terms.excluded_atlas,
        excluded_occ: terms.excluded_occ,
        normal_all_excluded: terms.normal_all_excluded,
        ..Default::default()
    };
    let mut total: Option<Var<'t>> = None;
    for (k, (term, weight, enabled)) in slots.into_iter().enumerate() {
        let Some(v) = term else { continue };
        if !enabled || weight == 0.0 {
            continue;
        }
        let scaled = if weight == 1.0 { v } else { v.scale(weight)? };
        report.raw[k] = v.item();
        report.weighted[k] = scaled.item();
        total = Some(match total {
            Some(t) => t.add(scaled)?,
            None => scaled,
        });
    }
    let total = total.ok_or_else(|| CoreError::InvalidArgument("no active loss terms".into()))?;
    report.total = total.item();
    Ok((total, report))
}
