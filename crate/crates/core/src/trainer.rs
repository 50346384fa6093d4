//! Joint training of both branches.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hsurf_autodiff::{AdamConfig, AutodiffError, Mat, Tape, Var};
use hsurf_geometry::{ChartGrid, KdTree, Vec3};
use hsurf_raster::{make_view_grid, normalize_to_unit_cube_var, render_var, Camera};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::{build_dataset, Dataset};
use crate::error::{CoreError, Result};
use crate::losses::{
    loss_chamfer, loss_consistency, loss_image, loss_normal, loss_occupancy, total_loss,
    LossReport, LossTerms,
};
use crate::networks::{atlas_cross, probability_gradient, HybridModel};

/// Samples drawn for one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSamples {
    pub shapes: Vec<usize>,
    /// Per batch entry: `charts * samples_per_chart` rows of uv, chart-major.
    pub uv: Vec<Mat>,
    pub occupancy: Vec<Vec<usize>>,
    pub surface: Vec<Vec<usize>>,
    /// View indices for the image term, when it is evaluated this step.
    pub views: Option<Vec<usize>>,
}

/// Builds the dataset for `cfg`, rendering reference images when the image
/// term is active.
pub fn prepare_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let mut ds = build_dataset(&cfg.dataset_config()?)?;
    if cfg.weights().image_active() {
        ds.prepare_references(&view_grid(cfg)?, &cfg.render_settings())?;
    }
    Ok(ds)
}

pub fn view_grid(cfg: &TrainConfig) -> Result<Vec<Camera>> {
    Ok(make_view_grid(
        cfg.render_resolution,
        cfg.render_resolution,
        cfg.render_half_extent,
    )?)
}

/// Face list of the atlas grid mesh with charts stacked in order.
pub fn atlas_grid_faces(charts: usize, grid: ChartGrid) -> Vec<[usize; 3]> {
    let per = grid.vertices_per_chart();
    let tris = grid.triangles();
    (0..charts)
        .flat_map(|c| tris.iter().map(move |t| [t[0] + c * per, t[1] + c * per, t[2] + c * per]))
        .collect()
}

pub fn grid_uv_mat(grid: ChartGrid) -> Mat {
    let uv = grid.uv();
    Array2::from_shape_fn((uv.len(), 2), |(i, k)| uv[i][k])
}

pub struct Trainer<'d> {
    pub cfg: TrainConfig,
    pub model: HybridModel,
    dataset: &'d Dataset,
    rng: ChaCha8Rng,
    cameras: Vec<Camera>,
    grid_uv: Mat,
    grid_faces: Arc<Vec<[usize; 3]>>,
    adam: AdamConfig,
    step: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: TrainConfig, dataset: &'d Dataset) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(CoreError::Dataset("empty dataset".into()));
        }
        let model = HybridModel::new(cfg.architecture(dataset.len()), cfg.seed)?;
        Self::with_model(cfg, dataset, model)
    }

    /// Continues from an existing model (e.g. a loaded checkpoint).
    pub fn with_model(cfg: TrainConfig, dataset: &'d Dataset, model: HybridModel) -> Result<Self> {
        cfg.validate()?;
        if cfg.weights().image_active() && dataset.shapes.iter().any(|s| s.references.is_none()) {
            return Err(CoreError::Dataset(
                "image term active but reference images were not prepared".into(),
            ));
        }
        let grid = ChartGrid::new(cfg.grid_resolution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            cameras: view_grid(&cfg)?,
            grid_uv: grid_uv_mat(grid),
            grid_faces: Arc::new(atlas_grid_faces(cfg.charts, grid)),
            adam: AdamConfig {
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
            },
            model,
            dataset,
            rng,
            cfg,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn draw_samples(&mut self) -> StepSamples {
        let cfg = &self.cfg;
        let n = self.dataset.len();
        let shapes: Vec<usize> = if cfg.batch_size >= n {
            (0..n).collect()
        } else {
            let mut s = sample(&mut self.rng, n, cfg.batch_size).into_vec();
            s.sort_unstable();
            s
        };
        let mut uv = Vec::new();
        let mut occupancy = Vec::new();
        let mut surface = Vec::new();
        for &s in &shapes {
            let data = &self.dataset.shapes[s];
            let rows = cfg.charts * cfg.samples_per_chart;
            uv.push(Array2::from_shape_fn((rows, 2), |_| self.rng.gen::<f64>()));
            occupancy.push(sample(&mut self.rng, data.occupancy.len(), cfg.occupancy_samples).into_vec());
            surface.push(sample(&mut self.rng, data.surface.len(), cfg.gt_points).into_vec());
        }
        let views = (self.cfg.weights().image_active() && self.step.is_multiple_of(cfg.image_every)).then(|| {
            let mut v = sample(&mut self.rng, self.cameras.len(), cfg.views_per_step).into_vec();
            v.sort_unstable();
            v
        });
        StepSamples {
            shapes,
            uv,
            occupancy,
            surface,
            views,
        }
    }

    /// Batch-averaged objective for `samples` on `tape`.
    pub fn loss<'t>(&self, tape: &'t Tape, samples: &StepSamples) -> Result<(Var<'t>, LossReport)> {
        let mut total: Option<Var<'t>> = None;
        let mut reports = Vec::new();
        for (b, &s) in samples.shapes.iter().enumerate() {
            let (t, r) = self.shape_loss(tape, samples, b, s)?;
            total = Some(match total {
                Some(acc) => acc.add(t)?,
                None => t,
            });
            reports.push(r);
        }
        let n = samples.shapes.len() as f64;
        let total = total.ok_or_else(|| CoreError::Dataset("empty batch".into()))?;
        let total = if n == 1.0 { total } else { total.scale(1.0 / n)? };
        let mut report = LossReport::average(&reports);
        report.total = total.item();
        Ok((total, report))
    }

    fn shape_loss<'t>(
        &self,
        tape: &'t Tape,
        samples: &StepSamples,
        b: usize,
        s: usize,
    ) -> Result<(Var<'t>, LossReport)> {
        let cfg = &self.cfg;
        let w = cfg.weights();
        let m = &self.model;
        let data = &self.dataset.shapes[s];
        let aset = &m.atlas_branch.params;
        let oset = &m.occ_branch.params;
        let lat_a = m.atlas_branch.latent(tape, s, &data.cloud)?;
        let need_normals = w.normal_active();
        let need_probs = w.consistency_active() || need_normals;

        let spc = cfg.samples_per_chart;
        let mut points = Vec::with_capacity(cfg.charts);
        let mut crosses = Vec::new();
        for c in 0..cfg.charts {
            let uv = samples.uv[b].slice(ndarray::s![c * spc..(c + 1) * spc, ..]).to_owned();
            if need_normals {
                let d = m.atlas.eval_with_tangents(aset, lat_a, c, &uv)?;
                crosses.push(atlas_cross(&d)?);
                points.push(d.primal);
            } else {
                points.push(m.atlas.eval(aset, lat_a, c, &uv)?);
            }
        }
        let p = Var::concat_rows(&points)?;

        let mut terms = LossTerms::default();
        let gt: Vec<Vec3> = samples.surface[b].iter().map(|&i| data.surface.points[i]).collect();
        let gt_tree = KdTree::new(&gt);
        terms.chamfer = Some(loss_chamfer(p, &gt, Some(&gt_tree), cfg.chamfer_reduction)?);

        let need_latent_o = w.use_occupancy || need_probs;
        let lat_o = if need_latent_o {
            Some(m.occ_branch.latent(tape, s, &data.cloud)?)
        } else {
            None
        };
        if let (true, Some(lat_o)) = (w.use_occupancy, lat_o) {
            let occ = data.occupancy.select(&samples.occupancy[b]);
            let q = tape.constant(crate::nn::points_to_mat(&occ.points))?;
            let labels: Vec<f64> = occ.labels.iter().map(|&l| f64::from(u8::from(l))).collect();
            terms.occupancy = Some(loss_occupancy(m.occupancy.logits(oset, lat_o, q)?, &labels)?);
        }

        let mut level_probs: Option<Mat> = None;
        if let (true, Some(lat_o)) = (need_probs, lat_o) {
            let queries = if cfg.detach_queries {
                tape.constant((*p.value()).clone())?
            } else {
                p
            };
            let probs = if need_normals {
                let dual = m.occupancy.logits_with_gradient(oset, lat_o, queries)?;
                let (grad, probs) = probability_gradient(&dual)?;
                let n_atlas = Var::concat_rows(&crosses)?;
                let nl = loss_normal(n_atlas, grad.neg()?, cfg.normal_reduction)?;
                terms.excluded_atlas = nl.excluded_atlas;
                terms.excluded_occ = nl.excluded_occ;
                terms.normal_all_excluded = nl.all_excluded();
                terms.normal = nl.value;
                probs
            } else {
                m.occupancy.eval(oset, lat_o, queries)?.0
            };
            if w.consistency_active() {
                terms.consistency = Some(loss_consistency(probs, m.tau())?);
            }
            level_probs = Some((*probs.value()).clone());
        }

        if let Some(views) = &samples.views {
            let refs = data
                .references
                .as_ref()
                .ok_or_else(|| CoreError::Dataset("missing reference images".into()))?;
            let grid_points = (0..cfg.charts)
                .map(|c| m.atlas.eval(aset, lat_a, c, &self.grid_uv))
                .collect::<Result<Vec<_>>>()?;
            let verts = normalize_to_unit_cube_var(Var::concat_rows(&grid_points)?)?;
            let cams: Vec<Camera> = views.iter().map(|&v| self.cameras[v]).collect();
            let (img, _) = render_var(verts, self.grid_faces.clone(), &cams, &cfg.render_settings())?;
            let targets: Vec<_> = views.iter().map(|&v| &refs[v]).collect();
            terms.image = Some(loss_image(img, &targets, cfg.image_reduction)?);
        }

        let (total, mut report) = total_loss(&terms, &w)?;
        let probs = match level_probs {
            Some(pr) => pr,
            None => {
                let lat = m.occ_branch.latent_plain(s, &data.cloud)?;
                m.occupancy.eval_plain(oset, &lat, &p.value())
            }
        };
        report.level_gap = probs.iter().map(|g| (g - m.tau()).abs()).sum::<f64>() / probs.len() as f64;
        Ok((total, report))
    }

    /// One optimization step. Parameters are left untouched on failure.
    pub fn step(&mut self) -> Result<LossReport> {
        let samples = self.draw_samples();
        let step = self.step;
        let tape = Tape::new();
        let (total, report) = self.loss(&tape, &samples).map_err(|e| non_finite(step, e, None))?;
        if !report.total.is_finite() {
            return Err(non_finite(step, CoreError::Autodiff(AutodiffError::NonFinite("total")), Some(&report)));
        }
        let grads = tape.backward(total).map_err(|e| non_finite(step, e.into(), Some(&report)))?;
        let atlas = &mut self.model.atlas_branch.params;
        let occ = &mut self.model.occ_branch.params;
        atlas.accumulate(&grads)?;
        occ.accumulate(&grads)?;
        let finite = [&*atlas, &*occ].iter().all(|set| {
            (0..set.len()).all(|i| set.grad(i).is_some_and(|g| g.iter().all(|x| x.is_finite())))
        });
        if !finite {
            atlas.zero_grad();
            occ.zero_grad();
            return Err(non_finite(
                step,
                CoreError::Autodiff(AutodiffError::NonFinite("gradient")),
                Some(&report),
            ));
        }
        atlas.adam_step(self.cfg.lr_atlas, &self.adam)?;
        occ.adam_step(self.cfg.lr_occ, &self.adam)?;
        self.step += 1;
        Ok(report)
    }

    /// Runs the configured number of steps. With `out`, writes the config,
    /// the per-step CSV and checkpoints there; on a non-finite loss the last
    /// good model is saved as `last_good.hsrf` next to `failure.txt`.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<LossReport>> {
        let mut csv = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("config.txt"), self.cfg.to_text())?;
                let mut f = File::create(dir.join("losses.csv"))?;
                writeln!(f, "{}", LossReport::csv_header())?;
                Some(f)
            }
            None => None,
        };
        let mut reports = Vec::with_capacity(self.cfg.steps);
        while self.step < self.cfg.steps {
            let step = self.step;
            match self.step() {
                Ok(r) => {
                    if let Some(f) = csv.as_mut() {
                        writeln!(f, "{}", r.csv_row(step))?;
                    }
                    if step.is_multiple_of(100) {
                        log::info!("step {step}: total {:.6e}, level gap {:.4}", r.total, r.level_gap);
                    }
                    reports.push(r);
                }
                Err(e) => {
                    if let Some(dir) = out {
                        self.model.save(dir.join("last_good.hsrf"))?;
                        std::fs::write(dir.join("failure.txt"), format!("{e}\n"))?;
                    }
                    return Err(e);
                }
            }
            if let Some(dir) = out {
                if self.step.is_multiple_of(self.cfg.checkpoint_every) || self.step == self.cfg.steps {
                    self.model.save(checkpoint_path(dir))?;
                }
            }
        }
        Ok(reports)
    }
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.hsrf")
}

fn non_finite(step: usize, err: CoreError, report: Option<&LossReport>) -> CoreError {
    match err {
        CoreError::Autodiff(AutodiffError::NonFinite(what)) => {
            let mut diagnostic = format!("non-finite value in `{what}`");
            if let Some(r) = report {
                diagnostic.push_str(&format!(
                    "; terms (occupancy, chamfer, image, consistency, normal) = {:?}, weighted = {:?}",
                    r.raw, r.weighted
                ));
            }
            CoreError::NonFiniteLoss { step, diagnostic }
        }
        other => other,
    }
}

/// Builds the dataset, trains, and returns the trained model with its
/// per-step reports.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<(HybridModel, Vec<LossReport>, Dataset)> {
    let dataset = prepare_dataset(cfg)?;
    let (model, reports) = {
        let mut t = Trainer::new(cfg.clone(), &dataset)?;
        let reports = t.run(out)?;
        (t.model, reports)
    };
    Ok((model, reports, dataset))
}

/// A finished (or interrupted) training directory.
pub struct Run {
    pub cfg: TrainConfig,
    pub model: HybridModel,
    pub dataset: Dataset,
}

/// Reloads `config.txt` and the latest checkpoint from `dir` and rebuilds
/// the dataset without reference renders.
pub fn load_run(dir: &Path) -> Result<Run> {
    let cfg = TrainConfig::load(dir.join("config.txt"))?;
    let ckpt = checkpoint_path(dir);
    let path = if ckpt.exists() { ckpt } else { dir.join("last_good.hsrf") };
    let model = HybridModel::load(&path)?;
    let dataset = crate::dataset::build_dataset(&cfg.dataset_config()?)?;
    Ok(Run { cfg, model, dataset })
}
