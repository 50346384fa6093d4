//! Atlas and occupancy decoders, point-cloud encoders and the combined model.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::rc::Rc;

use hsurf_autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use hsurf_autodiff::{Dual, Mat, ParameterSet, Tape, Var};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::nn::{sigmoid_inplace, Head, Mlp};

/// Cross products or gradients shorter than this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Added to vector lengths before normalizing.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// How latent codes are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// One PointNet-style encoder per branch.
    Encoder,
    /// A learnable code per training shape and branch.
    AutoDecoder { shapes: usize },
}

/// Network sizes; serialized into checkpoint headers.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub charts: usize,
    pub atlas_width: usize,
    pub atlas_depth: usize,
    pub chart_gain: f64,
    pub occ_width: usize,
    pub occ_depth: usize,
    /// Hidden softplus sharpness of the occupancy MLP.
    pub occ_sharpness: f64,
    pub latent_dim: usize,
    pub enc_width: usize,
    pub enc_point_layers: usize,
    pub enc_head_layers: usize,
    pub tau: f64,
    pub mode: LatentMode,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            charts: 25,
            atlas_width: 128,
            atlas_depth: 4,
            chart_gain: 1.1,
            occ_width: 128,
            occ_depth: 5,
            occ_sharpness: 30.0,
            latent_dim: 128,
            enc_width: 128,
            enc_point_layers: 3,
            enc_head_layers: 2,
            tau: 0.2,
            mode: LatentMode::Encoder,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("charts", self.charts),
            ("atlas_width", self.atlas_width),
            ("atlas_depth", self.atlas_depth),
            ("occ_width", self.occ_width),
            ("occ_depth", self.occ_depth),
            ("latent_dim", self.latent_dim),
            ("enc_width", self.enc_width),
            ("enc_point_layers", self.enc_point_layers),
            ("enc_head_layers", self.enc_head_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CoreError::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.occ_sharpness > 0.0 && self.occ_sharpness.is_finite()) {
            return Err(CoreError::Config("occ_sharpness must be positive".into()));
        }
        if !(self.chart_gain > 0.0) {
            return Err(CoreError::Config("chart_gain must be positive".into()));
        }
        if self.mode == (LatentMode::AutoDecoder { shapes: 0 }) {
            return Err(CoreError::Config("auto-decoder needs at least one shape".into()));
        }
        Ok(())
    }

    pub fn to_header(&self) -> String {
        let mode = match self.mode {
            LatentMode::Encoder => "encoder".to_string(),
            LatentMode::AutoDecoder { shapes } => format!("auto-decoder:{shapes}"),
        };
        format!(
            "charts={}\natlas_width={}\natlas_depth={}\nchart_gain={:?}\nocc_width={}\nocc_depth={}\n\
             occ_sharpness={:?}\nlatent_dim={}\nenc_width={}\nenc_point_layers={}\nenc_head_layers={}\ntau={:?}\nmode={}\n",
            self.charts,
            self.atlas_width,
            self.atlas_depth,
            self.chart_gain,
            self.occ_width,
            self.occ_depth,
            self.occ_sharpness,
            self.latent_dim,
            self.enc_width,
            self.enc_point_layers,
            self.enc_head_layers,
            self.tau,
            mode
        )
    }

    pub fn from_header(text: &str) -> Result<Self> {
        let mut a = Architecture::default();
        let bad = |k: &str, v: &str| CoreError::Checkpoint(format!("bad header value {k}={v}"));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Checkpoint(format!("bad header line `{line}`")))?;
            let int = || v.parse::<usize>().map_err(|_| bad(k, v));
            let float = || v.parse::<f64>().map_err(|_| bad(k, v));
            match k {
                "charts" => a.charts = int()?,
                "atlas_width" => a.atlas_width = int()?,
                "atlas_depth" => a.atlas_depth = int()?,
                "chart_gain" => a.chart_gain = float()?,
                "occ_width" => a.occ_width = int()?,
                "occ_depth" => a.occ_depth = int()?,
                "occ_sharpness" => a.occ_sharpness = float()?,
                "latent_dim" => a.latent_dim = int()?,
                "enc_width" => a.enc_width = int()?,
                "enc_point_layers" => a.enc_point_layers = int()?,
                "enc_head_layers" => a.enc_head_layers = int()?,
                "tau" => a.tau = float()?,
                "mode" => {
                    a.mode = match v.split_once(':') {
                        None if v == "encoder" => LatentMode::Encoder,
                        Some(("auto-decoder", n)) => LatentMode::AutoDecoder {
                            shapes: n.parse().map_err(|_| bad(k, v))?,
                        },
                        _ => return Err(bad(k, v)),
                    }
                }
                _ => return Err(CoreError::Checkpoint(format!("unknown header key `{k}`"))),
            }
        }
        a.validate()?;
        Ok(a)
    }
}

/// `K` independent chart MLPs mapping `[0,1]^2` (plus latent) to 3-D.
#[derive(Clone, Debug)]
pub struct AtlasDecoder {
    pub charts: Vec<Mlp>,
}

impl AtlasDecoder {
    fn new(set: &mut ParameterSet, arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(arch.atlas_width, arch.atlas_depth));
        dims.push(3);
        let charts = (0..arch.charts)
            .map(|i| {
                Mlp::new(set, &format!("chart{i}"), &dims, arch.latent_dim, Head::Tanh(arch.chart_gain), rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { charts })
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    fn chart(&self, chart: usize) -> Result<&Mlp> {
        self.charts.get(chart).ok_or_else(|| {
            CoreError::InvalidArgument(format!("chart {chart} out of range ({} charts)", self.charts.len()))
        })
    }

    /// Points of chart `chart` at `uv` (`n x 2`), recorded on the tape.
    pub fn eval<'t>(
        &self,
        set: &ParameterSet,
        latent: Var<'t>,
        chart: usize,
        uv: &Mat,
    ) -> Result<Var<'t>> {
        let mlp = self.chart(chart)?;
        let uv = latent.tape().constant(clamp_uv(uv))?;
        mlp.forward(set, uv, Some(latent))
    }

    /// Points together with the tangents along `u` and `v`.
    pub fn eval_with_tangents<'t>(
        &self,
        set: &ParameterSet,
        latent: Var<'t>,
        chart: usize,
        uv: &Mat,
    ) -> Result<Dual<'t>> {
        let mlp = self.chart(chart)?;
        let n = uv.nrows();
        let uv = latent.tape().constant(clamp_uv(uv))?;
        let du = Array2::from_shape_fn((n, 2), |(_, k)| if k == 0 { 1.0 } else { 0.0 });
        let dv = Array2::from_shape_fn((n, 2), |(_, k)| if k == 1 { 1.0 } else { 0.0 });
        mlp.forward_dual(set, Dual::seed(uv, vec![du, dv])?, Some(latent))
    }

    /// Tape-free chart evaluation.
    pub fn eval_plain(&self, set: &ParameterSet, latent: &Mat, chart: usize, uv: &Mat) -> Result<Mat> {
        Ok(self.chart(chart)?.eval(set, &clamp_uv(uv), Some(latent)))
    }
}

fn clamp_uv(uv: &Mat) -> Mat {
    if uv.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        log::warn!("uv outside the unit square; clamping");
        uv.mapv(|x| x.clamp(0.0, 1.0))
    } else {
        uv.clone()
    }
}

/// Unnormalized surface normal `f_u x f_v` of an atlas dual.
pub fn atlas_cross<'t>(points: &Dual<'t>) -> Result<Var<'t>> {
    Ok(points.tangents[0].cross(points.tangents[1])?)
}

/// `v / (|v| + eps)` row-wise.
pub fn normalize_rows(v: Var<'_>) -> Result<Var<'_>> {
    Ok(v.div(v.row_norm()?.offset(NORMALIZE_EPS)?)?)
}

/// Unit normals of chart `chart` at `uv`, plus a flag per row that is true
/// where the parameterization is degenerate.
pub fn atlas_normal<'t>(
    decoder: &AtlasDecoder,
    set: &ParameterSet,
    latent: Var<'t>,
    chart: usize,
    uv: &Mat,
) -> Result<(Var<'t>, Vec<bool>)> {
    let d = decoder.eval_with_tangents(set, latent, chart, uv)?;
    let c = atlas_cross(&d)?;
    let degenerate = degenerate_rows(&c.value());
    Ok((normalize_rows(c)?, degenerate))
}

pub fn degenerate_rows(m: &Mat) -> Vec<bool> {
    m.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt() < DEGENERATE_NORM)
        .collect()
}

/// Occupancy MLP over `(q, latent)` with a linear logit head.
#[derive(Clone, Debug)]
pub struct OccupancyDecoder {
    pub mlp: Mlp,
}

impl OccupancyDecoder {
    fn new(set: &mut ParameterSet, arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut dims = vec![3];
        dims.extend(std::iter::repeat_n(arch.occ_width, arch.occ_depth));
        dims.push(1);
        Ok(Self {
            mlp: Mlp::new(set, "occ", &dims, arch.latent_dim, Head::Linear, rng)?
                .with_sharpness(arch.occ_sharpness),
        })
    }

    /// Logits (`n x 1`) at query rows `q` (`n x 3`).
    pub fn logits<'t>(&self, set: &ParameterSet, latent: Var<'t>, q: Var<'t>) -> Result<Var<'t>> {
        self.mlp.forward(set, q, Some(latent))
    }

    /// Probabilities and logits.
    pub fn eval<'t>(
        &self,
        set: &ParameterSet,
        latent: Var<'t>,
        q: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let l = self.logits(set, latent, q)?;
        Ok((l.sigmoid()?, l))
    }

    /// Logits with tangents along the three coordinate axes.
    pub fn logits_with_gradient<'t>(
        &self,
        set: &ParameterSet,
        latent: Var<'t>,
        q: Var<'t>,
    ) -> Result<Dual<'t>> {
        let n = q.shape().0;
        let dirs = (0..3)
            .map(|a| Array2::from_shape_fn((n, 3), |(_, k)| if k == a { 1.0 } else { 0.0 }))
            .collect();
        self.mlp.forward_dual(set, Dual::seed(q, dirs)?, Some(latent))
    }

    /// Tape-free probabilities.
    pub fn eval_plain(&self, set: &ParameterSet, latent: &Mat, q: &Mat) -> Mat {
        let mut p = self.mlp.eval(set, q, Some(latent));
        sigmoid_inplace(&mut p);
        p
    }
}

/// Probability gradient `grad_q g` (`n x 3`) from logits carrying axis
/// tangents, and the probabilities themselves.
pub fn probability_gradient<'t>(logits: &Dual<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let g = logits.sigmoid()?;
    let grad = Var::concat_cols(&g.tangents)?;
    Ok((grad, g.primal))
}

/// `grad_q g` at `q`, plus per-row degeneracy flags.
pub fn occupancy_gradient<'t>(
    decoder: &OccupancyDecoder,
    set: &ParameterSet,
    latent: Var<'t>,
    q: Var<'t>,
) -> Result<(Var<'t>, Vec<bool>)> {
    let d = decoder.logits_with_gradient(set, latent, q)?;
    let (grad, _) = probability_gradient(&d)?;
    let degenerate = degenerate_rows(&grad.value());
    Ok((grad, degenerate))
}

/// Shared per-point MLP, channelwise max pool, then a head MLP.
#[derive(Clone, Debug)]
pub struct PointEncoder {
    pub point: Mlp,
    pub head: Mlp,
}

impl PointEncoder {
    fn new(set: &mut ParameterSet, arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut dims = vec![3];
        dims.extend(std::iter::repeat_n(arch.enc_width, arch.enc_point_layers));
        let point = Mlp::new(set, "enc.point", &dims, 0, Head::Softplus, rng)?;
        let mut head_dims = vec![arch.enc_width];
        head_dims.extend(std::iter::repeat_n(arch.enc_width, arch.enc_head_layers - 1));
        head_dims.push(arch.latent_dim);
        let head = Mlp::new(set, "enc.head", &head_dims, 0, Head::Linear, rng)?;
        Ok(Self { point, head })
    }

    /// Latent (`1 x latent_dim`) of a point cloud (`n x 3`).
    pub fn encode<'t>(&self, set: &ParameterSet, tape: &'t Tape, cloud: &Mat) -> Result<Var<'t>> {
        if cloud.nrows() == 0 {
            return Err(CoreError::InvalidArgument("cannot encode an empty point cloud".into()));
        }
        let x = tape.constant(cloud.clone())?;
        let features = self.point.forward(set, x, None)?;
        self.head.forward(set, features.max_rows()?, None)
    }

    pub fn encode_plain(&self, set: &ParameterSet, cloud: &Mat) -> Result<Mat> {
        if cloud.nrows() == 0 {
            return Err(CoreError::InvalidArgument("cannot encode an empty point cloud".into()));
        }
        let f = self.point.eval(set, cloud, None);
        let pooled = f.fold_axis(ndarray::Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        Ok(self.head.eval(set, &pooled.insert_axis(ndarray::Axis(0)), None))
    }
}

/// One branch: decoder weights plus encoder or per-shape latents.
#[derive(Clone, Debug)]
pub struct Branch {
    pub params: ParameterSet,
    pub encoder: Option<PointEncoder>,
    pub latents: Vec<usize>,
}

impl Branch {
    fn new(label: &str, arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParameterSet::new(label);
        let mut encoder = None;
        let mut latents = Vec::new();
        match arch.mode {
            LatentMode::Encoder => encoder = Some(PointEncoder::new(&mut params, arch, rng)?),
            LatentMode::AutoDecoder { shapes } => {
                let normal = Normal::new(0.0, 0.01).expect("valid deviation");
                for s in 0..shapes {
                    let z = Array2::from_shape_fn((1, arch.latent_dim), |_| normal.sample(rng));
                    latents.push(params.add(format!("latent{s}"), z)?);
                }
            }
        }
        Ok(Self {
            params,
            encoder,
            latents,
        })
    }

    /// Latent on the tape for training shape `shape` with input `cloud`.
    pub fn latent<'t>(&self, tape: &'t Tape, shape: usize, cloud: &Mat) -> Result<Var<'t>> {
        match &self.encoder {
            Some(enc) => enc.encode(&self.params, tape, cloud),
            None => {
                let idx = *self.latents.get(shape).ok_or_else(|| {
                    CoreError::InvalidArgument(format!("no latent for shape {shape}"))
                })?;
                Ok(self.params.var(tape, idx)?)
            }
        }
    }

    pub fn latent_plain(&self, shape: usize, cloud: &Mat) -> Result<Mat> {
        match &self.encoder {
            Some(enc) => enc.encode_plain(&self.params, cloud),
            None => {
                let idx = *self.latents.get(shape).ok_or_else(|| {
                    CoreError::InvalidArgument(format!("no latent for shape {shape}"))
                })?;
                Ok(self.params.value(idx).clone())
            }
        }
    }
}

/// Both decoders with their encoders or latents.
#[derive(Clone, Debug)]
pub struct HybridModel {
    pub arch: Architecture,
    pub atlas: AtlasDecoder,
    pub occupancy: OccupancyDecoder,
    pub atlas_branch: Branch,
    pub occ_branch: Branch,
}

/// Record name prefixes inside checkpoints.
const ATLAS_PREFIX: &str = "atlas/";
const OCC_PREFIX: &str = "occupancy/";

impl HybridModel {
    /// Xavier-initialized weights, zero biases; latents `N(0, 0.01^2)`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atlas_branch = Branch::new("atlas", &arch, &mut rng)?;
        let atlas = AtlasDecoder::new(&mut atlas_branch.params, &arch, &mut rng)?;
        let mut occ_branch = Branch::new("occupancy", &arch, &mut rng)?;
        let occupancy = OccupancyDecoder::new(&mut occ_branch.params, &arch, &mut rng)?;
        Ok(Self {
            arch,
            atlas,
            occupancy,
            atlas_branch,
            occ_branch,
        })
    }

    pub fn tau(&self) -> f64 {
        self.arch.tau
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut records = self.atlas_branch.params.to_records(ATLAS_PREFIX);
        records.extend(self.occ_branch.params.to_records(OCC_PREFIX));
        let w = BufWriter::new(File::create(path)?);
        write_checkpoint(w, &self.arch.to_header(), &records)?;
        Ok(())
    }

    /// Rebuilds the architecture from the header, then restores weights and
    /// optimizer state.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, records) = read_checkpoint(BufReader::new(File::open(path)?))?;
        let arch = Architecture::from_header(&header)?;
        let mut model = Self::new(arch, 0)?;
        model.atlas_branch.params.load_records(ATLAS_PREFIX, &records)?;
        model.occ_branch.params.load_records(OCC_PREFIX, &records)?;
        Ok(model)
    }

    /// Sets the occupancy head to zero so every query starts at 0.5.
    pub fn zero_occupancy_head(&mut self) -> Result<()> {
        let w = self.occupancy.mlp.last_weight();
        let b = self.occupancy.mlp.last_bias();
        let p = &mut self.occ_branch.params;
        p.set_value(w, Mat::zeros(p.value(w).dim()))?;
        p.set_value(b, Mat::zeros(p.value(b).dim()))?;
        Ok(())
    }
}

/// Direction rows for a single query, handy for one-off evaluations.
pub fn single_query(q: [f64; 3]) -> Mat {
    array![[q[0], q[1], q[2]]]
}

/// Shared index vector for [`Var::gather_rows`].
pub fn rows(idx: Vec<usize>) -> Rc<Vec<usize>> {
    Rc::new(idx)
}
