//! Versioned plain-text `key = value` training configuration.
//!
//! Every field has a default; [`TrainConfig::to_text`] writes all of them so
//! a run directory always records the effective values.

use std::path::Path;

use hsurf_raster::RenderSettings;

use crate::dataset::{DatasetConfig, ShapeSource};
use crate::error::{CoreError, Result};
use crate::losses::{LossWeights, Reduction};
use crate::networks::{Architecture, LatentMode};

pub const CONFIG_VERSION: u32 = 1;

/// How latents are produced; the shape count comes from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Encoder,
    AutoDecoder,
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("cannot parse `{s}` as {}", stringify!($t)))
            }
            fn render(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}
from_str_value!(usize, u64, f64, bool);

impl ConfigValue for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Vec<String> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect())
    }
    fn render(&self) -> String {
        self.join(",")
    }
}

impl ConfigValue for Reduction {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Reduction::parse(s).ok_or_else(|| format!("reduction must be sum or mean, got `{s}`"))
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for ModeKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "encoder" => Ok(ModeKind::Encoder),
            "auto-decoder" => Ok(ModeKind::AutoDecoder),
            _ => Err(format!("mode must be encoder or auto-decoder, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            ModeKind::Encoder => "encoder",
            ModeKind::AutoDecoder => "auto-decoder",
        }
        .to_string()
    }
}

macro_rules! config_fields {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// All settings of a training run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct TrainConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl TrainConfig {
            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $( stringify!($field) => self.$field = ConfigValue::parse_value(value)?, )*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// Every field as `(key, value)` in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![ $( (stringify!($field), self.$field.render()), )* ]
            }
        }
    };
}

config_fields! {
    /// Comma-separated list: `sphere`, `box`, `torus`, `cylinder` or `obj:<path>`.
    shapes: Vec<String> = vec!["sphere".into(), "box".into(), "torus".into(), "cylinder".into()],
    /// Directory whose `.obj` files are appended to `shapes` (empty for none).
    obj_dir: String = String::new(),
    tessellation: usize = 64,
    surface_samples: usize = 10_000,
    occupancy_pool: usize = 10_000,
    occupancy_padding: f64 = 0.1,
    input_points: usize = 2500,
    cache_dir: String = String::new(),

    mode: ModeKind = ModeKind::Encoder,
    charts: usize = 25,
    atlas_width: usize = 128,
    atlas_depth: usize = 4,
    chart_gain: f64 = 1.1,
    occ_width: usize = 128,
    occ_depth: usize = 5,
    occ_sharpness: f64 = 30.0,
    latent_dim: usize = 128,
    enc_width: usize = 128,
    enc_point_layers: usize = 3,
    enc_head_layers: usize = 2,
    tau: f64 = 0.2,

    samples_per_chart: usize = 100,
    grid_resolution: usize = 10,
    occupancy_samples: usize = 2500,
    gt_points: usize = 2500,
    batch_size: usize = 10,
    steps: usize = 2000,
    seed: u64 = 0,

    alpha: f64 = 2.5e4,
    beta: f64 = 1e3,
    gamma: f64 = 0.04,
    delta: f64 = 0.05,
    use_image: bool = true,
    use_normal: bool = true,
    use_consistency: bool = true,
    use_occupancy: bool = true,
    /// Feed atlas points to the occupancy branch as constants.
    detach_queries: bool = false,
    chamfer_reduction: Reduction = Reduction::Sum,
    normal_reduction: Reduction = Reduction::Mean,
    image_reduction: Reduction = Reduction::Sum,

    lr_atlas: f64 = 6e-4,
    lr_occ: f64 = 1.5e-4,
    adam_beta1: f64 = 0.9,
    adam_beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,

    render_resolution: usize = 64,
    render_sigma: f64 = 1.0 / 64.0,
    render_gamma: f64 = 1e-2,
    render_background: f64 = 0.5,
    render_cutoff: f64 = 8.0,
    render_half_extent: f64 = 0.9,
    /// Random subset of the 25 views rendered per image-loss step.
    views_per_step: usize = 25,
    /// The image term is evaluated every this many steps.
    image_every: usize = 1,

    checkpoint_every: usize = 500,
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CoreError::ConfigParse { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "version" {
                let n: u32 = v.parse().map_err(|_| err(format!("bad version `{v}`")))?;
                if n != CONFIG_VERSION {
                    return Err(err(format!("unsupported config version {n}")));
                }
                version = Some(n);
                continue;
            }
            if version.is_none() {
                return Err(err("the first setting must be `version`".into()));
            }
            cfg.set(k, v).map_err(err)?;
        }
        if version.is_none() {
            return Err(CoreError::ConfigParse {
                line: 0,
                msg: "missing `version`".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("version = {CONFIG_VERSION}\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture(1).validate()?;
        self.weights().validate()?;
        self.render_settings().validate()?;
        let positive = [
            ("samples_per_chart", self.samples_per_chart),
            ("occupancy_samples", self.occupancy_samples),
            ("gt_points", self.gt_points),
            ("batch_size", self.batch_size),
            ("input_points", self.input_points),
            ("surface_samples", self.surface_samples),
            ("occupancy_pool", self.occupancy_pool),
            ("render_resolution", self.render_resolution),
            ("views_per_step", self.views_per_step),
            ("image_every", self.image_every),
            ("checkpoint_every", self.checkpoint_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{k} must be positive")));
        }
        if self.grid_resolution < 2 {
            return Err(CoreError::Config("grid_resolution must be at least 2".into()));
        }
        if self.views_per_step > 25 {
            return Err(CoreError::Config("views_per_step is at most 25".into()));
        }
        for (k, lr) in [("lr_atlas", self.lr_atlas), ("lr_occ", self.lr_occ)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(CoreError::Config(format!("{k} must be positive")));
            }
        }
        if !(self.occupancy_padding >= 0.0) {
            return Err(CoreError::Config("occupancy_padding must be nonnegative".into()));
        }
        if self.occupancy_samples > self.occupancy_pool || self.gt_points > self.surface_samples {
            return Err(CoreError::Config(
                "per-step sample counts cannot exceed the cached pools".into(),
            ));
        }
        if self.input_points > self.surface_samples {
            return Err(CoreError::Config("input_points cannot exceed surface_samples".into()));
        }
        for s in &self.shapes {
            ShapeSource::parse(s)?;
        }
        Ok(())
    }

    /// Applies a named loss configuration: `hybrid`, `no-img`, `no-norm`,
    /// `no-img-norm`, `no-consistency` or `vanilla` (atlas trained without
    /// any coupling to the occupancy branch).
    pub fn apply_variant(&mut self, name: &str) -> Result<()> {
        let (img, norm, cons) = match name {
            "hybrid" => (true, true, true),
            "no-img" => (false, true, true),
            "no-norm" => (true, false, true),
            "no-img-norm" => (false, false, true),
            "no-consistency" => (true, true, false),
            "vanilla" => {
                self.beta = 0.0;
                self.gamma = 0.0;
                self.delta = 0.0;
                self.detach_queries = true;
                (false, false, false)
            }
            _ => return Err(CoreError::Config(format!("unknown variant `{name}`"))),
        };
        self.use_image = img;
        self.use_normal = norm;
        self.use_consistency = cons;
        Ok(())
    }

    pub fn architecture(&self, shapes: usize) -> Architecture {
        Architecture {
            charts: self.charts,
            atlas_width: self.atlas_width,
            atlas_depth: self.atlas_depth,
            chart_gain: self.chart_gain,
            occ_width: self.occ_width,
            occ_depth: self.occ_depth,
            occ_sharpness: self.occ_sharpness,
            latent_dim: self.latent_dim,
            enc_width: self.enc_width,
            enc_point_layers: self.enc_point_layers,
            enc_head_layers: self.enc_head_layers,
            tau: self.tau,
            mode: match self.mode {
                ModeKind::Encoder => LatentMode::Encoder,
                ModeKind::AutoDecoder => LatentMode::AutoDecoder { shapes },
            },
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            use_image: self.use_image,
            use_normal: self.use_normal,
            use_consistency: self.use_consistency,
            use_occupancy: self.use_occupancy,
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            sigma: self.render_sigma,
            gamma: self.render_gamma,
            background: [self.render_background; 3],
            cutoff: self.render_cutoff,
        }
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let mut sources = self
            .shapes
            .iter()
            .map(|s| ShapeSource::parse(s))
            .collect::<Result<Vec<_>>>()?;
        if !self.obj_dir.is_empty() {
            sources.extend(ShapeSource::scan_dir(&self.obj_dir)?);
        }
        Ok(DatasetConfig {
            sources,
            tessellation: self.tessellation,
            surface_samples: self.surface_samples,
            occupancy_pool: self.occupancy_pool,
            occupancy_padding: self.occupancy_padding,
            input_points: self.input_points,
            seed: self.seed,
            cache_dir: (!self.cache_dir.is_empty()).then(|| self.cache_dir.clone().into()),
        })
    }
}
