//! Training shapes with cached surface and occupancy samples.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use hsurf_autodiff::Mat;
use hsurf_geometry::cache::{read_samples, write_samples};
use hsurf_geometry::{
    load_obj, sample_occupancy, sample_surface, KdTree, OccupancySamples, Primitive,
    SurfaceSamples, TriMesh,
};
use hsurf_raster::{normalize_to_unit_cube, render_images, Camera, NormalMapImage, RenderSettings};

use crate::error::{CoreError, Result};
use crate::nn::points_to_mat;

/// Where a training shape comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeSource {
    Primitive(Primitive),
    Obj(PathBuf),
}

impl ShapeSource {
    /// `sphere`, `box`, `torus`, `cylinder` or `obj:<path>`.
    pub fn parse(token: &str) -> Result<Self> {
        Ok(match token {
            "sphere" => Self::Primitive(Primitive::Sphere { radius: 0.5 }),
            "box" => Self::Primitive(Primitive::Box {
                size: [1.0, 0.6, 0.8],
            }),
            "torus" => Self::Primitive(Primitive::Torus {
                major: 0.35,
                minor: 0.15,
            }),
            "cylinder" => Self::Primitive(Primitive::Cylinder {
                radius: 0.3,
                height: 1.0,
            }),
            _ => match token.strip_prefix("obj:") {
                Some(p) if !p.is_empty() => Self::Obj(PathBuf::from(p)),
                _ => return Err(CoreError::Config(format!("unknown shape `{token}`"))),
            },
        })
    }

    /// All `.obj` files of a directory in name order.
    pub fn scan_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
            .collect();
        paths.sort();
        Ok(paths.into_iter().map(Self::Obj).collect())
    }

    pub fn name(&self) -> String {
        match self {
            Self::Primitive(p) => p.name().to_string(),
            Self::Obj(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "obj".into()),
        }
    }

    /// The mesh scaled into the origin-centered unit cube.
    pub fn load(&self, tessellation: usize) -> Result<TriMesh> {
        let mesh = match self {
            Self::Primitive(p) => p.mesh(tessellation)?,
            Self::Obj(path) => load_obj(path)?,
        };
        Ok(normalize_to_unit_cube(&mesh)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub sources: Vec<ShapeSource>,
    pub tessellation: usize,
    pub surface_samples: usize,
    pub occupancy_pool: usize,
    /// Occupancy points are drawn from the mesh box grown by this fraction.
    pub occupancy_padding: f64,
    pub input_points: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
}

/// One training shape and everything sampled from it.
#[derive(Clone, Debug)]
pub struct ShapeData {
    pub name: String,
    pub mesh: TriMesh,
    pub surface: SurfaceSamples,
    pub surface_tree: KdTree,
    pub occupancy: OccupancySamples,
    /// Encoder input (`input_points x 3`).
    pub cloud: Mat,
    /// Ground-truth normal maps for the image loss, once prepared.
    pub references: Option<Vec<NormalMapImage>>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub shapes: Vec<ShapeData>,
    /// Shapes that could not be loaded, with the reason.
    pub failures: Vec<(String, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Renders every shape's reference images.
    pub fn prepare_references(&mut self, cameras: &[Camera], settings: &RenderSettings) -> Result<()> {
        for s in &mut self.shapes {
            s.references = Some(render_images(&s.mesh.vertices, &s.mesh.faces, cameras, settings)?);
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-shape seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn shape_seed(name: &str, index: usize, seed: u64) -> u64 {
    fnv1a(format!("{name}#{index}").as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn build_shape(cfg: &DatasetConfig, index: usize, source: &ShapeSource) -> Result<ShapeData> {
    let name = source.name();
    let mesh = source.load(cfg.tessellation)?;
    let seed = shape_seed(&name, index, cfg.seed);
    let cache_path = cfg
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("{index:03}-{name}-{}.hsmp", cfg.seed)));
    let cached = match &cache_path {
        Some(p) if p.exists() => {
            let (s, o) = read_samples(BufReader::new(File::open(p)?))?;
            (s.len() == cfg.surface_samples && o.len() == cfg.occupancy_pool).then_some((s, o))
        }
        _ => None,
    };
    let (surface, occupancy) = match cached {
        Some(c) => c,
        None => {
            let surface = sample_surface(&mesh, cfg.surface_samples, seed)?;
            let bbox = mesh.bbox().ok_or(hsurf_geometry::GeometryError::EmptyMesh)?;
            let occupancy =
                sample_occupancy(&mesh, bbox.padded(cfg.occupancy_padding), cfg.occupancy_pool, seed ^ 1)?;
            if !occupancy.watertight {
                log::warn!("{name}: mesh is not watertight; occupancy labels are approximate");
            }
            if let Some(p) = &cache_path {
                std::fs::create_dir_all(p.parent().expect("joined path"))?;
                write_samples(BufWriter::new(File::create(p)?), &surface, &occupancy)?;
            }
            (surface, occupancy)
        }
    };
    let cloud = sample_surface(&mesh, cfg.input_points, seed ^ 2)?;
    Ok(ShapeData {
        name,
        surface_tree: KdTree::new(&surface.points),
        mesh,
        surface,
        occupancy,
        cloud: points_to_mat(&cloud.points),
        references: None,
    })
}

/// Loads and samples every source. Shapes that fail are recorded in
/// [`Dataset::failures`]; an error is returned only if none succeed.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for (i, src) in cfg.sources.iter().enumerate() {
        match build_shape(cfg, i, src) {
            Ok(s) => ds.shapes.push(s),
            Err(e) => {
                log::error!("skipping {}: {e}", src.name());
                ds.failures.push((src.name(), e.to_string()));
            }
        }
    }
    if ds.shapes.is_empty() {
        return Err(CoreError::Dataset("no usable shapes".into()));
    }
    Ok(ds)
}
