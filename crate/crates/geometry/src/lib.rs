//! Triangle meshes and the geometric machinery around them: procedural
//! primitives, OBJ input/output, surface and volume sampling, ray-parity
//! inside tests, exact nearest-neighbor metrics, chart-grid meshing and
//! marching cubes.

pub mod cache;
pub mod chart_grid;
mod error;
pub mod inside;
pub mod kdtree;
pub mod marching_cubes;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod primitives;
pub mod sampling;
mod tables;
pub mod vec3;

pub use chart_grid::{atlas_to_mesh, ChartGrid};
pub use error::{GeometryError, Result};
pub use inside::{occupancy_labels, InsideTester};
pub use kdtree::KdTree;
pub use marching_cubes::{marching_cubes, marching_cubes_values, Lattice};
pub use mesh::{Aabb, TriMesh};
pub use metrics::{chamfer_l1, chamfer_l2, nearest_neighbors, normal_consistency};
pub use obj::{load_obj, parse_obj, save_obj};
pub use primitives::{make_primitive, Primitive};
pub use sampling::{sample_occupancy, sample_surface, OccupancySamples, SurfaceSamples};
pub use vec3::Vec3;
