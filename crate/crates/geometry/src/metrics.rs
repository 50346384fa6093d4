//! Point-set distances and normal agreement.

use crate::error::{GeometryError, Result};
use crate::kdtree::KdTree;
use crate::sampling::SurfaceSamples;
use crate::vec3::{self, Vec3};

/// Nearest point in `to` for each point of `from`, as `(index, squared distance)`.
pub fn nearest_neighbors(from: &[Vec3], to: &[Vec3]) -> Result<Vec<(usize, f64)>> {
    if from.is_empty() || to.is_empty() {
        return Err(GeometryError::EmptyPoints);
    }
    Ok(KdTree::new(to).nearest_many(from))
}

/// Summed squared nearest-neighbor distances in both directions.
pub fn chamfer_l2(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let ab: f64 = nearest_neighbors(a, b)?.iter().map(|x| x.1).sum();
    let ba: f64 = nearest_neighbors(b, a)?.iter().map(|x| x.1).sum();
    Ok(ab + ba)
}

/// Accuracy (`pred` to `gt`) and completeness (`gt` to `pred`): mean unsquared
/// nearest-neighbor distances.
pub fn accuracy_completeness(pred: &[Vec3], gt: &[Vec3]) -> Result<(f64, f64)> {
    let mean = |v: Vec<(usize, f64)>| v.iter().map(|x| x.1.sqrt()).sum::<f64>() / v.len() as f64;
    Ok((mean(nearest_neighbors(pred, gt)?), mean(nearest_neighbors(gt, pred)?)))
}

/// Mean of accuracy and completeness.
pub fn chamfer_l1(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    let (acc, comp) = accuracy_completeness(pred, gt)?;
    Ok(0.5 * (acc + comp))
}

/// Symmetric mean of `|n_pred . n_gt|` over nearest-neighbor matches.
/// Non-unit normals are normalized (with a warning).
pub fn normal_consistency(pred: &SurfaceSamples, gt: &SurfaceSamples) -> Result<f64> {
    let pn = unit_normals(&pred.normals);
    let gn = unit_normals(&gt.normals);
    let one_way = |from: &[Vec3], fn_: &[Vec3], to: &[Vec3], tn: &[Vec3]| -> Result<f64> {
        let nn = nearest_neighbors(from, to)?;
        Ok(nn
            .iter()
            .enumerate()
            .map(|(i, &(j, _))| vec3::dot(fn_[i], tn[j]).abs())
            .sum::<f64>()
            / nn.len() as f64)
    };
    let a = one_way(&pred.points, &pn, &gt.points, &gn)?;
    let b = one_way(&gt.points, &gn, &pred.points, &pn)?;
    Ok(0.5 * (a + b))
}

fn unit_normals(n: &[Vec3]) -> Vec<Vec3> {
    let off = n
        .iter()
        .filter(|v| (vec3::norm(**v) - 1.0).abs() > 1e-9)
        .count();
    if off > 0 {
        log::warn!("{off} normals are not unit length; normalizing");
        n.iter().map(|&v| vec3::normalize(v)).collect()
    } else {
        n.to_vec()
    }
}
