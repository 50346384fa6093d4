//! Binary cache of per-shape samples.
//!
//! Layout (little-endian): `b"HSMP1"`, u64 surface count, u64 occupancy count,
//! then surface points, surface normals and occupancy points as f64 triples,
//! occupancy labels as f64 (0 or 1), then six f64 for the sampling box
//! (min, max) and one f64 watertight flag.

use std::io::{Read, Write};

use crate::error::{GeometryError, Result};
use crate::mesh::Aabb;
use crate::sampling::{OccupancySamples, SurfaceSamples};
use crate::vec3::Vec3;

pub const MAGIC: &[u8; 5] = b"HSMP1";

pub fn write_samples<W: Write>(
    mut w: W,
    surface: &SurfaceSamples,
    occupancy: &OccupancySamples,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(surface.len() as u64).to_le_bytes())?;
    w.write_all(&(occupancy.len() as u64).to_le_bytes())?;
    let mut put = |x: f64| w.write_all(&x.to_le_bytes());
    for p in surface.points.iter().chain(&surface.normals).chain(&occupancy.points) {
        for &x in p {
            put(x)?;
        }
    }
    for &l in &occupancy.labels {
        put(if l { 1.0 } else { 0.0 })?;
    }
    let b = occupancy.bbox.unwrap_or(Aabb::new([0.0; 3], [0.0; 3]));
    for x in b.min.into_iter().chain(b.max) {
        put(x)?;
    }
    put(if occupancy.watertight { 1.0 } else { 0.0 })?;
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> Result<(SurfaceSamples, OccupancySamples)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GeometryError::Cache("bad magic".into()));
    }
    let ns = read_u64(&mut r)?;
    let no = read_u64(&mut r)?;
    if ns > 1 << 32 || no > 1 << 32 {
        return Err(GeometryError::Cache("implausible sample count".into()));
    }
    let points = read_vecs(&mut r, ns)?;
    let normals = read_vecs(&mut r, ns)?;
    let occ_points = read_vecs(&mut r, no)?;
    let mut labels = Vec::with_capacity(no);
    for _ in 0..no {
        labels.push(read_f64(&mut r)? != 0.0);
    }
    let mut b = [0.0; 6];
    for x in b.iter_mut() {
        *x = read_f64(&mut r)?;
    }
    let watertight = read_f64(&mut r)? != 0.0;
    let surface = SurfaceSamples { points, normals };
    let occupancy = OccupancySamples {
        points: occ_points,
        labels,
        bbox: Some(Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])),
        watertight,
    };
    Ok((surface, occupancy))
}

fn read_u64<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b) as usize)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_vecs<R: Read>(r: &mut R, n: usize) -> Result<Vec<Vec3>> {
    (0..n)
        .map(|_| Ok([read_f64(r)?, read_f64(r)?, read_f64(r)?]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let s = SurfaceSamples::new(vec![[1.0, 2.0, 3.0]], vec![[0.0, 0.0, 1.0]]).unwrap();
        let o = OccupancySamples {
            points: vec![[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]],
            labels: vec![true, false],
            bbox: Some(Aabb::centered_cube(0.55)),
            watertight: true,
        };
        let mut buf = Vec::new();
        write_samples(&mut buf, &s, &o).unwrap();
        assert_eq!(&buf[..5], b"HSMP1");
        let (s2, o2) = read_samples(&buf[..]).unwrap();
        assert_eq!(s, s2);
        assert_eq!(o, o2);
        assert!(read_samples(&buf[..buf.len() - 1]).is_err());
    }
}
