use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::Result;

/// Normal map: per-pixel RGB in `[0,1]` and soft coverage in `[0,1]`, row-major
/// with row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMapImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub coverage: Vec<f64>,
}

impl NormalMapImage {
    pub fn filled(width: usize, height: usize, background: [f64; 3]) -> Self {
        Self {
            width,
            height,
            color: vec![background; width * height],
            coverage: vec![0.0; width * height],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        self.color[row * self.width + col]
    }

    /// Colors flattened as `[r, g, b, r, g, b, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.color.iter().flatten().copied().collect()
    }

    /// Sum of squared per-channel differences.
    pub fn squared_distance(&self, other: &NormalMapImage) -> f64 {
        self.color
            .iter()
            .zip(&other.color)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
            .sum()
    }

    /// 8-bit RGBA PNG with coverage in the alpha channel.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        let data: Vec<u8> = self
            .color
            .iter()
            .zip(&self.coverage)
            .flat_map(|(c, &a)| [q(c[0]), q(c[1]), q(c[2]), q(a)])
            .collect();
        writer.write_image_data(&data)?;
        writer.finish()?;
        Ok(())
    }
}
