//! Binary shape images over the reference box and their grayscale downscales.
//!
//! Pixel `(i, j)` (row `i`, column `j`) has center
//! `(-2 + (j + ½)·4/N, -2 + (i + ½)·4/N)`; row 0 is the bottom of the box.

use std::io::{Read, Write};

use thiserror::Error;

use crate::geometry::{Domain, BOX_HALF};

const BINARY_MAGIC: &[u8; 7] = b"TORIMG1";
const GRAY_MAGIC: &[u8; 7] = b"TORIMGF";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image side {0} is below the minimum of 8")]
    TooSmall(usize),
    #[error("cannot upscale from {from} to {to}")]
    Upscale { from: usize, to: usize },
    #[error("image format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RasterError>;

/// Where an image came from; not part of the file format.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Provenance {
    pub domain_id: Option<u64>,
    pub angle: f64,
    pub shift: (f64, f64),
}

/// `N × N` bit matrix, row-major, packed most-significant bit first.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryImage {
    side: usize,
    bits: Vec<u8>,
    pub provenance: Provenance,
}

impl BinaryImage {
    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            bits: vec![0; (side * side).div_ceil(8)],
            provenance: Provenance::default(),
        }
    }

    pub fn from_fn(side: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut img = Self::zeros(side);
        for i in 0..side {
            for j in 0..side {
                img.set(i, j, f(i, j));
            }
        }
        img
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let k = row * self.side + col;
        self.bits[k / 8] >> (7 - k % 8) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let k = row * self.side + col;
        let mask = 1u8 << (7 - k % 8);
        if value {
            self.bits[k / 8] |= mask;
        } else {
            self.bits[k / 8] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn mean(&self) -> f64 {
        self.count_ones() as f64 / (self.side * self.side) as f64
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.side as u32).to_le_bytes())?;
        w.write_all(&self.bits)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(11 + self.bits.len());
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| RasterError::Format("truncated header".into()))?;
        if &magic != BINARY_MAGIC {
            return Err(RasterError::Format("bad magic, expected TORIMG1".into()));
        }
        let mut n = [0u8; 4];
        r.read_exact(&mut n)
            .map_err(|_| RasterError::Format("truncated header".into()))?;
        let side = u32::from_le_bytes(n) as usize;
        if side == 0 || side > 1 << 15 {
            return Err(RasterError::Format(format!("implausible side {side}")));
        }
        let mut bits = vec![0u8; (side * side).div_ceil(8)];
        r.read_exact(&mut bits)
            .map_err(|_| RasterError::Format("truncated pixel data".into()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(RasterError::Format("trailing bytes".into()));
        }
        Ok(Self {
            side,
            bits,
            provenance: Provenance::default(),
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

/// `n × n` grayscale image with values in `[0, 1]`, row-major, row 0 at the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    side: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != side * side {
            return Err(RasterError::Format(format!(
                "{} values for side {side}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(RasterError::Format("values must lie in [0, 1]".into()));
        }
        Ok(Self { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.side + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(11 + 4 * self.data.len());
        v.extend_from_slice(GRAY_MAGIC);
        v.extend_from_slice(&(self.side as u32).to_le_bytes());
        for x in &self.data {
            v.extend_from_slice(&x.to_le_bytes());
        }
        v
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 11 || &bytes[..7] != GRAY_MAGIC {
            return Err(RasterError::Format("bad magic, expected TORIMGF".into()));
        }
        let side = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        if bytes.len() != 11 + 4 * side * side {
            return Err(RasterError::Format("wrong payload length".into()));
        }
        let data = bytes[11..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(side, data)
    }
}

/// Center coordinate of pixel index `k` along either axis.
pub fn pixel_center(k: usize, side: usize) -> f64 {
    -BOX_HALF + (k as f64 + 0.5) * (2.0 * BOX_HALF) / side as f64
}

/// Even-odd rasterization at pixel centers, evaluated row by row.
pub fn rasterize(domain: &Domain, side: usize) -> Result<BinaryImage> {
    if side < 8 {
        return Err(RasterError::TooSmall(side));
    }
    let mut img = BinaryImage::zeros(side);
    let mut xs: Vec<f64> = Vec::new();
    let centers: Vec<f64> = (0..side).map(|k| pixel_center(k, side)).collect();
    for (i, &y) in centers.iter().enumerate() {
        xs.clear();
        for l in domain.loops() {
            let pts = l.vertices();
            let n = pts.len();
            let mut j = n - 1;
            for k in 0..n {
                let (a, b) = (pts[k], pts[j]);
                if (a.y > y) != (b.y > y) {
                    xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
                j = k;
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        // a pixel is inside when an odd number of crossings lie strictly to its right
        let mut right = xs.len();
        let mut ptr = 0;
        for (col, &x) in centers.iter().enumerate() {
            while ptr < xs.len() && xs[ptr] <= x {
                ptr += 1;
                right -= 1;
            }
            if right % 2 == 1 {
                img.set(i, col, true);
            }
        }
    }
    Ok(img)
}

/// Box-filter downscale to `n × n`; fractional pixel overlaps are area-weighted.
pub fn downscale(img: &BinaryImage, n: usize) -> Result<GrayImage> {
    let big = img.side;
    if n == 0 || n > big {
        return Err(RasterError::Upscale { from: big, to: n });
    }
    let weights = overlap_weights(big, n);
    // separable: rows first, then columns
    let mut rows = vec![0.0f64; n * big];
    for (oi, w) in weights.iter().enumerate() {
        for &(src, wt) in w {
            for col in 0..big {
                if img.get(src, col) {
                    rows[oi * big + col] += wt;
                }
            }
        }
    }
    let mut data = vec![0.0f32; n * n];
    for oi in 0..n {
        for (oj, w) in weights.iter().enumerate() {
            let s: f64 = w.iter().map(|&(src, wt)| rows[oi * big + src] * wt).sum();
            data[oi * n + oj] = s.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(GrayImage { side: n, data })
}

/// For each output cell, the source cells it covers and their normalized weights.
fn overlap_weights(big: usize, n: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = big as f64 / n as f64;
    (0..n)
        .map(|o| {
            if big.is_multiple_of(n) {
                let r = big / n;
                return (o * r..(o + 1) * r).map(|s| (s, 1.0 / r as f64)).collect();
            }
            let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
            let mut v = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < big {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    v.push((s, overlap / ratio));
                }
                s += 1;
            }
            v
        })
        .collect()
}

/// Area covered by the ones, `#ones · (4/N)²`.
pub fn pixel_area(img: &BinaryImage) -> f64 {
    let px = 2.0 * BOX_HALF / img.side as f64;
    img.count_ones() as f64 * px * px
}

/// Rasterize at `raster_side` and downscale to the network input size.
pub fn network_input(domain: &Domain, raster_side: usize, input_side: usize) -> Result<GrayImage> {
    downscale(&rasterize(domain, raster_side)?, input_side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{annulus, disk, rectangle, GenConfig, Point};
    use std::f64::consts::PI;

    #[test]
    fn full_box_is_all_ones() {
        let d = rectangle(4.0, 4.0).unwrap();
        let img = rasterize(&d, 32).unwrap();
        assert_eq!(img.count_ones(), 32 * 32);
        assert!((pixel_area(&img) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn disk_pixel_count_approaches_pi() {
        let d = disk(1.0, Point::default(), 1024).unwrap();
        let img = rasterize(&d, 677).unwrap();
        let n = 677.0f64;
        let by_count = img.count_ones() as f64 / (n / 4.0).powi(2);
        assert!((by_count - PI).abs() / PI < 0.01);
        assert!((pixel_area(&img) - PI).abs() / PI < 0.01);
    }

    #[test]
    fn area_error_shrinks_with_resolution() {
        let d = disk(1.0, Point::default(), 1024).unwrap();
        let errs: Vec<f64> = [64, 128, 256, 512]
            .iter()
            .map(|&n| (pixel_area(&rasterize(&d, n).unwrap()) - d.area()).abs())
            .collect();
        // perimeter-sized band of boundary pixels bounds the error
        for (k, &n) in [64usize, 128, 256, 512].iter().enumerate() {
            assert!(errs[k] <= d.perimeter() * (4.0 / n as f64) * 2.0);
        }
    }

    #[test]
    fn matches_per_pixel_even_odd() {
        let cfg = GenConfig {
            seed: 9,
            count: 20,
            ..Default::default()
        };
        for i in 0..cfg.count {
            let d = crate::geometry::random_domain(&cfg, i).unwrap();
            let img = rasterize(&d, 48).unwrap();
            for r in 0..48 {
                for c in 0..48 {
                    let p = Point::new(pixel_center(c, 48), pixel_center(r, 48));
                    assert_eq!(img.get(r, c), d.contains(p));
                }
            }
        }
    }

    #[test]
    fn annulus_hole_is_zero() {
        let d = annulus(0.5, 1.0, 0.0, 256).unwrap();
        let img = rasterize(&d, 64).unwrap();
        // pixels around the center
        for r in 30..34 {
            for c in 30..34 {
                assert!(!img.get(r, c));
            }
        }
        assert!(img.count_ones() > 0);
    }

    #[test]
    fn small_hole_survives_above_two_pixels() {
        let n = 64;
        let r = 2.5 * 4.0 / n as f64;
        let d = annulus(r, 1.0, 0.0, 256).unwrap();
        let img = rasterize(&d, n).unwrap();
        assert!(!img.get(n / 2, n / 2));
    }

    #[test]
    fn downscale_examples() {
        let ones = BinaryImage::from_fn(64, |_, _| true);
        let g = downscale(&ones, 32).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
        let checker = BinaryImage::from_fn(64, |i, j| (i + j) % 2 == 0);
        let g = downscale(&checker, 32).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.5));
        assert!(downscale(&checker, 128).is_err());
    }

    #[test]
    fn downscale_preserves_mean() {
        let d = annulus(0.3, 1.4, 0.2, 128).unwrap();
        let img = rasterize(&d, 64).unwrap();
        let g = downscale(&img, 32).unwrap();
        assert!((g.mean() - img.mean()).abs() < 1e-12);
        // non-dividing ratio keeps the mean up to rounding
        let g = downscale(&rasterize(&d, 677).unwrap(), 224).unwrap();
        assert!((g.mean() - rasterize(&d, 677).unwrap().mean()).abs() < 1e-6);
    }

    #[test]
    fn too_small_rejected() {
        let d = rectangle(1.0, 1.0).unwrap();
        assert!(matches!(rasterize(&d, 4), Err(RasterError::TooSmall(4))));
    }

    #[test]
    fn file_formats() {
        let d = disk(1.0, Point::default(), 64).unwrap();
        let img = rasterize(&d, 37).unwrap();
        let bytes = img.to_bytes();
        assert_eq!(&bytes[..7], b"TORIMG1");
        assert_eq!(bytes.len(), 7 + 4 + (37usize * 37).div_ceil(8));
        assert_eq!(BinaryImage::from_bytes(&bytes).unwrap(), img);
        assert!(BinaryImage::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(BinaryImage::from_bytes(b"garbage data").is_err());

        let g = downscale(&img, 12).unwrap();
        let gb = g.to_bytes();
        assert_eq!(&gb[..7], b"TORIMGF");
        assert_eq!(GrayImage::from_bytes(&gb).unwrap(), g);
    }

    #[test]
    fn orientation_does_not_matter() {
        let pts = vec![
            Point::new(-1.0, -0.5),
            Point::new(1.2, -0.7),
            Point::new(0.3, 1.1),
        ];
        let mut rev = pts.clone();
        rev.reverse();
        let a = rasterize(&Domain::polygon(pts).unwrap(), 40).unwrap();
        let b = rasterize(&Domain::polygon(rev).unwrap(), 40).unwrap();
        assert_eq!(a, b);
    }
}
