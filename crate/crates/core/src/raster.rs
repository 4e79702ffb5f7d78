//! In-memory grayscale and binary images.

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]` (0 = black ink).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: pixels.len() });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, pixels: vec![value.clamp(0.0, 1.0); width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut v = self.pixels.clone();
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
        *m
    }

    /// Bilinear sample at continuous pixel coordinates where pixel `(i, j)`
    /// has its center at `(i + 0.5, j + 0.5)`. Out-of-range taps read `fill`.
    pub fn sample(&self, x: f64, y: f64, fill: f64) -> f64 {
        let u = x - 0.5;
        let v = y - 0.5;
        let (u0, v0) = (u.floor(), v.floor());
        let (fu, fv) = (u - u0, v - v0);
        let tap = |i: f64, j: f64| -> f64 {
            if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
                fill
            } else {
                self.pixels[j as usize * self.width + i as usize]
            }
        };
        let top = if fu == 0.0 { tap(u0, v0) } else { (1.0 - fu) * tap(u0, v0) + fu * tap(u0 + 1.0, v0) };
        if fv == 0.0 {
            return top;
        }
        let bot = if fu == 0.0 {
            tap(u0, v0 + 1.0)
        } else {
            (1.0 - fu) * tap(u0, v0 + 1.0) + fu * tap(u0 + 1.0, v0 + 1.0)
        };
        (1.0 - fv) * top + fv * bot
    }

    /// Bilinear resize to exact dimensions, sampling at output pixel centers.
    /// Edge taps are clamped to the border.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let cy = ((y as f64 + 0.5) * sy).clamp(0.5, self.height as f64 - 0.5);
            for x in 0..width {
                let cx = ((x as f64 + 0.5) * sx).clamp(0.5, self.width as f64 - 0.5);
                out.push(self.sample(cx, cy, 0.0).clamp(0.0, 1.0));
            }
        }
        GrayImage { width, height, pixels: out }
    }

    /// Copies the pixel rectangle `[x0, x0+w) x [y0, y0+h)`, clipped to the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        let x1 = (x0 + w).min(self.width);
        let y1 = (y0 + h).min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::invalid("crop outside image"));
        }
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            out.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x1]);
        }
        Ok(GrayImage { width: x1 - x0, height: y1 - y0, pixels: out })
    }

    /// Multiplies every pixel by `a` and clamps to `[0, 1]`.
    pub fn scaled(&self, a: f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| (v * a).clamp(0.0, 1.0)).collect(),
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<f64>) -> GrayImage {
        debug_assert_eq!(pixels.len(), width * height);
        GrayImage { width, height, pixels: pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }
}

/// Row-major binary image; `true` is foreground (ink).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: bits.len() });
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_hits_pixel_centers_exactly() {
        let img = GrayImage::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(img.sample(0.5, 0.5, 0.0), 0.0);
        assert_eq!(img.sample(1.5, 0.5, 0.0), 0.25);
        assert_eq!(img.sample(0.5, 1.5, 0.0), 0.5);
        assert_eq!(img.sample(1.5, 1.5, 0.0), 1.0);
        assert!((img.sample(1.0, 1.0, 0.0) - 0.4375).abs() < 1e-15);
        assert_eq!(img.sample(-3.0, 0.5, 0.7), 0.7);
    }

    #[test]
    fn resize_identity_and_halving() {
        let img = GrayImage::new(4, 2, vec![0.0, 0.2, 0.4, 0.6, 0.1, 0.3, 0.5, 0.7]).unwrap();
        assert_eq!(img.resize(4, 2), img);
        let half = img.resize(2, 1);
        assert_eq!((half.width(), half.height()), (2, 1));
        assert!((half.get(0, 0) - 0.15).abs() < 1e-12);
        assert!((half.get(1, 0) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_pixels() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn median_and_mean() {
        let img = GrayImage::new(3, 1, vec![0.0, 1.0, 0.5]).unwrap();
        assert_eq!(img.median(), 0.5);
        assert!((img.mean() - 0.5).abs() < 1e-15);
    }
}
