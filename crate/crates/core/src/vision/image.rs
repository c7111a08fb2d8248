use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::BoundingBox;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive and match the data length ({width}x{height}, {len} values)")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("unsupported image format for {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImageError::BadDimensions { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut img = Self::filled(width, height, 0);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Replicate-border access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    /// Copies the pixel rectangle `[x0,x1)×[y0,y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> GrayImage {
        let (w, h) = (x1 - x0, y1 - y0);
        GrayImage::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn fill_box(&mut self, b: &BoundingBox, v: u8) {
        let (x0, y0, x1, y1) = b.pixel_span(self.width, self.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, v);
            }
        }
    }

    pub fn invert(&self) -> GrayImage {
        GrayImage { data: self.data.iter().map(|v| 255 - v).collect(), ..self.clone() }
    }

    pub fn read_pgm<R: Read>(reader: R) -> Result<Self, ImageError> {
        let mut r = BufReader::new(reader);
        let mut header = Vec::new();
        // magic, width, height, maxval
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(ImageError::Pgm("truncated header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            header.extend(content.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P5" {
            return Err(ImageError::Pgm(format!("expected P5, found {}", header[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Pgm(format!("bad number {s}")));
        let (w, h, max) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if max != 255 {
            return Err(ImageError::Pgm(format!("only maxval 255 is supported, got {max}")));
        }
        let mut data = vec![0u8; w * h];
        r.read_exact(&mut data)?;
        Self::new(w, h, data)
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    /// PNG bytes of the image; the encoding is deterministic.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Decodes any supported raster; color is converted to luma with
    /// `0.299R + 0.587G + 0.114B` rounded half-up.
    pub fn from_encoded(bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.starts_with(b"P5") {
            return Self::read_pgm(bytes);
        }
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        if let image::DynamicImage::ImageLuma8(g) = img {
            return Self { width: g.width() as usize, height: g.height() as usize, data: g.as_raw().clone() };
        }
        let rgb = img.to_rgb8();
        let data = rgb.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
        Self { width: rgb.width() as usize, height: rgb.height() as usize, data }
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)?;
        Self::from_encoded(&bytes)
    }

    /// Writes PNG or PGM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => std::fs::write(path, self.to_png_bytes()?)?,
            Some("pgm") => self.write_pgm(std::fs::File::create(path)?)?,
            _ => return Err(ImageError::UnsupportedFormat(path.display().to_string())),
        }
        Ok(())
    }
}

/// Integer form of `0.299R + 0.587G + 0.114B`, rounded half-up.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImageError> {
        if bits.len() != width * height {
            return Err(ImageError::BadDimensions { width, height, len: bits.len() });
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn from_box(width: usize, height: usize, b: &BoundingBox) -> Self {
        let mut m = Self::new(width, height);
        m.fill_box(b, true);
        m
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn fill_box(&mut self, b: &BoundingBox, v: bool) {
        let (x0, y0, x1, y1) = b.pixel_span(self.width, self.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, v);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && !b)
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height), "mask size mismatch");
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Tight pixel bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX)
            .then(|| BoundingBox::from_edges(x0 as f64, y0 as f64, x1 as f64, y1 as f64).ok())
            .flatten()
    }

    pub fn transpose(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// 0/255 rendering, for debugging dumps.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width.max(1), self.height.max(1), |x, y| {
            if x < self.width && y < self.height && self.get(x, y) {
                255
            } else {
                0
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let img = GrayImage::from_fn(7, 3, |x, y| (x * 30 + y) as u8);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n7 3\n255\n"));
        assert_eq!(GrayImage::from_encoded(&buf).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments() {
        let mut buf = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend([10, 20]);
        let img = GrayImage::read_pgm(&buf[..]).unwrap();
        assert_eq!(img.data(), &[10, 20]);
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let img = GrayImage::from_fn(13, 9, |x, y| (x * y % 256) as u8);
        let bytes = img.to_png_bytes().unwrap();
        assert_eq!(GrayImage::from_encoded(&bytes).unwrap(), img);
        assert_eq!(bytes, img.to_png_bytes().unwrap());
    }

    #[test]
    fn color_converts_to_rounded_luma() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        // 0.299 * 255 = 76.245
        assert_eq!(luma(255, 0, 0), 76);
        // 0.587 * 100 + 0.114 * 100 = 70.1
        assert_eq!(luma(0, 100, 100), 70);
        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([10, 200, 30]));
        let g = GrayImage::from_dynamic(&image::DynamicImage::ImageRgb8(rgb));
        assert_eq!(g.get(1, 1), luma(10, 200, 30));
    }

    #[test]
    fn bad_dimensions_rejected() {
        assert!(GrayImage::new(3, 3, vec![0; 8]).is_err());
        assert!(GrayImage::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn mask_bbox_and_ops() {
        let b = BoundingBox::new(2.0, 3.0, 4.0, 2.0).unwrap();
        let m = BinaryMask::from_box(10, 10, &b);
        assert_eq!(m.count(), 8);
        assert_eq!(m.bounding_box().unwrap(), b);
        assert!(BinaryMask::new(4, 4).bounding_box().is_none());
        assert_eq!(m.and_not(&m).count(), 0);
        assert_eq!(m.iou(&m), 1.0);
    }
}
