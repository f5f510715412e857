//! In-memory image types and PNG / PNM I/O.
//!
//! Binary images use 1 for ink; on disk ink is black (0) and background
//! white (255).

use std::path::Path;

use image::{DynamicImage, GrayImage as RawGray, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::tensor::reflect_index;

fn check_dims(width: usize, height: usize, len: usize, per_pixel: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Data(format!("image dimensions must be positive, got {width}x{height}")));
    }
    if len != width * height * per_pixel {
        return Err(Error::Data(format!(
            "{width}x{height}x{per_pixel} image needs {} values, got {len}",
            width * height * per_pixel
        )));
    }
    Ok(())
}

/// Single-channel intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn hflip(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        GrayImage { data, ..*self }
    }
}

/// Three planes (R, G, B) of `[0, 1]` intensities, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        Ok(RgbImage { width, height, data })
    }

    /// Replicates a gray image into three identical planes.
    pub fn from_gray(g: &GrayImage) -> Self {
        let mut data = Vec::with_capacity(g.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&g.data);
        }
        RgbImage {
            width: g.width,
            height: g.height,
            data,
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> GrayImage {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..r.len()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Reflect-pads on the bottom and right to at least `height × width`.
    pub fn pad_reflect(&self, height: usize, width: usize) -> RgbImage {
        let (h, w) = (height.max(self.height), width.max(self.width));
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for r in 0..h {
                let sr = reflect_index(r as isize, self.height);
                for col in 0..w {
                    let sc = reflect_index(col as isize, self.width);
                    data.push(self.data[c * n + sr * self.width + sc]);
                }
            }
        }
        RgbImage {
            width: w,
            height: h,
            data,
        }
    }
}

/// Labels in `{0, 1}` with 1 = ink, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("binary image contains label {v}")));
        }
        Ok(BinaryImage { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryImage {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn ink_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn hflip(&self) -> BinaryImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        BinaryImage { data, ..*self }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// Ink where `value ≥ 0.5`.
    pub fn threshold(width: usize, height: usize, values: &[f32]) -> Result<Self> {
        check_dims(width, height, values.len(), 1)?;
        Ok(BinaryImage {
            width,
            height,
            data: values.iter().map(|&v| (v >= 0.5) as u8).collect(),
        })
    }

    /// Hamming distance to another image of the same size.
    pub fn hamming(&self, other: &BinaryImage) -> Result<usize> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Data(format!(
                "size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count())
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads any supported image as RGB; gray sources are replicated.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = open(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    RgbImage::new(w, h, data)
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let img = open(path.as_ref())?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    GrayImage::new(w, h, img.into_raw().iter().map(|&v| v as f32 / 255.0).collect())
}

/// Dark pixels (< 128) are ink.
pub fn load_binary(path: impl AsRef<Path>) -> Result<BinaryImage> {
    let img = open(path.as_ref())?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryImage::new(w, h, img.into_raw().iter().map(|&v| (v < 128) as u8).collect())
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm" | "ppm" | "pnm" | "pbm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Data(format!(
            "unsupported output extension for {} (use .png or .pgm)",
            path.display()
        ))),
    }
}

fn encode(img: DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let format = format_for(path)?;
    let mut buf = std::io::Cursor::new(Vec::new());
    let img = match format {
        // binary PGM (P5) rather than the encoder's default for luma
        ImageFormat::Pnm => {
            let mut out = Vec::new();
            let gray = img.to_luma8();
            out.extend_from_slice(format!("P5\n{} {}\n255\n", gray.width(), gray.height()).as_bytes());
            out.extend_from_slice(gray.as_raw());
            return Ok(out);
        }
        _ => img,
    };
    img.write_to(&mut buf, format).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(buf.into_inner())
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// PNG or binary PGM by extension; ink → 0, background → 255.
pub fn save_binary(img: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().map(|&v| if v == 1 { 0 } else { 255 }).collect();
    let buf = RawGray::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::Data("binary image buffer size mismatch".into()))?;
    let path = path.as_ref();
    write_atomic(path, &encode(DynamicImage::ImageLuma8(buf), path)?)
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = RawGray::new(img.width as u32, img.height as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        *px = Luma([(img.data[i].clamp(0.0, 1.0) * 255.0).round() as u8]);
    }
    let path = path.as_ref();
    write_atomic(path, &encode(DynamicImage::ImageLuma8(buf), path)?)
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let n = img.width * img.height;
    let mut raw = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            raw.push((img.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::Data("rgb image buffer size mismatch".into()))?;
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = if format == ImageFormat::Pnm {
        let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
        out.extend_from_slice(buf.as_raw());
        out
    } else {
        encode(DynamicImage::ImageRgb8(buf), path)?
    };
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_png_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let img = BinaryImage::new(3, 2, vec![1, 0, 1, 0, 0, 1]).unwrap();
        for ext in ["png", "pgm"] {
            let p = dir.path().join(format!("b.{ext}"));
            save_binary(&img, &p).unwrap();
            assert_eq!(load_binary(&p).unwrap(), img);
            assert_eq!(load_gray(&p).unwrap().data[0], 0.0);
        }
        let pgm = std::fs::read(dir.path().join("b.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
    }

    #[test]
    fn rgb_round_trip_is_quantised() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(2, 1, vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0]).unwrap();
        for ext in ["png", "ppm"] {
            let p = dir.path().join(format!("c.{ext}"));
            save_rgb(&img, &p).unwrap();
            let back = load_rgb(&p).unwrap();
            for (a, b) in back.data.iter().zip(&img.data) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn gray_sources_replicate_to_three_planes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_gray(&GrayImage::new(2, 2, vec![0.0, 0.2, 0.6, 1.0]).unwrap(), &p).unwrap();
        let rgb = load_rgb(&p).unwrap();
        assert_eq!(rgb.plane(0), rgb.plane(1));
        assert_eq!(rgb.plane(1), rgb.plane(2));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BinaryImage::new(2, 1, vec![0, 2]).is_err());
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(save_binary(&BinaryImage::empty(1, 1), "/tmp/x.jpg").is_err());
        assert!(matches!(load_rgb("/nonexistent/a.png"), Err(Error::Io { .. })));
    }

    #[test]
    fn reflect_pad_mirrors_edges() {
        let g = GrayImage::new(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let p = RgbImage::from_gray(&g).pad_reflect(1, 6);
        assert_eq!(p.plane(0), &[0.1, 0.2, 0.3, 0.2, 0.1, 0.2]);
    }

    #[test]
    fn threshold_boundary_is_ink() {
        let b = BinaryImage::threshold(2, 1, &[0.4999, 0.5]).unwrap();
        assert_eq!(b.data, vec![0, 1]);
    }
}
