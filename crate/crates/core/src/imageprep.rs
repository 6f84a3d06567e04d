//! Eye-based alignment and the block-grid cropping filter.
//!
//! A face is rotated in-plane about the eye midpoint until the eyes are level,
//! resampled to 240×240 (bilinear, edge replication outside the canvas), cut
//! into a 10×10 grid of 24×24 blocks numbered 1..=100 row-major from the top
//! left, and reduced to blocks 1–50: the 240×120 upper half that stays
//! visible above a mask.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const ALIGNED_SIZE: usize = 240;
pub const BLOCK_SIZE: usize = 24;
pub const GRID: usize = ALIGNED_SIZE / BLOCK_SIZE;
/// Blocks 1..=KEPT_BLOCKS survive the cropping filter.
pub const KEPT_BLOCKS: usize = 50;
pub const CROP_HEIGHT: usize = KEPT_BLOCKS / GRID * BLOCK_SIZE;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("degenerate landmarks: eyes at ({0:.1}, {1:.1}) and ({2:.1}, {3:.1}) do not define a horizontal axis")]
    DegenerateLandmarks(f64, f64, f64, f64),
    #[error("landmark ({x:.1}, {y:.1}) outside {width}x{height} image")]
    InvalidLandmarks { x: f64, y: f64, width: usize, height: usize },
    #[error("expected a {expected_w}x{expected_h} image, got {width}x{height}")]
    DimensionMismatch { expected_w: usize, expected_h: usize, width: usize, height: usize },
    #[error("cannot decode {path}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed landmark line {line:?}: expected `lx ly rx ry`")]
    Sidecar { path: PathBuf, line: String },
}

/// 8-bit image, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl FaceImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidImage("width and height must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidImage(format!("{channels} channels; expected 1 or 3")));
        }
        if pixels.len() != width * height * channels {
            return Err(ImageError::InvalidImage(format!(
                "{} bytes for {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// Builds an image from a per-pixel function returning `channels` values.
    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> u8) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Copies the `w×h` window with top-left corner `(x, y)`.
    pub fn sub_image(&self, x: usize, y: usize, w: usize, h: usize) -> FaceImage {
        let mut pixels = Vec::with_capacity(w * h * self.channels);
        for row in y..y + h {
            let start = (row * self.width + x) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + w * self.channels]);
        }
        FaceImage { width: w, height: h, channels: self.channels, pixels }
    }

    fn expect_dims(&self, w: usize, h: usize) -> Result<(), ImageError> {
        if self.width != w || self.height != h {
            return Err(ImageError::DimensionMismatch {
                expected_w: w,
                expected_h: h,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Bilinear sample with edge replication.
    fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p = |xx, yy| f64::from(self.get(xx, yy, c));
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Eye centers in pixel coordinates (x = column, y = row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeLandmarks {
    pub left: Point,
    pub right: Point,
}

impl EyeLandmarks {
    pub fn new(left: Point, right: Point) -> Self {
        Self { left, right }
    }

    /// Orders the eyes so that `left.x < right.x`.
    pub fn canonical(self) -> Self {
        if self.left.x > self.right.x {
            Self { left: self.right, right: self.left }
        } else {
            self
        }
    }

    fn validate(&self, width: usize, height: usize) -> Result<Self, ImageError> {
        for p in [self.left, self.right] {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && p.x >= 0.0
                && p.y >= 0.0
                && p.x <= (width - 1) as f64
                && p.y <= (height - 1) as f64;
            if !inside {
                return Err(ImageError::InvalidLandmarks { x: p.x, y: p.y, width, height });
            }
        }
        let eyes = self.canonical();
        if eyes.left.x == eyes.right.x {
            return Err(ImageError::DegenerateLandmarks(eyes.left.x, eyes.left.y, eyes.right.x, eyes.right.y));
        }
        Ok(eyes)
    }
}

/// The rotate-then-resize transform taking a source image to its 240×240
/// aligned form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    angle: f64,
    pivot: Point,
    src_width: usize,
    src_height: usize,
    out_size: usize,
}

impl Alignment {
    pub fn new(width: usize, height: usize, eyes: EyeLandmarks) -> Result<Self, ImageError> {
        let eyes = eyes.validate(width, height)?;
        let angle = (eyes.right.y - eyes.left.y).atan2(eyes.right.x - eyes.left.x);
        let pivot = Point::new((eyes.left.x + eyes.right.x) / 2.0, (eyes.left.y + eyes.right.y) / 2.0);
        Ok(Self { angle, pivot, src_width: width, src_height: height, out_size: ALIGNED_SIZE })
    }

    /// Angle of the eye axis, in radians; the image is rotated by its negative.
    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Source point → position in the rotated source canvas.
    pub fn rotate_point(&self, p: Point) -> Point {
        if self.angle == 0.0 {
            return p;
        }
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.pivot.x;
        let dy = p.y - self.pivot.y;
        Point::new(c * dx + s * dy + self.pivot.x, -s * dx + c * dy + self.pivot.y)
    }

    fn unrotate_point(&self, p: Point) -> Point {
        if self.angle == 0.0 {
            return p;
        }
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.pivot.x;
        let dy = p.y - self.pivot.y;
        Point::new(c * dx - s * dy + self.pivot.x, s * dx + c * dy + self.pivot.y)
    }

    /// Source point → position in the aligned 240×240 output.
    pub fn map_point(&self, p: Point) -> Point {
        let r = self.rotate_point(p);
        let sx = self.out_size as f64 / self.src_width as f64;
        let sy = self.out_size as f64 / self.src_height as f64;
        Point::new((r.x + 0.5) * sx - 0.5, (r.y + 0.5) * sy - 0.5)
    }

    fn render(&self, image: &FaceImage, out_w: usize, out_h: usize) -> FaceImage {
        let sx = self.src_width as f64 / out_w as f64;
        let sy = self.src_height as f64 / out_h as f64;
        let channels = image.channels;
        let mut pixels = Vec::with_capacity(out_w * out_h * channels);
        for v in 0..out_h {
            for u in 0..out_w {
                let rotated = Point::new((u as f64 + 0.5) * sx - 0.5, (v as f64 + 0.5) * sy - 0.5);
                let src = self.unrotate_point(rotated);
                for c in 0..channels {
                    pixels.push(image.sample(src.x, src.y, c).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        FaceImage { width: out_w, height: out_h, channels, pixels }
    }
}

/// Levels the eyes and resamples to 240×240 in a single bilinear pass.
pub fn align_face(image: &FaceImage, eyes: EyeLandmarks) -> Result<FaceImage, ImageError> {
    let alignment = Alignment::new(image.width, image.height, eyes)?;
    Ok(alignment.render(image, ALIGNED_SIZE, ALIGNED_SIZE))
}

/// Rotation step alone: levels the eyes without changing the canvas size.
pub fn rotate_level(image: &FaceImage, eyes: EyeLandmarks) -> Result<FaceImage, ImageError> {
    let alignment = Alignment::new(image.width, image.height, eyes)?;
    Ok(alignment.render(image, image.width, image.height))
}

/// A 24×24 tile of an aligned face; `index` counts 1..=100 row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub image: FaceImage,
}

pub fn partition_blocks(face: &FaceImage) -> Result<Vec<Block>, ImageError> {
    face.expect_dims(ALIGNED_SIZE, ALIGNED_SIZE)?;
    let mut blocks = Vec::with_capacity(GRID * GRID);
    for row in 0..GRID {
        for col in 0..GRID {
            blocks.push(Block {
                index: row * GRID + col + 1,
                row,
                col,
                image: face.sub_image(col * BLOCK_SIZE, row * BLOCK_SIZE, BLOCK_SIZE, BLOCK_SIZE),
            });
        }
    }
    Ok(blocks)
}

/// Inverse of [`partition_blocks`]; blocks may arrive in any order.
pub fn reassemble(blocks: &[Block]) -> Result<FaceImage, ImageError> {
    if blocks.len() != GRID * GRID {
        return Err(ImageError::InvalidImage(format!("{} blocks; expected {}", blocks.len(), GRID * GRID)));
    }
    let channels = blocks[0].image.channels;
    let mut pixels = vec![0u8; ALIGNED_SIZE * ALIGNED_SIZE * channels];
    let mut seen = [false; GRID * GRID];
    for b in blocks {
        b.image.expect_dims(BLOCK_SIZE, BLOCK_SIZE)?;
        if b.image.channels != channels || b.index == 0 || b.index > GRID * GRID || seen[b.index - 1] {
            return Err(ImageError::InvalidImage(format!("bad or repeated block {}", b.index)));
        }
        seen[b.index - 1] = true;
        let (row, col) = ((b.index - 1) / GRID, (b.index - 1) % GRID);
        let line = BLOCK_SIZE * channels;
        for r in 0..BLOCK_SIZE {
            let dst = ((row * BLOCK_SIZE + r) * ALIGNED_SIZE + col * BLOCK_SIZE) * channels;
            pixels[dst..dst + line].copy_from_slice(&b.image.pixels[r * line..(r + 1) * line]);
        }
    }
    FaceImage::new(ALIGNED_SIZE, ALIGNED_SIZE, channels, pixels)
}

/// Keeps blocks 1–50: rows 0..120 of the aligned face.
pub fn crop_unmasked(face: &FaceImage) -> Result<FaceImage, ImageError> {
    face.expect_dims(ALIGNED_SIZE, ALIGNED_SIZE)?;
    Ok(face.sub_image(0, 0, ALIGNED_SIZE, CROP_HEIGHT))
}

/// Decodes a PNG/JPEG file; grayscale stays single-channel, anything else
/// becomes RGB (alpha dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<FaceImage, ImageError> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|source| ImageError::Decode { path: path.to_path_buf(), source })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded.color() {
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16 => {
            FaceImage::new(w, h, 1, decoded.to_luma8().into_raw())
        }
        _ => FaceImage::new(w, h, 3, decoded.to_rgb8().into_raw()),
    }
}

/// Writes the image as PNG.
pub fn save_png(img: &FaceImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let color = if img.channels == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    image::save_buffer_with_format(path, &img.pixels, img.width as u32, img.height as u32, color, image::ImageFormat::Png)
        .map_err(|source| ImageError::Decode { path: path.to_path_buf(), source })
}

/// Parses `lx ly rx ry`: four integers separated by single spaces.
pub fn parse_landmark_line(line: &str) -> Option<EyeLandmarks> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 {
        return None;
    }
    let mut v = [0f64; 4];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.parse::<i64>().ok()? as f64;
    }
    Some(EyeLandmarks::new(Point::new(v[0], v[1]), Point::new(v[2], v[3])))
}

/// `<image path>.eyes`
pub fn sidecar_path(image_path: impl AsRef<Path>) -> PathBuf {
    let mut s = image_path.as_ref().as_os_str().to_owned();
    s.push(".eyes");
    PathBuf::from(s)
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<EyeLandmarks, ImageError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ImageError::Io { path: path.to_path_buf(), source })?;
    let first = text.lines().next().unwrap_or("");
    parse_landmark_line(first).ok_or_else(|| ImageError::Sidecar { path: path.to_path_buf(), line: first.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eyes(lx: f64, ly: f64, rx: f64, ry: f64) -> EyeLandmarks {
        EyeLandmarks::new(Point::new(lx, ly), Point::new(rx, ry))
    }

    fn gradient(w: usize, h: usize, c: usize) -> FaceImage {
        FaceImage::from_fn(w, h, c, |x, y, ch| ((x * 3 + y * 5 + ch * 40) % 256) as u8).unwrap()
    }

    #[test]
    fn level_eyes_resize_only() {
        let img = gradient(240, 240, 1);
        let a = Alignment::new(240, 240, eyes(60.0, 100.0, 180.0, 100.0)).unwrap();
        assert_eq!(a.angle(), 0.0);
        assert_eq!(align_face(&img, eyes(60.0, 100.0, 180.0, 100.0)).unwrap(), img);

        let big = gradient(300, 360, 3);
        let out = align_face(&big, eyes(60.0, 100.0, 180.0, 100.0)).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (240, 240, 3));
    }

    #[test]
    fn diagonal_eyes_rotate_45_degrees() {
        let a = Alignment::new(20, 20, eyes(0.0, 0.0, 10.0, 10.0)).unwrap();
        assert!((a.angle() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        // rotating (±5, ±5) about the pivot (5, 5) by −45° by hand
        let half_diag = 50f64.sqrt();
        let l = a.rotate_point(Point::new(0.0, 0.0));
        let r = a.rotate_point(Point::new(10.0, 10.0));
        assert!((l.x - (5.0 - half_diag)).abs() < 1e-12 && (l.y - 5.0).abs() < 1e-12);
        assert!((r.x - (5.0 + half_diag)).abs() < 1e-12 && (r.y - 5.0).abs() < 1e-12);
        let (ml, mr) = (a.map_point(Point::new(0.0, 0.0)), a.map_point(Point::new(10.0, 10.0)));
        assert!((ml.y - mr.y).abs() < 1e-9);
    }

    #[test]
    fn swapped_eyes_give_identical_output() {
        let img = gradient(200, 180, 3);
        let a = align_face(&img, eyes(50.0, 90.0, 150.0, 70.0)).unwrap();
        let b = align_face(&img, eyes(150.0, 70.0, 50.0, 90.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn landmark_errors() {
        let img = gradient(100, 100, 1);
        assert!(matches!(align_face(&img, eyes(30.0, 40.0, 30.0, 40.0)), Err(ImageError::DegenerateLandmarks(..))));
        assert!(matches!(align_face(&img, eyes(30.0, 40.0, 30.0, 60.0)), Err(ImageError::DegenerateLandmarks(..))));
        assert!(matches!(align_face(&img, eyes(30.0, 40.0, 100.0, 40.0)), Err(ImageError::InvalidLandmarks { .. })));
        assert!(matches!(align_face(&img, eyes(-1.0, 40.0, 60.0, 40.0)), Err(ImageError::InvalidLandmarks { .. })));
    }

    #[test]
    fn rotation_preserves_eye_distance() {
        let a = Alignment::new(200, 200, eyes(40.0, 120.0, 160.0, 60.0)).unwrap();
        let l = a.rotate_point(Point::new(40.0, 120.0));
        let r = a.rotate_point(Point::new(160.0, 60.0));
        let before = Point::new(40.0, 120.0).distance(Point::new(160.0, 60.0));
        assert!((l.distance(r) - before).abs() / before < 1e-12);
    }

    #[test]
    fn aligning_aligned_face_is_stable() {
        let img = gradient(180, 220, 1);
        let e = eyes(45.0, 110.0, 140.0, 95.0);
        let a = Alignment::new(180, 220, e).unwrap();
        let once = align_face(&img, e).unwrap();
        let (l, r) = (a.map_point(e.left), a.map_point(e.right));
        let y = l.y.round();
        let twice = align_face(&once, eyes(l.x.round(), y, r.x.round(), y)).unwrap();
        let max_diff = once.pixels().iter().zip(twice.pixels()).map(|(p, q)| p.abs_diff(*q)).max().unwrap();
        assert!(max_diff <= 2, "{max_diff}");
    }

    #[test]
    fn blocks_tile_row_major() {
        let img = gradient(240, 240, 3);
        let blocks = partition_blocks(&img).unwrap();
        assert_eq!(blocks.len(), 100);
        assert!(blocks.iter().all(|b| b.image.width() == 24 && b.image.height() == 24));
        let b11 = &blocks[10];
        assert_eq!((b11.index, b11.row, b11.col), (11, 1, 0));
        assert_eq!(b11.image, img.sub_image(0, 24, 24, 24));
        assert_eq!(blocks[0].image, img.sub_image(0, 0, 24, 24));
        assert_eq!(reassemble(&blocks).unwrap(), img);
        let mut shuffled = blocks.clone();
        shuffled.reverse();
        assert_eq!(reassemble(&shuffled).unwrap(), img);
    }

    #[test]
    fn constant_image_constant_blocks() {
        let img = FaceImage::new(240, 240, 1, vec![77; 240 * 240]).unwrap();
        assert!(partition_blocks(&img).unwrap().iter().all(|b| b.image.pixels().iter().all(|&p| p == 77)));
    }

    #[test]
    fn crop_keeps_top_half() {
        let img = FaceImage::from_fn(240, 240, 1, |_, y, _| if y < 120 { 255 } else { 0 }).unwrap();
        let crop = crop_unmasked(&img).unwrap();
        assert_eq!((crop.width(), crop.height()), (240, 120));
        assert!(crop.pixels().iter().all(|&p| p == 255));
        let g = gradient(240, 240, 3);
        let crop = crop_unmasked(&g).unwrap();
        for y in 0..120 {
            for x in 0..240 {
                for c in 0..3 {
                    assert_eq!(crop.get(x, y, c), g.get(x, y, c));
                }
            }
        }
        let blocks = partition_blocks(&g).unwrap();
        for b in &blocks[..KEPT_BLOCKS] {
            assert_eq!(crop.sub_image(b.col * 24, b.row * 24, 24, 24), b.image);
        }
    }

    #[test]
    fn wrong_dims_rejected() {
        let img = gradient(240, 239, 1);
        assert!(matches!(partition_blocks(&img), Err(ImageError::DimensionMismatch { .. })));
        assert!(matches!(crop_unmasked(&img), Err(ImageError::DimensionMismatch { .. })));
    }

    #[test]
    fn landmark_line_parsing() {
        let e = parse_landmark_line("60 100 180 102\n").unwrap();
        assert_eq!(e, eyes(60.0, 100.0, 180.0, 102.0));
        assert!(parse_landmark_line("60  100 180 102").is_none());
        assert!(parse_landmark_line("60\t100 180 102").is_none());
        assert!(parse_landmark_line("60 100 180").is_none());
        assert!(parse_landmark_line("60 100 180 1.5").is_none());
        assert_eq!(sidecar_path("a/b.png"), PathBuf::from("a/b.png.eyes"));
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let img = gradient(31, 17, c);
            let p = dir.path().join(format!("x{c}.png"));
            save_png(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
    }
}
