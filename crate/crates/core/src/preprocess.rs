//! Image decoding and conversion to network input tensors.
//!
//! Pipeline for [`crop_resize`]: rotate about the image centre (inverse
//! mapping, zero fill outside the source), crop the requested rectangle,
//! resize to the target size, then emit a `[3, H, W]` tensor of raw `0..=255`
//! channel values minus optional per-channel means.
//!
//! Resampling uses pixel-centre alignment (`src = (dst + 0.5) * scale - 0.5`)
//! with edge clamping, so an identity resize reproduces the source exactly
//! and corner pixels survive upscaling.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("decode error ({format}): {message}")]
    Decode { format: String, message: String },
    #[error("crop {x},{y} {w}x{h} lies outside the {width}x{height} image")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("expected {expected} channel means, got {found}")]
    ChannelMeans { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Decoded 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RawImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::Dimensions(format!("{width}x{height} image")));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(PreprocessError::Dimensions(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Encodes as PNG. Used for fixtures and round-trip tests.
    pub fn to_png(&self) -> Vec<u8> {
        self.encode(ImageFormat::Png)
    }

    pub fn to_bmp(&self) -> Vec<u8> {
        self.encode(ImageFormat::Bmp)
    }

    fn encode(&self, format: ImageFormat) -> Vec<u8> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let buf = image::RgbImage::from_raw(self.width, self.height, flat).expect("size checked");
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(buf)
            .write_to(&mut out, format)
            .expect("in-memory encode");
        out.into_inner()
    }
}

/// Decodes PNG, JPEG or BMP bytes; grayscale and alpha sources are converted
/// to RGB.
pub fn decode(bytes: &[u8]) -> Result<RawImage> {
    let format = image::guess_format(bytes).map_err(|e| PreprocessError::Decode {
        format: "unknown".into(),
        message: e.to_string(),
    })?;
    let name = format!("{format:?}").to_lowercase();
    let reader = ImageReader::with_format(Cursor::new(bytes), format);
    let img = reader.decode().map_err(|e| PreprocessError::Decode {
        format: name,
        message: e.to_string(),
    })?;
    let rgb = img.into_rgb8();
    let (width, height) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RawImage::new(width, height, pixels)
}

/// Crop rectangle in the coordinates of the rotated image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    /// Counter-clockwise degrees, applied about the image centre before
    /// cropping.
    #[serde(default)]
    pub rotation_deg: f64,
}

impl CropSpec {
    pub fn full(img: &RawImage) -> Self {
        Self {
            x: 0,
            y: 0,
            w: img.width,
            h: img.height,
            rotation_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Subtracted from each channel (R, G, B) after scaling to `0..=255`.
    /// Zero when absent.
    pub channel_means: Option<[f32; 3]>,
    pub interpolation: Interpolation,
}

impl PreprocessConfig {
    pub fn with_means(means: &[f32]) -> Result<Self> {
        let arr: [f32; 3] = means.try_into().map_err(|_| PreprocessError::ChannelMeans {
            expected: 3,
            found: means.len(),
        })?;
        Ok(Self {
            channel_means: Some(arr),
            ..Self::default()
        })
    }
}

/// Planar float image, `[3][h][w]`.
struct Planes {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Planes {
    fn from_raw(img: &RawImage) -> Self {
        let (w, h) = (img.width as usize, img.height as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in img.pixels.iter().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = f32::from(px[c]);
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Zero outside the image.
    fn at_or_zero(&self, c: usize, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            f64::from(self.at(c, x as usize, y as usize))
        }
    }

    fn rotate(&self, degrees: f64, interp: Interpolation) -> Planes {
        let (w, h) = (self.width, self.height);
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let (sin, cos) = degrees.to_radians().sin_cos();
        let mut data = vec![0.0f32; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                // Image y grows downwards, so a counter-clockwise turn on
                // screen maps the output point back by +theta in these axes.
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                for c in 0..3 {
                    let v = match interp {
                        Interpolation::Nearest => self.at_or_zero(c, sx.round() as isize, sy.round() as isize),
                        Interpolation::Bilinear => {
                            let x0 = sx.floor();
                            let y0 = sy.floor();
                            let fx = sx - x0;
                            let fy = sy - y0;
                            let (x0, y0) = (x0 as isize, y0 as isize);
                            let top = self.at_or_zero(c, x0, y0) * (1.0 - fx) + self.at_or_zero(c, x0 + 1, y0) * fx;
                            let bottom =
                                self.at_or_zero(c, x0, y0 + 1) * (1.0 - fx) + self.at_or_zero(c, x0 + 1, y0 + 1) * fx;
                            top * (1.0 - fy) + bottom * fy
                        }
                    };
                    data[(c * h + y) * w + x] = v as f32;
                }
            }
        }
        Planes {
            width: w,
            height: h,
            data,
        }
    }
}

/// Source coordinate and interpolation weight along one axis.
fn axis_taps(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

fn nearest_tap(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let scale = src_len as f64 / dst_len as f64;
    (((dst as f64 + 0.5) * scale).floor() as usize).min(src_len - 1)
}

/// Rotates, crops and resizes `img` into a `[3, H, W]` tensor.
pub fn crop_resize(img: &RawImage, crop: &CropSpec, target: (u32, u32), config: &PreprocessConfig) -> Result<Tensor> {
    let (tw, th) = (target.0 as usize, target.1 as usize);
    if tw == 0 || th == 0 {
        return Err(PreprocessError::Dimensions(format!("target {}x{}", target.0, target.1)));
    }
    let out_of_bounds = crop.w == 0
        || crop.h == 0
        || u64::from(crop.x) + u64::from(crop.w) > u64::from(img.width)
        || u64::from(crop.y) + u64::from(crop.h) > u64::from(img.height);
    if out_of_bounds {
        return Err(PreprocessError::CropOutOfBounds {
            x: crop.x,
            y: crop.y,
            w: crop.w,
            h: crop.h,
            width: img.width,
            height: img.height,
        });
    }
    if !crop.rotation_deg.is_finite() {
        return Err(PreprocessError::Dimensions(format!("rotation {}", crop.rotation_deg)));
    }

    let mut planes = Planes::from_raw(img);
    if crop.rotation_deg % 360.0 != 0.0 {
        planes = planes.rotate(crop.rotation_deg, config.interpolation);
    }

    let (cx, cy) = (crop.x as usize, crop.y as usize);
    let (cw, ch) = (crop.w as usize, crop.h as usize);
    let means = config.channel_means.unwrap_or([0.0; 3]);
    let mut out = Vec::with_capacity(3 * tw * th);
    for (c, mean) in means.iter().enumerate() {
        for y in 0..th {
            for x in 0..tw {
                let v = match config.interpolation {
                    Interpolation::Bilinear => {
                        let (x0, x1, fx) = axis_taps(x, tw, cw);
                        let (y0, y1, fy) = axis_taps(y, th, ch);
                        let p = |xx: usize, yy: usize| f64::from(planes.at(c, cx + xx, cy + yy));
                        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                        (top * (1.0 - fy) + bottom * fy) as f32
                    }
                    Interpolation::Nearest => planes.at(c, cx + nearest_tap(x, tw, cw), cy + nearest_tap(y, th, ch)),
                };
                out.push(v - mean);
            }
        }
    }
    Ok(Tensor::new(vec![3, th, tw], out).expect("sized above"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colorcast {
    Color,
    Monochrome,
    Sepia,
}

impl Colorcast {
    pub fn as_str(self) -> &'static str {
        match self {
            Colorcast::Color => "color",
            Colorcast::Monochrome => "monochrome",
            Colorcast::Sepia => "sepia",
        }
    }
}

/// Per-pixel channel spread at or below which a pixel counts as neutral.
pub const NEUTRAL_SPREAD: u8 = 2;
/// Fraction of neutral pixels required for a monochrome verdict.
pub const MONOCHROME_FRACTION: f64 = 0.99;
/// Warm-hue cone, HSV hue in degrees.
pub const SEPIA_HUE: (f64, f64) = (15.0, 60.0);
/// HSV saturation band of the mean colour.
pub const SEPIA_SATURATION: (f64, f64) = (0.08, 0.65);
/// Fraction of chromatic pixels that must individually fall in the cone.
pub const SEPIA_PIXEL_FRACTION: f64 = 0.9;

/// The classic sepia tone matrix, rows produce R, G, B.
pub const SEPIA_MATRIX: [[f64; 3]; 3] = [[0.393, 0.769, 0.189], [0.349, 0.686, 0.168], [0.272, 0.534, 0.131]];

/// Applies [`SEPIA_MATRIX`] with clamping to 255.
pub fn sepia_tone(px: [u8; 3]) -> [u8; 3] {
    let [r, g, b] = px.map(f64::from);
    SEPIA_MATRIX.map(|row| (row[0] * r + row[1] * g + row[2] * b).round().min(255.0) as u8)
}

/// HSV hue (degrees) and saturation of an RGB triple.
fn hue_saturation(r: f64, g: f64, b: f64) -> (f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 || max <= 0.0 {
        return (0.0, 0.0);
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (hue, delta / max)
}

fn in_cone(hue: f64, sat: f64) -> bool {
    (SEPIA_HUE.0..=SEPIA_HUE.1).contains(&hue) && (SEPIA_SATURATION.0..=SEPIA_SATURATION.1).contains(&sat)
}

/// Classifies an image as colour, monochrome or sepia.
///
/// * monochrome: at least [`MONOCHROME_FRACTION`] of pixels have a channel
///   spread (max - min) of at most [`NEUTRAL_SPREAD`];
/// * sepia: the mean colour lies in the warm cone ([`SEPIA_HUE`],
///   [`SEPIA_SATURATION`]) and at least [`SEPIA_PIXEL_FRACTION`] of the
///   non-neutral pixels do too;
/// * colour otherwise.
pub fn detect_colorcast(img: &RawImage) -> Colorcast {
    let n = img.pixels.len() as f64;
    let spread = |p: &[u8; 3]| p.iter().max().unwrap() - p.iter().min().unwrap();
    let neutral = img.pixels.iter().filter(|p| spread(p) <= NEUTRAL_SPREAD).count();
    if neutral as f64 >= MONOCHROME_FRACTION * n {
        return Colorcast::Monochrome;
    }

    let mut sum = [0.0f64; 3];
    for p in &img.pixels {
        for c in 0..3 {
            sum[c] += f64::from(p[c]);
        }
    }
    let (hue, sat) = hue_saturation(sum[0] / n, sum[1] / n, sum[2] / n);
    if !in_cone(hue, sat) {
        return Colorcast::Color;
    }
    let chromatic: Vec<&[u8; 3]> = img.pixels.iter().filter(|p| spread(p) > NEUTRAL_SPREAD).collect();
    let warm = chromatic
        .iter()
        .filter(|p| {
            let (h, s) = hue_saturation(f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
            in_cone(h, s)
        })
        .count();
    if warm as f64 >= SEPIA_PIXEL_FRACTION * chromatic.len() as f64 {
        Colorcast::Sepia
    } else {
        Colorcast::Color
    }
}
