//! Raster decoding/encoding, size limits, resampling and optical density.
//!
//! Everything here is a pure function of its inputs. Rasters are always
//! 8-bit RGB in row-major order; source metadata, alpha and bit depth beyond
//! eight bits never survive decoding.

use std::io::Cursor;

use image::codecs::png::PngEncoder;
use image::imageops::FilterType;
use image::{DynamicImage, ExtendedColorType, ImageDecoder, ImageEncoder, ImageFormat, ImageReader};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("image is {width}x{height}, larger than the {max_dim}x{max_dim} limit")]
    ImageTooLarge { width: u32, height: u32, max_dim: u32 },
    #[error("invalid scale factor {0}")]
    InvalidScale(f64),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
}

/// Decoded 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

macro_rules! brief_debug {
    ($($t:ident),*) => {$(
        impl std::fmt::Debug for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.debug_struct(stringify!($t))
                    .field("width", &self.width)
                    .field("height", &self.height)
                    .finish_non_exhaustive()
            }
        }
    )*};
}

brief_debug!(RasterImage, Plane, OdPlane);

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidRaster(format!("empty raster {width}x{height}")));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImageError::InvalidRaster(format!(
                "buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Uniform raster. Panics on a zero dimension.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let pixels = rgb.repeat(width as usize * height as usize);
        Self { width, height, pixels }
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel. Panics on a zero dimension.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3] + Sync) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let mut pixels = vec![0u8; width as usize * height as usize * 3];
        par::rows_mut(&mut pixels, width as usize * 3, |y, row| {
            for (x, px) in row.chunks_exact_mut(3).enumerate() {
                px.copy_from_slice(&f(x as u32, y as u32));
            }
        });
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.index(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.index(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies out the rectangle `(x, y, width, height)`, which must lie inside the image.
    pub fn crop(&self, x: u32, y: u32, width: u32, height: u32) -> RasterImage {
        assert!(x + width <= self.width && y + height <= self.height, "crop out of bounds");
        let row_bytes = width as usize * 3;
        let mut pixels = Vec::with_capacity(row_bytes * height as usize);
        for yy in y..y + height {
            let start = self.index(x, yy);
            pixels.extend_from_slice(&self.pixels[start..start + row_bytes]);
        }
        RasterImage { width, height, pixels }
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }
}

/// 8-bit single channel image, used for rendered modality planes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageLimits {
    pub max_dim: u32,
    pub thumbnail_max_dim: u32,
}

impl ImageLimits {
    pub fn new(max_dim: u32, thumbnail_max_dim: u32) -> Result<Self, ImageError> {
        if thumbnail_max_dim == 0 || max_dim < thumbnail_max_dim {
            return Err(ImageError::InvalidRaster(format!(
                "limits need max_dim >= thumbnail_max_dim >= 1, got {max_dim} and {thumbnail_max_dim}"
            )));
        }
        Ok(Self { max_dim, thumbnail_max_dim })
    }
}

impl Default for ImageLimits {
    fn default() -> Self {
        Self { max_dim: 3000, thumbnail_max_dim: 512 }
    }
}

/// Real-valued channel with every value in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Plane {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl Plane {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, ImageError> {
        check_plane_shape(width, height, values.len())?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::InvalidRaster(format!("plane value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self::constant(width, height, 0.0)
    }

    /// Uniform plane; `value` is clamped into `[0, 1]`.
    pub fn constant(width: u32, height: u32, value: f32) -> Self {
        Self { width, height, values: vec![value.clamp(0.0, 1.0); width as usize * height as usize] }
    }

    /// Builds a plane from `f(x, y)`, clamping every value into `[0, 1]`.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32 + Sync) -> Self {
        let mut values = vec![0f32; width as usize * height as usize];
        par::rows_mut(&mut values, width as usize, |y, row| {
            for (x, v) in row.iter_mut().enumerate() {
                *v = clamp_unit(f(x as u32, y as u32));
            }
        });
        Self { width, height, values }
    }

    /// Caller guarantees shape and range.
    pub(crate) fn from_raw(width: u32, height: u32, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), width as usize * height as usize);
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// `round(255 * v)` per pixel.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|&v| quantize_unit(v)).collect(),
        }
    }
}

/// Non-negative optical density per pixel.
#[derive(Clone, PartialEq)]
pub struct OdPlane {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl OdPlane {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, ImageError> {
        check_plane_shape(width, height, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ImageError::InvalidRaster(format!("optical density {v} is negative or not finite")));
        }
        Ok(Self { width, height, values })
    }

    pub(crate) fn from_raw(width: u32, height: u32, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), width as usize * height as usize);
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }
}

fn check_plane_shape(width: u32, height: u32, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 || len != width as usize * height as usize {
        return Err(ImageError::InvalidRaster(format!("{len} values do not fill a {width}x{height} plane")));
    }
    Ok(())
}

pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// `round(255 * v)` for `v` in `[0, 1]`.
pub fn quantize_unit(v: f32) -> u8 {
    (f64::from(clamp_unit(v)) * 255.0).round() as u8
}

/// Inverse of [`quantize_unit`] up to quantization.
pub fn dequantize_unit(q: u8) -> f32 {
    q as f32 / 255.0
}

/// Container formats recognised by their leading bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    Png,
    Jpeg,
    Bmp,
    Tiff,
}

impl SourceFormat {
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(Self::Png)
        } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(Self::Jpeg)
        } else if bytes.starts_with(b"BM") {
            Some(Self::Bmp)
        } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
            Some(Self::Tiff)
        } else {
            None
        }
    }

    /// Formats handled by the fast decode path.
    pub fn is_common(self) -> bool {
        matches!(self, Self::Png | Self::Jpeg | Self::Bmp)
    }

    fn image_format(self) -> ImageFormat {
        match self {
            Self::Png => ImageFormat::Png,
            Self::Jpeg => ImageFormat::Jpeg,
            Self::Bmp => ImageFormat::Bmp,
            Self::Tiff => ImageFormat::Tiff,
        }
    }
}

/// Decodes an uploaded image into RGB.
///
/// `fast_path` restricts decoding to PNG, JPEG and BMP; otherwise baseline
/// TIFF is accepted as well. Dimensions are checked against `limits` from the
/// header, before any pixel data is decoded. Grayscale is replicated across
/// channels and alpha is composited over white.
pub fn decode_image(bytes: &[u8], fast_path: bool, limits: &ImageLimits) -> Result<RasterImage, ImageError> {
    if bytes.is_empty() {
        return Err(ImageError::CorruptImage("empty input".into()));
    }
    let format = SourceFormat::sniff(bytes).ok_or(ImageError::UnsupportedFormat)?;
    if fast_path && !format.is_common() {
        return Err(ImageError::UnsupportedFormat);
    }
    let reader = ImageReader::with_format(Cursor::new(bytes), format.image_format());
    let mut decoder = reader.into_decoder().map_err(corrupt)?;
    let (width, height) = decoder.dimensions();
    if width > limits.max_dim || height > limits.max_dim {
        return Err(ImageError::ImageTooLarge { width, height, max_dim: limits.max_dim });
    }
    if width == 0 || height == 0 {
        return Err(ImageError::CorruptImage(format!("zero-sized image {width}x{height}")));
    }
    let mut decoder_limits = image::Limits::default();
    decoder_limits.max_image_width = Some(limits.max_dim);
    decoder_limits.max_image_height = Some(limits.max_dim);
    decoder.set_limits(decoder_limits).map_err(corrupt)?;
    let dynamic = DynamicImage::from_decoder(decoder).map_err(corrupt)?;
    Ok(flatten_to_rgb(dynamic))
}

fn corrupt(e: image::ImageError) -> ImageError {
    match e {
        image::ImageError::Unsupported(u) => ImageError::CorruptImage(format!("unsupported encoding: {u}")),
        other => ImageError::CorruptImage(other.to_string()),
    }
}

fn flatten_to_rgb(dynamic: DynamicImage) -> RasterImage {
    let (width, height) = (dynamic.width(), dynamic.height());
    let pixels = if dynamic.color().has_alpha() {
        let rgba = dynamic.into_rgba8().into_raw();
        rgba.chunks_exact(4)
            .flat_map(|p| {
                let a = u32::from(p[3]);
                let over_white = |c: u8| ((a * u32::from(c) + (255 - a) * 255 + 127) / 255) as u8;
                [over_white(p[0]), over_white(p[1]), over_white(p[2])]
            })
            .collect()
    } else {
        dynamic.into_rgb8().into_raw()
    };
    RasterImage { width, height, pixels }
}

/// Encodes an RGB raster as PNG. The stream holds only IHDR, IDAT and IEND.
pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    write_png(&img.pixels, img.width, img.height, ExtendedColorType::Rgb8)
}

/// Encodes a single-channel image as 8-bit grayscale PNG.
pub fn encode_gray_png(img: &GrayImage) -> Vec<u8> {
    write_png(&img.pixels, img.width, img.height, ExtendedColorType::L8)
}

fn write_png(pixels: &[u8], width: u32, height: u32, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(pixels, width, height, color)
        .expect("in-memory PNG encoding of a well-formed buffer");
    out
}

/// Downscales so the longer side is at most `max_dim`, preserving aspect.
/// Images already within `max_dim` come back unchanged.
pub fn make_thumbnail(img: &RasterImage, max_dim: u32) -> RasterImage {
    let max_dim = max_dim.max(1);
    let long = img.width.max(img.height);
    if long <= max_dim {
        return img.clone();
    }
    let scale = |side: u32| ((f64::from(side) * f64::from(max_dim) / f64::from(long)).round() as u32).clamp(1, max_dim);
    let (w, h) = if img.width >= img.height { (max_dim, scale(img.height)) } else { (scale(img.width), max_dim) };
    let buf = image::RgbImage::from_raw(img.width, img.height, img.pixels.clone())
        .expect("raster buffer matches its dimensions");
    let resized = image::imageops::resize(&buf, w, h, FilterType::Triangle);
    RasterImage { width: w, height: h, pixels: resized.into_raw() }
}

/// Bilinear resampling to `round(width * factor) x round(height * factor)`.
///
/// Output pixel `x` samples the source at `x * in_width / out_width`, so a
/// 2x upsample followed by a 0.5x downsample is the identity.
pub fn rescale(img: &RasterImage, factor: f64) -> Result<RasterImage, ImageError> {
    let (w, h) = scaled_dims(img.width, img.height, factor)?;
    if (w, h) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let pixels = resample_bilinear(&img.pixels, img.width, img.height, 3, w, h);
    Ok(RasterImage { width: w, height: h, pixels })
}

/// Resamples a gray image to exactly `width x height` with the same sampling as [`rescale`].
pub fn resize_gray(img: &GrayImage, width: u32, height: u32) -> GrayImage {
    if (width, height) == (img.width, img.height) {
        return img.clone();
    }
    GrayImage { width, height, pixels: resample_bilinear(&img.pixels, img.width, img.height, 1, width, height) }
}

/// Resamples an RGB raster to exactly `width x height` with the same sampling as [`rescale`].
pub fn resize_rgb(img: &RasterImage, width: u32, height: u32) -> RasterImage {
    if (width, height) == (img.width, img.height) {
        return img.clone();
    }
    RasterImage { width, height, pixels: resample_bilinear(&img.pixels, img.width, img.height, 3, width, height) }
}

pub fn scaled_dims(width: u32, height: u32, factor: f64) -> Result<(u32, u32), ImageError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(ImageError::InvalidScale(factor));
    }
    let w = (f64::from(width) * factor).round();
    let h = (f64::from(height) * factor).round();
    if w < 1.0 || h < 1.0 || w > f64::from(u32::MAX) || h > f64::from(u32::MAX) {
        return Err(ImageError::InvalidScale(factor));
    }
    Ok((w as u32, h as u32))
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(src_len: u32, dst_len: u32) -> Vec<Tap> {
    let ratio = f64::from(src_len) / f64::from(dst_len);
    let last = (src_len - 1) as f64;
    (0..dst_len)
        .map(|i| {
            let s = (f64::from(i) * ratio).min(last);
            let lo = s.floor();
            Tap { lo: lo as usize, hi: (lo as usize + 1).min(src_len as usize - 1), frac: (s - lo) as f32 }
        })
        .collect()
}

fn resample_bilinear(src: &[u8], sw: u32, sh: u32, channels: usize, dw: u32, dh: u32) -> Vec<u8> {
    let xs = taps(sw, dw);
    let ys = taps(sh, dh);
    let stride = sw as usize * channels;
    let mut out = vec![0u8; dw as usize * dh as usize * channels];
    par::rows_mut(&mut out, dw as usize * channels, |y, row| {
        let ty = &ys[y];
        let r0 = &src[ty.lo * stride..(ty.lo + 1) * stride];
        let r1 = &src[ty.hi * stride..(ty.hi + 1) * stride];
        for (x, tx) in xs.iter().enumerate() {
            for c in 0..channels {
                let a = r0[tx.lo * channels + c] as f32;
                let b = r0[tx.hi * channels + c] as f32;
                let d = r1[tx.lo * channels + c] as f32;
                let e = r1[tx.hi * channels + c] as f32;
                let top = a + (b - a) * tx.frac;
                let bottom = d + (e - d) * tx.frac;
                let v = top + (bottom - top) * ty.frac;
                row[x * channels + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    out
}

/// Optical density of an 8-bit intensity, `-log10((i + 1) / 256)`.
pub fn optical_density(intensity: u8) -> f64 {
    -((f64::from(intensity) + 1.0) / 256.0).log10()
}

pub(crate) fn od_lut() -> [f32; 256] {
    std::array::from_fn(|i| optical_density(i as u8) as f32)
}

/// Per-channel Beer-Lambert optical density, one plane per RGB channel.
pub fn rgb_to_od(img: &RasterImage) -> [OdPlane; 3] {
    let lut = od_lut();
    let n = img.width as usize * img.height as usize;
    let mut channels = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
    for (c, plane) in channels.iter_mut().enumerate() {
        par::rows_mut(plane, img.width as usize, |y, row| {
            let base = y * img.width as usize * 3;
            for (x, v) in row.iter_mut().enumerate() {
                *v = lut[img.pixels[base + x * 3 + c] as usize];
            }
        });
    }
    channels.map(|values| OdPlane::from_raw(img.width, img.height, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_of(img: &RasterImage) -> Vec<u8> {
        encode_png(img)
    }

    #[test]
    fn single_red_pixel_round_trips() {
        let img = RasterImage::new(1, 1, vec![255, 0, 0]).unwrap();
        let back = decode_image(&png_of(&img), true, &ImageLimits::default()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn oversize_is_rejected_from_header() {
        let img = RasterImage::filled(3001, 100, [255, 255, 255]);
        let err = decode_image(&png_of(&img), true, &ImageLimits::default()).unwrap_err();
        assert!(matches!(err, ImageError::ImageTooLarge { width: 3001, height: 100, max_dim: 3000 }));
    }

    #[test]
    fn grayscale_is_replicated() {
        let mut bytes = Vec::new();
        PngEncoder::new(&mut bytes).write_image(&[7u8; 4], 2, 2, ExtendedColorType::L8).unwrap();
        let img = decode_image(&bytes, true, &ImageLimits::default()).unwrap();
        assert_eq!(img.pixels(), &[7u8; 12]);
    }

    #[test]
    fn alpha_composites_over_white() {
        let mut bytes = Vec::new();
        let rgba = [0u8, 0, 0, 0, 0, 0, 0, 255, 100, 100, 100, 128];
        PngEncoder::new(&mut bytes).write_image(&rgba, 3, 1, ExtendedColorType::Rgba8).unwrap();
        let img = decode_image(&bytes, true, &ImageLimits::default()).unwrap();
        assert_eq!(img.pixel(0, 0), [255, 255, 255]);
        assert_eq!(img.pixel(1, 0), [0, 0, 0]);
        // 128/255 * 100 + 127/255 * 255 = 177.2
        assert_eq!(img.pixel(2, 0), [177, 177, 177]);
    }

    #[test]
    fn unknown_magic_is_unsupported() {
        let err = decode_image(b"GIF89a....", false, &ImageLimits::default()).unwrap_err();
        assert!(matches!(err, ImageError::UnsupportedFormat));
    }

    #[test]
    fn truncated_png_is_corrupt() {
        let bytes = png_of(&RasterImage::filled(32, 32, [1, 2, 3]));
        let err = decode_image(&bytes[..bytes.len() / 2], true, &ImageLimits::default()).unwrap_err();
        assert!(matches!(err, ImageError::CorruptImage(_)), "{err:?}");
        assert!(matches!(decode_image(&[], true, &ImageLimits::default()), Err(ImageError::CorruptImage(_))));
    }

    #[test]
    fn tiff_only_on_extended_path() {
        let img = RasterImage::from_fn(5, 4, |x, y| [x as u8 * 40, y as u8 * 50, 9]);
        let mut bytes = Vec::new();
        image::codecs::tiff::TiffEncoder::new(Cursor::new(&mut bytes))
            .write_image(img.pixels(), 5, 4, ExtendedColorType::Rgb8)
            .unwrap();
        assert!(matches!(decode_image(&bytes, true, &ImageLimits::default()), Err(ImageError::UnsupportedFormat)));
        assert_eq!(decode_image(&bytes, false, &ImageLimits::default()).unwrap(), img);
    }

    #[test]
    fn bmp_decodes_on_fast_path() {
        let img = RasterImage::from_fn(3, 2, |x, y| [x as u8, y as u8, 200]);
        let mut bytes = Vec::new();
        image::codecs::bmp::BmpEncoder::new(&mut bytes)
            .write_image(img.pixels(), 3, 2, ExtendedColorType::Rgb8)
            .unwrap();
        assert_eq!(decode_image(&bytes, true, &ImageLimits::default()).unwrap(), img);
    }

    #[test]
    fn png_signature() {
        let bytes = encode_png(&RasterImage::filled(1, 1, [0, 0, 0]));
        assert_eq!(&bytes[..4], &[0x89, 0x50, 0x4E, 0x47]);
    }

    #[test]
    fn thumbnail_geometry() {
        let wide = RasterImage::filled(3000, 1500, [1, 2, 3]);
        assert_eq!(make_thumbnail(&wide, 512).dimensions(), (512, 256));
        let tall = RasterImage::filled(1500, 3000, [1, 2, 3]);
        assert_eq!(make_thumbnail(&tall, 512).dimensions(), (256, 512));
        let small = RasterImage::from_fn(100, 100, |x, y| [x as u8, y as u8, 0]);
        assert_eq!(make_thumbnail(&small, 512), small);
    }

    #[test]
    fn rescale_identity_and_constant() {
        let img = RasterImage::from_fn(17, 9, |x, y| [x as u8 * 3, y as u8 * 7, 1]);
        assert_eq!(rescale(&img, 1.0).unwrap(), img);
        let flat = RasterImage::filled(100, 100, [12, 200, 99]);
        let half = rescale(&flat, 0.5).unwrap();
        assert_eq!(half, RasterImage::filled(50, 50, [12, 200, 99]));
    }

    #[test]
    fn rescale_rejects_bad_factors() {
        let img = RasterImage::filled(3, 3, [0, 0, 0]);
        assert!(matches!(rescale(&img, 0.0), Err(ImageError::InvalidScale(_))));
        assert!(matches!(rescale(&img, -1.0), Err(ImageError::InvalidScale(_))));
        assert!(matches!(rescale(&img, 0.1), Err(ImageError::InvalidScale(_))));
        assert!(matches!(rescale(&img, f64::NAN), Err(ImageError::InvalidScale(_))));
    }

    #[test]
    fn checkerboard_survives_up_then_down() {
        for cell in [1u32, 8] {
            let board =
                RasterImage::from_fn(64, 64, |x, y| if (x / cell + y / cell) % 2 == 0 { [255; 3] } else { [0; 3] });
            let back = rescale(&rescale(&board, 2.0).unwrap(), 0.5).unwrap();
            assert_eq!(back.dimensions(), (64, 64));
            let worst = board.pixels().iter().zip(back.pixels()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
            assert!(worst <= 2, "cell {cell}: max deviation {worst}");
        }
    }

    #[test]
    fn od_reference_values() {
        let img = RasterImage::new(3, 1, vec![255, 255, 255, 0, 0, 0, 127, 255, 255]).unwrap();
        let [r, g, b] = rgb_to_od(&img);
        for p in [&r, &g, &b] {
            assert!(p.get(0, 0).abs() < 0.01);
            assert!((p.get(1, 0) - 2.408_24).abs() < 1e-4);
        }
        assert!((r.get(2, 0) - std::f32::consts::LOG10_2).abs() < 1e-5);
        assert!(g.get(2, 0).abs() < 0.01 && b.get(2, 0).abs() < 0.01);
    }

    #[test]
    fn od_is_monotone_decreasing() {
        let lut = od_lut();
        assert!(lut.windows(2).all(|w| w[0] > w[1]));
        assert!(lut.iter().all(|v| *v >= 0.0));
    }
}
