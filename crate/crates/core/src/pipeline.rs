//! End-to-end analysis shared by the API, the web app and the CLI: decode,
//! infer, quantize scores, post-process and render the named result images.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{infer, Backend, InferError, InferOptions, ReferenceBackend, Resolution};
use crate::imaging::{
    decode_image, dequantize_unit, encode_gray_png, encode_png, quantize_unit, resize_gray, ImageError, ImageLimits,
    Plane, RasterImage, SourceFormat,
};
use crate::modality::SegScores;
use crate::postprocess::{
    postprocess, render_overlay, render_seg_image, PostprocessError, PostprocessParams, QuantResult,
};

/// Every image a full analysis returns, in response order.
pub const IMAGE_NAMES: [&str; 7] = ["hema", "dapi", "lap2", "marker", "seg", "overlay", "seg_raw"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
}

impl PipelineError {
    /// Machine-readable error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Image(e) | Self::Infer(InferError::Image(e)) => image_code(e),
            Self::Postprocess(_) => "bad_parameter",
            Self::Infer(_) => "internal",
        }
    }
}

fn image_code(e: &ImageError) -> &'static str {
    match e {
        ImageError::ImageTooLarge { .. } => "image_too_large",
        ImageError::UnsupportedFormat => "unsupported_format",
        ImageError::CorruptImage(_) => "corrupt_image",
        ImageError::InvalidScale(_) => "bad_parameter",
        ImageError::InvalidRaster(_) => "internal",
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AnalyzeOptions {
    pub resolution: Resolution,
    /// Force the common-format decoder even for inputs it would not pick.
    pub pil: bool,
    /// Render only the segmentation image.
    pub slim: bool,
    pub params: PostprocessParams,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    /// PNG bytes keyed by image name.
    pub images: BTreeMap<&'static str, Vec<u8>>,
    pub scoring: QuantResult,
    /// The decoded upload, free of source metadata.
    pub original: RasterImage,
    /// 8-bit packed scores at canonical scale: R = positivity, B = foreground.
    pub seg_raw: RasterImage,
    pub canonical_scale: f64,
}

#[derive(Clone, Debug)]
pub struct Adjusted {
    pub seg: Vec<u8>,
    pub overlay: Option<Vec<u8>>,
    pub scoring: QuantResult,
}

/// Backend, limits and tiling options bundled for repeated analyses.
#[derive(Clone)]
pub struct Engine {
    backend: Arc<dyn Backend>,
    limits: ImageLimits,
    infer: InferOptions,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(Arc::new(ReferenceBackend::default()), ImageLimits::default(), InferOptions::default())
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("backend", &self.backend.name())
            .field("limits", &self.limits)
            .field("infer", &self.infer)
            .finish()
    }
}

impl Engine {
    pub fn new(backend: Arc<dyn Backend>, limits: ImageLimits, infer: InferOptions) -> Self {
        Self { backend, limits, infer }
    }

    pub fn limits(&self) -> &ImageLimits {
        &self.limits
    }

    pub fn infer_options(&self) -> &InferOptions {
        &self.infer
    }

    /// PNG and JPEG always take the fast path; `pil` forces it for the rest.
    pub fn decode(&self, bytes: &[u8], pil: bool) -> Result<RasterImage, PipelineError> {
        let fast = pil || matches!(SourceFormat::sniff(bytes), Some(SourceFormat::Png | SourceFormat::Jpeg));
        Ok(decode_image(bytes, fast, &self.limits)?)
    }

    pub fn analyze(&self, bytes: &[u8], opts: &AnalyzeOptions) -> Result<Analysis, PipelineError> {
        let img = self.decode(bytes, opts.pil)?;
        self.analyze_image(img, opts)
    }

    pub fn analyze_image(&self, img: RasterImage, opts: &AnalyzeOptions) -> Result<Analysis, PipelineError> {
        opts.params.validate()?;
        let (ow, oh) = img.dimensions();
        if ow > self.limits.max_dim || oh > self.limits.max_dim {
            return Err(ImageError::ImageTooLarge { width: ow, height: oh, max_dim: self.limits.max_dim }.into());
        }
        let out = infer(&img, opts.resolution, self.backend.as_ref(), &self.infer)?;
        let seg = quantize_scores(&out.seg);
        let result = postprocess(&seg, &opts.params)?;

        let mut images = BTreeMap::new();
        images.insert("seg", encode_png(&render_seg_image(&result.labels, &result.cells)));
        let seg_raw = encode_seg_raw(&seg);
        if !opts.slim {
            let m = &out.modalities;
            for (name, plane) in [("hema", m.hema()), ("dapi", m.dapi()), ("lap2", m.lap2()), ("marker", m.marker())] {
                images.insert(name, encode_gray_png(&resize_gray(&plane.to_gray(), ow, oh)));
            }
            let overlay = render_overlay(&img, &result.labels, &result.cells, out.canonical_scale)?;
            images.insert("overlay", encode_png(&overlay));
            images.insert("seg_raw", encode_png(&seg_raw));
        }
        Ok(Analysis { images, scoring: result.quant, original: img, seg_raw, canonical_scale: out.canonical_scale })
    }
}

/// Rounds both score planes to 8 bits, the precision `seg_raw` carries.
pub fn quantize_scores(seg: &SegScores) -> SegScores {
    let q = |p: &Plane| {
        let values = p.values().iter().map(|v| dequantize_unit(quantize_unit(*v))).collect();
        Plane::new(p.width(), p.height(), values).expect("quantized plane keeps its shape")
    };
    SegScores::new(q(seg.fg_prob()), q(seg.pos_score())).expect("planes share dimensions")
}

/// Packs scores as RGB: R = positivity, G = 0, B = foreground.
pub fn encode_seg_raw(seg: &SegScores) -> RasterImage {
    let (w, h) = seg.dimensions();
    let (fg, pos) = (seg.fg_prob().values(), seg.pos_score().values());
    let mut pixels = Vec::with_capacity(fg.len() * 3);
    for (f, p) in fg.iter().zip(pos) {
        pixels.extend_from_slice(&[quantize_unit(*p), 0, quantize_unit(*f)]);
    }
    RasterImage::new(w, h, pixels).expect("seg_raw buffer matches dimensions")
}

/// Inverse of [`encode_seg_raw`]; the green channel is ignored.
pub fn decode_seg_raw(img: &RasterImage) -> SegScores {
    let (w, h) = img.dimensions();
    let channel = |c: usize| {
        let values = img.pixels().chunks_exact(3).map(|px| dequantize_unit(px[c])).collect();
        Plane::new(w, h, values).expect("seg_raw channel fills the plane")
    };
    SegScores::new(channel(2), channel(0)).expect("channels share dimensions")
}

/// Reruns post-processing on packed scores. With an original the overlay is
/// drawn too; `canonical_scale` defaults to the seg_raw/original width ratio.
pub fn adjust(
    seg_raw: &RasterImage,
    original: Option<&RasterImage>,
    canonical_scale: Option<f64>,
    params: &PostprocessParams,
) -> Result<Adjusted, PipelineError> {
    let result = postprocess(&decode_seg_raw(seg_raw), params)?;
    let seg = encode_png(&render_seg_image(&result.labels, &result.cells));
    let overlay = match original {
        Some(orig) => {
            let scale = canonical_scale.unwrap_or(f64::from(seg_raw.width()) / f64::from(orig.width()));
            Some(encode_png(&render_overlay(orig, &result.labels, &result.cells, scale)?))
        }
        None => None,
    };
    Ok(Adjusted { seg, overlay, scoring: result.quant })
}
