//! Pluggable inference backends and the tiled driver that runs them at
//! canonical (20x) magnification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{rescale, ImageError, Plane, RasterImage};
use crate::modality::{
    compute_seg_scores, modalities_with, ModalitySet, SegScores, StainReferences, DEFAULT_REFERENCE_FLOOR,
};
use crate::par;
use crate::stain::{Percentile, StainMatrix};
use crate::tiling::{plan_tiles, Rect, DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("degenerate stain vectors: {0}")]
    DegenerateStains(String),
    #[error("invalid tile geometry: {0}")]
    InvalidTileGeometry(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backend failed on tile at ({x}, {y}): {source}")]
    BackendFailure {
        x: u32,
        y: u32,
        #[source]
        source: Box<InferError>,
    },
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Magnification the slide was scanned at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "10x")]
    X10,
    #[default]
    #[serde(rename = "20x")]
    X20,
    #[serde(rename = "40x")]
    X40,
}

impl Resolution {
    /// Factor that brings an image at this magnification to 20x.
    pub fn canonical_scale(self) -> f64 {
        match self {
            Self::X10 => 2.0,
            Self::X20 => 1.0,
            Self::X40 => 0.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::X10 => "10x",
            Self::X20 => "20x",
            Self::X40 => "40x",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unrecognized resolution {0:?}; expected 10x, 20x or 40x")]
pub struct ParseResolutionError(pub String);

impl FromStr for Resolution {
    type Err = ParseResolutionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "10x" => Ok(Self::X10),
            "20x" => Ok(Self::X20),
            "40x" => Ok(Self::X40),
            _ => Err(ParseResolutionError(s.to_string())),
        }
    }
}

/// An inference backend. `bind` sees the whole canonical image once and
/// returns a kernel that is then applied to each tile independently.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;

    fn bind<'a>(&'a self, image: &RasterImage) -> Result<Box<dyn TileKernel + 'a>, InferError>;
}

/// Pure per-tile mapping; outputs have the tile's dimensions.
pub trait TileKernel: Send + Sync {
    fn run(&self, tile: &RasterImage) -> Result<(ModalitySet, SegScores), InferError>;
}

/// Stain deconvolution backend: deconvolve, synthesize modalities, smooth
/// into segmentation scores.
#[derive(Clone, Debug)]
pub struct ReferenceBackend {
    pub stains: StainMatrix,
    pub percentile: Percentile,
    pub reference_floor: f32,
}

impl ReferenceBackend {
    pub fn new(stains: StainMatrix) -> Self {
        Self { stains, percentile: Percentile::default(), reference_floor: DEFAULT_REFERENCE_FLOOR }
    }
}

impl Default for ReferenceBackend {
    fn default() -> Self {
        Self::new(StainMatrix::default())
    }
}

struct ReferenceKernel<'a> {
    backend: &'a ReferenceBackend,
    refs: StainReferences,
}

impl Backend for ReferenceBackend {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn bind<'a>(&'a self, image: &RasterImage) -> Result<Box<dyn TileKernel + 'a>, InferError> {
        let refs = StainReferences::measure(image, &self.stains, self.percentile, self.reference_floor);
        Ok(Box::new(ReferenceKernel { backend: self, refs }))
    }
}

impl TileKernel for ReferenceKernel<'_> {
    fn run(&self, tile: &RasterImage) -> Result<(ModalitySet, SegScores), InferError> {
        let m = modalities_with(tile, &self.backend.stains, &self.refs);
        let seg = compute_seg_scores(&m);
        Ok((m, seg))
    }
}

/// Deterministic stand-in: DAPI is the luminance complement, the marker is
/// the red excess, foreground is DAPI and positivity is the marker.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullBackend;

impl Backend for NullBackend {
    fn name(&self) -> &'static str {
        "null"
    }

    fn bind<'a>(&'a self, _image: &RasterImage) -> Result<Box<dyn TileKernel + 'a>, InferError> {
        Ok(Box::new(NullBackend))
    }
}

impl TileKernel for NullBackend {
    fn run(&self, tile: &RasterImage) -> Result<(ModalitySet, SegScores), InferError> {
        let (w, h) = tile.dimensions();
        let dapi = Plane::from_fn(w, h, |x, y| {
            let [r, g, b] = tile.pixel(x, y).map(f32::from);
            1.0 - (0.299 * r + 0.587 * g + 0.114 * b) / 255.0
        });
        let marker = Plane::from_fn(w, h, |x, y| {
            let [r, g, b] = tile.pixel(x, y).map(f32::from);
            (r - (g + b) / 2.0) / 255.0
        });
        let m = ModalitySet::new(dapi.clone(), dapi.clone(), Plane::zeros(w, h), marker.clone())?;
        Ok((m, SegScores::new(dapi, marker)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferOptions {
    pub tile_size: u32,
    pub overlap: u32,
    /// Upper bound on tiles processed concurrently; `None` uses every core.
    pub max_parallel: Option<usize>,
}

impl InferOptions {
    /// A single tile spanning the whole image.
    pub fn whole_image() -> Self {
        Self { tile_size: u32::MAX, overlap: 0, max_parallel: None }
    }
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { tile_size: DEFAULT_TILE_SIZE, overlap: DEFAULT_OVERLAP, max_parallel: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOutput {
    pub modalities: ModalitySet,
    pub seg: SegScores,
    /// Factor that was applied to the input to reach 20x.
    pub canonical_scale: f64,
}

/// Rescales to canonical magnification, runs `backend` tile by tile and
/// stitches each tile's core back into full-size planes.
pub fn infer(
    img: &RasterImage,
    resolution: Resolution,
    backend: &dyn Backend,
    opts: &InferOptions,
) -> Result<InferenceOutput, InferError> {
    let canonical_scale = resolution.canonical_scale();
    let canonical = rescale(img, canonical_scale)?;
    let (w, h) = canonical.dimensions();
    let plan = plan_tiles(w, h, opts.tile_size, opts.overlap)?;
    let kernel = backend.bind(&canonical)?;

    if let [tile] = plan.tiles.as_slice() {
        let (modalities, seg) = run_tile(kernel.as_ref(), &canonical, tile.source)?;
        return Ok(InferenceOutput { modalities, seg, canonical_scale });
    }

    let outputs =
        par::bounded(opts.max_parallel, || par::map(&plan.tiles, |t| run_tile(kernel.as_ref(), &canonical, t.source)));

    let n = w as usize * h as usize;
    let mut planes: [Vec<f32>; 6] = std::array::from_fn(|_| vec![0f32; n]);
    for (tile, out) in plan.tiles.iter().zip(outputs) {
        let (m, s) = out?;
        let [hema, dapi, lap2, marker] = m.into_planes();
        let [fg, pos] = s.into_planes();
        for (dst, src) in planes.iter_mut().zip([hema, dapi, lap2, marker, fg, pos]) {
            copy_core(dst, w, &src, tile.source, tile.core);
        }
    }
    let [hema, dapi, lap2, marker, fg, pos] = planes.map(|v| Plane::from_raw(w, h, v));
    Ok(InferenceOutput {
        modalities: ModalitySet::new(hema, dapi, lap2, marker)?,
        seg: SegScores::new(fg, pos)?,
        canonical_scale,
    })
}

fn run_tile(
    kernel: &dyn TileKernel,
    canonical: &RasterImage,
    source: Rect,
) -> Result<(ModalitySet, SegScores), InferError> {
    let wrap = |e: InferError| InferError::BackendFailure { x: source.x, y: source.y, source: Box::new(e) };
    let tile = if source.width == canonical.width() && source.height == canonical.height() {
        canonical.clone()
    } else {
        canonical.crop(source.x, source.y, source.width, source.height)
    };
    let (m, s) = kernel.run(&tile).map_err(wrap)?;
    let expected = (source.width, source.height);
    if m.dimensions() != expected || s.dimensions() != expected {
        return Err(wrap(InferError::ShapeMismatch(format!(
            "backend returned {:?} for a {:?} tile",
            m.dimensions(),
            expected
        ))));
    }
    Ok((m, s))
}

fn copy_core(dst: &mut [f32], dst_width: u32, src: &Plane, source: Rect, core: Rect) {
    let (ox, oy) = ((core.x - source.x) as usize, (core.y - source.y) as usize);
    let sw = src.width() as usize;
    for row in 0..core.height as usize {
        let s = (oy + row) * sw + ox;
        let d = (core.y as usize + row) * dst_width as usize + core.x as usize;
        dst[d..d + core.width as usize].copy_from_slice(&src.values()[s..s + core.width as usize]);
    }
}
