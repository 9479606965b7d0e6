//! IHC quantification core: image I/O, stain deconvolution, tiled inference,
//! segmentation post-processing and scoring.
//!
//! With the default `parallel` feature, tile, row and labeling loops run on
//! rayon. Without it they run sequentially and produce identical results.

pub mod engine;
pub mod fixture;
pub mod imaging;
pub mod modality;
mod par;
pub mod pipeline;
pub mod postprocess;
pub mod stain;
pub mod tiling;

pub use engine::{
    infer, Backend, InferError, InferOptions, InferenceOutput, NullBackend, ReferenceBackend, Resolution, TileKernel,
};
pub use imaging::{decode_image, encode_png, ImageError, ImageLimits, Plane, RasterImage};
pub use modality::{ModalitySet, SegScores};
pub use pipeline::{Analysis, AnalyzeOptions, Engine, PipelineError, IMAGE_NAMES};
pub use postprocess::{PostprocessParams, QuantResult};
pub use stain::{StainMatrix, StainVectors};

/// Whether the data-parallel code paths are compiled in.
pub fn parallel_enabled() -> bool {
    par::enabled()
}
