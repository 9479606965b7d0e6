//! Segmentation post-processing: threshold, label, size-gate, classify and
//! score, plus rendering of the classified result.

mod labeling;
mod render;
mod scoring;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labeling::{label_components, threshold_mask, BinaryMask, LabelMap};
pub use render::{
    composite_multiplex, render_overlay, render_seg_image, ChannelView, ChannelWindow, NEGATIVE_RGB, POSITIVE_RGB,
};
pub use scoring::{classify_cells, quantify, size_gate, CellClass, CellRecord, QuantResult};

use crate::modality::SegScores;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("size gate maximum {max} is below minimum {min}")]
    InvalidGate { min: f64, max: f64 },
    #[error("display window ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")]
    InvalidWindow { lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// User-adjustable segmentation knobs. Areas are in pixels at canonical scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessParams {
    pub seg_threshold: f64,
    pub size_gate_min: f64,
    pub size_gate_max: Option<f64>,
    pub marker_threshold: f64,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self { seg_threshold: 0.5, size_gate_min: 20.0, size_gate_max: None, marker_threshold: 0.5 }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<(), PostprocessError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PostprocessError::InvalidParams(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("seg_threshold", self.seg_threshold)?;
        unit("marker_threshold", self.marker_threshold)?;
        if !(self.size_gate_min.is_finite() && self.size_gate_min >= 0.0) {
            return Err(PostprocessError::InvalidParams(format!(
                "size_gate_min must be a non-negative number, got {}",
                self.size_gate_min
            )));
        }
        if let Some(max) = self.size_gate_max {
            if max.is_nan() || max < self.size_gate_min {
                return Err(PostprocessError::InvalidGate { min: self.size_gate_min, max });
            }
        }
        Ok(())
    }
}

/// Output of [`postprocess`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub cells: Vec<CellRecord>,
    pub quant: QuantResult,
}

/// threshold -> 8-connected labeling -> size gate -> classification -> score.
pub fn postprocess(seg: &SegScores, params: &PostprocessParams) -> Result<Segmentation, PostprocessError> {
    params.validate()?;
    let mask = threshold_mask(seg.fg_prob(), params.seg_threshold);
    let labels = label_components(&mask);
    let labels = size_gate(&labels, params.size_gate_min, params.size_gate_max)?;
    let cells = classify_cells(&labels, seg.pos_score(), params.marker_threshold)?;
    let quant = quantify(&cells);
    Ok(Segmentation { labels, cells, quant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Plane;

    #[test]
    fn default_params_are_valid() {
        PostprocessParams::default().validate().unwrap();
    }

    #[test]
    fn invalid_params() {
        let bad = [
            PostprocessParams { seg_threshold: 1.5, ..Default::default() },
            PostprocessParams { marker_threshold: -0.1, ..Default::default() },
            PostprocessParams { size_gate_min: -1.0, ..Default::default() },
            PostprocessParams { seg_threshold: f64::NAN, ..Default::default() },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(PostprocessError::InvalidParams(_))), "{p:?}");
        }
        let gate = PostprocessParams { size_gate_min: 50.0, size_gate_max: Some(10.0), ..Default::default() };
        assert_eq!(gate.validate(), Err(PostprocessError::InvalidGate { min: 50.0, max: 10.0 }));
    }

    #[test]
    fn params_deserialize_with_defaults() {
        let p: PostprocessParams = serde_json::from_str(r#"{"seg_threshold": 0.3}"#).unwrap();
        assert_eq!(p, PostprocessParams { seg_threshold: 0.3, ..Default::default() });
    }

    #[test]
    fn blank_scores_give_nothing() {
        let seg = SegScores::new(Plane::zeros(32, 32), Plane::zeros(32, 32)).unwrap();
        let out = postprocess(&seg, &PostprocessParams::default()).unwrap();
        assert_eq!(out.labels.count(), 0);
        assert!(out.cells.is_empty());
        assert_eq!(out.quant, QuantResult { num_total: 0, num_pos: 0, percent_pos: 0.0 });
    }
}
