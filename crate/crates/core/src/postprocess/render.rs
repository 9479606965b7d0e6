use serde::{Deserialize, Serialize};

use crate::imaging::RasterImage;
use crate::modality::ModalitySet;
use crate::par;

use super::{CellClass, CellRecord, LabelMap, PostprocessError};

pub const POSITIVE_RGB: [u8; 3] = [255, 0, 0];
pub const NEGATIVE_RGB: [u8; 3] = [0, 0, 255];

fn class_colors(lm: &LabelMap, cells: &[CellRecord]) -> Vec<Option<[u8; 3]>> {
    let mut colors = vec![None; lm.count() as usize + 1];
    for c in cells {
        if let Some(slot) = colors.get_mut(c.id as usize) {
            *slot = Some(match c.class {
                CellClass::Positive => POSITIVE_RGB,
                CellClass::Negative => NEGATIVE_RGB,
            });
        }
    }
    colors[0] = None;
    colors
}

/// Positive cells red, negative cells blue, background black.
pub fn render_seg_image(lm: &LabelMap, cells: &[CellRecord]) -> RasterImage {
    let colors = class_colors(lm, cells);
    let (w, h) = lm.dimensions();
    let mut pixels = vec![0u8; w as usize * h as usize * 3];
    par::rows_mut(&mut pixels, w as usize * 3, |y, row| {
        let labels = &lm.labels()[y * w as usize..(y + 1) * w as usize];
        for (px, &l) in row.chunks_exact_mut(3).zip(labels) {
            if let Some(rgb) = colors[l as usize] {
                px.copy_from_slice(&rgb);
            }
        }
    });
    RasterImage::new(w, h, pixels).expect("seg raster matches label map")
}

/// Draws class-colored cell outlines onto `original`.
///
/// The canonical-scale label map is nearest-neighbor resampled to the
/// original size; a foreground pixel is an outline pixel when any 4-neighbor
/// (or the image edge) carries a different label.
pub fn render_overlay(
    original: &RasterImage,
    lm: &LabelMap,
    cells: &[CellRecord],
    canonical_scale: f64,
) -> Result<RasterImage, PostprocessError> {
    let (ow, oh) = original.dimensions();
    let (lw, lh) = lm.dimensions();
    let expect = |side: u32| (f64::from(side) * canonical_scale).round();
    if canonical_scale.is_nan()
        || canonical_scale <= 0.0
        || (expect(ow) - f64::from(lw)).abs() > 1.0
        || (expect(oh) - f64::from(lh)).abs() > 1.0
    {
        return Err(PostprocessError::DimensionMismatch(format!(
            "{ow}x{oh} original at scale {canonical_scale} does not match a {lw}x{lh} label map"
        )));
    }
    let colors = class_colors(lm, cells);
    let xs: Vec<u32> = (0..ow).map(|x| ((u64::from(x) * u64::from(lw)) / u64::from(ow)) as u32).collect();
    let ys: Vec<u32> = (0..oh).map(|y| ((u64::from(y) * u64::from(lh)) / u64::from(oh)) as u32).collect();
    let label_at = |x: i64, y: i64| -> u32 {
        if x < 0 || y < 0 || x >= i64::from(ow) || y >= i64::from(oh) {
            0
        } else {
            lm.get(xs[x as usize], ys[y as usize])
        }
    };
    let mut pixels = original.pixels().to_vec();
    par::rows_mut(&mut pixels, ow as usize * 3, |y, row| {
        let y = y as i64;
        for (x, px) in row.chunks_exact_mut(3).enumerate() {
            let x = x as i64;
            let l = label_at(x, y);
            if l == 0 {
                continue;
            }
            let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| label_at(x + dx, y + dy) != l);
            if edge {
                if let Some(rgb) = colors[l as usize] {
                    px.copy_from_slice(&rgb);
                }
            }
        }
    });
    Ok(RasterImage::new(ow, oh, pixels).expect("overlay keeps original dimensions"))
}

/// Display state for one multiplex channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelWindow {
    pub enabled: bool,
    pub lo: f64,
    pub hi: f64,
}

impl ChannelWindow {
    pub fn on() -> Self {
        Self { enabled: true, lo: 0.0, hi: 1.0 }
    }

    pub fn off() -> Self {
        Self { enabled: false, lo: 0.0, hi: 1.0 }
    }

    fn validate(&self) -> Result<(), PostprocessError> {
        if self.enabled && !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(PostprocessError::InvalidWindow { lo: self.lo, hi: self.hi });
        }
        Ok(())
    }

    fn apply(&self, v: f32) -> u8 {
        if !self.enabled {
            return 0;
        }
        let t = ((f64::from(v) - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        (255.0 * t).round() as u8
    }
}

/// Pseudo-color channel selection: marker to red, Lap2 to green, DAPI to blue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelView {
    pub marker: ChannelWindow,
    pub lap2: ChannelWindow,
    pub dapi: ChannelWindow,
}

impl Default for ChannelView {
    fn default() -> Self {
        Self { marker: ChannelWindow::on(), lap2: ChannelWindow::on(), dapi: ChannelWindow::on() }
    }
}

pub fn composite_multiplex(m: &ModalitySet, view: &ChannelView) -> Result<RasterImage, PostprocessError> {
    for w in [&view.marker, &view.lap2, &view.dapi] {
        w.validate()?;
    }
    let (w, h) = m.dimensions();
    let (marker, lap2, dapi) = (m.marker().values(), m.lap2().values(), m.dapi().values());
    let mut pixels = vec![0u8; w as usize * h as usize * 3];
    par::rows_mut(&mut pixels, w as usize * 3, |y, row| {
        for (x, px) in row.chunks_exact_mut(3).enumerate() {
            let i = y * w as usize + x;
            px[0] = view.marker.apply(marker[i]);
            px[1] = view.lap2.apply(lap2[i]);
            px[2] = view.dapi.apply(dapi[i]);
        }
    });
    Ok(RasterImage::new(w, h, pixels).expect("composite matches modality dimensions"))
}
