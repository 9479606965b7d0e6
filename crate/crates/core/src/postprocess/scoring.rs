use serde::{Deserialize, Serialize};

use crate::imaging::Plane;
use crate::par;

use super::{LabelMap, PostprocessError};

/// Rows per partial accumulation block. Fixed so per-cell sums are added in
/// the same order whatever the thread count.
const BLOCK_ROWS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellClass {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: u32,
    pub area: u64,
    pub centroid: (f64, f64),
    pub mean_pos_score: f64,
    pub class: CellClass,
}

/// Total nuclei, positive cells and percent positive (full precision).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantResult {
    pub num_total: u64,
    pub num_pos: u64,
    pub percent_pos: f64,
}

impl QuantResult {
    pub fn from_counts(num_total: u64, num_pos: u64) -> Self {
        let percent_pos = if num_total > 0 { 100.0 * num_pos as f64 / num_total as f64 } else { 0.0 };
        Self { num_total, num_pos, percent_pos }
    }
}

/// Drops components whose area is below `min_area` or above `max_area` and
/// renumbers the survivors contiguously in their original order.
pub fn size_gate(lm: &LabelMap, min_area: f64, max_area: Option<f64>) -> Result<LabelMap, PostprocessError> {
    if min_area.is_nan() || min_area < 0.0 {
        return Err(PostprocessError::InvalidParams(format!("minimum area {min_area} is negative")));
    }
    if let Some(max) = max_area {
        if max.is_nan() || max < min_area {
            return Err(PostprocessError::InvalidGate { min: min_area, max });
        }
    }
    let mut remap = vec![0u32; lm.count() as usize + 1];
    let mut next = 0u32;
    for (i, area) in lm.areas().into_iter().enumerate() {
        let a = area as f64;
        if a >= min_area && max_area.is_none_or(|m| a <= m) {
            next += 1;
            remap[i + 1] = next;
        }
    }
    let labels = par::map(lm.labels(), |l| remap[*l as usize]);
    Ok(LabelMap::from_raw(lm.width(), lm.height(), labels, next))
}

#[derive(Clone, Copy, Default)]
struct Accum {
    area: u64,
    sum_x: u64,
    sum_y: u64,
    pos_sum: f64,
}

/// One record per label: area, unweighted centroid, mean positivity, and the
/// class (`positive` iff the mean reaches `marker_threshold`).
pub fn classify_cells(
    lm: &LabelMap,
    pos_score: &Plane,
    marker_threshold: f64,
) -> Result<Vec<CellRecord>, PostprocessError> {
    if lm.dimensions() != pos_score.dimensions() {
        return Err(PostprocessError::DimensionMismatch(format!(
            "label map {:?} vs positivity plane {:?}",
            lm.dimensions(),
            pos_score.dimensions()
        )));
    }
    let (w, h) = (lm.width() as usize, lm.height() as usize);
    let n = lm.count() as usize;
    if n == 0 {
        return Ok(Vec::new());
    }
    let blocks = par::map_range(h.div_ceil(BLOCK_ROWS), |b| {
        let mut acc = vec![Accum::default(); n];
        for y in b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(h) {
            for x in 0..w {
                let i = y * w + x;
                let l = lm.labels()[i] as usize;
                if l > 0 {
                    let a = &mut acc[l - 1];
                    a.area += 1;
                    a.sum_x += x as u64;
                    a.sum_y += y as u64;
                    a.pos_sum += f64::from(pos_score.values()[i]);
                }
            }
        }
        acc
    });
    let mut total = vec![Accum::default(); n];
    for block in blocks {
        for (t, a) in total.iter_mut().zip(block) {
            t.area += a.area;
            t.sum_x += a.sum_x;
            t.sum_y += a.sum_y;
            t.pos_sum += a.pos_sum;
        }
    }
    Ok(total
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let area = a.area.max(1) as f64;
            let mean = a.pos_sum / area;
            CellRecord {
                id: i as u32 + 1,
                area: a.area,
                centroid: (a.sum_x as f64 / area, a.sum_y as f64 / area),
                mean_pos_score: mean,
                class: if mean >= marker_threshold { CellClass::Positive } else { CellClass::Negative },
            }
        })
        .collect())
}

/// Positive cells over all cells.
pub fn quantify(cells: &[CellRecord]) -> QuantResult {
    let pos = cells.iter().filter(|c| c.class == CellClass::Positive).count() as u64;
    QuantResult::from_counts(cells.len() as u64, pos)
}
