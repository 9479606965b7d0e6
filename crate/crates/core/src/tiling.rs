//! Overlapping tile geometry with center-crop stitching.

use serde::Serialize;

use crate::engine::InferError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.width <= self.x + self.width
            && other.y + other.height <= self.y + self.height
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// One unit of tiled work: the backend sees `source`, only `core` is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Tile {
    pub source: Rect,
    pub core: Rect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TilePlan {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub overlap: u32,
    pub tiles: Vec<Tile>,
}

pub const DEFAULT_TILE_SIZE: u32 = 512;
pub const DEFAULT_OVERLAP: u32 = 64;

/// Partitions the image into cores of `tile_size - 2 * overlap` pixels, each
/// padded by `overlap` on every side and clipped to the image. An axis no
/// longer than `tile_size` is covered by a single core.
pub fn plan_tiles(width: u32, height: u32, tile_size: u32, overlap: u32) -> Result<TilePlan, InferError> {
    if width == 0 || height == 0 {
        return Err(InferError::InvalidTileGeometry(format!("image {width}x{height} is empty")));
    }
    if u64::from(tile_size) <= 2 * u64::from(overlap) {
        return Err(InferError::InvalidTileGeometry(format!(
            "tile size {tile_size} must exceed twice the overlap {overlap}"
        )));
    }
    let cols = axis_spans(width, tile_size, overlap);
    let rows = axis_spans(height, tile_size, overlap);
    let mut tiles = Vec::with_capacity(cols.len() * rows.len());
    for &(cy, ch) in &rows {
        for &(cx, cw) in &cols {
            let core = Rect { x: cx, y: cy, width: cw, height: ch };
            let sx = cx.saturating_sub(overlap);
            let sy = cy.saturating_sub(overlap);
            let ex = (cx + cw).saturating_add(overlap).min(width);
            let ey = (cy + ch).saturating_add(overlap).min(height);
            tiles.push(Tile { source: Rect { x: sx, y: sy, width: ex - sx, height: ey - sy }, core });
        }
    }
    Ok(TilePlan { width, height, tile_size, overlap, tiles })
}

fn axis_spans(len: u32, tile_size: u32, overlap: u32) -> Vec<(u32, u32)> {
    if len <= tile_size {
        return vec![(0, len)];
    }
    let step = tile_size - 2 * overlap;
    (0..len).step_by(step as usize).map(|start| (start, step.min(len - start))).collect()
}
