//! Synthetic IHC fixtures with known ground truth.
//!
//! Disks are painted with the Beer-Lambert color of a unit concentration of
//! one stain on a white background. Radius and spacing bounds are what let
//! the default pipeline recover the exact cell and positive counts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::RasterImage;
use crate::postprocess::QuantResult;
use crate::stain::StainMatrix;

pub const MIN_RADIUS: u32 = 4;
pub const MAX_RADIUS: u32 = 20;
/// Minimum edge-to-edge spacing between disks, in pixels.
pub const MIN_GAP: f64 = 4.0;
/// Placement attempts per disk before the packing is declared infeasible.
pub const MAX_ATTEMPTS: u32 = 10_000;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture: {0}")]
    InvalidSpec(String),
    #[error("could not place disk {placed} of {requested} after {MAX_ATTEMPTS} attempts")]
    Infeasible { placed: usize, requested: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StainKind {
    Hematoxylin,
    Dab,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureCell {
    pub center: [u32; 2],
    pub radius: u32,
    pub kind: StainKind,
}

impl FixtureCell {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = i64::from(x) - i64::from(self.center[0]);
        let dy = i64::from(y) - i64::from(self.center[1]);
        dx * dx + dy * dy <= i64::from(self.radius).pow(2)
    }

    fn gap_to(&self, other: &FixtureCell) -> f64 {
        let dx = f64::from(self.center[0]) - f64::from(other.center[0]);
        let dy = f64::from(self.center[1]) - f64::from(other.center[1]);
        dx.hypot(dy) - f64::from(self.radius) - f64::from(other.radius)
    }

    /// Lattice points inside the disk.
    pub fn area(&self) -> u64 {
        let r = i64::from(self.radius);
        (-r..=r).map(|dy| (-r..=r).filter(|dx| dx * dx + dy * dy <= r * r).count() as u64).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub seed: u64,
    pub cells: Vec<FixtureCell>,
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image {}x{} is empty", self.width, self.height));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if !(MIN_RADIUS..=MAX_RADIUS).contains(&c.radius) {
                return bad(format!("cell {i}: radius {} outside [{MIN_RADIUS}, {MAX_RADIUS}]", c.radius));
            }
            let [x, y] = c.center;
            if x < c.radius || y < c.radius || x + c.radius >= self.width || y + c.radius >= self.height {
                return bad(format!("cell {i}: disk at ({x}, {y}) radius {} leaves the image", c.radius));
            }
            if let Some(j) = self.cells[..i].iter().position(|o| c.gap_to(o) < MIN_GAP) {
                return bad(format!("cells {j} and {i} are closer than {MIN_GAP} px"));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> FixtureTruth {
        let num_pos = self.cells.iter().filter(|c| c.kind == StainKind::Dab).count() as u64;
        let q = QuantResult::from_counts(self.cells.len() as u64, num_pos);
        FixtureTruth {
            num_total: q.num_total,
            num_pos: q.num_pos,
            percent_pos: q.percent_pos,
            cells: self
                .cells
                .iter()
                .map(|c| TruthCell { center: c.center, radius: c.radius, kind: c.kind, area: c.area() })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthCell {
    pub center: [u32; 2],
    pub radius: u32,
    pub kind: StainKind,
    pub area: u64,
}

/// Ground truth written next to a rendered fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub num_total: u64,
    pub num_pos: u64,
    pub percent_pos: f64,
    pub cells: Vec<TruthCell>,
}

/// Canvas and radius range for random fixtures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureLayout {
    pub width: u32,
    pub height: u32,
    pub min_radius: u32,
    pub max_radius: u32,
}

impl Default for FixtureLayout {
    fn default() -> Self {
        Self { width: 1024, height: 1024, min_radius: 5, max_radius: 10 }
    }
}

/// `total` non-overlapping disks of which `positive` are DAB, placed by
/// seeded rejection sampling.
pub fn random_spec(
    layout: &FixtureLayout,
    total: usize,
    positive: usize,
    seed: u64,
) -> Result<FixtureSpec, FixtureError> {
    if positive > total {
        return Err(FixtureError::InvalidSpec(format!("{positive} positive cells exceed {total} total")));
    }
    let (rmin, rmax) = (layout.min_radius.max(MIN_RADIUS), layout.max_radius.min(MAX_RADIUS));
    if rmin > rmax || layout.width <= 2 * rmin + 1 || layout.height <= 2 * rmin + 1 {
        return Err(FixtureError::InvalidSpec(format!("layout {layout:?} cannot hold a disk")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<StainKind> =
        (0..total).map(|i| if i < positive { StainKind::Dab } else { StainKind::Hematoxylin }).collect();
    kinds.shuffle(&mut rng);

    let mut cells: Vec<FixtureCell> = Vec::with_capacity(total);
    for (placed, kind) in kinds.into_iter().enumerate() {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let radius = rng.random_range(rmin..=rmax);
            if layout.width <= 2 * radius + 1 || layout.height <= 2 * radius + 1 {
                continue;
            }
            let x = rng.random_range(radius..layout.width - radius);
            let y = rng.random_range(radius..layout.height - radius);
            let cand = FixtureCell { center: [x, y], radius, kind };
            if cells.iter().all(|c| c.gap_to(&cand) >= MIN_GAP) {
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(c) => cells.push(c),
            None => return Err(FixtureError::Infeasible { placed, requested: total }),
        }
    }
    Ok(FixtureSpec { width: layout.width, height: layout.height, seed, cells })
}

/// `round(255 * 10^(-v_c))` per channel for a unit concentration of `kind`.
pub fn stain_color(stains: &StainMatrix, kind: StainKind) -> [u8; 3] {
    let v = match kind {
        StainKind::Hematoxylin => stains.hema(),
        StainKind::Dab => stains.dab(),
    };
    v.map(|c| (255.0 * 10f64.powf(-c)).round().clamp(0.0, 255.0) as u8)
}

/// Paints the fixture. Later cells win where disks would overlap, which a
/// valid spec never allows.
pub fn render(spec: &FixtureSpec, stains: &StainMatrix) -> RasterImage {
    let mut img = RasterImage::filled(spec.width, spec.height, [255, 255, 255]);
    for c in &spec.cells {
        let color = stain_color(stains, c.kind);
        let (x0, y0) = (c.center[0].saturating_sub(c.radius), c.center[1].saturating_sub(c.radius));
        let x1 = (c.center[0] + c.radius).min(spec.width - 1);
        let y1 = (c.center[1] + c.radius).min(spec.height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if c.contains(x, y) {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}
