//! Restained modality planes and per-pixel segmentation scores.

use crate::engine::InferError;
use crate::imaging::{clamp_unit, OdPlane, Plane, RasterImage};
use crate::par;
use crate::stain::{deconvolve, normalize_with_reference, positive_percentile, Percentile, StainMatrix};

/// Inferred hematoxylin, DAPI, Lap2 and protein-marker planes, all the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySet {
    hema: Plane,
    dapi: Plane,
    lap2: Plane,
    marker: Plane,
}

impl ModalitySet {
    pub fn new(hema: Plane, dapi: Plane, lap2: Plane, marker: Plane) -> Result<Self, InferError> {
        let dims = hema.dimensions();
        if [&dapi, &lap2, &marker].iter().any(|p| p.dimensions() != dims) {
            return Err(InferError::ShapeMismatch("modality planes differ in size".into()));
        }
        Ok(Self { hema, dapi, lap2, marker })
    }

    pub fn hema(&self) -> &Plane {
        &self.hema
    }

    pub fn dapi(&self) -> &Plane {
        &self.dapi
    }

    pub fn lap2(&self) -> &Plane {
        &self.lap2
    }

    pub fn marker(&self) -> &Plane {
        &self.marker
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.hema.dimensions()
    }

    pub fn into_planes(self) -> [Plane; 4] {
        [self.hema, self.dapi, self.lap2, self.marker]
    }
}

/// Per-pixel foreground probability and marker-positivity score.
#[derive(Clone, Debug, PartialEq)]
pub struct SegScores {
    fg_prob: Plane,
    pos_score: Plane,
}

impl SegScores {
    pub fn new(fg_prob: Plane, pos_score: Plane) -> Result<Self, InferError> {
        if fg_prob.dimensions() != pos_score.dimensions() {
            return Err(InferError::ShapeMismatch("score planes differ in size".into()));
        }
        Ok(Self { fg_prob, pos_score })
    }

    pub fn fg_prob(&self) -> &Plane {
        &self.fg_prob
    }

    pub fn pos_score(&self) -> &Plane {
        &self.pos_score
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.fg_prob.dimensions()
    }

    pub fn into_planes(self) -> [Plane; 2] {
        [self.fg_prob, self.pos_score]
    }
}

/// Normalization references for the two concentration planes, fixed once per
/// image so every tile of that image is scaled identically.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StainReferences {
    pub hema: Option<f32>,
    pub dab: Option<f32>,
}

impl StainReferences {
    /// Percentile references of a whole image, never below `floor`.
    pub fn measure(img: &RasterImage, stains: &StainMatrix, p: Percentile, floor: f32) -> Self {
        let (hema, dab) = deconvolve(img, stains);
        Self::from_planes(&hema, &dab, p, floor)
    }

    pub fn from_planes(hema: &OdPlane, dab: &OdPlane, p: Percentile, floor: f32) -> Self {
        let floored = |plane: &OdPlane| positive_percentile(plane.values(), p).map(|r| r.max(floor));
        Self { hema: floored(hema), dab: floored(dab) }
    }
}

/// Classical restaining: hema is normalized hematoxylin, DAPI copies hema as
/// the nuclear proxy, the marker is normalized DAB and Lap2 is the Sobel edge
/// strength of DAPI.
pub fn modalities_with(img: &RasterImage, stains: &StainMatrix, refs: &StainReferences) -> ModalitySet {
    let (hema_conc, dab_conc) = deconvolve(img, stains);
    let hema = normalize_with_reference(&hema_conc, refs.hema);
    let marker = normalize_with_reference(&dab_conc, refs.dab);
    let lap2 = sobel_magnitude(&hema);
    ModalitySet { dapi: hema.clone(), hema, lap2, marker }
}

/// Lowest concentration accepted as a normalization reference. Keeps the
/// faint cross-talk of one stain into the other channel from being stretched
/// to full scale on images that lack that stain entirely.
pub const DEFAULT_REFERENCE_FLOOR: f32 = 0.25;

/// [`modalities_with`] using references measured on `img` itself.
pub fn synthesize_modalities(img: &RasterImage, stains: &StainMatrix) -> ModalitySet {
    let refs = StainReferences::measure(img, stains, Percentile::default(), DEFAULT_REFERENCE_FLOOR);
    modalities_with(img, stains, &refs)
}

/// Foreground is the Gaussian-smoothed (sigma 1, 5x5) maximum of DAPI and
/// marker; positivity is the marker plane unchanged.
pub fn compute_seg_scores(m: &ModalitySet) -> SegScores {
    let (w, h) = m.dimensions();
    let peak: Vec<f32> = m.dapi.values().iter().zip(m.marker.values()).map(|(a, b)| a.max(*b)).collect();
    let smoothed = gaussian5(&peak, w as usize, h as usize);
    SegScores {
        fg_prob: Plane::from_raw(w, h, smoothed.into_iter().map(clamp_unit).collect()),
        pos_score: m.marker.clone(),
    }
}

/// Radius of the foreground smoothing kernel, in pixels.
pub const SMOOTHING_RADIUS: u32 = 2;

fn gaussian_weights() -> [f32; 5] {
    let raw: [f64; 5] = std::array::from_fn(|i| {
        let d = i as f64 - 2.0;
        (-d * d / 2.0).exp()
    });
    let total: f64 = raw.iter().sum();
    raw.map(|v| (v / total) as f32)
}

/// Separable 5x5 Gaussian (sigma 1) with edge replication.
pub fn gaussian5(values: &[f32], w: usize, h: usize) -> Vec<f32> {
    let k = gaussian_weights();
    let mut horiz = vec![0f32; w * h];
    par::rows_mut(&mut horiz, w, |y, row| {
        let src = &values[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0f32;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += kv * src[sx];
            }
            *out = acc;
        }
    });
    let mut out = vec![0f32; w * h];
    par::rows_mut(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0f32;
            for (i, kv) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += kv * horiz[sy * w + x];
            }
            *o = acc;
        }
    });
    out
}

/// Sobel gradient magnitude scaled so a unit step edge maps to 1.
pub fn sobel_magnitude(plane: &Plane) -> Plane {
    let (w, h) = (plane.width() as usize, plane.height() as usize);
    let v = plane.values();
    let at = |x: isize, y: isize| v[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = vec![0f32; w * h];
    par::rows_mut(&mut out, w, |y, row| {
        let y = y as isize;
        for (x, o) in row.iter_mut().enumerate() {
            let x = x as isize;
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            *o = clamp_unit((gx * gx + gy * gy).sqrt() / 4.0);
        }
    });
    Plane::from_raw(plane.width(), plane.height(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::stain_color;

    fn disk_image(size: u32, radius: i64, color: [u8; 3]) -> RasterImage {
        let c = size as i64 / 2;
        RasterImage::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as i64 - c, y as i64 - c);
            if dx * dx + dy * dy <= radius * radius {
                color
            } else {
                [255; 3]
            }
        })
    }

    fn mean_where(p: &Plane, pred: impl Fn(i64, i64) -> bool) -> f32 {
        let c = p.width() as i64 / 2;
        let (mut s, mut n) = (0f32, 0);
        for y in 0..p.height() {
            for x in 0..p.width() {
                if pred(x as i64 - c, y as i64 - c) {
                    s += p.get(x, y);
                    n += 1;
                }
            }
        }
        s / n as f32
    }

    #[test]
    fn blank_slide_is_empty() {
        let m = synthesize_modalities(&RasterImage::filled(16, 16, [255; 3]), &StainMatrix::default());
        for p in [m.hema(), m.dapi(), m.lap2(), m.marker()] {
            assert!(p.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn hematoxylin_disk() {
        let stains = StainMatrix::default();
        let img = disk_image(64, 10, stain_color(&stains, crate::fixture::StainKind::Hematoxylin));
        let m = synthesize_modalities(&img, &stains);
        let inside = |dx: i64, dy: i64| dx * dx + dy * dy <= 49;
        let rim = |dx: i64, dy: i64| (dx * dx + dy * dy - 100).abs() <= 10;
        let outside = |dx: i64, dy: i64| dx * dx + dy * dy >= 169;
        assert!(mean_where(m.dapi(), inside) > 0.95);
        assert!(mean_where(m.dapi(), outside) < 0.01);
        assert!(mean_where(m.marker(), |_, _| true) < 0.02);
        let lap_rim = mean_where(m.lap2(), rim);
        assert!(lap_rim > 0.5, "{lap_rim}");
        assert!(mean_where(m.lap2(), inside) < 0.01);
        assert!(mean_where(m.lap2(), outside) < 0.01);
        let peak = m.lap2().values().iter().copied().fold(0.0, f32::max);
        let rim_peak = (0..64u32)
            .flat_map(|y| (0..64u32).map(move |x| (x, y)))
            .filter(|&(x, y)| rim(x as i64 - 32, y as i64 - 32))
            .map(|(x, y)| m.lap2().get(x, y))
            .fold(0.0, f32::max);
        assert_eq!(peak, rim_peak);
    }

    #[test]
    fn dab_disk() {
        let stains = StainMatrix::default();
        let img = disk_image(64, 10, stain_color(&stains, crate::fixture::StainKind::Dab));
        let m = synthesize_modalities(&img, &stains);
        let inside = |dx: i64, dy: i64| dx * dx + dy * dy <= 49;
        assert!(mean_where(m.marker(), inside) > 0.95);
        assert!(mean_where(m.dapi(), inside) < 0.05);
    }

    #[test]
    fn cross_talk_is_not_stretched() {
        // A DAB-free image leaks about 0.001 into the DAB channel.
        let stains = StainMatrix::default();
        let img = disk_image(32, 6, stain_color(&stains, crate::fixture::StainKind::Hematoxylin));
        let m = synthesize_modalities(&img, &stains);
        assert!(m.marker().values().iter().all(|v| *v < 0.02));
    }

    #[test]
    fn seg_scores_examples() {
        let zero =
            ModalitySet::new(Plane::zeros(8, 8), Plane::zeros(8, 8), Plane::zeros(8, 8), Plane::zeros(8, 8)).unwrap();
        let s = compute_seg_scores(&zero);
        assert!(s.fg_prob().values().iter().chain(s.pos_score().values()).all(|v| *v == 0.0));

        let square =
            Plane::from_fn(40, 40, |x, y| if (10..30).contains(&x) && (10..30).contains(&y) { 1.0 } else { 0.0 });
        let m = ModalitySet::new(square.clone(), square, Plane::zeros(40, 40), Plane::zeros(40, 40)).unwrap();
        assert!(compute_seg_scores(&m).fg_prob().get(20, 20) >= 0.9);

        let marker = Plane::constant(8, 8, 0.8);
        let m = ModalitySet::new(Plane::zeros(8, 8), Plane::zeros(8, 8), Plane::zeros(8, 8), marker.clone()).unwrap();
        assert_eq!(compute_seg_scores(&m).pos_score(), &marker);
    }

    #[test]
    fn gaussian_matches_direct_convolution() {
        let (w, h) = (13usize, 9usize);
        let vals: Vec<f32> = (0..w * h).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
        let got = gaussian5(&vals, w, h);
        let k: Vec<f64> = (-2..=2).map(|d: i32| (-(d * d) as f64 / 2.0).exp()).collect();
        let total: f64 = k.iter().sum::<f64>().powi(2);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -2i32..=2 {
                    for dx in -2i32..=2 {
                        let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                        let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                        acc += k[(dx + 2) as usize] * k[(dy + 2) as usize] * f64::from(vals[sy * w + sx]);
                    }
                }
                assert!((acc / total - f64::from(got[y * w + x])).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mismatched_planes_are_rejected() {
        assert!(
            ModalitySet::new(Plane::zeros(2, 2), Plane::zeros(2, 2), Plane::zeros(2, 2), Plane::zeros(3, 2)).is_err()
        );
        assert!(SegScores::new(Plane::zeros(2, 2), Plane::zeros(2, 3)).is_err());
    }
}
