//! Hematoxylin/DAB separation in optical-density space.

use serde::{Deserialize, Serialize};

use crate::engine::InferError;
use crate::imaging::{od_lut, rgb_to_od, OdPlane, Plane, RasterImage};
use crate::par;

/// Minimum angle between stain vectors, in degrees.
const MIN_STAIN_ANGLE_DEG: f64 = 1.0;

/// Unit stain vectors in OD space plus the least-squares unmixing rows
/// derived from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StainMatrix {
    hema: [f64; 3],
    dab: [f64; 3],
    unmix: [[f64; 3]; 2],
}

impl StainMatrix {
    /// Normalizes both vectors and rejects zero, non-finite or (nearly) parallel inputs.
    pub fn new(hema: [f64; 3], dab: [f64; 3]) -> Result<Self, InferError> {
        let hema =
            unit(hema).ok_or_else(|| InferError::DegenerateStains("hematoxylin vector has zero length".into()))?;
        let dab = unit(dab).ok_or_else(|| InferError::DegenerateStains("DAB vector has zero length".into()))?;
        let cos = dot(hema, dab);
        let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
        if !(angle > MIN_STAIN_ANGLE_DEG && angle < 180.0 - MIN_STAIN_ANGLE_DEG) {
            return Err(InferError::DegenerateStains(format!("stain vectors are {angle:.3} degrees apart")));
        }
        // (M^T M)^-1 M^T for M = [hema dab]; the Gram matrix is [[1, cos], [cos, 1]].
        let det = 1.0 - cos * cos;
        let row = |a: [f64; 3], b: [f64; 3]| std::array::from_fn(|i| (a[i] - cos * b[i]) / det);
        Ok(Self { hema, dab, unmix: [row(hema, dab), row(dab, hema)] })
    }

    pub fn hema(&self) -> [f64; 3] {
        self.hema
    }

    pub fn dab(&self) -> [f64; 3] {
        self.dab
    }

    /// Unclamped least-squares concentrations `(hematoxylin, dab)` for one OD triple.
    pub fn separate(&self, od: [f64; 3]) -> [f64; 2] {
        [dot(self.unmix[0], od), dot(self.unmix[1], od)]
    }

    /// Beer-Lambert forward model: OD of a pixel holding the given concentrations.
    pub fn mix(&self, hema_conc: f64, dab_conc: f64) -> [f64; 3] {
        std::array::from_fn(|i| hema_conc * self.hema[i] + dab_conc * self.dab[i])
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::new([0.650, 0.704, 0.286], [0.269, 0.568, 0.776]).expect("standard H-DAB vectors are independent")
    }
}

/// Raw stain vectors as they appear in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainVectors {
    pub hematoxylin: [f64; 3],
    pub dab: [f64; 3],
}

impl Default for StainVectors {
    fn default() -> Self {
        let m = StainMatrix::default();
        Self { hematoxylin: m.hema, dab: m.dab }
    }
}

impl TryFrom<StainVectors> for StainMatrix {
    type Error = InferError;

    fn try_from(v: StainVectors) -> Result<Self, Self::Error> {
        StainMatrix::new(v.hematoxylin, v.dab)
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(v, v).sqrt();
    (n.is_finite() && n > 0.0).then(|| v.map(|c| c / n))
}

/// Per-pixel hematoxylin and DAB concentrations, negatives clamped to zero.
pub fn deconvolve(img: &RasterImage, stains: &StainMatrix) -> (OdPlane, OdPlane) {
    let lut = od_lut();
    let (w, h) = img.dimensions();
    let px = img.pixels();
    let mut hema = vec![0f32; w as usize * h as usize];
    let mut dab = vec![0f32; w as usize * h as usize];
    par::rows_mut(&mut hema, w as usize, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = stains.separate(od_at(&lut, px, y * w as usize + x))[0].max(0.0) as f32;
        }
    });
    par::rows_mut(&mut dab, w as usize, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = stains.separate(od_at(&lut, px, y * w as usize + x))[1].max(0.0) as f32;
        }
    });
    (OdPlane::from_raw(w, h, hema), OdPlane::from_raw(w, h, dab))
}

fn od_at(lut: &[f32; 256], px: &[u8], i: usize) -> [f64; 3] {
    [lut[px[i * 3] as usize], lut[px[i * 3 + 1] as usize], lut[px[i * 3 + 2] as usize]].map(f64::from)
}

/// Same unmixing as [`deconvolve`], starting from precomputed OD planes.
pub fn deconvolve_od(od: &[OdPlane; 3], stains: &StainMatrix) -> (OdPlane, OdPlane) {
    let (w, h) = (od[0].width(), od[0].height());
    let solve = |i: usize| stains.separate([od[0].values()[i], od[1].values()[i], od[2].values()[i]].map(f64::from));
    let mut hema = vec![0f32; w as usize * h as usize];
    let mut dab = vec![0f32; w as usize * h as usize];
    par::rows_mut(&mut hema, w as usize, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = solve(y * w as usize + x)[0].max(0.0) as f32;
        }
    });
    par::rows_mut(&mut dab, w as usize, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = solve(y * w as usize + x)[1].max(0.0) as f32;
        }
    });
    (OdPlane::from_raw(w, h, hema), OdPlane::from_raw(w, h, dab))
}

/// Convenience: OD planes then unmixing; equal to [`deconvolve`].
pub fn deconvolve_via_od(img: &RasterImage, stains: &StainMatrix) -> (OdPlane, OdPlane) {
    deconvolve_od(&rgb_to_od(img), stains)
}

/// Percentile in `(50, 100]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Percentile(f64);

impl Percentile {
    pub fn new(p: f64) -> Option<Self> {
        (p > 50.0 && p <= 100.0).then_some(Self(p))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Percentile {
    fn default() -> Self {
        Self(99.0)
    }
}

/// Linearly interpolated percentile of the strictly positive values, or
/// `None` when there are none.
pub fn positive_percentile(values: &[f32], p: Percentile) -> Option<f32> {
    let mut positive: Vec<f32> = values.iter().copied().filter(|v| *v > 0.0).collect();
    if positive.is_empty() {
        return None;
    }
    let rank = p.0 / 100.0 * (positive.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, lo_val, upper) = positive.select_nth_unstable_by(lo, f32::total_cmp);
    let lo_val = f64::from(*lo_val);
    let hi_val =
        if frac > 0.0 { upper.iter().copied().min_by(f32::total_cmp).map_or(lo_val, f64::from) } else { lo_val };
    Some((lo_val + (hi_val - lo_val) * frac) as f32)
}

/// Divides by `reference` and clamps into `[0, 1]`; `None` yields zeros.
pub fn normalize_with_reference(plane: &OdPlane, reference: Option<f32>) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    match reference {
        Some(r) if r > 0.0 => {
            let values = par::map(plane.values(), |v| (v / r).clamp(0.0, 1.0));
            Plane::from_raw(w, h, values)
        }
        _ => Plane::zeros(w, h),
    }
}

/// Scales a concentration plane by its `p`-th percentile of positive values.
pub fn normalize_concentration(plane: &OdPlane, p: Percentile) -> Plane {
    normalize_with_reference(plane, positive_percentile(plane.values(), p))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Intensity whose OD under the biased convention equals `od` exactly.
    fn intensity_for(od: f64) -> f64 {
        256.0 * 10f64.powf(-od) - 1.0
    }

    #[test]
    fn defaults_are_unit_and_independent() {
        let m = StainMatrix::default();
        for v in [m.hema(), m.dab()] {
            assert!((dot(v, v).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_stains_are_degenerate() {
        assert!(matches!(StainMatrix::new([1.0, 1.0, 0.0], [2.0, 2.0, 0.0]), Err(InferError::DegenerateStains(_))));
        assert!(matches!(StainMatrix::new([1.0, 1.0, 0.0], [0.0; 3]), Err(InferError::DegenerateStains(_))));
        assert!(matches!(StainMatrix::new([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]), Err(InferError::DegenerateStains(_))));
        assert!(StainMatrix::new([1.0, 0.0, 0.0], [1.0, 0.05, 0.0]).is_ok());
    }

    #[test]
    fn white_is_stain_free() {
        let img = RasterImage::filled(2, 2, [255, 255, 255]);
        let (h, d) = deconvolve(&img, &StainMatrix::default());
        assert!(h.values().iter().chain(d.values()).all(|v| v.abs() < 0.02));
    }

    #[test]
    fn quantized_pure_hematoxylin() {
        let m = StainMatrix::default();
        let px = m.hema().map(|v| (255.0 * 10f64.powf(-v)).round() as u8);
        let (h, d) = deconvolve(&RasterImage::filled(1, 1, px), &m);
        assert!((h.get(0, 0) - 1.0).abs() < 0.02, "{}", h.get(0, 0));
        assert!(d.get(0, 0).abs() < 0.02);
    }

    #[test]
    fn mixed_pixel_is_recovered() {
        let m = StainMatrix::default();
        let od = m.mix(0.5, 0.8);
        let px = od.map(|v| intensity_for(v).round().clamp(0.0, 255.0) as u8);
        let (h, d) = deconvolve(&RasterImage::filled(1, 1, px), &m);
        assert!((h.get(0, 0) - 0.5).abs() < 0.02, "{}", h.get(0, 0));
        assert!((d.get(0, 0) - 0.8).abs() < 0.02, "{}", d.get(0, 0));
    }

    #[test]
    fn both_routes_agree() {
        let img = RasterImage::from_fn(31, 7, |x, y| [(x * 8) as u8, (y * 30) as u8, (x * y) as u8]);
        let m = StainMatrix::default();
        assert_eq!(deconvolve(&img, &m), deconvolve_via_od(&img, &m));
    }

    #[test]
    fn percentile_bounds() {
        assert!(Percentile::new(50.0).is_none());
        assert!(Percentile::new(100.5).is_none());
        assert!(Percentile::new(100.0).is_some());
    }

    #[test]
    fn normalize_examples() {
        let zeros = OdPlane::new(3, 3, vec![0.0; 9]).unwrap();
        assert!(normalize_concentration(&zeros, Percentile::default()).values().iter().all(|v| *v == 0.0));

        let five = OdPlane::new(2, 2, vec![5.0; 4]).unwrap();
        assert!(normalize_concentration(&five, Percentile::default()).values().iter().all(|v| *v == 1.0));

        let ramp = OdPlane::new(102, 1, (0..=100).map(|v| v as f32).chain([49.5]).collect()).unwrap();
        let out = normalize_concentration(&ramp, Percentile::default());
        let max = out.values().iter().copied().fold(0.0, f32::max);
        assert_eq!(max, 1.0);
        assert!((out.values()[101] - 0.5).abs() < 0.01, "{}", out.values()[101]);
    }

    #[test]
    fn percentile_matches_sorting_oracle() {
        let values: Vec<f32> = (0..257).map(|i| ((i * 7919) % 257) as f32 / 13.0).collect();
        let mut sorted: Vec<f32> = values.iter().copied().filter(|v| *v > 0.0).collect();
        sorted.sort_by(f32::total_cmp);
        for p in [60.0, 75.0, 99.0, 100.0] {
            let rank = p / 100.0 * (sorted.len() - 1) as f64;
            let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
            let want = f64::from(sorted[lo]) + (f64::from(sorted[hi]) - f64::from(sorted[lo])) * (rank - lo as f64);
            let got = positive_percentile(&values, Percentile::new(p).unwrap()).unwrap();
            assert!((f64::from(got) - want).abs() < 1e-5, "p={p}: {got} vs {want}");
        }
    }
}
