use std::collections::VecDeque;

use nalgebra::{Matrix3x2, Vector3};
use pathquant_core::engine::{infer, InferOptions, ReferenceBackend, Resolution};
use pathquant_core::fixture::{random_spec, render, FixtureLayout};
use pathquant_core::imaging::{
    decode_image, encode_png, make_thumbnail, optical_density, ImageLimits, OdPlane, Plane, RasterImage,
};
use pathquant_core::modality::SegScores;
use pathquant_core::postprocess::{
    composite_multiplex, label_components, postprocess, threshold_mask, BinaryMask, CellClass, ChannelView,
    ChannelWindow, LabelMap, PostprocessParams,
};
use pathquant_core::stain::{deconvolve_od, StainMatrix};
use pathquant_core::tiling::plan_tiles;
use pathquant_core::ModalitySet;
use proptest::prelude::*;

fn raster(max_side: u32) -> impl Strategy<Value = RasterImage> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w * h * 3) as usize)
            .prop_map(move |px| RasterImage::new(w, h, px).unwrap())
    })
}

/// Smooth-ish random field: coarse random grid upsampled by block repetition,
/// so thresholds produce blobs rather than salt and pepper.
fn blob_plane(w: u32, h: u32) -> impl Strategy<Value = Plane> {
    let (gw, gh) = (w.div_ceil(4), h.div_ceil(4));
    proptest::collection::vec(0u8..=255, (gw * gh) as usize)
        .prop_map(move |grid| Plane::from_fn(w, h, |x, y| f32::from(grid[((y / 4) * gw + x / 4) as usize]) / 255.0))
}

fn seg_scores() -> impl Strategy<Value = SegScores> {
    (8u32..48, 8u32..96).prop_flat_map(|(w, h)| {
        (blob_plane(w, h), blob_plane(w, h)).prop_map(|(fg, pos)| SegScores::new(fg, pos).unwrap())
    })
}

/// Breadth-first 8-connected flood fill in raster order; independent of the
/// union-find labeling under test.
fn flood_fill(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut labels = vec![0u32; (w * h) as usize];
    let mut next = 0;
    for start in 0..(w * h) {
        if !mask.bits()[start as usize] || labels[start as usize] != 0 {
            continue;
        }
        next += 1;
        labels[start as usize] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if mask.bits()[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j as i64);
                    }
                }
            }
        }
    }
    labels
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1u32..40, 1u32..200, 0.0f64..1.0).prop_flat_map(|(w, h, density)| {
        proptest::collection::vec(proptest::bool::weighted(density), (w * h) as usize)
            .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
    })
}

fn assert_valid_labels(lm: &LabelMap) {
    // Contiguity is enforced by the constructor; re-check connectivity by
    // flood-filling each label's own pixel set.
    LabelMap::new(lm.width(), lm.height(), lm.labels().to_vec()).unwrap();
    for l in 1..=lm.count() {
        let only = BinaryMask::from_fn(lm.width(), lm.height(), |x, y| lm.get(x, y) == l);
        assert_eq!(flood_fill(&only).iter().max().copied(), Some(1), "label {l} is not 8-connected");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn png_round_trip(img in raster(24)) {
        prop_assert_eq!(decode_image(&encode_png(&img), true, &ImageLimits::default()).unwrap(), img);
    }

    #[test]
    fn od_is_monotone_decreasing(a in any::<u8>(), b in any::<u8>()) {
        prop_assume!(a < b);
        prop_assert!(optical_density(a) > optical_density(b));
        prop_assert!(optical_density(b) >= 0.0);
    }

    #[test]
    fn thumbnail_never_grows(w in 1u32..1200, h in 1u32..1200, max_dim in 1u32..600) {
        let t = make_thumbnail(&RasterImage::filled(w, h, [10, 20, 30]), max_dim);
        prop_assert!(t.width() <= w && t.height() <= h);
        prop_assert_eq!(t.width().max(t.height()), max_dim.min(w.max(h)));
    }

    #[test]
    fn tile_cores_partition(w in 1u32..1400, h in 1u32..1400, tile in 40u32..600, overlap in 0u32..20) {
        let plan = plan_tiles(w, h, tile, overlap).unwrap();
        let mut hits = vec![0u8; (w * h) as usize];
        for t in &plan.tiles {
            prop_assert!(t.source.contains(&t.core));
            for y in t.core.y..t.core.y + t.core.height {
                for x in t.core.x..t.core.x + t.core.width {
                    hits[(y * w + x) as usize] += 1;
                }
            }
        }
        prop_assert!(hits.iter().all(|c| *c == 1));
    }

    #[test]
    fn labels_match_flood_fill(mask in mask_strategy()) {
        let lm = label_components(&mask);
        let oracle = flood_fill(&mask);
        prop_assert_eq!(lm.labels(), oracle.as_slice());
        assert_valid_labels(&lm);
    }

    #[test]
    fn threshold_nests_foreground(seg in seg_scores(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
        let (m1, m2) = (threshold_mask(seg.fg_prob(), t1), threshold_mask(seg.fg_prob(), t2));
        prop_assert!(m2.bits().iter().zip(m1.bits()).all(|(hi, lo)| !hi || *lo));
        let params = |t| PostprocessParams { seg_threshold: t, size_gate_min: 0.0, ..Default::default() };
        let (p1, p2) = (postprocess(&seg, &params(t1)).unwrap(), postprocess(&seg, &params(t2)).unwrap());
        prop_assert!(p2.labels.foreground_pixels() <= p1.labels.foreground_pixels());
    }

    #[test]
    fn gate_is_monotone(seg in seg_scores(), a in 0.0f64..200.0, b in 0.0f64..200.0, t in 0.05f64..0.95) {
        let (g1, g2) = if a <= b { (a, b) } else { (b, a) };
        let params = |g| PostprocessParams { seg_threshold: t, size_gate_min: g, ..Default::default() };
        let lo = postprocess(&seg, &params(g1)).unwrap();
        let hi = postprocess(&seg, &params(g2)).unwrap();
        prop_assert!(hi.quant.num_total <= lo.quant.num_total);
    }

    #[test]
    fn postprocess_conservation(seg in seg_scores(), t in 0.0f64..=1.0, g in 0.0f64..60.0, m in 0.0f64..=1.0) {
        let params = PostprocessParams { seg_threshold: t, size_gate_min: g, size_gate_max: None, marker_threshold: m };
        let out = postprocess(&seg, &params).unwrap();
        let negatives = out.cells.iter().filter(|c| c.class == CellClass::Negative).count() as u64;
        prop_assert!(out.quant.num_pos <= out.quant.num_total);
        prop_assert_eq!(out.quant.num_total, out.quant.num_pos + negatives);
        prop_assert_eq!(out.cells.iter().map(|c| c.area).sum::<u64>(), out.labels.foreground_pixels());
        for c in &out.cells {
            prop_assert!(c.area >= 1);
            prop_assert_eq!(c.class == CellClass::Positive, c.mean_pos_score >= m);
        }
        assert_valid_labels(&out.labels);
        prop_assert_eq!(postprocess(&seg, &params).unwrap(), out);
    }

    #[test]
    fn single_channel_composite_is_quantization(plane in blob_plane(20, 12), which in 0usize..3) {
        let z = || Plane::zeros(20, 12);
        let mut planes = [z(), z(), z()];
        planes[which] = plane.clone();
        let [marker, lap2, dapi] = planes;
        let m = ModalitySet::new(dapi.clone(), dapi, lap2, marker).unwrap();
        let mut view = ChannelView { marker: ChannelWindow::off(), lap2: ChannelWindow::off(), dapi: ChannelWindow::off() };
        *[&mut view.marker, &mut view.lap2, &mut view.dapi][which] = ChannelWindow::on();
        let img = composite_multiplex(&m, &view).unwrap();
        for (px, v) in img.pixels().chunks_exact(3).zip(plane.values()) {
            for (c, out) in px.iter().enumerate() {
                let expected = if c == which { (f64::from(*v) * 255.0).round() as u8 } else { 0 };
                prop_assert_eq!(*out, expected);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Forward-synthesize OD from concentrations, unmix with deconvolve and
    /// with an SVD pseudo-inverse, compare both against each other and truth.
    #[test]
    fn deconvolution_matches_pseudo_inverse(h in 0.0f64..=2.0, d in 0.0f64..=2.0) {
        let stains = StainMatrix::default();
        let od = stains.mix(h, d).map(|v| v as f32);
        let planes = od.map(|v| OdPlane::new(1, 1, vec![v]).unwrap());
        let (ch, cd) = deconvolve_od(&planes, &stains);
        let (ch, cd) = (f64::from(ch.values()[0]), f64::from(cd.values()[0]));

        let m = Matrix3x2::from_columns(&[Vector3::from(stains.hema()), Vector3::from(stains.dab())]);
        let pinv = m.pseudo_inverse(1e-12).unwrap();
        let oracle = pinv * Vector3::from(od.map(f64::from));
        let (oh, odab) = (oracle[0].max(0.0), oracle[1].max(0.0));

        prop_assert!((ch - oh).abs() < 1e-6 && (cd - odab).abs() < 1e-6, "({ch}, {cd}) vs ({oh}, {odab})");
        prop_assert!((ch - h).abs() < 0.02 && (cd - d).abs() < 0.02);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixtures_score_exactly(k in 1usize..30, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let p = (k as f64 * frac).round() as usize;
        let layout = FixtureLayout { width: 320, height: 240, min_radius: 4, max_radius: 14 };
        let spec = random_spec(&layout, k, p, seed).unwrap();
        let img = render(&spec, &StainMatrix::default());
        let out = infer(&img, Resolution::X20, &ReferenceBackend::default(), &InferOptions::default()).unwrap();
        for plane in [out.modalities.hema(), out.modalities.dapi(), out.modalities.lap2(), out.modalities.marker()] {
            prop_assert!(plane.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let q = postprocess(&out.seg, &PostprocessParams::default()).unwrap().quant;
        let truth = spec.truth();
        prop_assert_eq!((q.num_total, q.num_pos), (truth.num_total, truth.num_pos));
    }

    #[test]
    fn infer_dimensions_follow_resolution(w in 1u32..300, h in 1u32..300, r in 0usize..3) {
        let res = [Resolution::X10, Resolution::X20, Resolution::X40][r];
        let img = RasterImage::from_fn(w, h, |x, y| [(x * 7) as u8, (y * 3) as u8, 128]);
        let expected = |side: u32| ((f64::from(side) * res.canonical_scale()).round() as u32).max(1);
        // Sides that would round to zero are rejected instead.
        prop_assume!((f64::from(w.min(h)) * res.canonical_scale()).round() >= 1.0);
        let out = infer(&img, res, &ReferenceBackend::default(), &InferOptions::default()).unwrap();
        prop_assert_eq!(out.seg.dimensions(), (expected(w), expected(h)));
    }
}

#[test]
fn parallelism_does_not_change_results() {
    let spec =
        random_spec(&FixtureLayout { width: 1100, height: 900, ..FixtureLayout::default() }, 120, 45, 11).unwrap();
    let img = render(&spec, &StainMatrix::default());
    let run = |threads| {
        let opts = InferOptions { max_parallel: threads, ..InferOptions::default() };
        let out = infer(&img, Resolution::X20, &ReferenceBackend::default(), &opts).unwrap();
        let pp = postprocess(&out.seg, &PostprocessParams::default()).unwrap();
        (out, pp)
    };
    let (a, pa) = run(Some(1));
    let (b, pb) = run(None);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!((pa.quant.num_total, pa.quant.num_pos), (120, 45));
}
