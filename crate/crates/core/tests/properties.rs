//! Property tests for the module invariants.

use pluralad_core::eval::{average_precision, pixel_auc, PixelLabels};
use pluralad_core::heatmap::{
    assemble_and_upsample, raster_windows, score_window, score_windows, upsample_bicubic, ScoreConfig,
};
use pluralad_core::samplers::OracleSampler;
use pluralad_core::scoring::{mcd_score, mean_cd_score, median_cd_score, Encoder, FeatureVector};
use pluralad_core::{Grid, StreamKey};
use proptest::prelude::*;

fn features(dim: usize, max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (
        prop::collection::vec(-10.0f64..10.0, dim),
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 1..max_n),
    )
}

fn labelled_scores() -> impl Strategy<Value = (Vec<i32>, Vec<bool>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(0i32..20, n),
            prop::collection::vec(any::<bool>(), n)
                .prop_filter("both classes", |l| l.iter().any(|&b| b) && l.iter().any(|&b| !b)),
        )
    })
}

fn labels(mask: &[bool]) -> PixelLabels {
    PixelLabels::from_mask(1, mask.len(), mask.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metric_ordering((gt, samples) in features(6, 30)) {
        let gt = FeatureVector(gt);
        let s: Vec<FeatureVector> = samples.into_iter().map(FeatureVector).collect();
        let mcd = mcd_score(&gt, &s).unwrap();
        let mean = mean_cd_score(&gt, &s).unwrap();
        let med = median_cd_score(&gt, &s).unwrap();
        let max = s.iter().map(|v| gt.distance(v)).fold(0.0, f64::max);
        prop_assert!(mcd >= 0.0);
        prop_assert!(mcd <= med && med <= max);
        prop_assert!(mcd <= mean);
    }

    #[test]
    fn mcd_is_order_free((gt, mut samples) in features(4, 12), seed in any::<u64>()) {
        let gt = FeatureVector(gt);
        let a = mcd_score(&gt, &samples.iter().cloned().map(FeatureVector).collect::<Vec<_>>()).unwrap();
        let k = (seed % samples.len() as u64) as usize;
        samples.rotate_left(k);
        samples.reverse();
        let b = mcd_score(&gt, &samples.into_iter().map(FeatureVector).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ground_truth_among_samples_scores_zero((gt, mut samples) in features(5, 10), at in 0usize..10) {
        let at = at % (samples.len() + 1);
        samples.insert(at, gt.clone());
        let s: Vec<FeatureVector> = samples.into_iter().map(FeatureVector).collect();
        prop_assert_eq!(mcd_score(&FeatureVector(gt), &s).unwrap(), 0.0);
    }

    #[test]
    fn raster_covers_interior(h in 20usize..90, w in 20usize..90, half in 2usize..8, ring in 1usize..6, stride_frac in 0.1f64..1.0) {
        let d_m = 2 * half;
        let d_p = d_m + 2 * ring;
        prop_assume!(h >= d_p && w >= d_p);
        let stride = ((d_m as f64 * stride_frac) as usize).max(1);
        let g = raster_windows((h, w), d_p, stride).unwrap();
        let mut covered = vec![false; h * w];
        for &(oy, ox) in &g.origins {
            prop_assert!(oy + d_p <= h && ox + d_p <= w);
            prop_assert!(oy % stride == 0 && ox % stride == 0);
            for y in oy + ring..oy + ring + d_m {
                for x in ox + ring..ox + ring + d_m {
                    covered[y * w + x] = true;
                }
            }
        }
        let margin = ring + d_m;
        for y in 0..h {
            for x in 0..w {
                let interior = y > margin && x > margin && h - 1 - y > margin && w - 1 - x > margin;
                if interior {
                    prop_assert!(covered[y * w + x], "({y},{x}) uncovered");
                }
            }
        }
    }

    #[test]
    fn auc_invariant_under_increasing_maps((s, l) in labelled_scores()) {
        let lab = labels(&l);
        let base: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
        // exact in f64 for these small integers
        let cubic: Vec<f64> = s.iter().map(|&v| f64::from(v * v * v + 5 * v - 7)).collect();
        let a = pixel_auc(&base, &lab).unwrap();
        prop_assert_eq!(a, pixel_auc(&cubic, &lab).unwrap());
        let expd: Vec<f64> = base.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(a, pixel_auc(&expd, &lab).unwrap());
    }

    #[test]
    fn auc_class_swap((s, l) in labelled_scores()) {
        let lab = labels(&l);
        let v: Vec<f64> = s.iter().map(|&x| f64::from(x)).collect();
        let a = pixel_auc(&v, &lab).unwrap();
        let b = pixel_auc(&v, &lab.swapped()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ap_bounds((s, l) in labelled_scores()) {
        let lab = labels(&l);
        let v: Vec<f64> = s.iter().map(|&x| f64::from(x)).collect();
        let ap = average_precision(&v, &lab).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-12);
        let min_pos = v.iter().zip(&l).filter(|p| *p.1).map(|p| *p.0).fold(f64::INFINITY, f64::min);
        let max_neg = v.iter().zip(&l).filter(|p| !*p.1).map(|p| *p.0).fold(f64::NEG_INFINITY, f64::max);
        let separated = min_pos > max_neg;
        prop_assert_eq!(separated, (ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bicubic_exact_at_anchors_and_bounded(
        rows in 1usize..6,
        cols in 1usize..6,
        stride in 2usize..9,
        offset in 0usize..12,
        vals in prop::collection::vec(0.0f64..5.0, 36),
    ) {
        let coarse = &vals[..rows * cols];
        let h = offset * 2 + (rows - 1) * stride + 1;
        let w = offset * 2 + (cols - 1) * stride + 1;
        let full = upsample_bicubic(coarse, rows, cols, (h, w), offset as f64, stride as f64);
        for r in 0..rows {
            for c in 0..cols {
                let v = full[(offset + r * stride) * w + offset + c * stride];
                prop_assert!((v - coarse[r * cols + c]).abs() < 1e-12);
            }
        }
        let lo = coarse.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = coarse.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // 1/8 overshoot per separable pass, the second acting on a range
        // already widened by the first
        let slack = (0.125 + 1.25 * 0.125) * (hi - lo) + 1e-12;
        for &v in &full {
            prop_assert!(v >= lo - slack && v <= hi + slack);
        }
    }
}

#[test]
fn assembled_map_is_nonnegative() {
    let cfg = ScoreConfig { d_p: 16, d_m: 8, stride: 4, ..ScoreConfig::default() };
    let g = raster_windows((40, 40), 16, 4).unwrap();
    // a spike next to zeros drives the interpolant negative before clamping
    let scores: Vec<f64> = (0..g.len()).map(|k| if k == g.len() / 2 { 10.0 } else { 0.0 }).collect();
    let raw = upsample_bicubic(&scores, g.rows, g.cols, (40, 40), 8.0, 4.0);
    assert!(raw.iter().any(|&v| v < 0.0));
    let h = assemble_and_upsample(&scores, &g, (40, 40), &cfg).unwrap();
    assert!(h.full.iter().all(|&v| v >= 0.0));
}

#[test]
fn window_scores_do_not_depend_on_computation_order() {
    let cfg = ScoreConfig { d_p: 12, d_m: 6, stride: 3, m: 4, ..ScoreConfig::default() };
    let image = Grid::from_fn(30, 27, |y, x| ((y * 7 + x * 3) % 11) as f32 / 11.0);
    let sampler = OracleSampler::new(vec![0.1; 36], 0.3).unwrap();
    let enc = Encoder::identity(6);
    let key = StreamKey::new(5).named("order");
    let g = raster_windows(image.dims(), 12, 3).unwrap();
    let forward = score_windows(&image, &g, &cfg, &sampler, &enc, key).unwrap();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.reverse();
    order.rotate_left(g.len() / 3);
    let mut shuffled = vec![f64::NAN; g.len()];
    for k in order {
        shuffled[k] = score_window(&image, g.origins[k], &cfg, &sampler, &enc, key.child(k as u64)).unwrap();
    }
    assert_eq!(forward, shuffled);
}

/// AP may fall below the prevalence when positives are ranked last.
#[test]
fn ap_below_prevalence_for_inverted_ranking() {
    let lab = labels(&[false, false, true, true]);
    let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &lab).unwrap();
    assert!((ap - 5.0 / 12.0).abs() < 1e-15);
    assert!(ap < 0.5);
}
