//! Upsampling against a direct per-pixel cubic-convolution sum.

use pluralad_core::heatmap::{assemble_and_upsample, raster_windows, ScoreConfig};
use pluralad_core::StreamKey;
use rand::Rng;

/// Keys' cubic convolution kernel with `a = -0.5`.
fn kernel(s: f64) -> f64 {
    let a = -0.5;
    let s = s.abs();
    if s <= 1.0 {
        (a + 2.0) * s.powi(3) - (a + 3.0) * s.powi(2) + 1.0
    } else if s < 2.0 {
        a * s.powi(3) - 5.0 * a * s.powi(2) + 8.0 * a * s - 4.0 * a
    } else {
        0.0
    }
}

fn reference(coarse: &[f64], rows: usize, cols: usize, y: usize, x: usize, offset: f64, spacing: f64) -> f64 {
    let u = ((y as f64 - offset) / spacing).clamp(0.0, (rows - 1) as f64);
    let v = ((x as f64 - offset) / spacing).clamp(0.0, (cols - 1) as f64);
    let mut acc = 0.0;
    // every node within reach, edge nodes replicated beyond the grid
    for i in -3..rows as i64 + 3 {
        for j in -3..cols as i64 + 3 {
            let wy = kernel(u - i as f64);
            let wx = kernel(v - j as f64);
            if wy == 0.0 || wx == 0.0 {
                continue;
            }
            let ri = i.clamp(0, rows as i64 - 1) as usize;
            let cj = j.clamp(0, cols as i64 - 1) as usize;
            acc += wy * wx * coarse[ri * cols + cj];
        }
    }
    acc
}

#[test]
fn ramp_matches_kernel_sum_at_probes() {
    let cfg = ScoreConfig { d_p: 64, d_m: 32, stride: 32, ..ScoreConfig::default() };
    let g = raster_windows((128, 128), 64, 32).unwrap();
    assert_eq!((g.rows, g.cols), (3, 3));
    let coarse: Vec<f64> = (0..9).map(|k| 1.0 + (k / 3) as f64 * 2.0 + (k % 3) as f64 * 0.5).collect();
    let h = assemble_and_upsample(&coarse, &g, (128, 128), &cfg).unwrap();
    let mut rng = StreamKey::new(1337).named("probes").rng();
    for _ in 0..20 {
        let (y, x) = (rng.random_range(0..128), rng.random_range(0..128));
        let want = reference(&coarse, 3, 3, y, x, 32.0, 32.0).max(0.0);
        assert!((h.at(y, x) - want).abs() < 1e-5, "({y},{x}): {} vs {want}", h.at(y, x));
    }
}

#[test]
fn irregular_grid_matches_kernel_sum_everywhere() {
    let cfg = ScoreConfig { d_p: 16, d_m: 8, stride: 5, ..ScoreConfig::default() };
    let dims = (47, 39);
    let g = raster_windows(dims, 16, 5).unwrap();
    let mut rng = StreamKey::new(4).rng();
    let coarse: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..3.0)).collect();
    let h = assemble_and_upsample(&coarse, &g, dims, &cfg).unwrap();
    for y in 0..dims.0 {
        for x in 0..dims.1 {
            let want = reference(&coarse, g.rows, g.cols, y, x, 8.0, 5.0).max(0.0);
            assert!((h.at(y, x) - want).abs() < 1e-9);
        }
    }
}

#[test]
fn constant_field_stays_constant() {
    let cfg = ScoreConfig::default();
    let g = raster_windows((256, 256), 64, 8).unwrap();
    let h = assemble_and_upsample(&vec![0.37; g.len()], &g, (256, 256), &cfg).unwrap();
    assert!(h.full.iter().all(|v| (v - 0.37).abs() < 1e-5));
}
