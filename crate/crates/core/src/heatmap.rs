//! Sliding-window anomaly heatmaps.
//!
//! A `d_p × d_p` window rasters over the image with a fixed stride. Each
//! window's centered `d_m × d_m` region is scored against sampled
//! completions, the scores form a coarse grid anchored at window centers,
//! and a separable Catmull-Rom pass upsamples that grid to image size.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Rect};
use crate::nn::InpainterModel;
use crate::rng::StreamKey;
use crate::samplers::{sample_completions, split_patch, CompletionSampler, DeterministicSampler, DropoutSampler};
use crate::scoring::{self, Encoder, MetricChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    /// Distances on raw pixels.
    #[default]
    Image,
    /// Distances on the completion network's trunk features.
    Feature,
}

impl FromStr for FeatureSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(FeatureSpace::Image),
            "feature" => Ok(FeatureSpace::Feature),
            _ => Err(Error::Config(format!("unknown space '{s}' (expected image or feature)"))),
        }
    }
}

/// Inference hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub d_p: usize,
    pub d_m: usize,
    pub stride: usize,
    /// Completions per window.
    pub m: usize,
    pub p_drop: f64,
    pub metric: MetricChoice,
    pub space: FeatureSpace,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            d_p: 64,
            d_m: 32,
            stride: 8,
            m: 10,
            p_drop: 0.5,
            metric: MetricChoice::Min,
            space: FeatureSpace::Image,
            seed: 1337,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.d_m == 0 || self.d_m >= self.d_p || !(self.d_p - self.d_m).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "need 0 < d_m < d_p with d_p - d_m even, got d_p={} d_m={}",
                self.d_p, self.d_m
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop must lie in [0, 1), got {}", self.p_drop)));
        }
        Ok(())
    }
}

/// Window origins in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterGrid {
    pub origins: Vec<(usize, usize)>,
    pub rows: usize,
    pub cols: usize,
}

impl RasterGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Regular lattice of full-fit windows starting at `(0, 0)`.
pub fn raster_windows(dims: (usize, usize), d_p: usize, stride: usize) -> Result<RasterGrid> {
    let (h, w) = dims;
    if stride == 0 || d_p == 0 {
        return Err(Error::Config("window size and stride must be positive".into()));
    }
    if h < d_p {
        return Err(Error::Usage(format!("image height {h} is smaller than the window size {d_p}")));
    }
    if w < d_p {
        return Err(Error::Usage(format!("image width {w} is smaller than the window size {d_p}")));
    }
    let rows = (h - d_p) / stride + 1;
    let cols = (w - d_p) / stride + 1;
    let origins = (0..rows).flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride))).collect();
    Ok(RasterGrid { origins, rows, cols })
}

/// Score one window: split it, sample `M` completions from the window's
/// stream `key`, encode and apply the configured metric.
pub fn score_window(
    image: &Grid,
    origin: (usize, usize),
    config: &ScoreConfig,
    sampler: &dyn CompletionSampler,
    encoder: &Encoder<'_>,
    key: StreamKey,
) -> Result<f64> {
    let patch = image.crop(Rect { y: origin.0, x: origin.1, h: config.d_p, w: config.d_p })?;
    let triple = split_patch(&patch, config.d_m)?;
    let set = sample_completions(sampler, &triple, config.m, key)?;
    let gt = encoder.encode(&triple.center)?;
    let samples = set.completions.iter().map(|c| encoder.encode(c)).collect::<Result<Vec<_>>>()?;
    scoring::score(config.metric, &gt, &samples)
}

/// Coarse window scores plus the full-resolution map.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyHeatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major coarse scores; cell `(r, c)` sits at
    /// `(r·stride + d_p/2, c·stride + d_p/2)`.
    pub coarse: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Row-major `height × width` map.
    pub full: Vec<f64>,
    pub stride: usize,
    pub anchor_offset: usize,
}

impl AnomalyHeatmap {
    pub fn anchor(&self, r: usize, c: usize) -> (usize, usize) {
        (r * self.stride + self.anchor_offset, c * self.stride + self.anchor_offset)
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.full[y * self.width + x]
    }

    pub fn coarse_at(&self, r: usize, c: usize) -> f64 {
        self.coarse[r * self.cols + c]
    }

    pub fn mean_over(&self, pred: impl Fn(usize, usize) -> bool) -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if pred(y, x) {
                    s += self.at(y, x);
                    n += 1;
                }
            }
        }
        (n > 0).then(|| s / n as f64)
    }
}

/// Catmull-Rom (`a = -0.5`) weights for taps at offsets -1, 0, 1, 2.
#[inline]
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0, -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2]
}

/// Per output position: the four clamped node indices and their weights.
fn taps(len_out: usize, nodes: usize, offset: f64, spacing: f64) -> Vec<([usize; 4], [f64; 4])> {
    let last = nodes as isize - 1;
    (0..len_out)
        .map(|p| {
            let u = ((p as f64 - offset) / spacing).clamp(0.0, last as f64);
            let i = u.floor();
            let w = catmull_rom_weights(u - i);
            let i = i as isize;
            let idx = [-1, 0, 1, 2].map(|k: isize| (i + k).clamp(0, last) as usize);
            (idx, w)
        })
        .collect()
}

/// Separable Catmull-Rom upsampling of a coarse grid whose nodes sit at
/// `offset + k·spacing` along both axes. Positions outside the outermost
/// nodes take the edge value.
pub fn upsample_bicubic(
    coarse: &[f64],
    rows: usize,
    cols: usize,
    out_dims: (usize, usize),
    offset: f64,
    spacing: f64,
) -> Vec<f64> {
    let (h, w) = out_dims;
    let xt = taps(w, cols, offset, spacing);
    let yt = taps(h, rows, offset, spacing);
    let mut horiz = vec![0.0; rows * w];
    for r in 0..rows {
        let src = &coarse[r * cols..(r + 1) * cols];
        for (x, (idx, wt)) in xt.iter().enumerate() {
            horiz[r * w + x] = (0..4).map(|k| wt[k] * src[idx[k]]).sum();
        }
    }
    let mut full = vec![0.0; h * w];
    for (y, (idx, wt)) in yt.iter().enumerate() {
        let row = &mut full[y * w..(y + 1) * w];
        for k in 0..4 {
            let src = &horiz[idx[k] * w..(idx[k] + 1) * w];
            for (d, s) in row.iter_mut().zip(src) {
                *d += wt[k] * s;
            }
        }
    }
    full
}

/// Place raster-ordered scores on the coarse grid and upsample to the image.
pub fn assemble_and_upsample(
    scores: &[f64],
    grid: &RasterGrid,
    dims: (usize, usize),
    config: &ScoreConfig,
) -> Result<AnomalyHeatmap> {
    if scores.len() != grid.len() || grid.len() != grid.rows * grid.cols {
        return Err(Error::Usage(format!("{} scores for a {}x{} raster", scores.len(), grid.rows, grid.cols)));
    }
    let anchor_offset = config.d_p / 2;
    let mut full = upsample_bicubic(scores, grid.rows, grid.cols, dims, anchor_offset as f64, config.stride as f64);
    full.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(AnomalyHeatmap {
        rows: grid.rows,
        cols: grid.cols,
        coarse: scores.to_vec(),
        height: dims.0,
        width: dims.1,
        full,
        stride: config.stride,
        anchor_offset,
    })
}

/// Scores of every raster window. Window `k` draws from `image_key.child(k)`,
/// so the output is independent of how the work is scheduled.
pub fn score_windows(
    image: &Grid,
    grid: &RasterGrid,
    config: &ScoreConfig,
    sampler: &dyn CompletionSampler,
    encoder: &Encoder<'_>,
    image_key: StreamKey,
) -> Result<Vec<f64>> {
    grid.origins
        .par_iter()
        .enumerate()
        .map(|(k, &o)| score_window(image, o, config, sampler, encoder, image_key.child(k as u64)))
        .collect()
}

/// Full pipeline for one image.
pub fn heatmap_image(
    image: &Grid,
    config: &ScoreConfig,
    sampler: &dyn CompletionSampler,
    encoder: &Encoder<'_>,
    image_key: StreamKey,
) -> Result<AnomalyHeatmap> {
    config.validate()?;
    let grid = raster_windows(image.dims(), config.d_p, config.stride)?;
    let scores = score_windows(image, &grid, config, sampler, encoder, image_key)?;
    assemble_and_upsample(&scores, &grid, image.dims(), config)
}

/// Stream key used for an image with the given id under `config.seed`.
pub fn image_key(config: &ScoreConfig, image_id: &str) -> StreamKey {
    StreamKey::new(config.seed).named("heatmap").named(image_id)
}

/// Sampler implied by the config: `M = 1` runs the plain network, larger
/// `M` uses dropout sampling.
pub fn sampler_for<'a>(
    model: &'a InpainterModel<f32>,
    config: &ScoreConfig,
) -> Result<Box<dyn CompletionSampler + 'a>> {
    if config.m == 1 {
        Ok(Box::new(DeterministicSampler::new(model)))
    } else {
        Ok(Box::new(DropoutSampler::new(model, config.p_drop)?))
    }
}

pub fn encoder_for<'a>(model: &'a InpainterModel<f32>, config: &ScoreConfig) -> Encoder<'a> {
    match config.space {
        FeatureSpace::Image => Encoder::identity(config.d_m),
        FeatureSpace::Feature => Encoder::trunk(model, config.d_m),
    }
}

/// Heatmap an image with a trained model, checking that the config matches
/// the geometry the model was trained for.
pub fn heatmap_with_model(
    image: &Grid,
    image_id: &str,
    model: &InpainterModel<f32>,
    config: &ScoreConfig,
) -> Result<AnomalyHeatmap> {
    let a = model.arch();
    if (a.input_size, a.mask_size) != (config.d_p, config.d_m) {
        return Err(Error::Config(format!(
            "model trained for d_p={} d_m={}, config asks for d_p={} d_m={}",
            a.input_size, a.mask_size, config.d_p, config.d_m
        )));
    }
    let sampler = sampler_for(model, config)?;
    let encoder = encoder_for(model, config);
    heatmap_image(image, config, sampler.as_ref(), &encoder, image_key(config, image_id))
}

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

pub const PHMF_MAGIC: &[u8; 4] = b"PHMF";
pub const PHMF_VERSION: u32 = 1;

/// Exact heatmap file: magic, u32 version, u32 H, u32 W, then H·W
/// little-endian `f32` row-major.
pub fn encode_phmf(h: &AnomalyHeatmap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * h.full.len());
    buf.extend_from_slice(PHMF_MAGIC);
    buf.extend_from_slice(&PHMF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h.height as u32).to_le_bytes());
    buf.extend_from_slice(&(h.width as u32).to_le_bytes());
    for v in &h.full {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

/// Decode a PHMF file into an `H × W` grid.
pub fn decode_phmf(bytes: &[u8], origin: &Path) -> Result<Grid> {
    if bytes.len() < 16 || &bytes[..4] != PHMF_MAGIC {
        return Err(Error::format(origin, "not a heatmap file (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != PHMF_VERSION {
        return Err(Error::format(origin, format!("unsupported heatmap version {version}")));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 4 * h * w {
        return Err(Error::format(
            origin,
            format!("expected {} bytes for {h}x{w}, found {}", 16 + 4 * h * w, bytes.len()),
        ));
    }
    let data = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Grid::new(h, w, data)
}

pub fn write_phmf(h: &AnomalyHeatmap, path: &Path) -> Result<()> {
    std::fs::File::create(path).and_then(|mut f| f.write_all(&encode_phmf(h))).map_err(|e| Error::io(path, e))
}

pub fn read_phmf(path: &Path) -> Result<Grid> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode_phmf(&bytes, path)
}

/// Write both heatmap files: `<stem>.phmf` (exact) and `<stem>.png`
/// (16-bit, min-max normalized).
pub fn write_heatmap_files(h: &AnomalyHeatmap, dir: &Path, stem: &str) -> Result<()> {
    write_phmf(h, &dir.join(format!("{stem}.phmf")))?;
    let g = Grid::new(h.height, h.width, h.full.iter().map(|&v| v as f32).collect())?;
    crate::imageio::write_png16_normalized(&g, &dir.join(format!("{stem}.png")))
}
