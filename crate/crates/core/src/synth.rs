//! Synthetic corpus: band-limited random textures as normal data, and test
//! images with elliptical re-textured anomalies plus their boxes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{write_boxes_csv, BoxAnnotation};
use crate::grid::Grid;
use crate::imageio::{read_png16, write_png16};
use crate::rng::StreamKey;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BOXES_FILE: &str = "boxes.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    pub size: usize,
    pub components: usize,
    /// Sinusoid frequencies in cycles per image side.
    pub freq_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    /// Gaussian smoothing sigma for the noise field, in pixels.
    pub noise_radius: f64,
    /// Noise standard deviation relative to the mean sinusoid amplitude.
    pub noise_level: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            size: 256,
            components: 6,
            freq_range: (3.0, 10.0),
            amplitude_range: (0.5, 1.0),
            noise_radius: 2.0,
            noise_level: 0.6,
        }
    }
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        let (f0, f1) = self.freq_range;
        let (a0, a1) = self.amplitude_range;
        if self.size < 2 || self.components == 0 {
            return Err(Error::Config("texture needs size >= 2 and at least one component".into()));
        }
        if !(0.0 < f0 && f0 <= f1 && f1 < self.size as f64 / 2.0) {
            return Err(Error::Config(format!("bad frequency range ({f0}, {f1})")));
        }
        if !(0.0 < a0 && a0 <= a1) {
            return Err(Error::Config(format!("bad amplitude range ({a0}, {a1})")));
        }
        if !(self.noise_radius >= 0.0 && self.noise_level >= 0.0) {
            return Err(Error::Config("noise radius and level must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyParams {
    /// Semi-axis range in pixels, sampled log-uniformly.
    pub radius_range: (f64, f64),
    /// Ratio of the second semi-axis to the first.
    pub aspect_range: (f64, f64),
    /// Magnitude of the intensity offset; the sign is random.
    pub contrast_range: (f64, f64),
    /// Local texture frequency multiplier inside the ellipse.
    pub freq_mult_range: (f64, f64),
    pub count_range: (usize, usize),
    /// Minimum distance from any box to the image border.
    pub margin: usize,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        AnomalyParams {
            radius_range: (5.0, 32.0),
            aspect_range: (0.7, 1.4),
            contrast_range: (0.3, 0.6),
            freq_mult_range: (1.8, 3.0),
            count_range: (1, 2),
            margin: 16,
        }
    }
}

impl AnomalyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64), lo: f64| a >= lo && a <= b && b.is_finite();
        if !ok(self.radius_range, 0.5) || !ok(self.aspect_range, f64::MIN_POSITIVE) {
            return Err(Error::Config("bad anomaly radius or aspect range".into()));
        }
        if !ok(self.contrast_range, 0.0) || !ok(self.freq_mult_range, f64::MIN_POSITIVE) {
            return Err(Error::Config("bad anomaly contrast or frequency range".into()));
        }
        let (c0, c1) = self.count_range;
        if c0 == 0 || c0 > c1 {
            return Err(Error::Config(format!("bad anomaly count range ({c0}, {c1})")));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..b)
    }
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(data: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let at = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = (-r..=r).map(|d| k[(d + r) as usize] * data[y * n + at(x as isize + d)]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = (-r..=r).map(|d| k[(d + r) as usize] * tmp[at(y as isize + d) * n + x]).sum();
        }
    }
    out
}

/// Random-phase, random-orientation sinusoids plus smoothed noise, rescaled
/// so the minimum maps to -1 and the maximum to 1.
pub fn gen_normal<R: Rng + ?Sized>(params: &TextureParams, rng: &mut R) -> Result<Grid> {
    params.validate()?;
    let n = params.size;
    let mut field = vec![0.0f64; n * n];
    let mut amp_sum = 0.0;
    for _ in 0..params.components {
        let f = uniform(rng, params.freq_range);
        let theta = rng.random_range(0.0..PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let a = uniform(rng, params.amplitude_range);
        amp_sum += a;
        let (kx, ky) = (2.0 * PI * f * theta.cos() / n as f64, 2.0 * PI * f * theta.sin() / n as f64);
        for y in 0..n {
            for x in 0..n {
                field[y * n + x] += a * (kx * x as f64 + ky * y as f64 + phase).cos();
            }
        }
    }
    if params.noise_level > 0.0 {
        let white: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let smooth = gaussian_blur(&white, n, params.noise_radius);
        let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
        let sd = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / smooth.len() as f64).sqrt();
        let scale = if sd > 0.0 { params.noise_level * amp_sum / params.components as f64 / sd } else { 0.0 };
        for (f, s) in field.iter_mut().zip(&smooth) {
            *f += scale * (s - mean);
        }
    }
    let (lo, hi) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Grid::new(n, n, field.iter().map(|&v| (2.0 * (v - lo) / span - 1.0) as f32).collect())
}

fn bilinear(g: &Grid, y: f64, x: f64) -> f32 {
    let (h, w) = g.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    if ty == 0.0 && tx == 0.0 {
        return g.get(y0, x0);
    }
    let top = g.get(y0, x0) * (1.0 - tx) + g.get(y0, x1) * tx;
    let bot = g.get(y1, x0) * (1.0 - tx) + g.get(y1, x1) * tx;
    top * (1.0 - ty) + bot * ty
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 - self.cy) / self.ry;
        let dx = (x as f64 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    /// Tight inclusive pixel box `(xmin, ymin, xmax, ymax)`.
    fn pixel_box(&self, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
        let y0 = (self.cy - self.ry).floor().max(0.0) as usize;
        let y1 = ((self.cy + self.ry).ceil() as usize).min(h - 1);
        let x0 = (self.cx - self.rx).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.rx).ceil() as usize).min(w - 1);
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(y, x) {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((a, c, d, e)) => (a.min(x), c.min(y), d.max(x), e.max(y)),
                    });
                }
            }
        }
        b
    }
}

fn boxes_overlap(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Re-textures and offsets one or more non-overlapping ellipses. Pixels
/// outside every ellipse keep their exact input values.
pub fn inject_anomaly<R: Rng + ?Sized>(
    image: &Grid,
    image_id: &str,
    params: &AnomalyParams,
    rng: &mut R,
) -> Result<(Grid, BoxAnnotation)> {
    params.validate()?;
    let (h, w) = image.dims();
    let count = rng.random_range(params.count_range.0..=params.count_range.1);
    let mut out = image.clone();
    let mut boxes = Vec::with_capacity(count);
    let (lr0, lr1) = (params.radius_range.0.ln(), params.radius_range.1.ln());
    for _ in 0..count {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let r = uniform(rng, (lr0, lr1)).exp();
            let aspect = uniform(rng, params.aspect_range);
            let (ry, rx) = (r, r * aspect);
            let m = params.margin as f64;
            let (lo_y, hi_y) = (m + ry, h as f64 - 1.0 - m - ry);
            let (lo_x, hi_x) = (m + rx, w as f64 - 1.0 - m - rx);
            if lo_y > hi_y || lo_x > hi_x {
                continue;
            }
            let e = Ellipse { cy: uniform(rng, (lo_y, hi_y)), cx: uniform(rng, (lo_x, hi_x)), ry, rx };
            let Some(b) = e.pixel_box(h, w) else { continue };
            if boxes.iter().any(|&o| boxes_overlap(o, b)) {
                continue;
            }
            placed = Some((e, b));
            break;
        }
        let (e, b) = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place an anomaly in a {h}x{w} image after {MAX_PLACEMENT_ATTEMPTS} attempts"
            ))
        })?;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let offset = (sign * uniform(rng, params.contrast_range)) as f32;
        let mult = uniform(rng, params.freq_mult_range);
        for y in b.1..=b.3 {
            for x in b.0..=b.2 {
                if e.contains(y, x) {
                    let sy = e.cy + (y as f64 - e.cy) * mult;
                    let sx = e.cx + (x as f64 - e.cx) * mult;
                    let v = if mult == 1.0 { image.get(y, x) } else { bilinear(image, sy, sx) };
                    out.set(y, x, (v + offset).clamp(-1.0, 1.0));
                }
            }
        }
        boxes.push(b);
    }
    Ok((out, BoxAnnotation { image_id: image_id.to_string(), boxes }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub role: Role,
    pub seed: u64,
    #[serde(default)]
    pub n_anomalies: usize,
}

impl ManifestEntry {
    /// File stem, used as the image id everywhere downstream.
    pub fn id(&self) -> String {
        Path::new(&self.path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    #[serde(default)]
    pub texture: TextureParams,
    #[serde(default)]
    pub anomaly: AnomalyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub params: CorpusParams,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries_with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

/// Regenerates one corpus image from its manifest entry.
pub fn render_entry(entry: &ManifestEntry, params: &CorpusParams) -> Result<(Grid, Option<BoxAnnotation>)> {
    let mut rng = StreamKey::new(entry.seed).rng();
    let base = gen_normal(&params.texture, &mut rng)?;
    match entry.role {
        Role::Train => Ok((base, None)),
        Role::Test => {
            let (img, ann) = inject_anomaly(&base, &entry.id(), &params.anomaly, &mut rng)?;
            Ok((img, Some(ann)))
        }
    }
}

/// Writes `train/*.png`, `test/*.png`, the manifest and the boxes CSV.
pub fn build_corpus(out: &Path, n_train: usize, n_test: usize, params: &CorpusParams, seed: u64) -> Result<Manifest> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Usage("corpus needs at least one train and one test image".into()));
    }
    params.texture.validate()?;
    params.anomaly.validate()?;
    let root = StreamKey::new(seed).named("corpus");
    let mut entries: Vec<ManifestEntry> = Vec::with_capacity(n_train + n_test);
    for (role, n, name) in [(Role::Train, n_train, "train"), (Role::Test, n_test, "test")] {
        for i in 0..n {
            entries.push(ManifestEntry {
                path: format!("{name}/{name}_{i:04}.png"),
                role,
                seed: root.named(name).child(i as u64).seed_value(),
                n_anomalies: 0,
            });
        }
    }
    for dir in ["train", "test"] {
        let d = out.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let anns = entries
        .par_iter()
        .map(|e| {
            let (img, ann) = render_entry(e, params)?;
            write_png16(&img, &out.join(&e.path))?;
            Ok(ann)
        })
        .collect::<Result<Vec<_>>>()?;
    for (e, a) in entries.iter_mut().zip(&anns) {
        e.n_anomalies = a.as_ref().map_or(0, |a| a.boxes.len());
    }
    let boxes: Vec<BoxAnnotation> = anns.into_iter().flatten().collect();
    write_boxes_csv(&out.join(BOXES_FILE), &boxes)?;
    let manifest = Manifest { version: MANIFEST_VERSION, master_seed: seed, params: params.clone(), entries };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// A corpus directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Corpus { root: root.to_path_buf(), manifest: read_manifest(&root.join(MANIFEST_FILE))? })
    }

    /// `(id, image)` pairs for one role, in manifest order.
    pub fn load(&self, role: Role) -> Result<Vec<(String, Grid)>> {
        self.manifest
            .entries_with_role(role)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|e| Ok((e.id(), read_png16(&self.root.join(&e.path))?)))
            .collect()
    }

    pub fn boxes_path(&self) -> PathBuf {
        self.root.join(BOXES_FILE)
    }
}
