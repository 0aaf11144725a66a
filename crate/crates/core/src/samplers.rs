//! Drawing `M` plausible normal completions of a masked patch.
//!
//! Three providers share one contract: the dropout inpainter, its
//! deterministic single-completion form, and an isotropic Gaussian oracle
//! whose distribution is known exactly. Sample `i` of a set always draws
//! from `key.child(i)`, so a set is reproducible regardless of scheduling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Grid, Rect};
use crate::nn::{inpaint_forward, masked_input, InpainterModel, HOLE_FILL};
use crate::rng::StreamKey;

/// A window `I` split into its centered ground-truth region `I_c` and the
/// surroundings `I_m` (center set to the hole fill value).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriple {
    pub full: Grid,
    pub center: Grid,
    pub surroundings: Grid,
    offset: usize,
}

impl PatchTriple {
    pub fn patch_size(&self) -> usize {
        self.full.height()
    }

    pub fn mask_size(&self) -> usize {
        self.center.height()
    }

    /// The centered hole within the patch.
    pub fn hole(&self) -> Rect {
        let m = self.mask_size();
        Rect { y: self.offset, x: self.offset, h: m, w: m }
    }

    /// Rebuild `I` from `I_c` and `I_m`.
    pub fn reassemble(&self) -> Grid {
        let mut g = self.surroundings.clone();
        g.paste(&self.center, self.offset, self.offset).expect("center fits its own patch");
        g
    }
}

/// Split a square patch into center and surroundings.
pub fn split_patch(patch: &Grid, d_m: usize) -> Result<PatchTriple> {
    let (h, w) = patch.dims();
    if h != w {
        return Err(Error::Config(format!("patch must be square, got {h}x{w}")));
    }
    let d_p = h;
    if d_m == 0 || d_m >= d_p {
        return Err(Error::Config(format!("mask size {d_m} must be at least 1 and smaller than patch size {d_p}")));
    }
    if !(d_p - d_m).is_multiple_of(2) {
        return Err(Error::Config(format!("patch size {d_p} and mask size {d_m} must differ by an even amount")));
    }
    let offset = (d_p - d_m) / 2;
    let hole = Rect { y: offset, x: offset, h: d_m, w: d_m };
    let center = patch.crop(hole)?;
    let mut surroundings = patch.clone();
    for y in offset..offset + d_m {
        for x in offset..offset + d_m {
            surroundings.set(y, x, HOLE_FILL);
        }
    }
    Ok(PatchTriple { full: patch.clone(), center, surroundings, offset })
}

/// `M` sampled completions of one masked patch.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionSet {
    pub completions: Vec<Grid>,
    pub sampler: &'static str,
    pub key: StreamKey,
}

impl CompletionSet {
    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }
}

pub trait CompletionSampler: Sync {
    fn id(&self) -> &'static str;

    /// Draw one completion of `triple` from stream `key`.
    fn sample_one(&self, triple: &PatchTriple, key: StreamKey) -> Result<Grid>;

    /// Largest `M` this sampler supports.
    fn max_samples(&self) -> usize {
        usize::MAX
    }
}

/// Draw `m` completions; sample `i` uses sub-stream `key.child(i)`.
pub fn sample_completions(
    sampler: &dyn CompletionSampler,
    triple: &PatchTriple,
    m: usize,
    key: StreamKey,
) -> Result<CompletionSet> {
    if m == 0 {
        return Err(Error::Usage("at least one completion must be requested".into()));
    }
    if m > sampler.max_samples() {
        return Err(Error::Usage(format!(
            "sampler '{}' supports at most {} completion(s), {m} requested",
            sampler.id(),
            sampler.max_samples()
        )));
    }
    let completions = (0..m).map(|i| sampler.sample_one(triple, key.child(i as u64))).collect::<Result<Vec<_>>>()?;
    Ok(CompletionSet { completions, sampler: sampler.id(), key })
}

fn check_geometry(model: &InpainterModel<f32>, triple: &PatchTriple) -> Result<()> {
    let a = model.arch();
    if triple.patch_size() != a.input_size || triple.mask_size() != a.mask_size {
        return Err(Error::Config(format!(
            "model was built for {}/{} patches, got {}/{}",
            a.input_size,
            a.mask_size,
            triple.patch_size(),
            triple.mask_size()
        )));
    }
    Ok(())
}

fn complete(model: &InpainterModel<f32>, triple: &PatchTriple, p_drop: f64, key: StreamKey) -> Result<Grid> {
    check_geometry(model, triple)?;
    let hole = triple.hole();
    let x = masked_input::<f32>(&triple.surroundings, hole);
    let out = inpaint_forward(model, &x, p_drop, &mut key.rng())?;
    let d = triple.patch_size();
    Grid::new(d, d, out.into_vec())?.crop(hole)
}

/// Pluralistic sampler: every completion is an independent forward pass with
/// fresh channel-dropout masks.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSampler<'a> {
    model: &'a InpainterModel<f32>,
    p_drop: f64,
}

impl<'a> DropoutSampler<'a> {
    pub fn new(model: &'a InpainterModel<f32>, p_drop: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::Config(format!("dropout probability must lie in [0, 1), got {p_drop}")));
        }
        Ok(DropoutSampler { model, p_drop })
    }
}

impl CompletionSampler for DropoutSampler<'_> {
    fn id(&self) -> &'static str {
        "dropout"
    }

    fn sample_one(&self, triple: &PatchTriple, key: StreamKey) -> Result<Grid> {
        complete(self.model, triple, self.p_drop, key)
    }
}

/// The plain completion network: one completion, no dropout.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicSampler<'a> {
    model: &'a InpainterModel<f32>,
}

impl<'a> DeterministicSampler<'a> {
    pub fn new(model: &'a InpainterModel<f32>) -> Self {
        DeterministicSampler { model }
    }
}

impl CompletionSampler for DeterministicSampler<'_> {
    fn id(&self) -> &'static str {
        "deterministic"
    }

    fn sample_one(&self, triple: &PatchTriple, key: StreamKey) -> Result<Grid> {
        complete(self.model, triple, 0.0, key)
    }

    fn max_samples(&self) -> usize {
        1
    }
}

/// Isotropic Gaussian `N(mean, stddev² I)` over completion vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSampler {
    mean: Vec<f64>,
    stddev: f64,
}

impl OracleSampler {
    pub fn new(mean: Vec<f64>, stddev: f64) -> Result<Self> {
        if !(stddev >= 0.0 && stddev.is_finite()) {
            return Err(Error::Config(format!("standard deviation must be >= 0, got {stddev}")));
        }
        if mean.is_empty() {
            return Err(Error::Config("oracle dimension must be at least 1".into()));
        }
        Ok(OracleSampler { mean, stddev })
    }

    /// Oracle centered on a grid's pixels.
    pub fn centered_on(grid: &Grid, stddev: f64) -> Result<Self> {
        Self::new(grid.data().iter().map(|&v| f64::from(v)).collect(), stddev)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .map(|&mu| {
                let z: f64 = StandardNormal.sample(rng);
                mu + self.stddev * z
            })
            .collect()
    }
}

impl CompletionSampler for OracleSampler {
    fn id(&self) -> &'static str {
        "oracle"
    }

    fn sample_one(&self, triple: &PatchTriple, key: StreamKey) -> Result<Grid> {
        let d = triple.mask_size();
        if self.dim() != d * d {
            return Err(Error::Config(format!("oracle dimension {} cannot be reshaped to {d}x{d}", self.dim())));
        }
        let v = self.draw(&mut key.rng());
        Grid::new(d, d, v.into_iter().map(|x| x as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Grid {
        Grid::from_fn(n, n, |y, x| (y * n + x) as f32)
    }

    #[test]
    fn split_extracts_center() {
        let t = split_patch(&ramp(4), 2).unwrap();
        assert_eq!(t.center.data(), &[5.0, 6.0, 9.0, 10.0]);
        assert_eq!(t.surroundings.get(1, 1), HOLE_FILL);
        assert_eq!(t.surroundings.get(0, 0), 0.0);
        assert_eq!(t.surroundings.get(3, 3), 15.0);
        assert_eq!(t.reassemble(), t.full);
    }

    #[test]
    fn split_rejects_bad_geometry() {
        assert!(split_patch(&ramp(4), 4).is_err());
        assert!(split_patch(&ramp(4), 3).is_err());
        assert!(split_patch(&ramp(4), 0).is_err());
        assert!(split_patch(&ramp(4), 5).is_err());
    }

    #[test]
    fn full_scale_geometry_offset() {
        let t = split_patch(&Grid::zeros(256, 256), 128).unwrap();
        assert_eq!(t.hole(), Rect { y: 64, x: 64, h: 128, w: 128 });
    }

    #[test]
    fn zero_variance_oracle_repeats_mean() {
        let t = split_patch(&ramp(6), 2).unwrap();
        let o = OracleSampler::centered_on(&t.center, 0.0).unwrap();
        let set = sample_completions(&o, &t, 5, StreamKey::new(1)).unwrap();
        assert_eq!(set.len(), 5);
        assert!(set.completions.iter().all(|c| *c == t.center));
    }

    #[test]
    fn oracle_moments() {
        let o = OracleSampler::new(vec![0.0], 1.0).unwrap();
        let mut rng = StreamKey::new(11).rng();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| o.draw(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn oracle_streams_are_reproducible() {
        let o = OracleSampler::new(vec![1.0, 2.0, 3.0], 0.5).unwrap();
        let a: Vec<_> = (0..4).map(|_| o.draw(&mut StreamKey::new(5).rng())).collect();
        let mut r1 = StreamKey::new(5).rng();
        let mut r2 = StreamKey::new(5).rng();
        for _ in 0..4 {
            assert_eq!(o.draw(&mut r1), o.draw(&mut r2));
        }
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn oracle_rejects_negative_stddev() {
        assert!(matches!(OracleSampler::new(vec![0.0], -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_completions_is_usage_error() {
        let t = split_patch(&ramp(4), 2).unwrap();
        let o = OracleSampler::centered_on(&t.center, 1.0).unwrap();
        assert!(matches!(sample_completions(&o, &t, 0, StreamKey::new(0)), Err(Error::Usage(_))));
    }
}
