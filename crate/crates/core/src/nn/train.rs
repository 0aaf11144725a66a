use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inpaint::masked_input;
use super::model::{Architecture, Gradients, InpainterModel, Tape};
use super::optim::Adam;
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::grid::{Grid, Rect};
use crate::rng::StreamKey;

/// Side lengths of random training holes, as fractions of `d_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRule {
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for MaskRule {
    fn default() -> Self {
        MaskRule { min_frac: 0.5, max_frac: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Evaluations without a new best loss before stopping.
    pub patience: usize,
    /// Iterations per loss evaluation.
    pub eval_every: usize,
    pub mask_rule: MaskRule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_iterations: 1500,
            patience: 10,
            eval_every: 25,
            mask_rule: MaskRule::default(),
            seed: 1337,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("evaluation interval must be at least 1".into()));
        }
        let r = self.mask_rule;
        if !(r.min_frac > 0.0 && r.min_frac <= r.max_frac && r.max_frac <= 1.0) {
            return Err(Error::Config(format!("invalid mask rule {r:?}")));
        }
        Ok(())
    }
}

/// Training images; patches of side `d_p` are cropped at random positions.
/// Images that are exactly `d_p × d_p` are used whole.
#[derive(Debug, Clone)]
pub struct PatchCorpus {
    images: Vec<Grid>,
}

impl PatchCorpus {
    pub fn new(images: Vec<Grid>) -> Self {
        PatchCorpus { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Grid] {
        &self.images
    }

    fn sample<R: Rng>(&self, d_p: usize, rng: &mut R) -> Result<Grid> {
        let img = &self.images[rng.random_range(0..self.images.len())];
        let (h, w) = img.dims();
        if h < d_p || w < d_p {
            return Err(Error::Config(format!("corpus image {h}x{w} is smaller than patch size {d_p}")));
        }
        let y = rng.random_range(0..=h - d_p);
        let x = rng.random_range(0..=w - d_p);
        img.crop(Rect { y, x, h: d_p, w: d_p })
    }
}

/// Random training hole: side lengths uniform in the rule's range of `d_m`,
/// placed uniformly inside the patch.
pub fn sample_train_mask<R: Rng>(d_p: usize, d_m: usize, rule: MaskRule, rng: &mut R) -> Rect {
    let lo = ((d_m as f64 * rule.min_frac).round() as usize).clamp(1, d_p);
    let hi = ((d_m as f64 * rule.max_frac).round() as usize).clamp(lo, d_p);
    let h = rng.random_range(lo..=hi);
    let w = rng.random_range(lo..=hi);
    Rect { y: rng.random_range(0..=d_p - h), x: rng.random_range(0..=d_p - w), h, w }
}

/// Masked-region mean absolute error and its gradient with respect to the
/// network output.
pub fn masked_l1<T: super::tensor::Real>(out: &Tensor4<T>, target: &Grid, hole: Rect) -> (f64, Tensor4<T>) {
    let mut grad = Tensor4::zeros(out.shape());
    let n = hole.area() as f64;
    let mut loss = 0.0;
    let step = T::lit(1.0 / n);
    for y in hole.y..hole.y + hole.h {
        for x in hole.x..hole.x + hole.w {
            let d = out.get(0, 0, y, x).to_f64().unwrap() - f64::from(target.get(y, x));
            loss += d.abs();
            let s = if d > 0.0 {
                step
            } else if d < 0.0 {
                -step
            } else {
                T::zero()
            };
            grad.set(0, 0, y, x, s);
        }
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    /// Mean masked-region L1 over the evaluation interval.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: InpainterModel<f32>,
    pub history: Vec<LossRecord>,
    pub iterations: usize,
    pub stopped_early: bool,
}

/// Fit `G` to fill random rectangular holes in normal patches with an L1
/// loss. No dropout is applied during training.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result depends only on the seed and corpus.
pub fn train_inpainter(arch: Architecture, corpus: &PatchCorpus, config: &TrainConfig) -> Result<TrainOutcome> {
    train_inpainter_with(arch, corpus, config, |_| {})
}

/// [`train_inpainter`] with a callback invoked after every evaluation.
pub fn train_inpainter_with(
    arch: Architecture,
    corpus: &PatchCorpus,
    config: &TrainConfig,
    mut on_eval: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Usage("training corpus is empty".into()));
    }
    let root = StreamKey::new(config.seed);
    let mut model = InpainterModel::<f32>::init(arch, root.named("init"))?;
    let (d_p, d_m) = (model.arch().input_size, model.arch().mask_size);
    let mut adam = Adam::new(config.learning_rate, model.num_params());
    let batches = root.named("batches");

    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut window_sum = 0.0;
    let mut window_len = 0;
    let mut stopped_early = false;
    let mut it = 0;
    while it < config.max_iterations {
        let key = batches.child(it as u64);
        let per_sample: Vec<Result<(f64, Gradients<f32>)>> = (0..config.batch_size)
            .into_par_iter()
            .map(|b| {
                let mut rng = key.child(b as u64).rng();
                let patch = corpus.sample(d_p, &mut rng)?;
                let hole = sample_train_mask(d_p, d_m, config.mask_rule, &mut rng);
                let x = masked_input::<f32>(&patch, hole);
                let mut tape = Tape::new();
                let out = model.forward_recorded(&x, &mut tape)?;
                let (loss, grad) = masked_l1(&out, &patch, hole);
                Ok((loss, model.backward(&tape, &grad)?))
            })
            .collect();
        let mut total = Gradients::zeros(model.arch());
        let mut loss = 0.0;
        for r in per_sample {
            let (l, g) = r?;
            loss += l;
            total.add_assign(&g);
        }
        let inv = 1.0 / config.batch_size as f64;
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it, loss });
        }
        total.scale(inv as f32);
        adam.step(&mut model, &total);
        if !model.params_finite() {
            return Err(Error::Divergence { iteration: it, loss: f64::NAN });
        }
        it += 1;
        window_sum += loss;
        window_len += 1;
        if window_len == config.eval_every || it == config.max_iterations {
            let rec = LossRecord { iteration: it, loss: window_sum / window_len as f64 };
            on_eval(&rec);
            history.push(rec);
            window_sum = 0.0;
            window_len = 0;
            if rec.loss < best {
                best = rec.loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome { model, history, iterations: it, stopped_early })
}
