use pluralad_core::nn::{
    checkpoint, masked_input, masked_l1, sample_train_mask, train_inpainter, Architecture, PatchCorpus, TrainConfig,
};
use pluralad_core::synth::{gen_normal, TextureParams};
use pluralad_core::{Error, Grid, Rect, StreamKey};

fn small_arch() -> Architecture {
    Architecture::encoder_decoder(16, 8, &[4, 8]).unwrap()
}

#[test]
fn constant_corpus_is_learned_quickly() {
    let corpus = PatchCorpus::new(vec![Grid::from_fn(16, 16, |_, _| 0.3); 4]);
    let cfg = TrainConfig { max_iterations: 200, batch_size: 8, learning_rate: 3e-3, ..TrainConfig::default() };
    let out = train_inpainter(small_arch(), &corpus, &cfg).unwrap();
    let last = out.history.last().unwrap().loss;
    assert!(last < 0.01, "final loss {last}");
}

#[test]
fn zero_iterations_returns_initial_weights() {
    let corpus = PatchCorpus::new(vec![Grid::zeros(16, 16)]);
    let cfg = TrainConfig { max_iterations: 0, ..TrainConfig::default() };
    let out = train_inpainter(small_arch(), &corpus, &cfg).unwrap();
    assert_eq!(out.iterations, 0);
    assert!(out.history.is_empty());
    let init =
        pluralad_core::nn::InpainterModel::<f32>::init(small_arch(), StreamKey::new(cfg.seed).named("init")).unwrap();
    assert_eq!(out.model, init);
}

#[test]
fn empty_corpus_is_rejected() {
    let err = train_inpainter(small_arch(), &PatchCorpus::new(vec![]), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err:?}");
}

#[test]
fn training_is_reproducible() {
    let mut rng = StreamKey::new(5).rng();
    let params = TextureParams { size: 32, ..TextureParams::default() };
    let images = (0..3).map(|_| gen_normal(&params, &mut rng).unwrap()).collect();
    let corpus = PatchCorpus::new(images);
    let cfg = TrainConfig { max_iterations: 30, batch_size: 4, eval_every: 10, ..TrainConfig::default() };
    let a = train_inpainter(small_arch(), &corpus, &cfg).unwrap();
    let b = train_inpainter(small_arch(), &corpus, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.picn"), dir.path().join("b.picn"));
    checkpoint::save(&a.model, &pa).unwrap();
    checkpoint::save(&b.model, &pb).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
}

/// A small inpainter trained briefly beats the best constant predictor on
/// held-out patches of mostly predictable textures by a wide margin. The
/// full-size check on the default corpus runs in the acceptance suite.
#[test]
fn beats_constant_baseline_on_smooth_textures() {
    let params = TextureParams { size: 128, noise_level: 0.3, ..TextureParams::default() };
    let mut rng = StreamKey::new(11).named("train-images").rng();
    let train: Vec<Grid> = (0..40).map(|_| gen_normal(&params, &mut rng).unwrap()).collect();
    let arch = Architecture::encoder_decoder(32, 16, &[8, 16, 32]).unwrap();
    let cfg = TrainConfig {
        max_iterations: 1500,
        batch_size: 8,
        learning_rate: 2e-3,
        patience: 100,
        ..TrainConfig::default()
    };
    let model = train_inpainter(arch, &PatchCorpus::new(train), &cfg).unwrap().model;

    let mut rng = StreamKey::new(11).named("held-out").rng();
    let held_out: Vec<Grid> = (0..20).map(|_| gen_normal(&params, &mut rng).unwrap()).collect();
    let corpus = PatchCorpus::new(held_out);
    let mut cases = Vec::new();
    let mut hole_pixels = Vec::new();
    for i in 0..1000 {
        let img = &corpus.images()[i % corpus.len()];
        let y = (i * 7) % (128 - 32);
        let x = (i * 13) % (128 - 32);
        let patch = img.crop(Rect { y, x, h: 32, w: 32 }).unwrap();
        let hole = sample_train_mask(32, 16, cfg.mask_rule, &mut rng);
        for yy in hole.y..hole.y + hole.h {
            for xx in hole.x..hole.x + hole.w {
                hole_pixels.push(f64::from(patch.get(yy, xx)));
            }
        }
        cases.push((patch, hole));
    }
    hole_pixels.sort_by(f64::total_cmp);
    let median = hole_pixels[hole_pixels.len() / 2];

    let (mut model_loss, mut baseline) = (0.0, 0.0);
    for (patch, hole) in &cases {
        let out = model.forward(&masked_input::<f32>(patch, *hole)).unwrap();
        model_loss += masked_l1(&out, patch, *hole).0;
        let mut b = 0.0;
        for yy in hole.y..hole.y + hole.h {
            for xx in hole.x..hole.x + hole.w {
                b += (f64::from(patch.get(yy, xx)) - median).abs();
            }
        }
        baseline += b / hole.area() as f64;
    }
    assert!(model_loss < 0.5 * baseline, "model {model_loss:.2} vs constant {baseline:.2}");
}
