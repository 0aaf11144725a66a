use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{conv2d_backward, conv2d_forward};
use super::dropout::{channel_dropout_in_place, check_p_drop};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Whether inference-time channel dropout may be applied to this
    /// layer's output.
    pub dropout_eligible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// Nearest-neighbour ×2 upsampling.
    Upsample2x,
    LeakyRelu {
        slope: f32,
    },
    Tanh,
}

/// Layer list plus the patch geometry the network was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    /// Patch side `d_p`.
    pub input_size: usize,
    /// Mask side `d_m`.
    pub mask_size: usize,
    pub layers: Vec<LayerSpec>,
}

pub const LEAKY_SLOPE: f32 = 0.2;

/// Encoder widths of the default network. Narrower nets inpaint the corpus
/// about as well but lose too much signal when half their channels drop.
pub const DESK_CHANNELS: [usize; 4] = [32, 64, 128, 128];

impl Architecture {
    /// Encoder of stride-2 convolutions followed by a mirrored decoder of
    /// upsample + convolution stages ending in one `tanh` channel.
    ///
    /// Input channels are the masked patch and the binary hole mask.
    pub fn encoder_decoder(input_size: usize, mask_size: usize, channels: &[usize]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("at least one encoder stage is required".into()));
        }
        let in_channels = 2;
        let mut layers = Vec::new();
        let conv = |in_ch, out_ch, stride, dropout_eligible| {
            LayerSpec::Conv(ConvSpec { in_ch, out_ch, kernel: 3, stride, pad: 1, dropout_eligible })
        };
        let mut prev = in_channels;
        for (i, &c) in channels.iter().enumerate() {
            layers.push(conv(prev, c, 2, i > 0));
            layers.push(LayerSpec::LeakyRelu { slope: LEAKY_SLOPE });
            prev = c;
        }
        let depth = channels.len();
        for j in 0..depth {
            let out = if j + 1 == depth { 1 } else { channels[depth - 2 - j] };
            // the final two decoder stages stay deterministic
            let eligible = j + 2 < depth;
            layers.push(LayerSpec::Upsample2x);
            layers.push(conv(prev, out, 1, eligible));
            layers.push(if j + 1 == depth { LayerSpec::Tanh } else { LayerSpec::LeakyRelu { slope: LEAKY_SLOPE } });
            prev = out;
        }
        let arch = Architecture { in_channels, input_size, mask_size, layers };
        arch.validate()?;
        Ok(arch)
    }

    /// Four stride-2 stages with [`DESK_CHANNELS`].
    pub fn desk_default(input_size: usize, mask_size: usize) -> Result<Self> {
        Self::encoder_decoder(input_size, mask_size, &DESK_CHANNELS)
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Number of leading layers that make up the encoder trunk (everything
    /// before the first upsampling stage).
    pub fn encoder_len(&self) -> usize {
        self.layers.iter().position(|l| matches!(l, LayerSpec::Upsample2x)).unwrap_or(self.layers.len())
    }

    /// Output (channels, height, width) after each of the first `upto`
    /// layers for an input of `channels × size × size`.
    fn trace_shape(&self, channels: usize, size: usize, upto: usize) -> Result<(usize, usize)> {
        let (mut c, mut s) = (channels, size);
        for (i, layer) in self.layers[..upto].iter().enumerate() {
            match layer {
                LayerSpec::Conv(cs) => {
                    if cs.in_ch != c {
                        return Err(Error::Config(format!("layer {i} expects {} channels but receives {c}", cs.in_ch)));
                    }
                    if cs.stride == 0 || cs.kernel == 0 || s + 2 * cs.pad < cs.kernel {
                        return Err(Error::Config(format!("layer {i} does not fit a {s}x{s} input")));
                    }
                    s = (s + 2 * cs.pad - cs.kernel) / cs.stride + 1;
                    c = cs.out_ch;
                }
                LayerSpec::Upsample2x => s *= 2,
                LayerSpec::LeakyRelu { .. } | LayerSpec::Tanh => {}
            }
        }
        Ok((c, s))
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask_size == 0 || self.mask_size >= self.input_size {
            return Err(Error::Config(format!(
                "mask size {} must be positive and smaller than patch size {}",
                self.mask_size, self.input_size
            )));
        }
        if !(self.input_size - self.mask_size).is_multiple_of(2) {
            return Err(Error::Config("patch and mask sizes must differ by an even amount".into()));
        }
        let convs: Vec<_> = self.convs().collect();
        let (first, last) = match (convs.first(), convs.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Config("architecture has no convolution".into())),
        };
        if first.dropout_eligible || last.dropout_eligible {
            return Err(Error::Config("first and last convolutions must not be dropout-eligible".into()));
        }
        let (c, s) = self.trace_shape(self.in_channels, self.input_size, self.layers.len())?;
        if s != self.input_size || c != 1 {
            return Err(Error::Config(format!(
                "network maps {0}x{0} to {c}x{s}x{s}; expected a single {0}x{0} channel",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Length of the flattened trunk activation for a `side × side` input.
    pub fn feature_len(&self, side: usize) -> Result<usize> {
        let (c, s) = self.trace_shape(self.in_channels, side, self.encoder_len())?;
        Ok(c * s * s)
    }
}

/// Weights (out, in, k, k) and biases of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    fn zeros_like(spec: &ConvSpec) -> Self {
        ConvParams {
            weight: Tensor4::zeros([spec.out_ch, spec.in_ch, spec.kernel, spec.kernel]),
            bias: vec![T::zero(); spec.out_ch],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter gradients, one entry per convolution in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<ConvParams<T>>);

impl<T: Real> Gradients<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Gradients(arch.convs().map(ConvParams::zeros_like).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.weight.data_mut().iter_mut().zip(b.weight.data()).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for p in &mut self.0 {
            p.weight.data_mut().iter_mut().for_each(|v| *v = *v * s);
            p.bias.iter_mut().for_each(|v| *v = *v * s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.0.iter().flat_map(|p| p.weight.data().iter().chain(p.bias.iter()))
    }
}

/// Activations retained by a recorded forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    acts: Vec<Tensor4<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { acts: Vec::new() }
    }

    pub fn is_recorded(&self) -> bool {
        !self.acts.is_empty()
    }

    pub fn input(&self) -> Option<&Tensor4<T>> {
        self.acts.first()
    }

    pub fn output(&self) -> Option<&Tensor4<T>> {
        self.acts.last()
    }
}

/// Completion network `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct InpainterModel<T = f32> {
    arch: Architecture,
    params: Vec<ConvParams<T>>,
}

impl<T: Real> InpainterModel<T> {
    /// He-uniform initialization drawn from `key`; biases start at zero.
    pub fn init(arch: Architecture, key: StreamKey) -> Result<Self> {
        arch.validate()?;
        let mut rng = key.rng();
        let params = arch
            .convs()
            .map(|spec| {
                let mut p = ConvParams::zeros_like(spec);
                let fan_in = (spec.in_ch * spec.kernel * spec.kernel) as f64;
                let gain = 2.0 / (1.0 + f64::from(LEAKY_SLOPE).powi(2));
                let bound = (3.0 * gain / fan_in).sqrt();
                for w in p.weight.data_mut() {
                    *w = T::lit(rng.random_range(-bound..bound));
                }
                p
            })
            .collect();
        Ok(InpainterModel { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = arch.convs().map(ConvParams::zeros_like).collect();
        Ok(InpainterModel { arch, params })
    }

    pub fn from_parts(arch: Architecture, params: Vec<ConvParams<T>>) -> Result<Self> {
        arch.validate()?;
        let specs: Vec<_> = arch.convs().collect();
        if specs.len() != params.len() {
            return Err(Error::Config(format!("{} parameter sets for {} convolutions", params.len(), specs.len())));
        }
        for (s, p) in specs.iter().zip(&params) {
            if p.weight.shape() != [s.out_ch, s.in_ch, s.kernel, s.kernel] || p.bias.len() != s.out_ch {
                return Err(Error::Config("parameter shapes do not match the architecture".into()));
            }
        }
        Ok(InpainterModel { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(ConvParams::len).sum()
    }

    pub fn params_finite(&self) -> bool {
        self.params.iter().all(|p| p.weight.all_finite() && p.bias.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> InpainterModel<U> {
        InpainterModel {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| ConvParams {
                    weight: p.weight.cast(),
                    bias: p.bias.iter().map(|v| U::from(*v).unwrap()).collect(),
                })
                .collect(),
        }
    }

    fn run<R: Rng + ?Sized>(
        &self,
        x: &Tensor4<T>,
        upto: usize,
        mut dropout: Option<(f64, &mut R)>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor4<T>> {
        if x.channels() != self.arch.in_channels {
            return Err(Error::Config(format!(
                "model expects {} input channels, got {}",
                self.arch.in_channels,
                x.channels()
            )));
        }
        if let Some(t) = tape.as_deref_mut() {
            t.acts.clear();
            t.acts.push(x.clone());
        }
        let mut cur = x.clone();
        let mut conv_idx = 0;
        for layer in &self.arch.layers[..upto] {
            cur = match layer {
                LayerSpec::Conv(cs) => {
                    let p = &self.params[conv_idx];
                    conv_idx += 1;
                    let mut y = conv2d_forward(&cur, &p.weight, &p.bias, cs.stride, cs.pad)?;
                    if cs.dropout_eligible {
                        if let Some((p_drop, rng)) = dropout.as_mut() {
                            channel_dropout_in_place(&mut y, *p_drop, &mut **rng)?;
                        }
                    }
                    y
                }
                LayerSpec::Upsample2x => upsample2x(&cur),
                LayerSpec::LeakyRelu { slope } => {
                    let s = T::lit(f64::from(*slope));
                    let mut y = cur;
                    y.data_mut().iter_mut().for_each(|v| {
                        if *v < T::zero() {
                            *v = *v * s;
                        }
                    });
                    y
                }
                LayerSpec::Tanh => {
                    let mut y = cur;
                    y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                    y
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.acts.push(cur.clone());
            }
        }
        Ok(cur)
    }

    /// Deterministic forward pass over the whole network.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.run::<crate::rng::Stream>(x, self.arch.layers.len(), None, None)
    }

    /// Forward pass with channel dropout on eligible layers.
    pub fn forward_dropout<R: Rng + ?Sized>(&self, x: &Tensor4<T>, p_drop: f64, rng: &mut R) -> Result<Tensor4<T>> {
        check_p_drop(p_drop)?;
        if p_drop == 0.0 {
            return self.forward(x);
        }
        self.run(x, self.arch.layers.len(), Some((p_drop, rng)), None)
    }

    /// Deterministic forward pass that keeps every activation for
    /// [`backward`](Self::backward).
    pub fn forward_recorded(&self, x: &Tensor4<T>, tape: &mut Tape<T>) -> Result<Tensor4<T>> {
        self.run::<crate::rng::Stream>(x, self.arch.layers.len(), None, Some(tape))
    }

    /// Parameter gradients for the loss whose gradient with respect to the
    /// network output is `loss_grad`.
    pub fn backward(&self, tape: &Tape<T>, loss_grad: &Tensor4<T>) -> Result<Gradients<T>> {
        self.backward_with_input(tape, loss_grad).map(|(g, _)| g)
    }

    /// Like [`backward`](Self::backward) but also returns the gradient with
    /// respect to the network input.
    pub fn backward_with_input(&self, tape: &Tape<T>, loss_grad: &Tensor4<T>) -> Result<(Gradients<T>, Tensor4<T>)> {
        let n_layers = self.arch.layers.len();
        if tape.acts.len() != n_layers + 1 {
            return Err(Error::Usage("backward requires a recorded forward pass of this model".into()));
        }
        let out = &tape.acts[n_layers];
        if out.shape() != loss_grad.shape() {
            return Err(Error::Usage(format!(
                "loss gradient shape {:?} differs from output shape {:?}",
                loss_grad.shape(),
                out.shape()
            )));
        }
        let mut grads = Gradients::zeros(&self.arch);
        let mut g = loss_grad.clone();
        let mut conv_idx = self.params.len();
        for (i, layer) in self.arch.layers.iter().enumerate().rev() {
            let input = &tape.acts[i];
            let output = &tape.acts[i + 1];
            g = match layer {
                LayerSpec::Conv(cs) => {
                    conv_idx -= 1;
                    let p = &self.params[conv_idx];
                    let gp = &mut grads.0[conv_idx];
                    conv2d_backward(input, &p.weight, cs.stride, cs.pad, &g, gp.weight.data_mut(), &mut gp.bias, true)?
                        .expect("input gradient requested")
                }
                LayerSpec::Upsample2x => downsample_sum2x(&g),
                LayerSpec::LeakyRelu { slope } => {
                    let s = T::lit(f64::from(*slope));
                    let mut gi = g;
                    gi.data_mut().iter_mut().zip(input.data()).for_each(|(gv, xv)| {
                        if *xv < T::zero() {
                            *gv = *gv * s;
                        }
                    });
                    gi
                }
                LayerSpec::Tanh => {
                    let mut gi = g;
                    gi.data_mut().iter_mut().zip(output.data()).for_each(|(gv, yv)| *gv = *gv * (T::one() - *yv * *yv));
                    gi
                }
            };
        }
        Ok((grads, g))
    }

    /// Flattened deepest encoder activation for a single-channel `side ×
    /// side` image (remaining input channels zero).
    pub fn trunk_features(&self, pixels: &[T], side: usize) -> Result<Vec<T>> {
        if pixels.len() != side * side {
            return Err(Error::Config(format!(
                "expected {} pixels for a {side}x{side} grid, got {}",
                side * side,
                pixels.len()
            )));
        }
        let mut x = Tensor4::zeros([1, self.arch.in_channels, side, side]);
        x.plane_mut(0, 0).copy_from_slice(pixels);
        let upto = self.arch.encoder_len();
        self.arch.trace_shape(self.arch.in_channels, side, upto)?;
        Ok(self.run::<crate::rng::Stream>(&x, upto, None, None)?.into_vec())
    }
}

fn upsample2x<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for yy in 0..2 * h {
                let srow = &src[(yy / 2) * w..(yy / 2 + 1) * w];
                let drow = &mut dst[yy * 2 * w..(yy + 1) * 2 * w];
                for (xx, d) in drow.iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
    }
    y
}

fn downsample_sum2x<T: Real>(g: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h2, w2] = g.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut y = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = g.plane(b, ch);
            let dst = y.plane_mut(b, ch);
            for yy in 0..h2 {
                for xx in 0..w2 {
                    dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
                }
            }
        }
    }
    y
}
