//! Binary checkpoint format:
//!
//! ```text
//! "PICN" | u32 version | u32 in_channels | u32 input_size | u32 mask_size
//! | u32 layer_count | layer* | f32 params (weights then bias, per conv)
//! ```
//!
//! Layers are a one-byte tag (0 conv, 1 upsample, 2 leaky relu, 3 tanh)
//! followed by their fields. Every integer and float is little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::model::{Architecture, ConvParams, ConvSpec, InpainterModel, LayerSpec};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PICN";
pub const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(model: &InpainterModel<f32>) -> Vec<u8> {
    let arch = model.arch();
    let mut buf = Vec::with_capacity(64 + 4 * model.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut buf, arch.in_channels);
    put_u32(&mut buf, arch.input_size);
    put_u32(&mut buf, arch.mask_size);
    put_u32(&mut buf, arch.layers.len());
    for layer in &arch.layers {
        match layer {
            LayerSpec::Conv(c) => {
                buf.push(0);
                for v in [c.in_ch, c.out_ch, c.kernel, c.stride, c.pad] {
                    put_u32(&mut buf, v);
                }
                buf.push(u8::from(c.dropout_eligible));
            }
            LayerSpec::Upsample2x => buf.push(1),
            LayerSpec::LeakyRelu { slope } => {
                buf.push(2);
                buf.extend_from_slice(&slope.to_le_bytes());
            }
            LayerSpec::Tanh => buf.push(3),
        }
    }
    for p in model.params() {
        for v in p.weight.data().iter().chain(&p.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        self.u32().map(|v| v as usize)
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint; `origin` is only used in error messages.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<InpainterModel<f32>> {
    let fail = |msg: String| Error::format(origin, msg);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(fail)? != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32().map_err(fail)?;
    if version != VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    let in_channels = r.usize().map_err(fail)?;
    let input_size = r.usize().map_err(fail)?;
    let mask_size = r.usize().map_err(fail)?;
    let n_layers = r.usize().map_err(fail)?;
    if n_layers > 4096 {
        return Err(fail(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match r.u8().map_err(fail)? {
            0 => {
                let mut f = [0usize; 5];
                for v in &mut f {
                    *v = r.usize().map_err(fail)?;
                }
                LayerSpec::Conv(ConvSpec {
                    in_ch: f[0],
                    out_ch: f[1],
                    kernel: f[2],
                    stride: f[3],
                    pad: f[4],
                    dropout_eligible: r.u8().map_err(fail)? != 0,
                })
            }
            1 => LayerSpec::Upsample2x,
            2 => LayerSpec::LeakyRelu { slope: r.f32().map_err(fail)? },
            3 => LayerSpec::Tanh,
            t => return Err(fail(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    let arch = Architecture { in_channels, input_size, mask_size, layers };
    arch.validate().map_err(|e| fail(e.to_string()))?;
    let mut params = Vec::new();
    for spec in arch.convs() {
        let shape = [spec.out_ch, spec.in_ch, spec.kernel, spec.kernel];
        let n: usize = shape.iter().product();
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            w.push(r.f32().map_err(fail)?);
        }
        let mut b = Vec::with_capacity(spec.out_ch);
        for _ in 0..spec.out_ch {
            b.push(r.f32().map_err(fail)?);
        }
        params.push(ConvParams { weight: Tensor4::from_vec(shape, w)?, bias: b });
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    InpainterModel::from_parts(arch, params)
}

pub fn save(model: &InpainterModel<f32>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<InpainterModel<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn roundtrip_preserves_model() {
        let arch = Architecture::encoder_decoder(16, 8, &[4, 8]).unwrap();
        let m = InpainterModel::<f32>::init(arch, StreamKey::new(3)).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"PICN");
        assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), m);
    }

    #[test]
    fn rejects_unknown_version() {
        let arch = Architecture::encoder_decoder(16, 8, &[4, 8]).unwrap();
        let mut bytes = encode(&InpainterModel::<f32>::zeros(arch).unwrap());
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        let err = decode(&bytes, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let arch = Architecture::encoder_decoder(16, 8, &[4, 8]).unwrap();
        let bytes = encode(&InpainterModel::<f32>::zeros(arch).unwrap());
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, Path::new("mem")).is_err());
    }
}
