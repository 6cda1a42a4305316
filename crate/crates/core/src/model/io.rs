//! "TPML v1" model files.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "TPML" | u16 version
//! config:  u8 n_blocks, (u32 channels, u32 kernel) x n_blocks, u8 separable,
//!          u8 n_rates, u32 x n_rates, u8 pyramid_enabled, u32 branch_kernel,
//!          u32 upsample, u32 output_kernel, u8 has_head [u32 hidden, u32 embed,
//!          u8 normalize], f64 bn_eps, f64 bn_momentum, u32 input_len
//! meta:    u64 seed, u16 provenance_len, utf-8 provenance
//! u32 tensor_count, then per tensor: u32 len, f32 x len
//! u8 has_mask [per block: u32 channels, ceil(channels / 8) bytes, LSB first]
//! ```
//!
//! Tensors follow the trainable-parameter order of the network, then the
//! running mean and variance of every batch norm (feature blocks, then head).

use std::fs;
use std::path::Path;

use super::config::{ModelConfig, ProjectionConfig};
use super::network::{ModelMetadata, TinyPpg};
use crate::data::Reader;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"TPML";
pub const MODEL_VERSION: u16 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("value {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_u8(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u8::try_from(v).map_err(|_| Error::config(format!("value {v} does not fit in u8")))?;
    buf.push(v);
    Ok(())
}

fn encode_config(buf: &mut Vec<u8>, c: &ModelConfig) -> Result<()> {
    put_u8(buf, c.dsc_specs.len())?;
    for &(ch, k) in &c.dsc_specs {
        put_u32(buf, ch)?;
        put_u32(buf, k)?;
    }
    buf.push(u8::from(c.separable));
    put_u8(buf, c.aspp_rates.len())?;
    for &r in &c.aspp_rates {
        put_u32(buf, r)?;
    }
    buf.push(u8::from(c.aspp_enabled));
    put_u32(buf, c.aspp_kernel)?;
    put_u32(buf, c.head_upsample_factor)?;
    put_u32(buf, c.final_conv_kernel)?;
    match &c.projection {
        Some(p) => {
            buf.push(1);
            put_u32(buf, p.hidden_channels)?;
            put_u32(buf, p.embed_dim)?;
            buf.push(u8::from(p.normalize));
        }
        None => buf.push(0),
    }
    buf.extend_from_slice(&c.bn_eps.to_le_bytes());
    buf.extend_from_slice(&c.bn_momentum.to_le_bytes());
    put_u32(buf, c.input_len)
}

fn flag(r: &mut Reader<'_>, what: &str) -> Result<bool> {
    let at = r.offset();
    match r.u8(what)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::parse(at, format!("{what}: expected 0 or 1, got {v}"))),
    }
}

fn decode_config(r: &mut Reader<'_>) -> Result<ModelConfig> {
    let n_blocks = r.u8("block count")? as usize;
    let mut dsc_specs = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let ch = r.u32("block channels")? as usize;
        let k = r.u32("block kernel")? as usize;
        dsc_specs.push((ch, k));
    }
    let separable = flag(r, "separable flag")?;
    let n_rates = r.u8("rate count")? as usize;
    let aspp_rates = (0..n_rates)
        .map(|_| r.u32("dilation rate").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let aspp_enabled = flag(r, "pyramid flag")?;
    let aspp_kernel = r.u32("branch kernel")? as usize;
    let head_upsample_factor = r.u32("upsample factor")? as usize;
    let final_conv_kernel = r.u32("output kernel")? as usize;
    let projection = if flag(r, "head flag")? {
        Some(ProjectionConfig {
            hidden_channels: r.u32("head hidden width")? as usize,
            embed_dim: r.u32("embedding width")? as usize,
            normalize: flag(r, "normalize flag")?,
        })
    } else {
        None
    };
    let bn_eps = f64::from_bits(r.u64("bn eps")?);
    let bn_momentum = f64::from_bits(r.u64("bn momentum")?);
    let input_len = r.u32("input length")? as usize;
    Ok(ModelConfig {
        dsc_specs,
        separable,
        aspp_rates,
        aspp_enabled,
        aspp_kernel,
        head_upsample_factor,
        final_conv_kernel,
        projection,
        bn_eps,
        bn_momentum,
        input_len,
    })
}

fn running_stats_mut(model: &mut TinyPpg<f32>) -> Vec<&mut [f32]> {
    let mut out: Vec<&mut [f32]> = Vec::new();
    for b in &mut model.blocks {
        out.push(&mut b.bn.running_mean);
        out.push(&mut b.bn.running_var);
    }
    if let Some(h) = &mut model.head {
        out.push(&mut h.bn.running_mean);
        out.push(&mut h.bn.running_var);
    }
    out
}

pub fn encode_model(model: &TinyPpg<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    encode_config(&mut buf, &model.config)?;
    buf.extend_from_slice(&model.metadata.seed.to_le_bytes());
    let prov = model.metadata.provenance.as_bytes();
    let prov_len = u16::try_from(prov.len()).map_err(|_| Error::config("provenance string too long"))?;
    buf.extend_from_slice(&prov_len.to_le_bytes());
    buf.extend_from_slice(prov);

    let mut scratch = model.clone();
    let mut tensors: Vec<Vec<f32>> = scratch.params_mut().into_iter().map(|p| p.to_vec()).collect();
    tensors.extend(running_stats_mut(&mut scratch).into_iter().map(|p| p.to_vec()));
    put_u32(&mut buf, tensors.len())?;
    for t in &tensors {
        put_u32(&mut buf, t.len())?;
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &model.prune_mask {
        Some(mask) => {
            buf.push(1);
            for layer in mask {
                put_u32(&mut buf, layer.len())?;
                let mut bytes = vec![0u8; layer.len().div_ceil(8)];
                for (i, &keep) in layer.iter().enumerate() {
                    if keep {
                        bytes[i / 8] |= 1 << (i % 8);
                    }
                }
                buf.extend_from_slice(&bytes);
            }
        }
        None => buf.push(0),
    }
    Ok(buf)
}

fn expected_tensor_lengths(model: &mut TinyPpg<f32>) -> Vec<usize> {
    let mut lens: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
    lens.extend(running_stats_mut(model).iter().map(|p| p.len()));
    lens
}

pub fn decode_model(bytes: &[u8]) -> Result<TinyPpg<f32>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(&MODEL_MAGIC, "model magic")?;
    let at = r.offset();
    let version = r.u16("model version")?;
    if version != MODEL_VERSION {
        return Err(Error::parse(at, format!("unsupported model version {version}")));
    }
    let at = r.offset();
    let config = decode_config(&mut r)?;
    config
        .validate()
        .map_err(|e| Error::parse(at, format!("invalid model configuration: {e}")))?;
    let seed = r.u64("seed")?;
    let prov_len = r.u16("provenance length")? as usize;
    let at = r.offset();
    let provenance = std::str::from_utf8(r.take(prov_len, "provenance")?)
        .map_err(|_| Error::parse(at, "provenance is not valid utf-8"))?
        .to_owned();

    let mut model = TinyPpg::<f32>::build(config, 0)?;
    model.metadata = ModelMetadata { seed, provenance };
    let at = r.offset();
    let count = r.u32("tensor count")? as usize;
    let mut targets = expected_tensor_lengths(&mut model);
    if count != targets.len() {
        return Err(Error::parse(
            at,
            format!("expected {} tensors for this configuration, found {count}", targets.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for want in targets.drain(..) {
        let at = r.offset();
        let len = r.u32("tensor length")? as usize;
        if len != want {
            return Err(Error::parse(at, format!("tensor has {len} values, expected {want}")));
        }
        values.push(r.f32_vec(len, "tensor values")?);
    }
    let mut it = values.into_iter();
    for slot in model.params_mut() {
        slot.copy_from_slice(&it.next().expect("counted"));
    }
    for slot in running_stats_mut(&mut model) {
        slot.copy_from_slice(&it.next().expect("counted"));
    }

    if flag(&mut r, "mask flag")? {
        let mut mask = Vec::with_capacity(model.blocks.len());
        for b in 0..model.blocks.len() {
            let at = r.offset();
            let n = r.u32("mask width")? as usize;
            if n != model.blocks[b].out_channels() {
                return Err(Error::parse(at, format!("mask for block {b} has {n} channels")));
            }
            let bytes = r.take(n.div_ceil(8), "mask bits")?;
            mask.push((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect());
        }
        model.prune_mask = Some(mask);
    }
    r.finish()?;
    Ok(model)
}

pub fn save_model(model: &TinyPpg<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TinyPpg<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
