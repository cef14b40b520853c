use std::path::Path;

use super::encoder::{Linear, PointEncoder};
use crate::data::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::ndiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PBCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const C: &str = "PBCK";

/// Encoder parameters plus the optimizer state needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: PointEncoder,
    /// One velocity tensor per parameter, empty before the first step.
    pub momentum: Vec<Tensor>,
    /// Completed epochs, counted across both stages.
    pub epoch: u64,
    pub stage: u32,
}

fn put_tensor(w: &mut Writer, t: &Tensor) {
    w.u32(t.rank() as u32);
    for &d in t.shape() {
        w.u64(d as u64);
    }
    w.f64s(t.data());
}

fn get_tensor(r: &mut Reader) -> Result<Tensor> {
    let rank = r.u32()? as usize;
    if rank > 2 {
        return Err(Error::Format {
            offset: r.offset(),
            reason: format!("tensor rank {rank}"),
        });
    }
    let shape = (0..rank)
        .map(|_| Ok(r.u64()? as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    if n * 8 > r.remaining() {
        return Err(Error::Format {
            offset: r.offset(),
            reason: format!("tensor of {n} values exceeds section"),
        });
    }
    Tensor::new(shape, r.f64s(n)?)
}

fn get_linear(r: &mut Reader) -> Result<Linear> {
    let weight = get_tensor(r)?;
    let bias = get_tensor(r)?;
    if weight.rank() != 2 || bias.shape() != [weight.cols()] {
        return Err(Error::Format {
            offset: r.offset(),
            reason: format!("layer shapes {:?} and {:?}", weight.shape(), bias.shape()),
        });
    }
    Ok(Linear { weight, bias })
}

/// Serializes as a PBCK v1 container: `meta`, `params`, `momentum`.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let enc = &ck.encoder;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC).u16(CHECKPOINT_VERSION);

    let mut meta = Writer::new();
    meta.u64(ck.epoch)
        .u32(ck.stage)
        .u32(enc.stages.len() as u32)
        .u32(enc.tap as u32)
        .u32(enc.input_scale.len() as u32)
        .f64s(&enc.input_scale);
    w.section(meta);

    let mut params = Writer::new();
    for t in enc.params() {
        put_tensor(&mut params, t);
    }
    w.section(params);

    let mut mom = Writer::new();
    mom.u32(ck.momentum.len() as u32);
    for t in &ck.momentum {
        put_tensor(&mut mom, t);
    }
    w.section(mom);
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.header(C, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;

    let mut s = r.section(C, "meta")?;
    let (epoch, stage, n_stages, tap, input_scale) = Reader::in_section(
        C,
        "meta",
        (|| {
            let epoch = s.u64()?;
            let stage = s.u32()?;
            let n_stages = s.u32()? as usize;
            let tap = s.u32()? as usize;
            let k = s.u32()? as usize;
            if k * 8 > s.remaining() {
                return Err(Error::Format {
                    offset: s.offset(),
                    reason: format!("{k} input scales exceed section"),
                });
            }
            Ok((epoch, stage, n_stages, tap, s.f64s(k)?))
        })(),
    )?;
    s.finish(C, "meta")?;

    let mut s = r.section(C, "params")?;
    let encoder = Reader::in_section(
        C,
        "params",
        (|| {
            let stages = (0..n_stages)
                .map(|_| get_linear(&mut s))
                .collect::<Result<Vec<_>>>()?;
            let adapter = get_linear(&mut s)?;
            let tap_adapter = get_linear(&mut s)?;
            Ok(PointEncoder {
                stages,
                adapter,
                tap_adapter,
                tap,
                input_scale,
            })
        })(),
    )?;
    s.finish(C, "params")?;
    validate(&encoder)?;

    let mut s = r.section(C, "momentum")?;
    let momentum = Reader::in_section(
        C,
        "momentum",
        (|| {
            let n = s.u32()? as usize;
            (0..n)
                .map(|_| get_tensor(&mut s))
                .collect::<Result<Vec<_>>>()
        })(),
    )?;
    s.finish(C, "momentum")?;
    r.finish(C, "trailer")?;

    if !momentum.is_empty() {
        let params = encoder.params();
        if momentum.len() != params.len()
            || momentum
                .iter()
                .zip(&params)
                .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Corruption {
                container: C,
                section: "momentum",
                reason: "velocity shapes do not match parameters".into(),
            });
        }
    }
    Ok(Checkpoint {
        encoder,
        momentum,
        epoch,
        stage,
    })
}

fn validate(enc: &PointEncoder) -> Result<()> {
    let corrupt = |reason: String| Error::Corruption {
        container: C,
        section: "params",
        reason,
    };
    if enc.stages.is_empty() || enc.tap >= enc.stages.len() {
        return Err(corrupt(format!(
            "{} stages, tap {}",
            enc.stages.len(),
            enc.tap
        )));
    }
    for pair in enc.stages.windows(2) {
        if pair[0].fan_out() != pair[1].fan_in() {
            return Err(corrupt("stage widths do not chain".into()));
        }
    }
    let last = enc.stages.last().expect("nonempty");
    if enc.adapter.fan_in() != last.fan_out() || enc.input_scale.len() != enc.stages[0].fan_in() {
        return Err(corrupt("adapter or input scale width mismatch".into()));
    }
    let a = &enc.tap_adapter;
    if a.fan_in() != enc.stages[enc.tap].fan_out() || a.fan_out() != enc.adapter.fan_out() {
        return Err(corrupt("tap adapter inconsistent with tap".into()));
    }
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
