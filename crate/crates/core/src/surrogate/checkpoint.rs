//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "TORNET1"
//! u32 descriptor length, descriptor text (see Model::descriptor)
//! f32 parameters, layer order
//! u8 optimizer code (0 = none); if nonzero: u64 step, f32 m[n], f32 v[n]
//! u32 CRC-32 of everything above
//! ```

use std::path::Path;

use super::model::Model;
use super::tensor::Scalar;
use super::train::{OptimizerKind, OptimizerState};
use super::{Result, SurrogateError};

pub const MAGIC: &[u8; 7] = b"TORNET1";

fn put_f32s<S: Scalar>(out: &mut Vec<u8>, values: &[S]) {
    for v in values {
        out.extend_from_slice(&v.to_f32().expect("finite parameter").to_le_bytes());
    }
}

pub fn encode<S: Scalar>(model: &Model<S>, optimizer: Option<&OptimizerState<S>>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let descriptor = model.descriptor();
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    for p in model.params() {
        put_f32s(&mut out, p);
    }
    match optimizer {
        None => out.push(0),
        Some(opt) => {
            out.push(opt.kind.code());
            out.extend_from_slice(&opt.step.to_le_bytes());
            put_f32s(&mut out, &opt.m);
            put_f32s(&mut out, &opt.v);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn f32s<S: Scalar>(&mut self, dst: &mut [S]) -> Result<()> {
        let raw = self.take(dst.len() * 4)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = S::from_f32(f32::from_le_bytes(chunk.try_into().expect("4 bytes")))
                .expect("finite");
        }
        Ok(())
    }
}

fn corrupt(what: &str) -> SurrogateError {
    SurrogateError::Checkpoint(what.to_string())
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<(Model<S>, Option<OptimizerState<S>>)> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("missing TORNET1 magic"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(corrupt("CRC mismatch"));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let descriptor =
        std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("descriptor is not UTF-8"))?;
    let mut model = Model::<S>::from_descriptor(descriptor)?;
    for p in model.params_mut() {
        r.f32s(p)?;
    }
    let optimizer = match r.take(1)?[0] {
        0 => None,
        code => {
            let kind =
                OptimizerKind::from_code(code).ok_or_else(|| corrupt("unknown optimizer code"))?;
            let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            let mut state = OptimizerState::new(kind, model.param_count());
            state.step = step;
            r.f32s(&mut state.m)?;
            r.f32s(&mut state.v)?;
            Some(state)
        }
    };
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok((model, optimizer))
}

pub fn save<S: Scalar>(
    path: &Path,
    model: &Model<S>,
    optimizer: Option<&OptimizerState<S>>,
) -> Result<()> {
    std::fs::write(path, encode(model, optimizer))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<(Model<S>, Option<OptimizerState<S>>)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GrayImage;
    use crate::surrogate::Architecture;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::<f32>::build(Architecture::Desk, 32, 0.5, 11).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, model.param_count());
        opt.step = 7;
        opt.m
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f32 * 1e-3);
        let bytes = encode(&model, Some(&opt));
        let (back, back_opt) = decode::<f32>(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_opt.unwrap(), opt);
        assert_eq!(encode(&back, Some(&opt)), bytes);

        let img = GrayImage::new(32, (0..1024).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        assert_eq!(
            model.predict(&img).unwrap().to_bits(),
            back.predict(&img).unwrap().to_bits()
        );

        let (_, none) = decode::<f32>(&encode(&model, None)).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn corruption_is_detected() {
        let model = Model::<f32>::build(Architecture::Desk, 16, 0.5, 1).unwrap();
        let mut bytes = encode(&model, None);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(
            decode::<f32>(&bytes),
            Err(SurrogateError::Checkpoint(_))
        ));
        assert!(decode::<f32>(b"garbage").is_err());
        assert!(decode::<f32>(&[]).is_err());
    }
}
