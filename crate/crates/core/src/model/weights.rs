//! Weight files: `"TFWT"`, version `u16`, spec hash `u64`, tensor count
//! `u32`, then per tensor: name length `u16` + UTF-8 bytes, rank `u8`,
//! extents `u32` each, and the values as little-endian `f32`. All integers
//! little-endian.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TFWT";
pub const WEIGHTS_VERSION: u16 = 1;

/// Serialize the model's parameters.
pub fn write_weights<F: Scalar>(model: &Model<F>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&model.spec().spec_hash().to_le_bytes());
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decode `bytes` into a model built from `spec`. Header problems are
/// reported before any layout check: magic, then version, then spec hash.
pub fn read_weights(spec: &ModelSpec, bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::BadMagic("weight"));
    }
    let version = r.u16("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let found = r.u64("spec hash")?;
    let expected = spec.spec_hash();
    if found != expected {
        return Err(Error::SpecHashMismatch { expected, found });
    }
    // Initial values are overwritten below; any seed will do.
    let mut model = Model::<f32>::build(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = r.u32("tensor count")? as usize;
    if count != model.params().len() {
        return Err(Error::WeightLayout(format!(
            "file holds {count} tensors, model has {}",
            model.params().len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let len = r.u16("tensor name")? as usize;
        let name = String::from_utf8_lossy(r.take(len, "tensor name")?).into_owned();
        let rank = r.u8("tensor rank")? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32("tensor extents").map(|e| e as usize)).collect::<Result<_>>()?;
        let want = model.params().get(id);
        if name != model.params().name(id) || shape != want.shape() {
            return Err(Error::WeightLayout(format!(
                "expected {} {:?}, found {name} {shape:?}",
                model.params().name(id),
                want.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n, "tensor values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        model.params_mut().set(id, Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightLayout(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_weights<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    fs::write(path, write_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(spec: &ModelSpec, path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(spec, &bytes)
}

#[cfg(test)]
mod tests {
    use super::super::Variant;
    use super::*;

    fn model(v: Variant, seed: u64) -> Model<f32> {
        Model::build(&ModelSpec::desk(v).with_frames(3), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model(Variant::M2, 5);
        let bytes = write_weights(&m);
        let back = read_weights(m.spec(), &bytes).unwrap();
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = Tensor::from_fn(&[1, 3, 32, 32, 1], |i| ((i[2] * 7 + i[3] * 3) % 13) as f32 / 13.0);
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert_eq!(write_weights(&back), bytes);
    }

    #[test]
    fn header_errors_are_distinct() {
        let m = model(Variant::Baseline, 1);
        let good = write_weights(&m);
        let spec = m.spec();

        let mut bad = good.clone();
        bad[1] ^= 0xff;
        assert!(matches!(read_weights(spec, &bad), Err(Error::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 7;
        assert!(matches!(read_weights(spec, &bad), Err(Error::UnsupportedVersion(7))));
        let mut bad = good.clone();
        bad[9] ^= 0x01;
        assert!(matches!(read_weights(spec, &bad), Err(Error::SpecHashMismatch { .. })));
        assert!(matches!(read_weights(spec, &good[..good.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(read_weights(spec, &good[..3]), Err(Error::Truncated(_))));
    }

    #[test]
    fn cross_variant_load_is_a_hash_error() {
        let bytes = write_weights(&model(Variant::Baseline, 1));
        let m2 = ModelSpec::desk(Variant::M2).with_frames(3);
        assert!(matches!(read_weights(&m2, &bytes), Err(Error::SpecHashMismatch { .. })));
    }
}
