//! Binary checkpoint format for [`FlowModel`].
//!
//! All integers and floats are little-endian.
//!
//! | offset | type        | field                                        |
//! |--------|-------------|----------------------------------------------|
//! | 0      | `[u8; 4]`   | magic `ORGN`                                 |
//! | 4      | `u32`       | format version (currently 1)                 |
//! | 8      | `u32 x 4`   | input_dim, hidden_width, hidden_depth, output_dim |
//! | 24     | `u32`       | rectification level                          |
//! | 28     | `u64 x 3`   | seed, num_steps, batch_size                  |
//! | 52     | `f64 x 5`   | learning_rate, beta1, beta2, epsilon, init_scale |
//! | 92     | `u64 x 2`   | integration_steps, reflow_pairs              |
//! | 108    | `u64`       | parameter count `P`                          |
//! | 116    | `f64 x P`   | parameters in layer order                    |
//!
//! Within each layer the weight matrix `(fan_out, fan_in)` is written row-major,
//! followed by the bias vector. Trailing bytes are rejected.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffnet::{Architecture, NetworkParams};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, TrainingMeta};

pub const MAGIC: [u8; 4] = *b"ORGN";
pub const VERSION: u32 = 1;
/// Size of everything before the parameter array.
pub const HEADER_LEN: usize = 116;

pub fn to_bytes(model: &FlowModel) -> Vec<u8> {
    let arch = model.params.arch();
    let m = &model.training_meta;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * arch.num_parameters());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [arch.input_dim, arch.hidden_width, arch.hidden_depth, arch.output_dim] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.rectification_level.to_le_bytes());
    for v in [m.seed, m.num_steps, m.batch_size] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [m.learning_rate, m.beta1, m.beta2, m.epsilon, m.init_scale] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [m.integration_steps, m.reflow_pairs] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(arch.num_parameters() as u64).to_le_bytes());
    for v in model.params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated checkpoint while reading {what} at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has length N"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take::<8>(what).map(f64::from_le_bytes)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<FlowModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take::<4>("magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic bytes".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 4];
    for (d, name) in dims.iter_mut().zip(["input_dim", "hidden_width", "hidden_depth", "output_dim"]) {
        *d = c.u32(name)? as usize;
    }
    let arch = Architecture { input_dim: dims[0], hidden_width: dims[1], hidden_depth: dims[2], output_dim: dims[3] };
    arch.validate().map_err(|e| Error::Format(format!("invalid architecture in checkpoint: {e}")))?;
    let level = c.u32("rectification level")?;
    if level == 0 {
        return Err(Error::Format("rectification level must be at least 1".into()));
    }
    let meta = TrainingMeta {
        seed: c.u64("seed")?,
        num_steps: c.u64("num_steps")?,
        batch_size: c.u64("batch_size")?,
        learning_rate: c.f64("learning_rate")?,
        beta1: c.f64("beta1")?,
        beta2: c.f64("beta2")?,
        epsilon: c.f64("epsilon")?,
        init_scale: c.f64("init_scale")?,
        integration_steps: c.u64("integration_steps")?,
        reflow_pairs: c.u64("reflow_pairs")?,
    };
    let count = c.u64("parameter count")?;
    if count != arch.num_parameters() as u64 {
        return Err(Error::Format(format!(
            "parameter count {count} does not match the architecture ({})",
            arch.num_parameters()
        )));
    }
    let mut params = NetworkParams::zeros(arch);
    for (i, p) in params.values_mut().enumerate() {
        *p = c.f64(&format!("parameter {i}"))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after parameters", bytes.len() - c.pos)));
    }
    Ok(FlowModel { params, rectification_level: level, training_meta: meta })
}

pub fn write<W: Write>(model: &FlowModel, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<FlowModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

/// Write to a sibling temporary file and rename it into place.
pub fn save(model: &FlowModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, to_bytes(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FlowModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> FlowModel {
        let params = NetworkParams::init(Architecture::velocity(2, 8, 2), 3, 1.0).unwrap();
        FlowModel { rectification_level: 2, ..FlowModel::from_params(params) }
    }

    #[test]
    fn header_length_matches_layout() {
        let m = small_model();
        assert_eq!(to_bytes(&m).len(), HEADER_LEN + 8 * m.params.arch().num_parameters());
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = small_model();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        assert!(m.params.values().zip(back.params.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruption_is_a_format_error() {
        let bytes = to_bytes(&small_model());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        let mut trailing = bytes.clone();
        trailing.push(0);
        let mut bad_count = bytes.clone();
        bad_count[108] ^= 1;
        for b in [bad_magic, trailing, bad_count, bytes[..bytes.len() - 3].to_vec(), bytes[..10].to_vec()] {
            assert!(matches!(from_bytes(&b), Err(Error::Format(_))));
        }
    }
}
