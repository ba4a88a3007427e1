//! Checkpoint format: magic `PCGM`, u32 format version, a JSON architecture
//! descriptor, then every named tensor as
//! `u32 name_len | name | u32 rank | u32 dims.. | f32 data (little endian)`.

use super::{Architecture, ModelParams};
use crate::error::{PcgError, Result};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PCGM";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let descriptor = serde_json::to_string(&params.arch)
        .map_err(|e| PcgError::Config(format!("architecture serialization: {e}")))?;
    bytes.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    bytes.extend_from_slice(descriptor.as_bytes());
    for tensor in params.tensors() {
        bytes.extend_from_slice(&(tensor.name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(tensor.name.as_bytes());
        let shape = tensor.view.shape();
        bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.view.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| PcgError::CorruptHeader("checkpoint truncated".into()))?;
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PcgError::CorruptHeader("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PcgError::UnsupportedFormat(format!(
            "checkpoint version {version}"
        )));
    }
    let desc_len = r.u32()? as usize;
    let descriptor = std::str::from_utf8(r.take(desc_len)?)
        .map_err(|_| PcgError::CorruptHeader("descriptor is not utf-8".into()))?;
    let arch: Architecture = serde_json::from_str(descriptor)
        .map_err(|e| PcgError::CorruptHeader(format!("architecture descriptor: {e}")))?;
    let mut params = ModelParams::zeros(&arch)?;

    let mut filled = std::collections::BTreeSet::new();
    while !r.done() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| PcgError::CorruptHeader("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let data = r.take(count * 4)?;
        let mut tensors = params.tensors_mut();
        let tensor = tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| PcgError::CorruptHeader(format!("unknown tensor '{name}'")))?;
        if tensor.view.shape() != dims.as_slice() {
            return Err(PcgError::ShapeMismatch(format!(
                "tensor '{name}': checkpoint {dims:?} vs model {:?}",
                tensor.view.shape()
            )));
        }
        for (i, v) in tensor.view.iter_mut().enumerate() {
            *v = f32::from_le_bytes(data[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        }
        filled.insert(name);
    }

    let expected: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
    for name in expected {
        if !filled.contains(&name) {
            return Err(PcgError::CorruptHeader(format!("tensor '{name}' missing")));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{INPUT_CHANNELS, NUM_CLASSES, PE_OMEGA};

    fn arch() -> Architecture {
        Architecture {
            input_channels: INPUT_CHANNELS,
            channels: 32,
            heads: 2,
            ffn_width: 32,
            dropout: 0.2,
            block1_count: 1,
            block2_count: 1,
            classes: NUM_CLASSES,
            pe_omega: PE_OMEGA,
        }
    }

    #[test]
    fn checkpoint_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcgm");
        let params = ModelParams::init(&arch(), 5).unwrap();
        save_checkpoint(&path, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.arch, params.arch);
        for (a, b) in params.tensors().iter().zip(loaded.tensors().iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.view.iter().zip(b.view.iter()) {
                assert_eq!(*x as f32, *y as f32);
                assert_eq!(*y, (*y as f32) as f64); // loaded values are exact f32
            }
        }
        // header starts with the magic
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"PCGM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pcgm");
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path).is_err());

        let good = dir.path().join("good.pcgm");
        let params = ModelParams::init(&arch(), 6).unwrap();
        save_checkpoint(&good, &params).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pcgm");
        let p2 = dir.path().join("b.pcgm");
        let params = ModelParams::init(&arch(), 7).unwrap();
        save_checkpoint(&p1, &params).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
