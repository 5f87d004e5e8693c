//! Self-describing binary checkpoints. Layout (little-endian): magic
//! `GRCK`, `u32` version, `u64` base seed, `u64` completed steps,
//! `u32` tensor count, per tensor a `u16` name length + UTF-8 name,
//! `u8` dimension count and `u64` dims, then per tensor its values as
//! raw `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::Cursor;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const FORMAT: &str = "GRCK";

/// Model parameters frozen at a point in training, with the seeds
/// needed to replay the data order from that point.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub base_seed: u64,
    /// Optimizer steps completed when the snapshot was taken.
    pub step: u64,
    pub tensors: Vec<LayerSpec>,
    pub values: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.tensors.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensor specs but {} value blocks",
                self.tensors.len(),
                self.values.len()
            )));
        }
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.base_seed.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::InvalidParameter("too many tensors for checkpoint".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for spec in &self.tensors {
            let name = spec.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| {
                Error::InvalidParameter(format!("tensor name too long: {}", spec.name))
            })?;
            let ndims = u8::try_from(spec.shape.len()).map_err(|_| {
                Error::InvalidParameter(format!("tensor rank too high: {}", spec.name))
            })?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[ndims])?;
            for &dim in &spec.shape {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
        }
        for (spec, values) in self.tensors.iter().zip(&self.values) {
            if values.len() != spec.element_count() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} expects {} values, got {}",
                    spec.name,
                    spec.element_count(),
                    values.len()
                )));
            }
            let mut bytes = Vec::with_capacity(values.len() * 4);
            for &v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut r = Cursor::new(reader, FORMAT);
        let magic: [u8; 4] = r.take_array("magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.malformed(0, format!("bad magic {magic:02x?}")));
        }
        let version_offset = r.offset();
        let version = u32::from_le_bytes(r.take_array("version")?);
        if version != CHECKPOINT_VERSION {
            return Err(r.malformed(version_offset, format!("unsupported version {version}")));
        }
        let base_seed = u64::from_le_bytes(r.take_array("base seed")?);
        let step = u64::from_le_bytes(r.take_array("step")?);
        let count = u32::from_le_bytes(r.take_array("tensor count")?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for index in 0..count {
            let name_len = u16::from_le_bytes(r.take_array("name length")?) as usize;
            let name_offset = r.offset();
            let name_bytes = r.take_vec(name_len, "tensor name")?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| r.malformed(name_offset, format!("tensor {index} name is not UTF-8")))?;
            let ndims = r.take_array::<1>("dimension count")?[0] as usize;
            let shape_offset = r.offset();
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(u64::from_le_bytes(r.take_array("dimension")?) as usize);
            }
            let spec = LayerSpec::new(index, name, shape)
                .map_err(|e| r.malformed(shape_offset, e.to_string()))?;
            tensors.push(spec);
        }
        let mut values = Vec::with_capacity(tensors.len());
        for spec in &tensors {
            values.push(r.take_f32_values(spec.element_count(), "tensor values")?);
        }
        Ok(Self {
            base_seed,
            step,
            tensors,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            base_seed: 17,
            step: 250,
            tensors: vec![
                LayerSpec::new(0, "fc0.weight", vec![2, 3]).unwrap(),
                LayerSpec::new(1, "fc0.bias", vec![2]).unwrap(),
            ],
            values: vec![vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25], vec![0.125, 8.0]],
        }
    }

    #[test]
    fn golden_header_bytes() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"GRCK");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &17u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &250u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &2u32.to_le_bytes());
        assert_eq!(&bytes[28..30], &10u16.to_le_bytes());
        assert_eq!(&bytes[30..41], b"fc0.weight\x02");
        let tail = bytes.len() - 8 * 4;
        assert_eq!(&bytes[tail..tail + 4], &0.5f32.to_le_bytes());
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        assert_eq!(Checkpoint::read_from(bytes.as_slice()).unwrap(), ckpt);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.grck");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 1);
        match Checkpoint::read_from(bytes.as_slice()) {
            Err(Error::MalformedFile { format, offset, .. }) => {
                assert_eq!(format, "GRCK");
                assert!(offset > 0);
            }
            other => panic!("expected malformed-file error, got {other:?}"),
        }
    }

    #[test]
    fn value_count_mismatch_is_rejected_on_write() {
        let mut ckpt = sample();
        ckpt.values[1].pop();
        assert!(ckpt.write_to(Vec::new()).is_err());
    }
}
