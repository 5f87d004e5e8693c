//! Binary I/O for recorded gradient traces.
//!
//! A trace captures, per replanning window, the per-layer accumulated
//! gradient sums of a training run so that planning can be re-run
//! offline on the exact same inputs. Layout (all little-endian):
//! magic `GRT1`, `u32` version, `u32` layer count, then per layer a
//! `u16` name length, the UTF-8 name, a `u8` dimension count and that
//! many `u64` dims; the remainder is a sequence of windows, each a
//! `u64` window id, `u32` step count, and per layer `element_count`
//! raw `f32` values. Values round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::Cursor;
use crate::error::{Error, Result};
use crate::error_tables::GradientAccumulator;
use crate::layer::LayerSpec;

pub const TRACE_MAGIC: [u8; 4] = *b"GRT1";
pub const TRACE_VERSION: u32 = 1;

const FORMAT: &str = "GRT1";

/// One replanning window's worth of accumulated gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceWindow {
    pub window_id: u64,
    pub step_count: u32,
    /// Per-layer element sums, in layer order.
    pub sums: Vec<Vec<f32>>,
}

/// A sequence of gradient windows for a fixed layer set.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTrace {
    layers: Vec<LayerSpec>,
    windows: Vec<TraceWindow>,
}

impl GradientTrace {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self {
            layers,
            windows: Vec::new(),
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn windows(&self) -> &[TraceWindow] {
        &self.windows
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Appends the accumulator's current window.
    pub fn push_window(&mut self, acc: &GradientAccumulator) -> Result<()> {
        crate::layer::check_gradient_shapes(&self.layers, acc.sums())?;
        self.windows.push(TraceWindow {
            window_id: acc.window_id(),
            step_count: acc.step_count(),
            sums: acc.sums().to_vec(),
        });
        Ok(())
    }

    /// Rebuilds the accumulator state recorded for one window.
    pub fn accumulator_for(&self, window: usize) -> Result<GradientAccumulator> {
        let w = self.windows.get(window).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "trace has {} windows, requested index {window}",
                self.windows.len()
            ))
        })?;
        Ok(GradientAccumulator::from_sums(
            w.sums.clone(),
            w.step_count,
            w.window_id,
        ))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        let layer_count = u32::try_from(self.layers.len())
            .map_err(|_| Error::InvalidParameter("too many layers for trace".into()))?;
        w.write_all(&layer_count.to_le_bytes())?;
        for layer in &self.layers {
            let name = layer.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| {
                Error::InvalidParameter(format!("layer name too long: {}", layer.name))
            })?;
            let ndims = u8::try_from(layer.shape.len()).map_err(|_| {
                Error::InvalidParameter(format!("layer rank too high: {}", layer.name))
            })?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[ndims])?;
            for &dim in &layer.shape {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
        }
        for window in &self.windows {
            crate::layer::check_gradient_shapes(&self.layers, &window.sums)?;
            w.write_all(&window.window_id.to_le_bytes())?;
            w.write_all(&window.step_count.to_le_bytes())?;
            for layer_sums in &window.sums {
                let mut bytes = Vec::with_capacity(layer_sums.len() * 4);
                for &v in layer_sums {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&bytes)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut r = Cursor::new(reader, FORMAT);
        let magic: [u8; 4] = r.take_array("magic")?;
        if magic != TRACE_MAGIC {
            return Err(r.malformed(0, format!("bad magic {magic:02x?}")));
        }
        let version_offset = r.offset();
        let version = u32::from_le_bytes(r.take_array("version")?);
        if version != TRACE_VERSION {
            return Err(r.malformed(version_offset, format!("unsupported version {version}")));
        }
        let layer_count = u32::from_le_bytes(r.take_array("layer count")?) as usize;
        let mut layers = Vec::with_capacity(layer_count.min(1 << 16));
        for index in 0..layer_count {
            let name_len = u16::from_le_bytes(r.take_array("name length")?) as usize;
            let name_offset = r.offset();
            let name_bytes = r.take_vec(name_len, "layer name")?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| r.malformed(name_offset, format!("layer {index} name is not UTF-8")))?;
            let ndims = r.take_array::<1>("dimension count")?[0] as usize;
            let shape_offset = r.offset();
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(u64::from_le_bytes(r.take_array("dimension")?) as usize);
            }
            let layer = LayerSpec::new(index, name, shape)
                .map_err(|e| r.malformed(shape_offset, e.to_string()))?;
            layers.push(layer);
        }
        let mut windows = Vec::new();
        loop {
            let mut id_bytes = [0u8; 8];
            if !r.take_array_or_eof(&mut id_bytes, "window id")? {
                break;
            }
            let window_id = u64::from_le_bytes(id_bytes);
            let step_count = u32::from_le_bytes(r.take_array("step count")?);
            let mut sums = Vec::with_capacity(layers.len());
            for layer in &layers {
                sums.push(r.take_f32_values(layer.element_count(), "gradient values")?);
            }
            windows.push(TraceWindow {
                window_id,
                step_count,
                sums,
            });
        }
        Ok(Self { layers, windows })
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

    fn two_layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(0, "a", vec![2]).unwrap(),
            LayerSpec::new(1, "b", vec![1, 2]).unwrap(),
        ]
    }

    fn sample_trace() -> GradientTrace {
        let mut trace = GradientTrace::new(two_layers());
        let acc = GradientAccumulator::from_sums(vec![vec![1.0, 2.0], vec![0.5, -1.0]], 3, 0);
        trace.push_window(&acc).unwrap();
        trace
    }

    #[test]
    fn golden_bytes() {
        let mut bytes = Vec::new();
        sample_trace().write_to(&mut bytes).unwrap();

        let mut expected: Vec<u8> = Vec::new();
        expected.extend_from_slice(b"GRT1");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(b"a");
        expected.push(1);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(b"b");
        expected.push(2);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&0u64.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        for v in [1.0f32, 2.0, 0.5, -1.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut trace = GradientTrace::new(two_layers());
        for w in 0..3u64 {
            let base = w as f32;
            let acc = GradientAccumulator::from_sums(
                vec![
                    vec![base + 0.125, -base * 3.5],
                    vec![f32::MIN_POSITIVE, base.exp()],
                ],
                10 * (w as u32 + 1),
                w,
            );
            trace.push_window(&acc).unwrap();
        }
        let mut bytes = Vec::new();
        trace.write_to(&mut bytes).unwrap();
        let back = GradientTrace::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.grt");
        let trace = sample_trace();
        trace.save(&path).unwrap();
        assert_eq!(GradientTrace::load(&path).unwrap(), trace);
    }

    #[test]
    fn accumulator_round_trip() {
        let trace = sample_trace();
        let acc = trace.accumulator_for(0).unwrap();
        assert_eq!(acc.sums(), trace.windows()[0].sums.as_slice());
        assert_eq!(acc.step_count(), 3);
        assert!(trace.accumulator_for(1).is_err());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = Vec::new();
        sample_trace().write_to(&mut bytes).unwrap();
        bytes[0] = b'X';
        match GradientTrace::read_from(bytes.as_slice()) {
            Err(Error::MalformedFile { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected malformed-file error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_reports_offset() {
        let mut bytes = Vec::new();
        sample_trace().write_to(&mut bytes).unwrap();
        bytes[4] = 9;
        match GradientTrace::read_from(bytes.as_slice()) {
            Err(Error::MalformedFile { offset, reason, .. }) => {
                assert_eq!(offset, 4);
                assert!(reason.contains("version"));
            }
            other => panic!("expected malformed-file error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_mid_window_reports_offset() {
        let mut bytes = Vec::new();
        sample_trace().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        match GradientTrace::read_from(bytes.as_slice()) {
            Err(Error::MalformedFile { offset, reason, .. }) => {
                assert!(reason.contains("truncated"), "{reason}");
                assert!(offset > 0);
            }
            other => panic!("expected malformed-file error, got {other:?}"),
        }
    }

    #[test]
    fn non_utf8_name_is_rejected() {
        let mut bytes = Vec::new();
        sample_trace().write_to(&mut bytes).unwrap();
        bytes[14] = 0xFF;
        match GradientTrace::read_from(bytes.as_slice()) {
            Err(Error::MalformedFile { reason, .. }) => assert!(reason.contains("UTF-8")),
            other => panic!("expected malformed-file error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_is_truncation() {
        let mut bytes = Vec::new();
        sample_trace().write_to(&mut bytes).unwrap();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(GradientTrace::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn push_window_checks_shapes() {
        let mut trace = GradientTrace::new(two_layers());
        let acc = GradientAccumulator::from_sums(vec![vec![1.0], vec![0.5, -1.0]], 1, 0);
        assert!(trace.push_window(&acc).is_err());
    }
}
