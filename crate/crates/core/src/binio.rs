//! Offset-tracking byte reader shared by the binary file formats, so
//! malformed-file errors can report where parsing stopped.

use std::io::{ErrorKind, Read};

use crate::error::{Error, Result};

pub(crate) struct Cursor<R> {
    inner: R,
    format: &'static str,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    pub(crate) fn new(inner: R, format: &'static str) -> Self {
        Self {
            inner,
            format,
            offset: 0,
        }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn malformed(&self, offset: u64, reason: String) -> Error {
        Error::MalformedFile {
            format: self.format,
            offset,
            reason,
        }
    }

    fn truncated(&self, what: &str) -> Error {
        self.malformed(self.offset, format!("truncated while reading {what}"))
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => return Err(self.truncated(what)),
                Ok(n) => {
                    read += n;
                    self.offset += n as u64;
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    pub(crate) fn take_array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    /// Like `take_array`, but a clean end-of-stream at the first byte
    /// returns `Ok(false)` instead of an error.
    pub(crate) fn take_array_or_eof(&mut self, buf: &mut [u8], what: &str) -> Result<bool> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) if read == 0 => return Ok(false),
                Ok(0) => return Err(self.truncated(what)),
                Ok(n) => {
                    read += n;
                    self.offset += n as u64;
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(true)
    }

    pub(crate) fn take_vec(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub(crate) fn take_f32_values(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take_vec(n * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}
