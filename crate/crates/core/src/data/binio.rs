//! Little-endian section containers shared by the scene and checkpoint
//! formats: 4 magic bytes, a `u16` version, then `u64`-length-prefixed
//! sections in a fixed order.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.f64(v);
        }
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn section(&mut self, payload: Writer) -> &mut Self {
        self.u64(payload.buf.len() as u64);
        self.buf.extend_from_slice(&payload.buf);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self {
            buf,
            pos: 0,
            base: 0,
        }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.offset(),
                reason: format!("truncated: need {n} bytes, {} left", self.remaining()),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    /// Reads the magic and version header.
    pub fn header(&mut self, container: &'static str, magic: &[u8; 4], version: u16) -> Result<()> {
        let found: [u8; 4] = self.bytes()?;
        if &found != magic {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {found:?}, expected {container}"),
            });
        }
        let v = self.u16()?;
        if v != version {
            return Err(Error::UnsupportedVersion {
                container,
                found: v,
                expected: version,
            });
        }
        Ok(())
    }

    /// Splits off the next length-prefixed section.
    pub fn section(&mut self, container: &'static str, name: &'static str) -> Result<Reader<'a>> {
        let len = self.u64()?;
        if len as usize > self.remaining() || len > usize::MAX as u64 {
            return Err(Error::Corruption {
                container,
                section: name,
                reason: format!("declared {len} bytes, {} available", self.remaining()),
            });
        }
        let base = self.offset();
        let payload = self.take(len as usize)?;
        Ok(Reader {
            buf: payload,
            pos: 0,
            base,
        })
    }

    /// Fails unless every byte of a section was consumed.
    pub fn finish(&self, container: &'static str, name: &'static str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corruption {
                container,
                section: name,
                reason: format!("{} trailing bytes", self.remaining()),
            });
        }
        Ok(())
    }

    /// Wraps a truncation inside a section as a corruption of that section.
    pub fn in_section<T>(container: &'static str, name: &'static str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Format { reason, offset } => Error::Corruption {
                container,
                section: name,
                reason: format!("{reason} at byte {offset}"),
            },
            other => other,
        })
    }
}
