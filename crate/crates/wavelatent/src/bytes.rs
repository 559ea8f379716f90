//! Little-endian field access with byte offsets in every error.

use std::io::Cursor;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self {
            cur: Cursor::new(buf),
        }
    }

    pub fn offset(&self) -> u64 {
        self.cur.position()
    }

    fn truncated(&self, what: &str) -> Error {
        Error::format(self.offset(), format!("truncated while reading {what}"))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let mut got = [0u8; 4];
        for b in &mut got {
            *b = self.cur.read_u8().map_err(|_| self.truncated("magic"))?;
        }
        if &got != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.truncated(what))
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        self.cur.read_u16::<LE>().map_err(|_| self.truncated(what))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        self.cur.read_u32::<LE>().map_err(|_| self.truncated(what))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|_| self.truncated(what))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|_| self.truncated(what))
    }

    /// A u64 count that must fit in the remaining payload at `unit` bytes
    /// per item.
    pub fn len(&mut self, what: &str, unit: u64) -> Result<usize> {
        let at = self.offset();
        let n = self.u64(what)?;
        let left = self.cur.get_ref().len() as u64 - self.offset();
        if n.saturating_mul(unit) > left {
            return Err(Error::format(
                at,
                format!("{what} {n} exceeds the remaining {left} bytes"),
            ));
        }
        Ok(n as usize)
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let left = self.cur.get_ref().len() as u64 - self.offset();
        if (n as u64).saturating_mul(8) > left {
            return Err(self.truncated(what));
        }
        let mut out = vec![0.0; n];
        self.cur
            .read_f64_into::<LE>(&mut out)
            .map_err(|_| self.truncated(what))?;
        Ok(out)
    }

    pub fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        (0..n).map(|_| self.u32(what)).collect()
    }

    pub fn finish(&self) -> Result<()> {
        let len = self.cur.get_ref().len() as u64;
        if self.offset() != len {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", len - self.offset()),
            ));
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

// writes into a Vec cannot fail
impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.write_u16::<LE>(v).unwrap();
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LE>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).unwrap();
    }

    pub fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).unwrap();
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}
