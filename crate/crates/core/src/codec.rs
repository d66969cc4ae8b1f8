//! Little-endian framing shared by the checkpoint formats.

use crate::diff::DiffValue;
use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) {
        self.buf.extend((v as u32).to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend(v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend(v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn tensor(&mut self, name: &str, t: &DiffValue) {
        self.str(name);
        self.u32(t.shape().len());
        for &d in t.shape() {
            self.u32(d);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 string".into()))
    }

    /// Reads a tensor and checks its name.
    pub fn tensor(&mut self, expected: &str, requires_grad: bool) -> Result<DiffValue> {
        let name = self.str()?;
        if name != expected {
            return Err(Error::Checkpoint(format!("expected tensor {expected}, found {name}")));
        }
        let ndim = self.u32()?;
        if ndim > 4 {
            return Err(Error::Checkpoint(format!("tensor {name} has {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n * 8 > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("tensor {name} is truncated")));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        DiffValue::new(shape, data, requires_grad).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))
    }
}

pub(crate) fn check_header(r: &mut Reader<'_>, version: u8, magic: &[u8; 4]) -> Result<()> {
    let v = r.u8()?;
    let m = r.take(4)?;
    if m != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(magic)
        )));
    }
    if v != version {
        return Err(Error::Checkpoint(format!("unsupported format version {v}")));
    }
    Ok(())
}
