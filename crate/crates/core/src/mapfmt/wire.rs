//! Little-endian fixed-width and LEB128 primitives.

use super::FormatError;

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn uv(&mut self, v: u64) {
        leb128::write::unsigned(&mut self.buf, v).expect("vec write");
    }

    pub fn sv(&mut self, v: i64) {
        leb128::write::signed(&mut self.buf, v).expect("vec write");
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.uv(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
}

pub struct Reader<'a> {
    pub rest: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(rest: &'a [u8]) -> Self {
        Reader { rest }
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.rest.len() < n {
            return Err(FormatError::Truncated);
        }
        let (a, b) = self.rest.split_at(n);
        self.rest = b;
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn uv(&mut self) -> Result<u64, FormatError> {
        leb128::read::unsigned(&mut self.rest).map_err(leb_err)
    }

    pub fn sv(&mut self) -> Result<i64, FormatError> {
        leb128::read::signed(&mut self.rest).map_err(leb_err)
    }

    pub fn uv32(&mut self) -> Result<u32, FormatError> {
        let v = self.uv()?;
        u32::try_from(v).map_err(|_| FormatError::Malformed(format!("value {v} exceeds 32 bits")))
    }

    pub fn sv32(&mut self) -> Result<i32, FormatError> {
        let v = self.sv()?;
        i32::try_from(v).map_err(|_| FormatError::Malformed(format!("value {v} exceeds 32 bits")))
    }

    /// A length prefix, bounded by the bytes left so corrupt counts cannot
    /// trigger huge allocations.
    pub fn count(&mut self) -> Result<usize, FormatError> {
        let n = self.uv()?;
        if n > self.rest.len() as u64 {
            return Err(FormatError::Truncated);
        }
        Ok(n as usize)
    }

    pub fn bool(&mut self) -> Result<bool, FormatError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(FormatError::Malformed(format!("bad bool byte {b}"))),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.count()?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| FormatError::Malformed("invalid utf-8".into()))
    }
}

fn leb_err(e: leb128::read::Error) -> FormatError {
    match e {
        leb128::read::Error::IoError(_) => FormatError::Truncated,
        leb128::read::Error::Overflow => FormatError::Malformed("varint overflow".into()),
    }
}
