//! Little-endian helpers shared by the `.dbf`, codebook and model formats.

use std::io::{self, Write};

use crate::tensorio::FormatError;

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], dims: &[u32]) -> io::Result<()> {
    w.write_all(magic)?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_f32s<W: Write, I: IntoIterator<Item = f32>>(w: &mut W, values: I) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn to_u32(v: usize, what: &'static str) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("{what} exceeds u32")))
}

/// Cursor over an in-memory file image.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Checks the magic and reads `N` u32 dimensions.
    pub(crate) fn header<const N: usize>(&mut self, magic: &[u8; 4]) -> Result<[u32; N], FormatError> {
        let header_len = 4 + 4 * N;
        if self.bytes.len() >= 4 && &self.bytes[..4] != magic {
            let mut found = [0u8; 4];
            found.copy_from_slice(&self.bytes[..4]);
            return Err(FormatError::BadMagic { expected: *magic, found });
        }
        if self.bytes.len() < header_len {
            return Err(FormatError::Truncated {
                expected: header_len as u64,
                actual: self.bytes.len() as u64,
            });
        }
        self.pos = 4;
        let mut dims = [0u32; N];
        for d in dims.iter_mut() {
            *d = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
            self.pos += 4;
        }
        Ok(dims)
    }

    /// Verifies that exactly `count` f32 values remain.
    pub(crate) fn expect_payload(&self, count: u64) -> Result<(), FormatError> {
        let expected = count
            .checked_mul(4)
            .and_then(|b| b.checked_add(self.pos as u64))
            .ok_or(FormatError::InvalidDims("payload size overflows"))?;
        let actual = self.bytes.len() as u64;
        if actual < expected {
            Err(FormatError::Truncated { expected, actual })
        } else if actual > expected {
            Err(FormatError::PayloadMismatch { expected, actual })
        } else {
            Ok(())
        }
    }

    /// Reads `count` finite f32 values; `offset` is added to the index
    /// reported on a non-finite value.
    pub(crate) fn f32s(&mut self, count: usize, offset: usize) -> Result<Vec<f32>, FormatError> {
        let end = self.pos + 4 * count;
        let out: Vec<f32> = self.bytes[self.pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index: offset + i });
        }
        self.pos = end;
        Ok(out)
    }
}
