use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;
use crate::binio::{self, Reader};

pub const FEATURE_MAGIC: [u8; 4] = *b"DBF1";
/// Magic plus three u32 dimensions.
pub const HEADER_LEN: usize = 16;

/// An `H×W×C` activation tensor, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, FormatError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(FormatError::InvalidDims("every dimension must be positive"));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(FormatError::InvalidDims("element count overflows"))?;
        if len != data.len() {
            return Err(FormatError::PayloadMismatch {
                expected: 4 * len as u64,
                actual: 4 * data.len() as u64,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel vector at spatial cell `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// One `C`-dimensional local feature per spatial cell, in row-major
    /// cell order.
    pub fn flatten(&self) -> FeatureVectorSet {
        FeatureVectorSet {
            dim: self.channels,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// `N` local feature vectors of dimension `C`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVectorSet {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureVectorSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::InvalidDims("vector dimension must be positive"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(FormatError::InvalidDims("data length must be a positive multiple of dim"));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, FormatError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(FormatError::InvalidDims("rows differ in length"));
        }
        Self::new(dim, rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect())
    }

    /// Concatenates several sets of equal dimension (pooling over images).
    pub fn concat<'a, I>(sets: I) -> Result<Self, FormatError>
    where
        I: IntoIterator<Item = &'a FeatureVectorSet>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        for s in sets {
            match dim {
                None => dim = Some(s.dim),
                Some(d) if d != s.dim => return Err(FormatError::InvalidDims("pooled sets differ in dimension")),
                _ => {}
            }
            data.extend_from_slice(&s.data);
        }
        Self::new(dim.unwrap_or(0), data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn write_feature_map<W: Write>(fm: &FeatureMap, w: &mut W) -> Result<(), FormatError> {
    let dims = [
        binio::to_u32(fm.height, "height")?,
        binio::to_u32(fm.width, "width")?,
        binio::to_u32(fm.channels, "channels")?,
    ];
    binio::write_header(w, &FEATURE_MAGIC, &dims)?;
    binio::write_f32s(w, fm.data.iter().copied())?;
    Ok(())
}

pub fn read_feature_map<R: Read>(r: &mut R) -> Result<FeatureMap, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<FeatureMap, FormatError> {
    let mut reader = Reader::new(bytes);
    let [h, w, c] = reader.header::<3>(&FEATURE_MAGIC)?;
    if h == 0 || w == 0 || c == 0 {
        return Err(FormatError::InvalidDims("every dimension must be positive"));
    }
    let count = u64::from(h) * u64::from(w) * u64::from(c);
    reader.expect_payload(count)?;
    let count = usize::try_from(count).map_err(|_| FormatError::InvalidDims("element count overflows"))?;
    let data = reader.f32s(count, 0)?;
    FeatureMap::new(h as usize, w as usize, c as usize, data)
}

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_feature_map(fm, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap, FormatError> {
    decode(&fs::read(path)?)
}
