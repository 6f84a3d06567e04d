//! Bag-of-features quantization layer.
//!
//! Two sub-layers turn the `N` local features of one image into a `K`-bin
//! histogram:
//!
//! * **RBF layer**: `φ_j(x) = exp(-‖x − c_j‖₂ / σ_j)` for each codeword
//!   `c_j` with width `σ_j`, normalized over `j` so every local feature
//!   distributes unit mass across the codebook.
//! * **Quantization layer**: `h_k = (1/N) Σ_i φ̂_k(v_i)`, the mean of the
//!   normalized memberships, so `Σ_k h_k = 1` regardless of `N`.
//!
//! Both steps are differentiable; [`quantize_backward`] returns gradients
//! with respect to centers, widths and inputs so the codebook can be trained
//! jointly with the classifier.

mod kmeans;

pub use kmeans::{farthest_point_seeds, init_codebook, kmeans, KMeansConfig, KMeansResult};

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::binio::{self, Reader};
use crate::tensorio::{FeatureVectorSet, FormatError};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"DBC1";

#[derive(Debug, Error)]
pub enum BofError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot fit {k} codewords to {available} feature vectors")]
    TooFewVectors { k: usize, available: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// `K` RBF centers of dimension `C` with one positive width each.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, centers: Vec<f64>, widths: Vec<f64>) -> Result<Self, BofError> {
        if dim == 0 || widths.is_empty() {
            return Err(BofError::InvalidCodebook("K and C must be positive".into()));
        }
        if centers.len() != widths.len() * dim {
            return Err(BofError::InvalidCodebook(format!(
                "{} center values for K={} C={dim}",
                centers.len(),
                widths.len()
            )));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(BofError::InvalidCodebook("non-finite center".into()));
        }
        if widths.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(BofError::InvalidCodebook("widths must be finite and positive".into()));
        }
        Ok(Self { dim, centers, widths })
    }

    pub fn k(&self) -> usize {
        self.widths.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Applies a gradient step, clamping widths at `min_width`.
    pub fn apply_step(&mut self, grads: &BofGradients, lr: f64, min_width: f64) {
        for (c, g) in self.centers.iter_mut().zip(&grads.d_centers) {
            *c -= lr * g;
        }
        for (s, g) in self.widths.iter_mut().zip(&grads.d_widths) {
            *s = (*s - lr * g).max(min_width);
        }
    }

    fn check_dim(&self, found: usize) -> Result<(), BofError> {
        if found != self.dim {
            return Err(BofError::DimensionMismatch { expected: self.dim, found });
        }
        Ok(())
    }
}

/// Normalized `K`-bin histogram of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram(Vec<f64>);

impl Histogram {
    /// Validates non-negative bins summing to one within `1e-6`.
    pub fn new(bins: Vec<f64>) -> Option<Self> {
        let ok = !bins.is_empty()
            && bins.iter().all(|&b| b.is_finite() && b >= 0.0)
            && (bins.iter().sum::<f64>() - 1.0).abs() <= 1e-6;
        ok.then_some(Self(bins))
    }

    pub fn bins(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Histogram {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Gradients of a scalar loss through [`quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct BofGradients {
    /// `K×C`, row-major.
    pub d_centers: Vec<f64>,
    pub d_widths: Vec<f64>,
    /// `N×C`, row-major.
    pub d_inputs: Vec<f64>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Normalizes raw similarities in place; falls back to uniform `1/K` when
/// every raw value underflowed to zero.
fn normalize(raw: &mut [f64]) {
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        raw.iter_mut().for_each(|r| *r /= sum);
    } else {
        let u = 1.0 / raw.len() as f64;
        raw.iter_mut().for_each(|r| *r = u);
    }
}

/// Normalized memberships given the distances `‖x − c_j‖` and widths.
pub fn memberships_from_distances(distances: &[f64], widths: &[f64]) -> Vec<f64> {
    let mut raw: Vec<f64> = distances.iter().zip(widths).map(|(d, s)| (-d / s).exp()).collect();
    normalize(&mut raw);
    raw
}

/// Unnormalized RBF responses `exp(-‖x − c_j‖ / σ_j)`.
pub fn rbf_raw(x: &[f64], cb: &Codebook) -> Result<Vec<f64>, BofError> {
    cb.check_dim(x.len())?;
    Ok((0..cb.k())
        .map(|j| (-euclidean(x, cb.center(j)) / cb.widths[j]).exp())
        .collect())
}

/// Soft assignment of one local feature to the codebook; sums to one.
pub fn rbf_membership(x: &[f64], cb: &Codebook) -> Result<Vec<f64>, BofError> {
    let mut m = rbf_raw(x, cb)?;
    normalize(&mut m);
    Ok(m)
}

/// Pools normalized memberships of every local feature into a histogram.
///
/// Each bin is reduced over the feature vectors in sorted order, so the
/// result is bit-identical under any permutation of the input set.
pub fn quantize(fvs: &FeatureVectorSet, cb: &Codebook) -> Result<Histogram, BofError> {
    cb.check_dim(fvs.dim())?;
    let n = fvs.len();
    let k = cb.k();
    // column-major so each bin's contributions are contiguous
    let mut per_bin = vec![0.0; n * k];
    for (i, v) in fvs.iter().enumerate() {
        let m = rbf_membership(v, cb)?;
        for (j, mj) in m.into_iter().enumerate() {
            per_bin[j * n + i] = mj;
        }
    }
    let bins = per_bin
        .chunks_exact_mut(n)
        .map(|col| {
            col.sort_unstable_by(f64::total_cmp);
            col.iter().sum::<f64>() / n as f64
        })
        .collect();
    Ok(Histogram(bins))
}

/// Quantizes many images in parallel; output order matches input order.
pub fn quantize_all<S>(sets: &[S], cb: &Codebook) -> Result<Vec<Histogram>, BofError>
where
    S: AsRef<FeatureVectorSet> + Sync,
{
    sets.par_iter().map(|s| quantize(s.as_ref(), cb)).collect()
}

impl AsRef<FeatureVectorSet> for FeatureVectorSet {
    fn as_ref(&self) -> &FeatureVectorSet {
        self
    }
}

/// Backpropagates `upstream = ∂L/∂h` through [`quantize`].
///
/// The Euclidean norm is not differentiable where `x = c_j`; the zero
/// subgradient is used there.
pub fn quantize_backward(
    fvs: &FeatureVectorSet,
    cb: &Codebook,
    upstream: &[f64],
) -> Result<BofGradients, BofError> {
    cb.check_dim(fvs.dim())?;
    if upstream.len() != cb.k() {
        return Err(BofError::DimensionMismatch { expected: cb.k(), found: upstream.len() });
    }
    let n = fvs.len();
    let k = cb.k();
    let c = cb.dim();
    let inv_n = 1.0 / n as f64;
    let mut grads = BofGradients {
        d_centers: vec![0.0; k * c],
        d_widths: vec![0.0; k],
        d_inputs: vec![0.0; n * c],
    };
    let mut dist = vec![0.0; k];
    let mut raw = vec![0.0; k];
    for (i, v) in fvs.iter().enumerate() {
        for j in 0..k {
            dist[j] = euclidean(v, cb.center(j));
            raw[j] = (-dist[j] / cb.widths[j]).exp();
        }
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            // uniform fallback is constant in every parameter
            continue;
        }
        let m: Vec<f64> = raw.iter().map(|r| r / sum).collect();
        let g_bar: f64 = m.iter().zip(upstream).map(|(mj, gj)| mj * gj).sum();
        let d_in = &mut grads.d_inputs[i * c..(i + 1) * c];
        for j in 0..k {
            // ∂L/∂d_ij
            let coeff = m[j] * inv_n * (upstream[j] - g_bar) / cb.widths[j];
            let dl_dd = -coeff;
            grads.d_widths[j] += coeff * dist[j] / cb.widths[j];
            if dist[j] == 0.0 || dl_dd == 0.0 {
                continue;
            }
            let scale = dl_dd / dist[j];
            let cj = cb.center(j);
            let d_cj = &mut grads.d_centers[j * c..(j + 1) * c];
            for t in 0..c {
                let diff = v[t] - cj[t];
                d_in[t] += scale * diff;
                d_cj[t] -= scale * diff;
            }
        }
    }
    Ok(grads)
}

pub fn write_codebook<W: Write>(cb: &Codebook, w: &mut W) -> Result<(), FormatError> {
    binio::write_header(w, &CODEBOOK_MAGIC, &[binio::to_u32(cb.k(), "K")?, binio::to_u32(cb.dim, "C")?])?;
    binio::write_f32s(w, cb.centers.iter().map(|&v| v as f32))?;
    binio::write_f32s(w, cb.widths.iter().map(|&v| v as f32))?;
    Ok(())
}

/// Reads a `DBC1` codebook. Values are stored as f32.
pub fn read_codebook<R: Read>(r: &mut R) -> Result<Codebook, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut reader = Reader::new(&bytes);
    let [k, c] = reader.header::<2>(&CODEBOOK_MAGIC)?;
    if k == 0 || c == 0 {
        return Err(FormatError::InvalidDims("K and C must be positive"));
    }
    let (k, c) = (k as usize, c as usize);
    reader.expect_payload((k as u64) * (c as u64) + k as u64)?;
    let centers = reader.f32s(k * c, 0)?;
    let widths = reader.f32s(k, k * c)?;
    Codebook::new(
        c,
        centers.into_iter().map(f64::from).collect(),
        widths.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| FormatError::InvalidValue(e.to_string()))
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_codebook(cb, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook, FormatError> {
    read_codebook(&mut fs::File::open(path)?)
}
