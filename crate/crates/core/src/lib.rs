//! # deepbof
//!
//! Identity recognition from masked faces using only the upper (unoccluded)
//! half of an aligned face.
//!
//! The pipeline has four stages:
//!
//! 1. [`imageprep`]: level the eyes with an in-plane rotation, normalize to
//!    240×240, split into a 10×10 grid of 24×24 blocks and keep blocks 1–50.
//! 2. Feature extraction with a pre-trained CNN happens out of process. Its
//!    last-convolutional-layer maps arrive as `.dbf` files, read by
//!    [`tensorio`].
//! 3. [`bofquant`]: each H×W×C map becomes H·W local vectors that are softly
//!    assigned to K RBF codewords and pooled into a K-bin histogram.
//! 4. [`mlpclassify`]: a one-hidden-layer perceptron maps histograms to
//!    identities.
//!
//! [`evalharness`] runs stratified k-fold cross-validation over codebook-size
//! sweeps, and [`synth`] generates labelled feature maps for benchmarks and
//! tests when no real extractor output is available.

pub mod bofquant;
pub mod evalharness;
pub mod finetune;
pub mod imageprep;
pub mod mlpclassify;
pub mod seed;
pub mod synth;
pub mod tensorio;

mod binio;

pub use bofquant::{BofError, BofGradients, Codebook, Histogram};
pub use evalharness::{EvalError, EvalReport, FoldAssignment};
pub use imageprep::{EyeLandmarks, FaceImage, ImageError};
pub use mlpclassify::{MlpError, MlpModel, TrainConfig};
pub use tensorio::{DatasetManifest, FeatureMap, FeatureVectorSet, FormatError, ManifestRecord};
