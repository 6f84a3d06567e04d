//! Stratified k-fold cross-validation over codebook-size sweeps.
//!
//! For every fold the codebook, the masked/unmasked oversampling and the
//! classifier see only that fold's training indices; the held-out fold is
//! touched only for scoring. Results are rendered as an accuracy table with
//! one column per codebook size, a JSON-lines record stream, and a separate
//! timing table (kept apart so that the first two are reproducible
//! byte-for-byte).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bofquant::{init_codebook, quantize, BofError, Codebook, Histogram};
use crate::mlpclassify::{train_with_classes, MlpError, MlpModel, TrainConfig};
use crate::seed;
use crate::tensorio::{load_feature_map, oversample_indices, DatasetManifest, FeatureVectorSet, FormatError};

/// Codebook sizes of the reference sweep.
pub const DEFAULT_SWEEP: [usize; 4] = [50, 60, 70, 100];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{samples} samples cannot fill {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("labels cover {labels} samples but the source holds {samples}")]
    SizeMismatch { labels: usize, samples: usize },
    #[error("missing feature files: {}", list_paths(.0))]
    MissingFeatures(Vec<PathBuf>),
    #[error("two records map to the feature file {0}")]
    DuplicateFeatureFile(PathBuf),
    #[error("invalid feature file {path}")]
    Feature {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("fold {fold}: class {class} has no training samples")]
    ClassMissingFromTraining { fold: usize, class: usize },
    #[error("empty codebook-size sweep")]
    EmptySweep,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Bof(#[from] BofError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

fn list_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

/// Disjoint test folds covering every sample exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    folds: Vec<Vec<usize>>,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, ascending.
    pub fn train(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }
}

/// Stratified assignment: each class's indices are shuffled, classes are
/// concatenated in label order and dealt round-robin, so fold sizes differ by
/// at most one and every class with at least `k` samples reaches every fold.
/// Classes with fewer samples are spread over as many folds as they have
/// samples.
pub fn make_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidFoldCount(k));
    }
    if labels.len() < k {
        return Err(EvalError::TooFewSamples { samples: labels.len(), folds: k });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag::FOLDS]));
    let mut folds = vec![Vec::new(); k];
    let mut position = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            folds[position % k].push(i);
            position += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldAssignment { folds })
}

/// Why a feature set is being read; lets tests audit fold isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Access {
    Codebook,
    Train,
    Test,
}

pub trait FeatureSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize, access: Access) -> Result<&FeatureVectorSet, EvalError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Feature sets held in memory, indexed like the manifest.
#[derive(Debug, Clone)]
pub struct InMemorySource(pub Vec<FeatureVectorSet>);

impl FeatureSource for InMemorySource {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn load(&self, index: usize, _access: Access) -> Result<&FeatureVectorSet, EvalError> {
        Ok(&self.0[index])
    }
}

/// `<dir>/<record stem>.dbf` for every record.
pub fn feature_paths(manifest: &DatasetManifest, dir: &Path) -> Vec<PathBuf> {
    manifest.records().iter().map(|r| dir.join(format!("{}.dbf", r.stem()))).collect()
}

/// Loads every record's feature map from `dir`, reporting all missing files
/// at once.
pub fn load_feature_dir(manifest: &DatasetManifest, dir: impl AsRef<Path>) -> Result<InMemorySource, EvalError> {
    let paths = feature_paths(manifest, dir.as_ref());
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = paths.iter().find(|p| !seen.insert(*p)) {
        return Err(EvalError::DuplicateFeatureFile(dup.clone()));
    }
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingFeatures(missing));
    }
    let sets = paths
        .par_iter()
        .map(|p| {
            load_feature_map(p)
                .map(|fm| fm.flatten())
                .map_err(|source| EvalError::Feature { path: p.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InMemorySource(sets))
}

pub trait Predictor {
    fn predict_class(&self, histogram: &Histogram) -> Result<usize, EvalError>;
}

/// Fits a histogram classifier for one fold.
pub trait Classifier: Sync {
    type Model: Predictor;
    fn fit(&self, inputs: &[Histogram], labels: &[usize], classes: usize, seed: u64) -> Result<Self::Model, EvalError>;
}

impl Predictor for MlpModel {
    fn predict_class(&self, histogram: &Histogram) -> Result<usize, EvalError> {
        Ok(MlpModel::predict_class(self, histogram.bins())?.0)
    }
}

/// The MLP with a fixed schedule; the fold seed replaces `cfg.seed`.
#[derive(Debug, Clone, Copy)]
pub struct MlpClassifier(pub TrainConfig);

impl Classifier for MlpClassifier {
    type Model = MlpModel;

    fn fit(&self, inputs: &[Histogram], labels: &[usize], classes: usize, seed: u64) -> Result<MlpModel, EvalError> {
        let cfg = TrainConfig { seed, ..self.0 };
        Ok(train_with_classes(inputs, labels, classes, &cfg)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTimes {
    pub train_ms: u64,
    pub test_ms: u64,
}

/// Runs `f` and returns its result with the elapsed monotonic wall time in
/// whole milliseconds.
pub fn time_stage<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_millis() as u64)
}

pub fn measure_times(train: impl FnOnce(), test: impl FnOnce()) -> StageTimes {
    let ((), train_ms) = time_stage(train);
    let ((), test_ms) = time_stage(test);
    StageTimes { train_ms, test_ms }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub correct: usize,
    pub total: usize,
    pub times: StageTimes,
}

impl FoldOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { sizes: DEFAULT_SWEEP.to_vec(), folds: 10, seed: 0 }
    }
}

/// Trains on every fold but `fold` and scores on `fold`.
#[allow(clippy::too_many_arguments)]
pub fn run_fold<S: FeatureSource, C: Classifier>(
    manifest: &DatasetManifest,
    source: &S,
    folds: &FoldAssignment,
    fold: usize,
    codebook_size: usize,
    seed: u64,
    classifier: &C,
) -> Result<FoldOutcome, EvalError> {
    let labels = manifest.labels();
    let classes = manifest.num_classes();
    let train_idx = folds.train(fold);
    let test_idx = folds.test(fold);
    let tag = [fold as u64, codebook_size as u64];

    let (trained, train_ms) = time_stage(|| -> Result<(Codebook, C::Model), EvalError> {
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag::OVERSAMPLE, tag[0], tag[1]]));
        let (balanced, warnings) = oversample_indices(manifest.records(), &train_idx, &mut rng);
        for w in &warnings {
            log::debug!("fold {fold}: {w}");
        }

        let pooled = train_idx
            .iter()
            .map(|&i| source.load(i, Access::Codebook))
            .collect::<Result<Vec<_>, _>>()?;
        let pooled = FeatureVectorSet::concat(pooled)?;
        let codebook = init_codebook(&pooled, codebook_size, seed::derive(seed, &[seed::tag::KMEANS, tag[0], tag[1]]))?;
        drop(pooled);

        let hists = quantize_indices(source, &train_idx, Access::Train, &codebook)?;
        let position: std::collections::HashMap<usize, usize> =
            train_idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let inputs: Vec<Histogram> = balanced.iter().map(|i| hists[position[i]].clone()).collect();
        let targets: Vec<usize> = balanced.iter().map(|&i| labels[i]).collect();

        let mut seen = vec![false; classes];
        targets.iter().for_each(|&y| seen[y] = true);
        if let Some(class) = seen.iter().position(|s| !s) {
            return Err(EvalError::ClassMissingFromTraining { fold, class });
        }
        let model = classifier.fit(&inputs, &targets, classes, seed::derive(seed, &[seed::tag::MLP, tag[0], tag[1]]))?;
        Ok((codebook, model))
    });
    let (codebook, model) = trained?;

    let (correct, test_ms) = time_stage(|| -> Result<usize, EvalError> {
        let hists = quantize_indices(source, test_idx, Access::Test, &codebook)?;
        let mut correct = 0;
        for (h, &i) in hists.iter().zip(test_idx) {
            if model.predict_class(h)? == labels[i] {
                correct += 1;
            }
        }
        Ok(correct)
    });
    Ok(FoldOutcome {
        correct: correct?,
        total: test_idx.len(),
        times: StageTimes { train_ms, test_ms },
    })
}

fn quantize_indices<S: FeatureSource>(
    source: &S,
    indices: &[usize],
    access: Access,
    codebook: &Codebook,
) -> Result<Vec<Histogram>, EvalError> {
    indices
        .par_iter()
        .map(|&i| Ok(quantize(source.load(i, access)?, codebook)?))
        .collect()
}

/// Accuracy and timing of one codebook size across all folds.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeResult {
    pub codebook_size: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub train_ms: Vec<u64>,
    pub test_ms: Vec<u64>,
}

impl SizeResult {
    pub fn total_train_ms(&self) -> u64 {
        self.train_ms.iter().sum()
    }

    pub fn total_test_ms(&self) -> u64 {
        self.test_ms.iter().sum()
    }
}

/// One row of the report: an extractor / feature-map pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigReport {
    pub extractor: String,
    pub feature_map: String,
    pub results: Vec<SizeResult>,
}

impl ConfigReport {
    pub fn label(&self) -> String {
        config_label(&self.extractor, &self.feature_map)
    }
}

fn config_label(extractor: &str, feature_map: &str) -> String {
    if feature_map.is_empty() {
        extractor.to_string()
    } else {
        format!("{extractor} {feature_map}")
    }
}

/// Runs the sweep for one configuration. Folds are fixed across sizes.
pub fn run_sweep<S: FeatureSource, C: Classifier>(
    manifest: &DatasetManifest,
    source: &S,
    cfg: &SweepConfig,
    classifier: &C,
    extractor: &str,
    feature_map: &str,
) -> Result<ConfigReport, EvalError> {
    if cfg.sizes.is_empty() {
        return Err(EvalError::EmptySweep);
    }
    if source.len() != manifest.len() {
        return Err(EvalError::SizeMismatch { labels: manifest.len(), samples: source.len() });
    }
    let folds = make_folds(&manifest.labels(), cfg.folds, cfg.seed)?;
    let label = config_label(extractor, feature_map);
    let mut results = Vec::with_capacity(cfg.sizes.len());
    for &k in &cfg.sizes {
        let mut fold_accuracies = Vec::with_capacity(folds.len());
        let mut train_ms = Vec::with_capacity(folds.len());
        let mut test_ms = Vec::with_capacity(folds.len());
        for f in 0..folds.len() {
            let out = run_fold(manifest, source, &folds, f, k, cfg.seed, classifier)?;
            log::info!("{label} K={k} fold {}: accuracy {:.4}", f + 1, out.accuracy());
            fold_accuracies.push(out.accuracy());
            train_ms.push(out.times.train_ms);
            test_ms.push(out.times.test_ms);
        }
        let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
        results.push(SizeResult { codebook_size: k, fold_accuracies, mean_accuracy, train_ms, test_ms });
    }
    Ok(ConfigReport { extractor: extractor.to_string(), feature_map: feature_map.to_string(), results })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub configs: Vec<ConfigReport>,
}

#[derive(Serialize)]
struct ResultRecord<'a> {
    extractor: &'a str,
    feature_map: &'a str,
    codebook_size: usize,
    folds: usize,
    fold_accuracies: &'a [f64],
    mean_accuracy: f64,
}

impl EvalReport {
    fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = Vec::new();
        for r in self.configs.iter().flat_map(|c| &c.results) {
            if !sizes.contains(&r.codebook_size) {
                sizes.push(r.codebook_size);
            }
        }
        sizes
    }

    /// Accuracy table: configurations as rows, codebook sizes as columns.
    ///
    /// ```text
    /// Method        Size 1  Size 2  Size 3  Size 4
    /// term vectors  50      60      70      100
    /// vgg16 FM3     91.0%   91.3%   90.1%   89.8%
    /// ```
    pub fn to_table(&self) -> String {
        let sizes = self.sizes();
        let mut out = String::from("Method");
        for i in 1..=sizes.len() {
            write!(out, "\tSize {i}").unwrap();
        }
        out.push_str("\nterm vectors");
        for k in &sizes {
            write!(out, "\t{k}").unwrap();
        }
        out.push('\n');
        for c in &self.configs {
            out.push_str(&c.label());
            for k in &sizes {
                match c.results.iter().find(|r| r.codebook_size == *k) {
                    Some(r) => write!(out, "\t{:.1}%", 100.0 * r.mean_accuracy).unwrap(),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per configuration and codebook size.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for c in &self.configs {
            for r in &c.results {
                let rec = ResultRecord {
                    extractor: &c.extractor,
                    feature_map: &c.feature_map,
                    codebook_size: r.codebook_size,
                    folds: r.fold_accuracies.len(),
                    fold_accuracies: &r.fold_accuracies,
                    mean_accuracy: r.mean_accuracy,
                };
                out.push_str(&serde_json::to_string(&rec).expect("plain data serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// Mean per-fold training and testing wall time, in milliseconds:
    /// configurations as columns, codebook sizes as rows.
    pub fn to_timing_table(&self) -> String {
        let mut out = String::from("Method");
        for c in &self.configs {
            write!(out, "\t{}", c.label()).unwrap();
        }
        out.push('\n');
        for k in self.sizes() {
            write!(out, "K={k}").unwrap();
            for c in &self.configs {
                match c.results.iter().find(|r| r.codebook_size == k) {
                    Some(r) => {
                        let n = r.train_ms.len().max(1) as u64;
                        write!(out, "\ttrain: {} test: {}", r.total_train_ms() / n, r.total_test_ms() / n).unwrap();
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_samples_ten_even_folds() {
        let labels: Vec<usize> = (0..100).map(|i| i % 7).collect();
        let f = make_folds(&labels, 10, 3).unwrap();
        assert_eq!(f.len(), 10);
        assert!(f.folds().iter().all(|v| v.len() == 10));
        let mut all: Vec<usize> = f.folds().concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(f, make_folds(&labels, 10, 3).unwrap());
        assert_ne!(f, make_folds(&labels, 10, 4).unwrap());
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..120).map(|i| i / 30).collect();
        let f = make_folds(&labels, 10, 0).unwrap();
        for fold in f.folds() {
            for class in 0..4 {
                assert_eq!(fold.iter().filter(|&&i| labels[i] == class).count(), 3);
            }
        }
    }

    #[test]
    fn fold_errors() {
        assert!(matches!(make_folds(&[0, 1, 0], 10, 0), Err(EvalError::TooFewSamples { samples: 3, folds: 10 })));
        assert!(matches!(make_folds(&[0, 1, 0], 1, 0), Err(EvalError::InvalidFoldCount(1))));
    }

    #[test]
    fn uneven_sizes_differ_by_one() {
        let labels: Vec<usize> = (0..57).map(|i| (i * 7) % 5).collect();
        let f = make_folds(&labels, 10, 1).unwrap();
        let sizes: Vec<usize> = f.folds().iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let train = f.train(2);
        assert_eq!(train.len() + f.test(2).len(), 57);
        assert!(train.iter().all(|i| !f.test(2).contains(i)));
    }

    #[test]
    fn zero_work_stage_is_fast() {
        let t = measure_times(|| {}, || {});
        assert!(t.train_ms <= 1 && t.test_ms <= 1);
    }

    #[test]
    fn sleeping_stage_is_measured() {
        let t = measure_times(|| std::thread::sleep(std::time::Duration::from_millis(50)), || {});
        assert!((50..=60).contains(&t.train_ms), "{}", t.train_ms);
    }

    #[test]
    fn table_layout() {
        let report = EvalReport {
            configs: vec![ConfigReport {
                extractor: "vgg16".into(),
                feature_map: "FM3".into(),
                results: DEFAULT_SWEEP
                    .iter()
                    .map(|&k| SizeResult {
                        codebook_size: k,
                        fold_accuracies: vec![0.9, 0.95],
                        mean_accuracy: 0.925,
                        train_ms: vec![10, 12],
                        test_ms: vec![1, 1],
                    })
                    .collect(),
            }],
        };
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "Method\tSize 1\tSize 2\tSize 3\tSize 4");
        assert_eq!(lines[1], "term vectors\t50\t60\t70\t100");
        assert!(lines[2].starts_with("vgg16 FM3\t92.5%"));
        assert_eq!(report.to_records().lines().count(), 4);
        assert!(report.to_timing_table().contains("K=50\ttrain: 11 test: 1"));
    }

    #[test]
    fn missing_feature_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let m = crate::tensorio::parse_manifest("a.png\tx\t0\nb.png\ty\t0\n").unwrap();
        let err = load_feature_dir(&m, dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.dbf") && msg.contains("b.dbf"), "{msg}");
    }
}
