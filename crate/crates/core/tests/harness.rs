use std::collections::HashSet;
use std::sync::Mutex;

use deepbof::evalharness::{
    make_folds, run_fold, run_sweep, Access, Classifier, EvalError, FeatureSource, InMemorySource, Predictor,
    SweepConfig,
};
use deepbof::synth::{generate, SynthConfig, SynthDataset};
use deepbof::tensorio::{DatasetManifest, FeatureVectorSet, ManifestRecord};
use deepbof::{Histogram, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(identities: usize, samples: usize, seed: u64) -> SynthDataset {
    generate(&SynthConfig {
        identities,
        samples_per_identity: samples,
        height: 3,
        width: 3,
        channels: 4,
        seed,
        ..SynthConfig::default()
    })
}

struct Recording {
    inner: InMemorySource,
    log: Mutex<Vec<(usize, Access)>>,
}

impl FeatureSource for Recording {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn load(&self, index: usize, access: Access) -> Result<&FeatureVectorSet, EvalError> {
        self.log.lock().unwrap().push((index, access));
        self.inner.load(index, access)
    }
}

#[test]
fn folds_never_leak_test_samples_into_training() {
    let ds = small(4, 10, 3);
    let source = Recording { inner: InMemorySource(ds.vector_sets()), log: Mutex::new(Vec::new()) };
    let folds = make_folds(&ds.manifest.labels(), 5, 1).unwrap();
    let classifier = deepbof::evalharness::MlpClassifier(TrainConfig { epochs: 5, ..TrainConfig::default() });
    for f in 0..folds.len() {
        source.log.lock().unwrap().clear();
        run_fold(&ds.manifest, &source, &folds, f, 6, 7, &classifier).unwrap();
        let test: HashSet<usize> = folds.test(f).iter().copied().collect();
        let log = source.log.lock().unwrap();
        for &(i, access) in log.iter() {
            match access {
                Access::Codebook | Access::Train => assert!(!test.contains(&i), "fold {f}: {i} read for {access:?}"),
                Access::Test => assert!(test.contains(&i), "fold {f}: {i} scored but not in test fold"),
            }
        }
        let scored: HashSet<usize> = log.iter().filter(|(_, a)| *a == Access::Test).map(|(i, _)| *i).collect();
        assert_eq!(scored, test);
        let pooled: HashSet<usize> = log.iter().filter(|(_, a)| *a == Access::Codebook).map(|(i, _)| *i).collect();
        assert_eq!(pooled, folds.train(f).into_iter().collect());
    }
}

struct Constant(usize);

impl Predictor for Constant {
    fn predict_class(&self, _: &Histogram) -> Result<usize, EvalError> {
        Ok(self.0)
    }
}

struct AlwaysFirst;

impl Classifier for AlwaysFirst {
    type Model = Constant;

    fn fit(&self, _: &[Histogram], _: &[usize], _: usize, _: u64) -> Result<Constant, EvalError> {
        Ok(Constant(0))
    }
}

#[test]
fn constant_prediction_scores_the_majority_share() {
    // subject a holds 20 of 50 samples
    let mut records = Vec::new();
    for (subject, count) in [("a", 20), ("b", 15), ("c", 10), ("d", 5)] {
        for i in 0..count {
            records.push(ManifestRecord {
                path: format!("{subject}{i}.png"),
                subject: subject.into(),
                masked: i % 3 == 0,
                split: None,
            });
        }
    }
    let manifest = DatasetManifest::from_records(records);
    let ds = small(1, 50, 8);
    let source = InMemorySource(ds.vector_sets());
    let folds = make_folds(&manifest.labels(), 5, 2).unwrap();
    let (mut correct, mut total) = (0, 0);
    for f in 0..folds.len() {
        let out = run_fold(&manifest, &source, &folds, f, 3, 4, &AlwaysFirst).unwrap();
        correct += out.correct;
        total += out.total;
    }
    assert_eq!(total, 50);
    assert_eq!(correct, 20);
}

struct Guess {
    classes: usize,
    rng: Mutex<ChaCha8Rng>,
}

impl Predictor for Guess {
    fn predict_class(&self, _: &Histogram) -> Result<usize, EvalError> {
        Ok(self.rng.lock().unwrap().random_range(0..self.classes))
    }
}

struct RandomGuesser;

impl Classifier for RandomGuesser {
    type Model = Guess;

    fn fit(&self, _: &[Histogram], _: &[usize], classes: usize, seed: u64) -> Result<Guess, EvalError> {
        Ok(Guess { classes, rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) })
    }
}

#[test]
fn random_guessing_lands_near_chance() {
    let ds = small(10, 40, 12);
    let source = InMemorySource(ds.vector_sets());
    let cfg = SweepConfig { sizes: vec![4], folds: 10, seed: 3 };
    let report = run_sweep(&ds.manifest, &source, &cfg, &RandomGuesser, "guess", "").unwrap();
    let acc = report.results[0].mean_accuracy;
    let (p, n): (f64, f64) = (0.1, 400.0);
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "accuracy {acc} vs chance {p} ± {}", 3.0 * sigma);
}

#[test]
fn sweep_reuses_folds_across_sizes() {
    let ds = small(3, 10, 4);
    let source = InMemorySource(ds.vector_sets());
    let cfg = SweepConfig { sizes: vec![2, 3], folds: 5, seed: 6 };
    let report = run_sweep(&ds.manifest, &source, &cfg, &AlwaysFirst, "const", "").unwrap();
    // a constant predictor scores the same per fold whatever the codebook
    assert_eq!(report.results[0].fold_accuracies, report.results[1].fold_accuracies);
}

#[test]
fn sweep_rejects_source_of_wrong_length() {
    let ds = small(3, 10, 4);
    let mut sets = ds.vector_sets();
    sets.pop();
    let err = run_sweep(&ds.manifest, &InMemorySource(sets), &SweepConfig::default(), &AlwaysFirst, "x", "").unwrap_err();
    assert!(matches!(err, EvalError::SizeMismatch { .. }), "{err}");
}
