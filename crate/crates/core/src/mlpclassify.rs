//! One-hidden-layer perceptron over bag-of-features histograms.
//!
//! Hidden units use a logistic sigmoid; the output layer is a softmax trained
//! with cross-entropy by mini-batch gradient descent. The hidden width follows
//! `h = ⌈(m + t)/2⌉` for `t` inputs and `m` classes.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::binio::{self, Reader};
use crate::seed;
use crate::tensorio::FormatError;

pub const MODEL_MAGIC: [u8; 4] = *b"DBM1";

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("at least 2 classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("class {0} has no training samples")]
    EmptyClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("input length mismatch: expected {expected}, found {found}")]
    InputMismatch { expected: usize, found: usize },
    #[error("no training samples")]
    NoSamples,
    #[error("{inputs} inputs but {labels} labels")]
    LengthMismatch { inputs: usize, labels: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, epochs: 100, batch_size: 32, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), MlpError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(MlpError::InvalidConfig("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(MlpError::InvalidConfig("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(MlpError::InvalidConfig("batch size must be positive"));
        }
        Ok(())
    }
}

/// `⌈(m + t)/2⌉` hidden units.
pub fn hidden_units(classes: usize, inputs: usize) -> usize {
    (classes + inputs).div_ceil(2)
}

/// Weights are row-major by destination unit: `w1` is `h×t`, `w2` is `m×h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    inputs: usize,
    hidden: usize,
    classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    loss_history: Vec<f64>,
}

/// Parameter gradients, laid out like [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGradients {
    pub fn zeros(model: &MlpModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).chain(&mut self.b2) {
            *v *= s;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// `log Σ exp(z) − z_label`, stable for large logits.
fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

/// Softmax over raw scores; invariant to adding a constant to every logit.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

impl MlpModel {
    /// All-zero model with the standard hidden width.
    pub fn zeros(inputs: usize, classes: usize) -> Self {
        Self::zeros_with_hidden(inputs, hidden_units(classes, inputs), classes)
    }

    pub fn zeros_with_hidden(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            inputs,
            hidden,
            classes,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
            loss_history: Vec::new(),
        }
    }

    /// Uniform initialization in `±1/√fan_in`.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut model = Self::zeros_with_hidden(inputs, hidden, classes);
        let a1 = 1.0 / (inputs as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        model.w1.iter_mut().chain(&mut model.b1).for_each(|w| *w = rng.random_range(-a1..=a1));
        model.w2.iter_mut().chain(&mut model.b2).for_each(|w| *w = rng.random_range(-a2..=a2));
        model
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Mean training loss after each epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.inputs {
            return Err(MlpError::InputMismatch { expected: self.inputs, found: x.len() });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|u| {
                let w = &self.w1[u * self.inputs..(u + 1) * self.inputs];
                sigmoid(self.b1[u] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect()
    }

    fn logits_from_hidden(&self, a: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|o| {
                let w = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + w.iter().zip(a).map(|(p, q)| p * q).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_input(x)?;
        Ok(self.logits_from_hidden(&self.hidden_activations(x)))
    }

    /// Class probabilities; non-negative and summing to one.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Arg-max class and its probability.
    pub fn predict_class(&self, x: &[f64]) -> Result<(usize, f64), MlpError> {
        let p = self.predict(x)?;
        let (mut best, mut score) = (0, p[0]);
        for (i, &v) in p.iter().enumerate().skip(1) {
            if v > score {
                best = i;
                score = v;
            }
        }
        Ok((best, score))
    }

    /// Cross-entropy of one sample; accumulates parameter gradients into
    /// `grads` and returns `(loss, ∂loss/∂x)`.
    pub fn backward_sample(&self, x: &[f64], label: usize, grads: &mut MlpGradients) -> Result<(f64, Vec<f64>), MlpError> {
        self.check_input(x)?;
        if label >= self.classes {
            return Err(MlpError::LabelOutOfRange { label, classes: self.classes });
        }
        let a = self.hidden_activations(x);
        let z = self.logits_from_hidden(&a);
        let loss = cross_entropy(&z, label);
        let mut p = z;
        softmax_in_place(&mut p);

        // ∂L/∂z = p − onehot
        let mut dz = p;
        dz[label] -= 1.0;
        let mut da = vec![0.0; self.hidden];
        for (o, &g) in dz.iter().enumerate() {
            grads.b2[o] += g;
            let row = o * self.hidden;
            for u in 0..self.hidden {
                grads.w2[row + u] += g * a[u];
                da[u] += g * self.w2[row + u];
            }
        }
        let mut dx = vec![0.0; self.inputs];
        for u in 0..self.hidden {
            let g = da[u] * a[u] * (1.0 - a[u]);
            grads.b1[u] += g;
            let row = u * self.inputs;
            for i in 0..self.inputs {
                grads.w1[row + i] += g * x[i];
                dx[i] += g * self.w1[row + i];
            }
        }
        Ok((loss, dx))
    }

    /// Mean cross-entropy over a batch and its parameter gradients.
    pub fn loss_and_gradients<X: AsRef<[f64]>>(&self, xs: &[X], labels: &[usize]) -> Result<(f64, MlpGradients), MlpError> {
        if xs.len() != labels.len() {
            return Err(MlpError::LengthMismatch { inputs: xs.len(), labels: labels.len() });
        }
        if xs.is_empty() {
            return Err(MlpError::NoSamples);
        }
        let mut grads = MlpGradients::zeros(self);
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            loss += self.backward_sample(x.as_ref(), y, &mut grads)?.0;
        }
        let inv = 1.0 / xs.len() as f64;
        grads.scale(inv);
        Ok((loss * inv, grads))
    }

    pub fn mean_loss<X: AsRef<[f64]>>(&self, xs: &[X], labels: &[usize]) -> Result<f64, MlpError> {
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            loss += cross_entropy(&self.logits(x.as_ref())?, y);
        }
        Ok(loss / xs.len() as f64)
    }

    pub fn apply_step(&mut self, grads: &MlpGradients, lr: f64) {
        let pairs = [
            (&mut self.w1, &grads.w1),
            (&mut self.b1, &grads.b1),
            (&mut self.w2, &grads.w2),
            (&mut self.b2, &grads.b2),
        ];
        for (params, g) in pairs {
            for (p, d) in params.iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
    }

    pub(crate) fn push_loss(&mut self, loss: f64) {
        self.loss_history.push(loss);
    }
}

fn validate_data<X: AsRef<[f64]>>(xs: &[X], labels: &[usize], classes: usize) -> Result<usize, MlpError> {
    if xs.len() != labels.len() {
        return Err(MlpError::LengthMismatch { inputs: xs.len(), labels: labels.len() });
    }
    if xs.is_empty() {
        return Err(MlpError::NoSamples);
    }
    if classes < 2 {
        return Err(MlpError::TooFewClasses(classes));
    }
    let t = xs[0].as_ref().len();
    if let Some(x) = xs.iter().find(|x| x.as_ref().len() != t) {
        return Err(MlpError::InputMismatch { expected: t, found: x.as_ref().len() });
    }
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(MlpError::LabelOutOfRange { label: y, classes });
        }
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(MlpError::EmptyClass(empty));
    }
    Ok(t)
}

/// Trains a model with `⌈(m + t)/2⌉` hidden units, where `m` is the number
/// of distinct classes implied by `labels` (`max + 1`).
pub fn train<X: AsRef<[f64]>>(xs: &[X], labels: &[usize], cfg: &TrainConfig) -> Result<MlpModel, MlpError> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    train_with_classes(xs, labels, classes, cfg)
}

/// Like [`train`] with an explicit class count; every class in
/// `0..classes` must have at least one sample.
pub fn train_with_classes<X: AsRef<[f64]>>(
    xs: &[X],
    labels: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<MlpModel, MlpError> {
    let t = validate_data(xs, labels, classes)?;
    train_hidden(xs, labels, classes, hidden_units(classes, t), cfg)
}

/// Trains with an explicit hidden width.
///
/// Inputs are standardized per coordinate for the duration of training and
/// the transform is then folded into `w1`/`b1`, so the returned model takes
/// raw histograms.
pub fn train_hidden<X: AsRef<[f64]>>(
    xs: &[X],
    labels: &[usize],
    classes: usize,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<MlpModel, MlpError> {
    cfg.validate()?;
    let t = validate_data(xs, labels, classes)?;
    let scaler = Standardizer::fit(xs, t);
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| scaler.apply(x.as_ref())).collect();
    let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::tag::MLP]));
    let mut model = MlpModel::init(t, hidden.max(1), classes, &mut rng);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = MlpGradients::zeros(&model);
            for &i in batch {
                epoch_loss += model.backward_sample(&zs[i], labels[i], &mut grads)?.0;
            }
            grads.scale(1.0 / batch.len() as f64);
            model.apply_step(&grads, cfg.learning_rate);
        }
        let epoch_loss = epoch_loss / xs.len() as f64;
        let params = model.w1.iter().chain(&model.b1).chain(&model.w2).chain(&model.b2);
        if !epoch_loss.is_finite() || params.into_iter().any(|w| !w.is_finite()) {
            return Err(MlpError::Diverged { epoch });
        }
        model.push_loss(epoch_loss);
    }
    scaler.fold_into(&mut model);
    if model.w1.iter().chain(&model.b1).any(|w| !w.is_finite()) {
        return Err(MlpError::Diverged { epoch: cfg.epochs });
    }
    Ok(model)
}

/// Per-input standardization used during training. Histogram bins sit near
/// `1/t` with small spread, which leaves the sigmoid layer nearly flat on
/// raw inputs.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit<X: AsRef<[f64]>>(xs: &[X], t: usize) -> Self {
        let n = xs.len() as f64;
        let mut mean = vec![0.0; t];
        for x in xs {
            mean.iter_mut().zip(x.as_ref()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; t];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // constant inputs are only centered
        let inv_std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { 1.0 / sd } else { 1.0 }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect()
    }

    /// Rewrites the first layer so the model accepts raw inputs:
    /// `W1·((x − μ)/s) + b1 = (W1/s)·x + (b1 − W1·(μ/s))`.
    fn fold_into(&self, model: &mut MlpModel) {
        let t = model.inputs;
        for (row, b) in model.w1.chunks_exact_mut(t).zip(&mut model.b1) {
            for ((w, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *w *= s;
                *b -= *w * m;
            }
        }
    }
}

pub fn write_model<W: Write>(model: &MlpModel, w: &mut W) -> Result<(), FormatError> {
    let dims = [
        binio::to_u32(model.inputs, "t")?,
        binio::to_u32(model.hidden, "h")?,
        binio::to_u32(model.classes, "m")?,
    ];
    binio::write_header(w, &MODEL_MAGIC, &dims)?;
    for part in [&model.w1, &model.b1, &model.w2, &model.b2] {
        binio::write_f32s(w, part.iter().map(|&v| v as f32))?;
    }
    Ok(())
}

/// Reads a `DBM1` model. Parameters are stored as f32.
pub fn read_model<R: Read>(r: &mut R) -> Result<MlpModel, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut reader = Reader::new(&bytes);
    let [t, h, m] = reader.header::<3>(&MODEL_MAGIC)?;
    if t == 0 || h == 0 || m < 2 {
        return Err(FormatError::InvalidDims("need t ≥ 1, h ≥ 1, m ≥ 2"));
    }
    let (t, h, m) = (t as usize, h as usize, m as usize);
    let sizes = [h * t, h, m * h, m];
    reader.expect_payload(sizes.iter().map(|&s| s as u64).sum())?;
    let mut model = MlpModel::zeros_with_hidden(t, h, m);
    let mut offset = 0;
    for (dst, len) in [&mut model.w1, &mut model.b1, &mut model.w2, &mut model.b2].into_iter().zip(sizes) {
        *dst = reader.f32s(len, offset)?.into_iter().map(f64::from).collect();
        offset += len;
    }
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, FormatError> {
    read_model(&mut fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use rand_distr::StandardNormal;

    fn gaussian<R: Rng>(rng: &mut R) -> f64 {
        rng.sample(StandardNormal)
    }

    const XOR: [[f64; 2]; 4] = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    const XOR_Y: [usize; 4] = [0, 1, 1, 0];

    fn accuracy<X: AsRef<[f64]>>(model: &MlpModel, xs: &[X], ys: &[usize]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| model.predict_class(x.as_ref()).unwrap().0 == y)
            .count();
        hits as f64 / xs.len() as f64
    }

    fn train_xor() -> MlpModel {
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 5000, batch_size: 4, seed: 1 };
        train(&XOR, &XOR_Y, &cfg).unwrap()
    }


    #[test]
    fn folded_standardization_matches_scaled_inputs() {
        let xs = [[0.02, 0.5, 3.0], [0.03, 0.1, 3.0], [0.01, 0.7, 3.0]];
        let scaler = Standardizer::fit(&xs, 3);
        let mut rng = seed::rng(5);
        let model = MlpModel::init(3, 2, 2, &mut rng);
        let mut folded = model.clone();
        scaler.fold_into(&mut folded);
        for x in &xs {
            let a = model.logits(&scaler.apply(x)).unwrap();
            let b = folded.logits(x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }
    #[test]
    fn hidden_rule() {
        assert_eq!(hidden_units(2, 2), 2);
        assert_eq!(hidden_units(525, 60), 293);
        assert_eq!(hidden_units(20, 50), 35);
    }

    #[test]
    fn xor_is_learned() {
        let model = train_xor();
        assert_eq!(model.hidden(), 2);
        assert_eq!(accuracy(&model, &XOR, &XOR_Y), 1.0);
        assert_eq!(model.predict_class(&[1.0, 0.0]).unwrap().0, 1);
    }

    #[test]
    fn separable_gaussians_within_200_epochs() {
        let mut rng = seed::rng(21);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (label, center) in [(0usize, [-2.0, -2.0]), (1, [2.0, 2.0])] {
            for _ in 0..20 {
                xs.push(vec![center[0] + 0.5 * gaussian(&mut rng), center[1] + 0.5 * gaussian(&mut rng)]);
                ys.push(label);
            }
        }
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 200, batch_size: 8, seed: 3 };
        let model = train(&xs, &ys, &cfg).unwrap();
        assert_eq!(accuracy(&model, &xs, &ys), 1.0);
        assert!(model.final_loss().unwrap() < model.loss_history()[0]);
    }

    #[test]
    fn training_errors() {
        let cfg = TrainConfig::default();
        assert!(matches!(train(&[[0.0], [1.0]], &[0, 0], &cfg), Err(MlpError::TooFewClasses(1))));
        assert!(matches!(train(&[[0.0], [1.0]], &[0, 2], &cfg), Err(MlpError::EmptyClass(1))));
        assert!(matches!(
            train_with_classes(&[[0.0], [1.0]], &[0, 3], 2, &cfg),
            Err(MlpError::LabelOutOfRange { label: 3, .. })
        ));
        assert!(matches!(train(&[vec![0.0], vec![1.0, 2.0]], &[0, 1], &cfg), Err(MlpError::InputMismatch { .. })));
        let bad = TrainConfig { learning_rate: 0.0, ..cfg };
        assert!(matches!(train(&[[0.0], [1.0]], &[0, 1], &bad), Err(MlpError::InvalidConfig(_))));
    }

    #[test]
    fn divergence_names_epoch() {
        // contradictory labels keep the gradient away from zero
        let cfg = TrainConfig { learning_rate: f64::MAX, epochs: 10, batch_size: 1, seed: 0 };
        let xs = [[1.0, 0.0], [1.0, 0.0]];
        let err = train(&xs, &[0, 1], &cfg).unwrap_err();
        assert!(matches!(err, MlpError::Diverged { epoch } if epoch <= 10), "{err}");
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = MlpModel::zeros(4, 5);
        let p = model.predict(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(matches!(model.predict(&[0.0; 3]), Err(MlpError::InputMismatch { .. })));
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = TrainConfig { learning_rate: 0.3, epochs: 50, batch_size: 3, seed: 8 };
        assert_eq!(train(&XOR, &XOR_Y, &cfg).unwrap(), train(&XOR, &XOR_Y, &cfg).unwrap());
    }

    #[test]
    fn full_batch_small_step_loss_non_increasing() {
        let mut rng = seed::rng(4);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| gaussian(&mut rng)).collect()).collect();
        let ys: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let cfg = TrainConfig { learning_rate: 0.01, epochs: 200, batch_size: 30, seed: 2 };
        let model = train(&xs, &ys, &cfg).unwrap();
        for w in model.loss_history().windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn model_file_roundtrip_and_errors() {
        let model = MlpModel::init(3, 4, 2, &mut seed::rng(1));
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * (12 + 4 + 8 + 2));
        let back = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!((back.inputs(), back.hidden(), back.classes()), (3, 4, 2));
        for (a, b) in model.w1.iter().zip(&back.w1) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(matches!(read_model(&mut &buf[..20]), Err(FormatError::Truncated { .. })));
        let mut bad = buf.clone();
        bad[3] = b'0';
        assert!(matches!(read_model(&mut bad.as_slice()), Err(FormatError::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), x in prop::collection::vec(0.0f64..1.0, 6)) {
            let model = MlpModel::init(6, 4, 5, &mut crate::seed::rng(seed));
            let p = model.predict(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn logit_shift_invariance(logits in prop::collection::vec(-20.0f64..20.0, 2..8), shift in -50.0f64..50.0) {
            let a = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let b = softmax(&shifted);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            prop_assert_eq!(argmax(&a), argmax(&b));
        }
    }
}
