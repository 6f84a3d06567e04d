//! Joint gradient descent over the codebook and the classifier.
//!
//! The loss gradient with respect to each histogram comes from the MLP and
//! is pushed through the quantization layer into the RBF centers and widths.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::bofquant::{quantize, quantize_backward, BofError, Codebook};
use crate::mlpclassify::{MlpError, MlpGradients, MlpModel};
use crate::seed;
use crate::tensorio::FeatureVectorSet;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error(transparent)]
    Bof(#[from] BofError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("{sets} feature sets but {labels} labels")]
    LengthMismatch { sets: usize, labels: usize },
    #[error("fine-tuning diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub codebook_learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Lower bound enforced on every RBF width after each step.
    pub min_width: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            codebook_learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
            min_width: 1e-6,
        }
    }
}

/// Returns the mean training loss of each epoch.
pub fn finetune(
    codebook: &mut Codebook,
    model: &mut MlpModel,
    sets: &[FeatureVectorSet],
    labels: &[usize],
    cfg: &FinetuneConfig,
) -> Result<Vec<f64>, FinetuneError> {
    if sets.len() != labels.len() {
        return Err(FinetuneError::LengthMismatch { sets: sets.len(), labels: labels.len() });
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::tag::MLP, 1]));
    let mut order: Vec<usize> = (0..sets.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut mlp_grads = MlpGradients::zeros(model);
            let mut cb_centers = vec![0.0; codebook.centers().len()];
            let mut cb_widths = vec![0.0; codebook.k()];
            for &i in batch {
                let h = quantize(&sets[i], codebook)?;
                let (loss, dh) = model.backward_sample(h.bins(), labels[i], &mut mlp_grads)?;
                total += loss;
                let g = quantize_backward(&sets[i], codebook, &dh)?;
                cb_centers.iter_mut().zip(&g.d_centers).for_each(|(a, b)| *a += b);
                cb_widths.iter_mut().zip(&g.d_widths).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            mlp_grads.scale(inv);
            model.apply_step(&mlp_grads, cfg.learning_rate);
            let step = crate::bofquant::BofGradients {
                d_centers: cb_centers.into_iter().map(|v| v * inv).collect(),
                d_widths: cb_widths.into_iter().map(|v| v * inv).collect(),
                d_inputs: Vec::new(),
            };
            codebook.apply_step(&step, cfg.codebook_learning_rate, cfg.min_width);
        }
        let mean = total / sets.len().max(1) as f64;
        if !mean.is_finite() || codebook.centers().iter().any(|v| !v.is_finite()) {
            return Err(FinetuneError::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bofquant::init_codebook;
    use crate::mlpclassify::{train_with_classes, TrainConfig};
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn joint_training_lowers_loss() {
        let ds = generate(&SynthConfig {
            identities: 3,
            samples_per_identity: 8,
            height: 3,
            width: 3,
            channels: 6,
            seed: 4,
            ..SynthConfig::default()
        });
        let sets = ds.vector_sets();
        let labels = ds.manifest.labels();
        let pooled = FeatureVectorSet::concat(&sets).unwrap();
        let mut cb = init_codebook(&pooled, 6, 1).unwrap();
        let hists: Vec<_> = sets.iter().map(|s| quantize(s, &cb).unwrap()).collect();
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 5, batch_size: 4, seed: 2 };
        let mut model = train_with_classes(&hists, &labels, 3, &cfg).unwrap();
        let before: f64 = {
            let h: Vec<_> = sets.iter().map(|s| quantize(s, &cb).unwrap()).collect();
            model.mean_loss(&h, &labels).unwrap()
        };
        let ft = FinetuneConfig { epochs: 30, learning_rate: 0.5, codebook_learning_rate: 0.5, batch_size: 4, ..Default::default() };
        let history = finetune(&mut cb, &mut model, &sets, &labels, &ft).unwrap();
        let h: Vec<_> = sets.iter().map(|s| quantize(s, &cb).unwrap()).collect();
        let after = model.mean_loss(&h, &labels).unwrap();
        assert_eq!(history.len(), 30);
        assert!(after < before, "{after} !< {before}");
        assert!(cb.widths().iter().all(|&w| w > 0.0));
    }
}
