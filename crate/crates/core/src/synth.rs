//! Synthetic labelled feature maps standing in for CNN extractor output.
//!
//! Every identity owns a few Gaussian channel signatures ("parts"); each
//! spatial cell of one of its maps is either a noisy copy of a randomly
//! chosen part or, with probability `shared_fraction`, a noisy copy of a
//! background prototype common to all identities.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed;
use crate::tensorio::{save_feature_map, DatasetManifest, FeatureMap, FeatureVectorSet, FormatError, ManifestRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub parts_per_identity: usize,
    pub shared_prototypes: usize,
    pub shared_fraction: f64,
    pub signature_scale: f64,
    pub noise: f64,
    /// Share of each identity's samples flagged as masked.
    pub masked_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 20,
            samples_per_identity: 30,
            height: 10,
            width: 10,
            channels: 32,
            parts_per_identity: 4,
            shared_prototypes: 8,
            shared_fraction: 0.3,
            signature_scale: 1.0,
            noise: 0.5,
            masked_fraction: 1.0 / 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub maps: Vec<FeatureMap>,
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn generate(cfg: &SynthConfig) -> SynthDataset {
    let mut rng = seed::rng(cfg.seed);
    let c = cfg.channels;
    let shared: Vec<Vec<f64>> = (0..cfg.shared_prototypes)
        .map(|_| gaussian_vec(&mut rng, c, cfg.signature_scale))
        .collect();
    let masked_per_identity = (cfg.masked_fraction * cfg.samples_per_identity as f64).round() as usize;

    let mut records = Vec::with_capacity(cfg.identities * cfg.samples_per_identity);
    let mut maps = Vec::with_capacity(records.capacity());
    for id in 0..cfg.identities {
        let parts: Vec<Vec<f64>> = (0..cfg.parts_per_identity.max(1))
            .map(|_| gaussian_vec(&mut rng, c, cfg.signature_scale))
            .collect();
        for s in 0..cfg.samples_per_identity {
            let mut data = Vec::with_capacity(cfg.height * cfg.width * c);
            for _ in 0..cfg.height * cfg.width {
                let base = if !shared.is_empty() && rng.random::<f64>() < cfg.shared_fraction {
                    &shared[rng.random_range(0..shared.len())]
                } else {
                    &parts[rng.random_range(0..parts.len())]
                };
                data.extend(base.iter().map(|b| (b + cfg.noise * rng.sample::<f64, _>(StandardNormal)) as f32));
            }
            maps.push(FeatureMap::new(cfg.height, cfg.width, c, data).expect("finite synthetic data"));
            records.push(ManifestRecord {
                path: format!("faces/id{id:03}_{s:03}.png"),
                subject: format!("id{id:03}"),
                masked: s < masked_per_identity,
                split: None,
            });
        }
    }
    SynthDataset { manifest: DatasetManifest::from_records(records), maps }
}

impl SynthDataset {
    pub fn vector_sets(&self) -> Vec<FeatureVectorSet> {
        self.maps.iter().map(FeatureMap::flatten).collect()
    }

    /// Writes `manifest.tsv` and one `features/<stem>.dbf` per record under
    /// `dir`, returning the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf, FormatError> {
        let dir = dir.as_ref();
        let features = dir.join("features");
        fs::create_dir_all(&features)?;
        for (record, map) in self.manifest.records().iter().zip(&self.maps) {
            save_feature_map(map, features.join(format!("{}.dbf", record.stem())))?;
        }
        let manifest = dir.join("manifest.tsv");
        fs::write(&manifest, self.manifest.to_tsv()).map_err(|e: io::Error| FormatError::Io(e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_labels() {
        let cfg = SynthConfig { identities: 3, samples_per_identity: 6, ..SynthConfig::default() };
        let ds = generate(&cfg);
        assert_eq!(ds.maps.len(), 18);
        assert_eq!(ds.manifest.num_classes(), 3);
        assert_eq!(ds.maps[0].shape(), (10, 10, 32));
        let masked = ds.manifest.records().iter().filter(|r| r.masked).count();
        assert_eq!(masked, 6);
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { identities: 2, samples_per_identity: 2, seed: 5, ..SynthConfig::default() };
        assert_eq!(generate(&cfg).maps, generate(&cfg).maps);
    }
}
