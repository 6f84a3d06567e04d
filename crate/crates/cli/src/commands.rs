use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use deepbof::bofquant::{init_codebook, load_codebook, quantize, quantize_all, save_codebook};
use deepbof::evalharness::{load_feature_dir, run_sweep, MlpClassifier, SweepConfig};
use deepbof::finetune::{finetune, FinetuneConfig};
use deepbof::imageprep::{align_face, crop_unmasked, load_image, load_sidecar, save_png, sidecar_path};
use deepbof::mlpclassify::{load_model, save_model, train_with_classes};
use deepbof::seed;
use deepbof::synth::{generate, SynthConfig};
use deepbof::tensorio::{load_feature_map, load_manifest, oversample_indices, DatasetManifest, ManifestError, ManifestRecord};
use deepbof::{EvalReport, FeatureVectorSet};

use crate::config::PipelineConfig;

pub const CODEBOOK_FILE: &str = "codebook.dbc";
pub const MODEL_FILE: &str = "model.dbm";
pub const CLASSES_FILE: &str = "classes.txt";

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    match load_manifest(path) {
        Ok(m) => Ok(m),
        // already names the file
        Err(e @ ManifestError::Io { .. }) => Err(e.into()),
        Err(e) => Err(anyhow::Error::new(e).context(format!("manifest {}", path.display()))),
    }
}

/// Records tagged `train`, or every record when none carry that tag.
fn training_records(manifest: &DatasetManifest) -> DatasetManifest {
    let tagged: Vec<ManifestRecord> =
        manifest.records().iter().filter(|r| r.split.as_deref() == Some("train")).cloned().collect();
    if tagged.is_empty() {
        manifest.clone()
    } else {
        DatasetManifest::from_records(tagged)
    }
}

fn load_sets(manifest: &DatasetManifest, features: &Path) -> Result<Vec<FeatureVectorSet>> {
    let source = load_feature_dir(manifest, features)
        .with_context(|| format!("loading features from {}", features.display()))?;
    Ok(source.0)
}

pub fn preprocess(cfg: &PipelineConfig) -> Result<()> {
    let manifest_path = cfg.manifest()?;
    let out = cfg.out()?;
    let manifest = read_manifest(manifest_path)?;
    create_out(out)?;
    let mut stems = HashSet::new();
    let mut records = Vec::with_capacity(manifest.len());
    for record in manifest.records() {
        let stem = record.stem();
        ensure!(stems.insert(stem.to_string()), "two records share the file stem {stem:?}");
        let path = manifest.resolve(record);
        let eyes = load_sidecar(sidecar_path(&path))?;
        let image = load_image(&path)?;
        let crop = align_face(&image, eyes).and_then(|aligned| crop_unmasked(&aligned))
            .with_context(|| format!("aligning {}", path.display()))?;
        let name = format!("{stem}.png");
        save_png(&crop, out.join(&name))?;
        records.push(ManifestRecord { path: name, ..record.clone() });
    }
    write_file(out.join("manifest.tsv"), DatasetManifest::from_records(records).to_tsv())?;
    log::info!("wrote {} crops to {}", manifest.len(), out.display());
    Ok(())
}

pub fn codebook(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let k = cfg.single_size()?;
    let out = cfg.out()?;
    let manifest = training_records(&read_manifest(cfg.manifest()?)?);
    let sets = load_sets(&manifest, cfg.features()?)?;
    let pooled = FeatureVectorSet::concat(&sets)?;
    log::info!("clustering {} vectors of dimension {} into {k} codewords", pooled.len(), pooled.dim());
    let cb = init_codebook(&pooled, k, seed)?;
    create_out(out)?;
    save_codebook(&cb, out.join(CODEBOOK_FILE))?;
    Ok(())
}

pub fn train(cfg: &PipelineConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let out = cfg.out()?;
    let manifest = training_records(&read_manifest(cfg.manifest()?)?);
    ensure!(manifest.num_classes() >= 2, "training needs at least two subjects, found {}", manifest.num_classes());
    let sets = load_sets(&manifest, cfg.features()?)?;

    let mut cb = match &cfg.codebook {
        Some(path) => load_codebook(path).with_context(|| format!("loading codebook {}", path.display()))?,
        None => {
            let pooled = FeatureVectorSet::concat(&sets)?;
            init_codebook(&pooled, cfg.single_size()?, seed)?
        }
    };

    let mut rng = seed::rng(seed::derive(seed, &[seed::tag::OVERSAMPLE]));
    let all: Vec<usize> = (0..manifest.len()).collect();
    let (balanced, warnings) = oversample_indices(manifest.records(), &all, &mut rng);
    for w in &warnings {
        log::warn!("{w}");
    }
    let labels = manifest.labels();
    let hists = quantize_all(&sets, &cb)?;
    let inputs: Vec<_> = balanced.iter().map(|&i| hists[i].clone()).collect();
    let targets: Vec<usize> = balanced.iter().map(|&i| labels[i]).collect();
    let mut model = train_with_classes(&inputs, &targets, manifest.num_classes(), &cfg.train_config(seed))?;
    log::info!("classifier trained, final loss {:.4}", model.final_loss().unwrap_or(f64::NAN));

    if cfg.finetune_epochs > 0 {
        let balanced_sets: Vec<FeatureVectorSet> = balanced.iter().map(|&i| sets[i].clone()).collect();
        let ft = FinetuneConfig {
            epochs: cfg.finetune_epochs,
            learning_rate: cfg.lr,
            codebook_learning_rate: cfg.lr,
            batch_size: cfg.batch_size,
            seed,
            ..FinetuneConfig::default()
        };
        let history = finetune(&mut cb, &mut model, &balanced_sets, &targets, &ft)?;
        log::info!("fine-tuned {} epochs, final loss {:.4}", history.len(), history.last().copied().unwrap_or(f64::NAN));
    }

    create_out(out)?;
    save_codebook(&cb, out.join(CODEBOOK_FILE))?;
    save_model(&model, out.join(MODEL_FILE))?;
    let mut classes = manifest.classes().join("\n");
    classes.push('\n');
    write_file(out.join(CLASSES_FILE), classes)?;
    Ok(())
}

pub fn eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let seed = cfg.seed()?;
    let out = cfg.out()?;
    let manifest = read_manifest(cfg.manifest()?)?;
    let features = cfg.features()?;
    let source = load_feature_dir(&manifest, features)
        .with_context(|| format!("loading features from {}", features.display()))?;
    let sweep = SweepConfig { sizes: cfg.codebook_size.clone(), folds: cfg.folds, seed };
    let classifier = MlpClassifier(cfg.train_config(seed));
    let config = run_sweep(&manifest, &source, &sweep, &classifier, &cfg.extractor, &cfg.feature_map)?;
    let report = EvalReport { configs: vec![config] };
    create_out(out)?;
    write_file(out.join("report.tsv"), report.to_table())?;
    write_file(out.join("records.jsonl"), report.to_records())?;
    write_file(out.join("timing.tsv"), report.to_timing_table())?;
    Ok(report)
}

/// Top-1 identity and its softmax score for each feature file.
pub fn predict(cfg: &PipelineConfig, files: &[PathBuf]) -> Result<Vec<(String, f64)>> {
    let dir = cfg.model.as_deref().context("no model directory given: pass --model")?;
    let cb = load_codebook(dir.join(CODEBOOK_FILE))
        .with_context(|| format!("loading {}", dir.join(CODEBOOK_FILE).display()))?;
    let model = load_model(dir.join(MODEL_FILE)).with_context(|| format!("loading {}", dir.join(MODEL_FILE).display()))?;
    let classes_path = dir.join(CLASSES_FILE);
    let classes: Vec<String> = fs::read_to_string(&classes_path)
        .with_context(|| format!("reading {}", classes_path.display()))?
        .lines()
        .map(str::to_string)
        .collect();
    if classes.len() != model.classes() || model.inputs() != cb.k() {
        bail!(
            "{}: model has {} inputs and {} classes, codebook has {} codewords, {} names listed",
            dir.display(),
            model.inputs(),
            model.classes(),
            cb.k(),
            classes.len()
        );
    }
    files
        .iter()
        .map(|path| {
            let fm = load_feature_map(path).with_context(|| format!("loading {}", path.display()))?;
            let h = quantize(&fm.flatten(), &cb).with_context(|| format!("quantizing {}", path.display()))?;
            let (class, score) = model.predict_class(h.bins())?;
            Ok((classes[class].clone(), score))
        })
        .collect()
}

pub struct SynthArgs {
    pub identities: usize,
    pub samples: usize,
    pub size: usize,
    pub channels: usize,
}

pub fn synth(cfg: &PipelineConfig, args: &SynthArgs) -> Result<PathBuf> {
    let out = cfg.out()?;
    let ds = generate(&SynthConfig {
        identities: args.identities,
        samples_per_identity: args.samples,
        height: args.size,
        width: args.size,
        channels: args.channels,
        seed: cfg.seed()?,
        ..SynthConfig::default()
    });
    create_out(out)?;
    Ok(ds.write(out)?)
}
