use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate file path {path}")]
    DuplicatePath { line: usize, path: String },
    #[error("manifest has no records")]
    Empty,
    #[error("manifest has {found} subject(s); at least 2 are required")]
    TooFewClasses { found: usize },
}

/// One sample: a file bound to a subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub subject: String,
    pub masked: bool,
    pub split: Option<String>,
}

impl ManifestRecord {
    /// File stem, used to name derived artifacts (crops, `.dbf` files).
    pub fn stem(&self) -> &str {
        Path::new(&self.path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.path)
    }

    fn to_line(&self) -> String {
        let mut line = format!("{}\t{}\t{}", self.path, self.subject, u8::from(self.masked));
        if let Some(split) = &self.split {
            line.push('\t');
            line.push_str(split);
        }
        line
    }
}

/// Records plus a subject → class-index map in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
    base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    /// Builds a manifest from records without the duplicate-path and
    /// class-count checks applied to files (oversampled manifests contain
    /// repeated paths by construction).
    pub fn from_records(records: Vec<ManifestRecord>) -> Self {
        let mut classes = Vec::new();
        let mut class_index = HashMap::new();
        for r in &records {
            if !class_index.contains_key(&r.subject) {
                class_index.insert(r.subject.clone(), classes.len());
                classes.push(r.subject.clone());
            }
        }
        Self { records, classes, class_index, base_dir: None }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Subject names indexed by class.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_of(&self, subject: &str) -> Option<usize> {
        self.class_index.get(subject).copied()
    }

    /// Class index of every record, in record order.
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| self.class_index[&r.subject]).collect()
    }

    /// Resolves a record path against the manifest's directory.
    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

/// Parses the tab-separated manifest format:
/// `path <TAB> subject <TAB> masked(0|1) [<TAB> split]`.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(ManifestError::Parse {
                line,
                message: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let path = fields[0];
        let subject = fields[1];
        if path.is_empty() {
            return Err(ManifestError::Parse { line, message: "empty file path".into() });
        }
        if subject.is_empty() {
            return Err(ManifestError::Parse { line, message: "empty subject id".into() });
        }
        let masked = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(ManifestError::Parse {
                    line,
                    message: format!("masked flag must be 0 or 1, found {other:?}"),
                })
            }
        };
        let split = fields.get(3).filter(|s| !s.is_empty()).map(|s| s.to_string());
        if !seen.insert(path.to_string()) {
            return Err(ManifestError::DuplicatePath { line, path: path.to_string() });
        }
        records.push(ManifestRecord {
            path: path.to_string(),
            subject: subject.to_string(),
            masked,
            split,
        });
    }
    if records.is_empty() {
        return Err(ManifestError::Empty);
    }
    let manifest = DatasetManifest::from_records(records);
    if manifest.num_classes() < 2 {
        return Err(ManifestError::TooFewClasses { found: manifest.num_classes() });
    }
    Ok(manifest)
}

/// Loads a manifest file; relative record paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest = parse_manifest(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest.with_base_dir(base))
}

/// A subject that could not be balanced because one condition is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OversampleWarning {
    pub subject: String,
    pub masked: usize,
    pub unmasked: usize,
}

impl std::fmt::Display for OversampleWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "subject {:?} cannot be balanced ({} masked, {} unmasked)",
            self.subject, self.masked, self.unmasked
        )
    }
}

/// Balances masked and unmasked samples per subject within `subset`.
///
/// Returns `subset` followed by duplicates of minority-condition indices,
/// drawn with replacement, grouped by subject in first-appearance order.
/// No index outside `subset` is ever read.
pub fn oversample_indices<R: Rng>(
    records: &[ManifestRecord],
    subset: &[usize],
    rng: &mut R,
) -> (Vec<usize>, Vec<OversampleWarning>) {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for &i in subset {
        let r = &records[i];
        let entry = groups.entry(r.subject.as_str()).or_insert_with(|| {
            order.push(r.subject.as_str());
            (Vec::new(), Vec::new())
        });
        if r.masked {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }

    let mut out = subset.to_vec();
    let mut warnings = Vec::new();
    for subject in order {
        let (masked, unmasked) = &groups[subject];
        if masked.len() == unmasked.len() {
            continue;
        }
        if masked.is_empty() || unmasked.is_empty() {
            warnings.push(OversampleWarning {
                subject: subject.to_string(),
                masked: masked.len(),
                unmasked: unmasked.len(),
            });
            continue;
        }
        let (minority, deficit) = if masked.len() < unmasked.len() {
            (masked, unmasked.len() - masked.len())
        } else {
            (unmasked, masked.len() - unmasked.len())
        };
        out.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    }
    (out, warnings)
}

#[derive(Debug, Clone)]
pub struct Oversampled {
    pub manifest: DatasetManifest,
    pub warnings: Vec<OversampleWarning>,
}

/// Balances masked and unmasked records per subject by duplicating
/// minority-condition records. Deterministic given `seed`.
pub fn oversample(manifest: &DatasetManifest, seed: u64) -> Oversampled {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag::OVERSAMPLE]));
    let all: Vec<usize> = (0..manifest.len()).collect();
    let (indices, warnings) = oversample_indices(&manifest.records, &all, &mut rng);
    let records = indices.iter().map(|&i| manifest.records[i].clone()).collect();
    let mut out = DatasetManifest::from_records(records);
    out.base_dir = manifest.base_dir.clone();
    Oversampled { manifest: out, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, subject: &str, masked: bool) -> ManifestRecord {
        ManifestRecord { path: path.into(), subject: subject.into(), masked, split: None }
    }

    #[test]
    fn parses_and_indexes_in_first_appearance_order() {
        let m = parse_manifest("a.png\tbob\t1\nb.png\talice\t0\ttrain\nc.png\tbob\t0\n").unwrap();
        assert_eq!(m.num_classes(), 2);
        assert_eq!(m.classes(), ["bob".to_string(), "alice".to_string()]);
        assert_eq!(m.labels(), vec![0, 1, 0]);
        assert_eq!(m.records()[1].split.as_deref(), Some("train"));
        assert!(m.records()[0].masked);
    }

    #[test]
    fn empty_and_single_subject_rejected() {
        assert!(matches!(parse_manifest(""), Err(ManifestError::Empty)));
        assert!(matches!(parse_manifest("# only a comment\n\n"), Err(ManifestError::Empty)));
        assert!(matches!(
            parse_manifest("a\tx\t0\nb\tx\t1\n"),
            Err(ManifestError::TooFewClasses { found: 1 })
        ));
    }

    #[test]
    fn missing_field_names_line() {
        let err = parse_manifest("a\tx\t0\nb\ty\n").unwrap_err();
        assert!(matches!(err, ManifestError::Parse { line: 2, .. }));
        assert!(err.to_string().starts_with("line 2:"));
        let err = parse_manifest("a\tx\t0\nb\ty\tyes\n").unwrap_err();
        assert!(matches!(err, ManifestError::Parse { line: 2, .. }));
        let err = parse_manifest("a\t\t0\n").unwrap_err();
        assert!(matches!(err, ManifestError::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_paths_rejected() {
        let err = parse_manifest("a\tx\t0\nb\ty\t0\na\ty\t1\n").unwrap_err();
        assert!(matches!(err, ManifestError::DuplicatePath { line: 3, .. }));
    }

    #[test]
    fn tsv_roundtrip() {
        let text = "a.png\tbob\t1\nb.png\talice\t0\ttest\n";
        assert_eq!(parse_manifest(text).unwrap().to_tsv(), text);
    }

    #[test]
    fn resolves_relative_to_manifest_dir() {
        let m = parse_manifest("a.png\tx\t0\n/abs/b.png\ty\t0\n").unwrap().with_base_dir("/data");
        assert_eq!(m.resolve(&m.records()[0]), PathBuf::from("/data/a.png"));
        assert_eq!(m.resolve(&m.records()[1]), PathBuf::from("/abs/b.png"));
    }

    #[test]
    fn oversample_balances_minority() {
        let mut records = vec![rec("m0", "s", true), rec("m1", "s", true)];
        records.extend((0..6).map(|i| rec(&format!("u{i}"), "s", false)));
        records.push(rec("o", "t", false));
        records.push(rec("p", "t", true));
        let manifest = DatasetManifest::from_records(records.clone());
        let out = oversample(&manifest, 3);
        let masked_s = out.manifest.records().iter().filter(|r| r.subject == "s" && r.masked).count();
        assert_eq!(masked_s, 6);
        assert_eq!(out.manifest.len(), 14);
        assert!(out.warnings.is_empty());
        // originals kept verbatim and in order
        assert_eq!(&out.manifest.records()[..records.len()], records.as_slice());
        assert!(out.manifest.records()[records.len()..].iter().all(|r| r.masked && r.subject == "s"));
    }

    #[test]
    fn oversample_fixed_point_and_determinism() {
        let balanced = DatasetManifest::from_records(vec![
            rec("a", "s", true),
            rec("b", "s", false),
            rec("c", "t", false),
            rec("d", "t", true),
        ]);
        assert_eq!(oversample(&balanced, 1).manifest.records(), balanced.records());

        let skewed = DatasetManifest::from_records(
            (0..9).map(|i| rec(&format!("f{i}"), "s", i < 3)).collect(),
        );
        let a = oversample(&skewed, 42);
        let b = oversample(&skewed, 42);
        assert_eq!(a.manifest.records(), b.manifest.records());
    }

    #[test]
    fn subject_without_masked_samples_warns() {
        let m = DatasetManifest::from_records(vec![
            rec("a", "s", false),
            rec("b", "s", false),
            rec("c", "t", false),
            rec("d", "t", true),
        ]);
        let out = oversample(&m, 0);
        assert_eq!(out.manifest.records(), m.records());
        assert_eq!(
            out.warnings,
            vec![OversampleWarning { subject: "s".into(), masked: 0, unmasked: 2 }]
        );
    }

    #[test]
    fn oversample_indices_stay_inside_subset() {
        let records: Vec<_> = (0..20).map(|i| rec(&format!("f{i}"), if i % 2 == 0 { "a" } else { "b" }, i % 5 == 0)).collect();
        let subset: Vec<usize> = (0..20).filter(|i| i % 3 != 0).collect();
        let (out, _) = oversample_indices(&records, &subset, &mut seed::rng(9));
        assert!(out.iter().all(|i| subset.contains(i)));
    }
}
