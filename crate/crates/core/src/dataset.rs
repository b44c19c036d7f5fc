//! Labeled image manifests, the identity registry and stratified folds.
//!
//! A manifest is a UTF-8 CSV file with header `image_path,identity_id` and an
//! optional third `split` column. Image paths are resolved relative to the
//! directory holding the manifest. Class indices are assigned in
//! first-appearance order of each identity.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::seeding;
use crate::{Error, Result};

pub const DEFAULT_MIN_IMAGES: usize = 5;

/// Platform identifier of an individual dog.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IdentityId(String);

impl IdentityId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(Error::InvalidArgument("identity id must be non-empty".into()));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for IdentityId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<IdentityId> for String {
    fn from(id: IdentityId) -> Self {
        id.0
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered identity list with its inverse index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    ids: Vec<IdentityId>,
    index: HashMap<IdentityId, usize>,
}

impl Registry {
    /// Builds a registry from a list that must not contain duplicates.
    pub fn from_ids(ids: Vec<IdentityId>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate identity {id}")));
            }
        }
        Ok(Self { ids, index })
    }

    /// Returns the class index of `id`, enrolling it at the end if unseen.
    fn enroll(&mut self, id: &IdentityId) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.clone());
        self.index.insert(id.clone(), i);
        i
    }

    pub fn index_of(&self, id: &IdentityId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, class_index: usize) -> Option<&IdentityId> {
        self.ids.get(class_index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[IdentityId] {
        &self.ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    /// Path exactly as written in the manifest.
    pub image_path: String,
    pub identity: IdentityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<LabeledImage>,
    classes: Vec<usize>,
    registry: Registry,
}

impl DatasetManifest {
    /// Builds a manifest from in-memory entries. `root` is the directory
    /// relative image paths are resolved against.
    pub fn from_entries(root: impl Into<PathBuf>, entries: Vec<LabeledImage>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("manifest has no entries".into()));
        }
        let mut registry = Registry::default();
        let classes = entries.iter().map(|e| registry.enroll(&e.identity)).collect();
        Ok(Self {
            root: root.into(),
            entries,
            classes,
            registry,
        })
    }

    pub fn entries(&self) -> &[LabeledImage] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Class index of entry `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.classes[i]
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Filesystem path of entry `i`.
    pub fn resolve(&self, i: usize) -> PathBuf {
        let p = Path::new(&self.entries[i].image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Entry indices grouped by class index.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.registry.len()];
        for (i, &c) in self.classes.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    /// Writes the manifest as CSV, including the `split` column only when
    /// some entry carries one.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_entries(path, &self.entries)
    }
}

pub(crate) fn write_entries(path: &Path, entries: &[LabeledImage]) -> Result<()> {
    let with_split = entries.iter().any(|e| e.split.is_some());
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if with_split {
        w.write_record(["image_path", "identity_id", "split"])?;
    } else {
        w.write_record(["image_path", "identity_id"])?;
    }
    for e in entries {
        if with_split {
            w.write_record([
                e.image_path.as_str(),
                e.identity.as_str(),
                e.split.as_deref().unwrap_or(""),
            ])?;
        } else {
            w.write_record([e.image_path.as_str(), e.identity.as_str()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a manifest CSV. Rows are numbered from 1, not counting the header.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let malformed = |row: usize, line: u64, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        line,
        message,
    };

    let headers = reader.headers()?.clone();
    let header: Vec<&str> = headers.iter().collect();
    let has_split = match header.as_slice() {
        ["image_path", "identity_id"] => false,
        ["image_path", "identity_id", "split"] => true,
        _ => {
            return Err(malformed(
                0,
                1,
                format!("expected header image_path,identity_id[,split], found {}", header.join(",")),
            ))
        }
    };

    let mut entries = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let expected = if has_split { 3 } else { 2 };
        if record.len() != expected {
            return Err(malformed(
                row,
                line,
                format!("expected {expected} fields, found {}", record.len()),
            ));
        }
        let image_path = record[0].to_string();
        if image_path.is_empty() {
            return Err(malformed(row, line, "empty image_path".into()));
        }
        let identity = IdentityId::new(&record[1])
            .map_err(|_| malformed(row, line, "empty identity_id".into()))?;
        let split = if has_split && !record[2].is_empty() {
            Some(record[2].to_string())
        } else {
            None
        };
        let key = (image_path.clone(), identity.as_str().to_string());
        if let Some(&first_row) = seen.get(&key) {
            return Err(Error::DuplicateRow {
                path: path.to_path_buf(),
                row,
                first_row,
                image_path,
                identity: identity.to_string(),
            });
        }
        seen.insert(key, row);
        entries.push(LabeledImage {
            image_path,
            identity,
            split,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    DatasetManifest::from_entries(root, entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deficiency {
    pub identity: IdentityId,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub min_images: usize,
    pub valid: bool,
    pub deficient: Vec<Deficiency>,
}

/// Lists every identity with fewer than `min_images` entries, in registry order.
pub fn validate_manifest(manifest: &DatasetManifest, min_images: usize) -> ValidationReport {
    let deficient: Vec<_> = manifest
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.len() < min_images)
        .map(|(c, g)| Deficiency {
            identity: manifest.registry().ids()[c].clone(),
            count: g.len(),
        })
        .collect();
    ValidationReport {
        min_images,
        valid: deficient.is_empty(),
        deficient,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Fold index of every manifest entry, in entry order.
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// Entry indices held out in fold `f`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    /// Entry indices used for training when fold `f` is held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// Checks that this assignment can index `manifest`.
    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.fold_of.len() != manifest.len() {
            return Err(Error::FoldMismatch(format!(
                "{} fold entries for {} manifest entries",
                self.fold_of.len(),
                manifest.len()
            )));
        }
        if self.k < 2 {
            return Err(Error::FoldMismatch(format!("k={} is below 2", self.k)));
        }
        if let Some(i) = self.fold_of.iter().position(|&f| f >= self.k) {
            return Err(Error::FoldMismatch(format!(
                "entry {i} assigned to fold {} with k={}",
                self.fold_of[i], self.k
            )));
        }
        Ok(())
    }
}

/// Fold where an identity's round-robin deal starts.
pub fn start_fold(identity: &IdentityId, k: usize) -> usize {
    (seeding::stable_hash(identity.as_str().as_bytes()) % k as u64) as usize
}

/// Stratified k-fold partition.
///
/// Each identity's entries are shuffled with a ChaCha8 stream seeded from
/// `(seed, identity)` and dealt round-robin starting at
/// [`start_fold`]`(identity, k)`.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > manifest.len() {
        return Err(Error::InvalidFoldCount {
            k,
            entries: manifest.len(),
        });
    }
    let mut fold_of = vec![0; manifest.len()];
    for (class, mut group) in manifest.groups().into_iter().enumerate() {
        let identity = &manifest.registry().ids()[class];
        let mut rng = seeding::rng_for(
            "petident/folds",
            &[&seed.to_le_bytes(), identity.as_str().as_bytes()],
        );
        seeding::shuffle(&mut group, &mut rng);
        let start = start_fold(identity, k);
        for (j, entry) in group.into_iter().enumerate() {
            fold_of[entry] = (start + j) % k;
        }
    }
    Ok(FoldAssignment { k, seed, fold_of })
}

pub const FOLDS_SCHEMA: &str = "petident-folds/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldsDocument {
    pub schema: String,
    pub k: usize,
    pub seed: u64,
    pub entries: Vec<FoldEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldEntry {
    pub image_path: String,
    pub identity_id: IdentityId,
    pub fold: usize,
}

impl FoldsDocument {
    pub fn new(manifest: &DatasetManifest, folds: &FoldAssignment) -> Self {
        let entries = manifest
            .entries()
            .iter()
            .zip(&folds.fold_of)
            .map(|(e, &fold)| FoldEntry {
                image_path: e.image_path.clone(),
                identity_id: e.identity.clone(),
                fold,
            })
            .collect();
        Self {
            schema: FOLDS_SCHEMA.into(),
            k: folds.k,
            seed: folds.seed,
            entries,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if doc.schema != FOLDS_SCHEMA {
            return Err(Error::FoldMismatch(format!(
                "unsupported folds schema {:?}",
                doc.schema
            )));
        }
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("folds document serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Recovers the assignment for `manifest`, requiring the entries to
    /// match row for row.
    pub fn to_assignment(&self, manifest: &DatasetManifest) -> Result<FoldAssignment> {
        if self.entries.len() != manifest.len() {
            return Err(Error::FoldMismatch(format!(
                "folds file lists {} entries, manifest has {}",
                self.entries.len(),
                manifest.len()
            )));
        }
        for (i, (f, e)) in self.entries.iter().zip(manifest.entries()).enumerate() {
            if f.image_path != e.image_path || f.identity_id != e.identity {
                return Err(Error::FoldMismatch(format!(
                    "row {}: folds file has ({}, {}), manifest has ({}, {})",
                    i + 1,
                    f.image_path,
                    f.identity_id,
                    e.image_path,
                    e.identity
                )));
            }
        }
        let folds = FoldAssignment {
            k: self.k,
            seed: self.seed,
            fold_of: self.entries.iter().map(|e| e.fold).collect(),
        };
        folds.check_against(manifest)?;
        Ok(folds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    pub(crate) fn synthetic(groups: &[(&str, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (id, n) in groups {
            for j in 0..*n {
                entries.push(LabeledImage {
                    image_path: format!("{id}_{j}.png"),
                    identity: IdentityId::new(*id).unwrap(),
                    split: None,
                });
            }
        }
        DatasetManifest::from_entries(".", entries).unwrap()
    }

    #[test]
    fn first_appearance_indexing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "m.csv",
            "image_path,identity_id\na.jpg,rex\nb.jpg,rex\nc.jpg,mia\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 3);
        let rex = IdentityId::new("rex").unwrap();
        let mia = IdentityId::new("mia").unwrap();
        assert_eq!(m.registry().index_of(&rex), Some(0));
        assert_eq!(m.registry().index_of(&mia), Some(1));
        assert_eq!(m.classes(), &[0, 0, 1]);
        assert_eq!(m.resolve(2), dir.path().join("c.jpg"));
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "m.csv", "");
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::EmptyManifest { .. }));
        assert!(err.to_string().contains("empty manifest"));

        let p = write_tmp(&dir, "h.csv", "image_path,identity_id\n");
        assert!(matches!(load_manifest(&p), Err(Error::EmptyManifest { .. })));
    }

    #[test]
    fn duplicate_row_names_row_two() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "m.csv", "image_path,identity_id\na.jpg,rex\na.jpg,rex\n");
        match load_manifest(&p).unwrap_err() {
            Error::DuplicateRow { row, first_row, .. } => {
                assert_eq!(row, 2);
                assert_eq!(first_row, 1);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_rows_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "m.csv", "image_path,identity_id\na.jpg,rex\nb.jpg\n");
        match load_manifest(&p).unwrap_err() {
            Error::MalformedRow { row, line, .. } => {
                assert_eq!(row, 2);
                assert_eq!(line, 3);
            }
            e => panic!("unexpected {e}"),
        }
        let p = write_tmp(&dir, "e.csv", "image_path,identity_id\na.jpg,\n");
        assert!(matches!(load_manifest(&p), Err(Error::MalformedRow { row: 1, .. })));
        let p = write_tmp(&dir, "h.csv", "path,id\na.jpg,rex\n");
        assert!(matches!(load_manifest(&p), Err(Error::MalformedRow { row: 0, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_manifest(Path::new("/nonexistent/manifest.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn split_column_is_optional_and_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "m.csv",
            "image_path,identity_id,split\na.jpg,rex,train\nb.jpg,rex,test\nc.jpg,mia,\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries()[1].split.as_deref(), Some("test"));
        assert_eq!(m.entries()[2].split, None);
        let out = dir.path().join("out.csv");
        m.write(&out).unwrap();
        let again = load_manifest(&out).unwrap();
        assert_eq!(again.entries(), m.entries());
    }

    #[test]
    fn same_image_under_two_identities_is_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "m.csv", "image_path,identity_id\na.jpg,rex\na.jpg,mia\n");
        assert_eq!(load_manifest(&p).unwrap().registry().len(), 2);
    }

    #[test]
    fn validation_thresholds() {
        let ids: Vec<String> = (0..16).map(|i| format!("dog{i:02}")).collect();
        let groups: Vec<(&str, usize)> = ids.iter().map(|s| (s.as_str(), 5)).collect();
        let m = synthetic(&groups);
        let r = validate_manifest(&m, DEFAULT_MIN_IMAGES);
        assert!(r.valid);
        assert!(r.deficient.is_empty());

        let m = synthetic(&[("a", 5), ("b", 4)]);
        let r = validate_manifest(&m, 5);
        assert!(!r.valid);
        assert_eq!(
            r.deficient,
            vec![Deficiency {
                identity: IdentityId::new("b").unwrap(),
                count: 4
            }]
        );
        assert!(validate_manifest(&m, 1).valid);
    }

    #[test]
    fn folds_one_per_identity_when_group_equals_k() {
        let ids: Vec<String> = (0..16).map(|i| format!("dog{i:02}")).collect();
        let groups: Vec<(&str, usize)> = ids.iter().map(|s| (s.as_str(), 5)).collect();
        let m = synthetic(&groups);
        for seed in [0, 1, 42, u64::MAX] {
            let folds = make_folds(&m, 5, seed).unwrap();
            assert_eq!(folds.fold_sizes(), vec![16; 5]);
            for f in 0..5 {
                let mut classes: Vec<usize> =
                    folds.test_indices(f).iter().map(|&i| m.class_of(i)).collect();
                classes.sort();
                assert_eq!(classes, (0..16).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn small_group_spreads_over_distinct_folds() {
        let m = synthetic(&[("small", 3), ("big", 20)]);
        let folds = make_folds(&m, 10, 9).unwrap();
        let mut used: Vec<usize> = (0..3).map(|i| folds.fold_of[i]).collect();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn folds_are_deterministic_and_seed_sensitive() {
        let m = synthetic(&[("a", 7), ("b", 9), ("c", 4)]);
        let x = make_folds(&m, 3, 11).unwrap();
        let y = make_folds(&m, 3, 11).unwrap();
        assert_eq!(x, y);
        let differs = (0..20).any(|s| make_folds(&m, 3, s).unwrap().fold_of != x.fold_of);
        assert!(differs);
    }

    #[test]
    fn fold_count_bounds() {
        let m = synthetic(&[("a", 2), ("b", 1)]);
        assert!(matches!(make_folds(&m, 1, 0), Err(Error::InvalidFoldCount { .. })));
        assert!(matches!(make_folds(&m, 4, 0), Err(Error::InvalidFoldCount { .. })));
        assert!(make_folds(&m, 3, 0).is_ok());
    }

    #[test]
    fn folds_document_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthetic(&[("a", 4), ("b", 4)]);
        let folds = make_folds(&m, 2, 3).unwrap();
        let doc = FoldsDocument::new(&m, &folds);
        let p = dir.path().join("folds.json");
        doc.write(&p).unwrap();
        let back = FoldsDocument::read(&p).unwrap();
        assert_eq!(back.to_assignment(&m).unwrap(), folds);

        let other = synthetic(&[("a", 4), ("b", 3)]);
        assert!(matches!(back.to_assignment(&other), Err(Error::FoldMismatch(_))));
        let renamed = synthetic(&[("a", 4), ("c", 4)]);
        assert!(matches!(back.to_assignment(&renamed), Err(Error::FoldMismatch(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stratified_partition(
                sizes in prop::collection::vec(1usize..12, 1..8),
                k in 2usize..11,
                seed in any::<u64>(),
            ) {
                let names: Vec<String> = (0..sizes.len()).map(|i| format!("id{i}")).collect();
                let groups: Vec<(&str, usize)> =
                    names.iter().map(String::as_str).zip(sizes.iter().copied()).collect();
                let m = synthetic(&groups);
                prop_assume!(k <= m.len());
                let folds = make_folds(&m, k, seed).unwrap();
                prop_assert_eq!(folds.fold_sizes().iter().sum::<usize>(), m.len());
                for g in m.groups() {
                    let mut counts = vec![0usize; k];
                    for &i in &g {
                        counts[folds.fold_of[i]] += 1;
                    }
                    let lo = counts.iter().min().unwrap();
                    let hi = counts.iter().max().unwrap();
                    prop_assert!(hi - lo <= 1);
                }
                let mut seen = vec![0u8; m.len()];
                for f in 0..k {
                    for i in folds.test_indices(f) {
                        seen[i] += 1;
                    }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }

            #[test]
            fn registry_is_a_bijection(labels in prop::collection::vec(0u8..6, 1..40)) {
                let entries: Vec<LabeledImage> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| LabeledImage {
                        image_path: format!("{i}.png"),
                        identity: IdentityId::new(format!("d{l}")).unwrap(),
                        split: None,
                    })
                    .collect();
                let m = DatasetManifest::from_entries(".", entries).unwrap();
                let k = m.registry().len();
                for (c, id) in m.registry().ids().iter().enumerate() {
                    prop_assert_eq!(m.registry().index_of(id), Some(c));
                }
                let mut used: Vec<usize> = m.classes().to_vec();
                used.sort();
                used.dedup();
                prop_assert_eq!(used, (0..k).collect::<Vec<_>>());
            }
        }
    }
}
