use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::{BilevelError, Result};
use crate::numerics::{RngStream, Vector};

/// Distance between the two class means of the synthetic blobs.
pub const BLOB_SEPARATION: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// Labelled binary classification rows with split tags and a record of
/// which training labels were flipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vector>,
    pub labels: Vec<u8>,
    pub corruption_mask: Vec<bool>,
    pub splits: Vec<SplitTag>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vector::dim)
    }

    /// Row indices belonging to `split`, in file order.
    pub fn rows(&self, split: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn count(&self, split: SplitTag) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.len() != n || self.corruption_mask.len() != n || self.splits.len() != n {
            return Err(BilevelError::invalid("dataset columns have unequal lengths"));
        }
        let d = self.feature_dim();
        if let Some(i) = self.features.iter().position(|f| f.dim() != d) {
            return Err(BilevelError::invalid(format!("dataset row {i} has inconsistent feature dimension")));
        }
        if let Some(i) = self.labels.iter().position(|&l| l > 1) {
            return Err(BilevelError::invalid(format!("dataset row {i} has a non-binary label")));
        }
        Ok(())
    }
}

/// Two unit-covariance Gaussian blobs whose means sit `±2` along a random
/// unit direction. Exactly `round(p_corrupt · n_train)` training labels
/// are flipped; validation and test rows are left clean.
pub fn generate_hyperclean_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    d: usize,
    p_corrupt: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 || d == 0 {
        return Err(BilevelError::invalid("dataset sizes and feature dimension must be positive"));
    }
    if !(0.0..=1.0).contains(&p_corrupt) {
        return Err(BilevelError::invalid(format!("corruption rate {p_corrupt} outside [0, 1]")));
    }
    let root = RngStream::new(seed, "hyperclean-data");
    let mut s = root.child("direction");
    let dir = Vector::from((0..d).map(|_| s.normal()).collect::<Vec<_>>());
    let dir = dir.div_scalar(dir.norm());
    let offset = dir.scale(BLOB_SEPARATION / 2.0);

    let total = n_train + n_val + n_test;
    let mut s = root.child("rows");
    let mut features = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    for i in 0..total {
        let label = (s.uniform() < 0.5) as u8;
        let mut f = Vector::from((0..d).map(|_| s.normal()).collect::<Vec<_>>());
        f.axpy(if label == 1 { 1.0 } else { -1.0 }, &offset);
        features.push(f);
        labels.push(label);
        splits.push(if i < n_train {
            SplitTag::Train
        } else if i < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        });
    }

    let n_flip = (p_corrupt * n_train as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_train).collect();
    root.child("corruption").shuffle(&mut order);
    let mut corruption_mask = vec![false; total];
    for &i in &order[..n_flip] {
        labels[i] = 1 - labels[i];
        corruption_mask[i] = true;
    }
    Ok(Dataset {
        features,
        labels,
        corruption_mask,
        splits,
    })
}

/// Writes the comma-separated dataset format: header
/// `split,label,corrupted,f0..f{d-1}`, LF line endings.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(File::create(path)?);
    let d = dataset.feature_dim();
    let mut header = vec!["split".to_string(), "label".into(), "corrupted".into()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..dataset.len() {
        let mut rec = vec![
            dataset.splits[i].as_str().to_string(),
            dataset.labels[i].to_string(),
            (dataset.corruption_mask[i] as u8).to_string(),
        ];
        rec.extend(dataset.features[i].iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> BilevelError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BilevelError::Io(io),
        other => BilevelError::invalid(format!("csv: {other:?}")),
    }
}

/// Parses the dataset format. A missing `corrupted` column means no row
/// is marked corrupted.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?));
    let header = r
        .headers()
        .map_err(|e| BilevelError::Format { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let split_col = col("split").ok_or(BilevelError::Format { line: 1, message: "missing 'split' column".into() })?;
    let label_col = col("label").ok_or(BilevelError::Format { line: 1, message: "missing 'label' column".into() })?;
    let corrupt_col = col("corrupted");
    let mut feature_cols = Vec::new();
    while let Some(c) = col(&format!("f{}", feature_cols.len())) {
        feature_cols.push(c);
    }
    if feature_cols.is_empty() {
        return Err(BilevelError::Format { line: 1, message: "no feature columns f0..".into() });
    }

    let mut ds = Dataset {
        features: Vec::new(),
        labels: Vec::new(),
        corruption_mask: Vec::new(),
        splits: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| BilevelError::Format {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fmt = |message: String| BilevelError::Format { line, message };
        if rec.len() != header.len() {
            return Err(fmt(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let split = SplitTag::parse(&rec[split_col]).ok_or_else(|| fmt(format!("bad split '{}'", &rec[split_col])))?;
        let label = match &rec[label_col] {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(fmt(format!("bad label '{other}'"))),
        };
        let corrupted = match corrupt_col.map(|c| &rec[c]) {
            None | Some("0") => false,
            Some("1") => true,
            Some(other) => return Err(fmt(format!("bad corrupted flag '{other}'"))),
        };
        let mut f = Vec::with_capacity(feature_cols.len());
        for (j, &c) in feature_cols.iter().enumerate() {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|_| fmt(format!("feature f{j} is not numeric: '{}'", &rec[c])))?;
            if !v.is_finite() {
                return Err(fmt(format!("feature f{j} is not finite")));
            }
            f.push(v);
        }
        ds.features.push(Vector::from(f));
        ds.labels.push(label);
        ds.corruption_mask.push(corrupted);
        ds.splits.push(split);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_all(path: &Path, text: &str) -> Result<()> {
        File::create(path)?.write_all(text.as_bytes())?;
        Ok(())
    }

    #[test]
    fn corruption_counts() {
        let clean = generate_hyperclean_dataset(50, 10, 10, 3, 0.0, 1).unwrap();
        assert!(clean.corruption_mask.iter().all(|&m| !m));
        let all = generate_hyperclean_dataset(50, 10, 10, 3, 1.0, 1).unwrap();
        for i in 0..all.len() {
            assert_eq!(all.corruption_mask[i], all.splits[i] == SplitTag::Train);
        }
        let some = generate_hyperclean_dataset(1000, 10, 10, 3, 0.1, 4).unwrap();
        assert_eq!(some.corruption_mask.iter().filter(|&&m| m).count(), 100);
    }

    #[test]
    fn corrupted_labels_are_flipped() {
        let clean = generate_hyperclean_dataset(40, 5, 5, 2, 0.0, 9).unwrap();
        let dirty = generate_hyperclean_dataset(40, 5, 5, 2, 0.25, 9).unwrap();
        assert_eq!(clean.features, dirty.features);
        for i in 0..clean.len() {
            assert_eq!(clean.labels[i] != dirty.labels[i], dirty.corruption_mask[i]);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = generate_hyperclean_dataset(20, 5, 5, 4, 0.2, 3).unwrap();
        write_dataset_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("split,label,corrupted,f0,f1,f2,f3\n"));
        assert!(!text.contains('\r'));
        assert_eq!(load_dataset_csv(&path).unwrap(), ds);
    }

    #[test]
    fn non_numeric_feature_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_all(&path, "split,label,corrupted,f0,f1\ntrain,1,0,0.5,1\nval,0,0,abc,2\n").unwrap();
        match load_dataset_csv(&path) {
            Err(BilevelError::Format { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("f0"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dimension_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        write_all(&path, "split,label,f0,f1\ntrain,1,0.5,1\ntest,0,2\n").unwrap();
        assert!(matches!(load_dataset_csv(&path), Err(BilevelError::Format { line: 3, .. })));
    }

    #[test]
    fn missing_corruption_column_defaults_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nocorrupt.csv");
        write_all(&path, "split,label,f0\ntrain,1,0.5\nval,0,-1.25\ntest,1,3\n").unwrap();
        let ds = load_dataset_csv(&path).unwrap();
        assert_eq!(ds.corruption_mask, vec![false; 3]);
        assert_eq!(ds.splits, vec![SplitTag::Train, SplitTag::Val, SplitTag::Test]);
        assert_eq!(ds.features[1], Vector::from(vec![-1.25]));
    }
}
