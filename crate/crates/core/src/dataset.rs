//! Pool-based datasets: a dense feature matrix plus optional ground truth and
//! display assets.
//!
//! CSV is the only ingestion format. The first row is a header; a column named
//! `label` (or the column passed as `label_column`) holds integer class ids and
//! a column named `asset` holds an opaque display string. Every other column
//! must be numeric and becomes a feature, in header order.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HseError, Result};

pub const LABEL_COLUMN: &str = "label";
pub const ASSET_COLUMN: &str = "asset";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    n: usize,
    q: usize,
    /// Row-major `n * q`.
    features: Vec<f64>,
    labels: Option<Vec<usize>>,
    class_count: usize,
    assets: Option<Vec<String>>,
    class_names: Option<Vec<String>>,
}

/// Sidecar metadata stored next to a CSV as `<stem>.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub label_column: Option<String>,
    /// Overrides `1 + max label`.
    pub class_count: Option<usize>,
    pub name: Option<String>,
}

impl Dataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        q: usize,
        features: Vec<f64>,
        labels: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            n,
            q,
            features,
            labels,
            class_count,
            assets: None,
            class_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_assets(mut self, assets: Vec<String>) -> Result<Self> {
        if assets.len() != self.n {
            return Err(HseError::Validation(format!(
                "{} assets for {} points",
                assets.len(),
                self.n
            )));
        }
        self.assets = Some(assets);
        Ok(self)
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Result<Self> {
        if let Some(name) = meta.name {
            self.name = name;
        }
        if !meta.class_names.is_empty() {
            if meta.class_names.len() < self.class_count {
                return Err(HseError::Validation(format!(
                    "{} class names for {} classes",
                    meta.class_names.len(),
                    self.class_count
                )));
            }
            self.class_count = meta.class_names.len();
            self.class_names = Some(meta.class_names);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.q == 0 {
            return Err(HseError::Validation(format!(
                "dataset must have N >= 1 and Q >= 1 (got {}x{})",
                self.n, self.q
            )));
        }
        if self.features.len() != self.n * self.q {
            return Err(HseError::Validation("feature buffer size mismatch".into()));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(HseError::Validation(format!(
                "non-finite feature at point {}",
                pos / self.q
            )));
        }
        if self.class_count < 2 {
            return Err(HseError::Validation("class count must be at least 2".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.n {
                return Err(HseError::Validation("label count mismatch".into()));
            }
            if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= self.class_count) {
                return Err(HseError::Validation(format!(
                    "label {y} of point {i} outside [0, {})",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Self> {
        let opts = CsvOptions {
            label_column: label_column.map(str::to_owned),
            ..CsvOptions::default()
        };
        Self::load_csv_with(path, &opts)
    }

    /// Loads a CSV and, if present, its `<stem>.json` sidecar.
    pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut opts = opts.clone();
        if opts.name.is_none() {
            opts.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        let ds = Self::from_csv_reader(file, &opts)?;
        let sidecar = path.with_extension("json");
        if sidecar.is_file() {
            let meta: DatasetMeta = serde_json::from_reader(std::fs::File::open(sidecar)?)?;
            return ds.with_meta(meta);
        }
        Ok(ds)
    }

    pub fn from_csv_reader<R: Read>(reader: R, opts: &CsvOptions) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| HseError::Parse { row: 1, message: e.to_string() })?
            .clone();
        let label_name = opts.label_column.as_deref().unwrap_or(LABEL_COLUMN);
        let label_idx = headers.iter().position(|h| h == label_name);
        if opts.label_column.is_some() && label_idx.is_none() {
            return Err(HseError::Validation(format!("no column named {label_name:?}")));
        }
        let asset_idx = headers.iter().position(|h| h == ASSET_COLUMN);
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| Some(c) != label_idx && Some(c) != asset_idx)
            .collect();

        let mut features = Vec::new();
        let mut labels = label_idx.map(|_| Vec::new());
        let mut assets = asset_idx.map(|_| Vec::new());
        for (i, record) in rdr.records().enumerate() {
            // header is row 1
            let row = i + 2;
            let record = record.map_err(|e| HseError::Parse { row, message: e.to_string() })?;
            if record.len() != headers.len() {
                return Err(HseError::Parse {
                    row,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for &c in &feature_cols {
                let v: f64 = record[c].parse().map_err(|_| HseError::Parse {
                    row,
                    message: format!("column {:?}: {:?} is not a number", &headers[c], &record[c]),
                })?;
                features.push(v);
            }
            if let (Some(c), Some(labels)) = (label_idx, labels.as_mut()) {
                let y: usize = record[c].parse().map_err(|_| HseError::Parse {
                    row,
                    message: format!("label {:?} is not a non-negative integer", &record[c]),
                })?;
                labels.push(y);
            }
            if let (Some(c), Some(assets)) = (asset_idx, assets.as_mut()) {
                assets.push(record[c].to_owned());
            }
        }
        let q = feature_cols.len();
        let n = features.len().checked_div(q).unwrap_or(0);
        let class_count = match (opts.class_count, &labels) {
            (Some(c), _) => c,
            (None, Some(ls)) => ls.iter().max().map_or(2, |m| (m + 1).max(2)),
            (None, None) => 2,
        };
        let mut ds = Dataset::new(
            opts.name.clone().unwrap_or_else(|| "dataset".into()),
            n,
            q,
            features,
            labels,
            class_count,
        )?;
        if let Some(assets) = assets {
            ds = ds.with_assets(assets)?;
        }
        Ok(ds)
    }

    /// Writes the dataset back out in the ingestion format. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.q).map(|j| format!("f{j}")).collect();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN.into());
        }
        if self.assets.is_some() {
            header.push(ASSET_COLUMN.into());
        }
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            if let Some(labels) = &self.labels {
                rec.push(labels[i].to_string());
            }
            if let Some(assets) = &self.assets {
                rec.push(assets[i].clone());
            }
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.q..(i + 1) * self.q]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn assets(&self) -> Option<&[String]> {
        self.assets.as_deref()
    }

    pub fn asset(&self, i: usize) -> Option<&str> {
        self.assets.as_ref().map(|a| a[i].as_str())
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

fn csv_io(e: csv::Error) -> HseError {
    HseError::Io(std::io::Error::other(e))
}

/// Partitions `0..n` into (labeled, unlabeled), both ascending.
pub fn split_state(n: usize, labeled: &BTreeSet<usize>) -> Result<(Vec<usize>, Vec<usize>)> {
    if let Some(&bad) = labeled.iter().find(|&&i| i >= n) {
        return Err(HseError::Validation(format!("point id {bad} out of range for N={n}")));
    }
    let l: Vec<usize> = labeled.iter().copied().collect();
    let u: Vec<usize> = (0..n).filter(|i| !labeled.contains(i)).collect();
    Ok((l, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Dataset> {
        Dataset::from_csv_reader(s.as_bytes(), &CsvOptions::default())
    }

    #[test]
    fn minimal_two_point_file() {
        let ds = parse("f0,f1,label\n0,0,0\n1,1,1\n").unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.class_count()), (2, 2, 2));
        assert_eq!(ds.labels(), Some(&[0, 1][..]));
    }

    #[test]
    fn glass_shaped_file() {
        let mut s = String::new();
        s.push_str(&(0..10).map(|j| format!("f{j}")).collect::<Vec<_>>().join(","));
        s.push_str(",label\n");
        for i in 0..214 {
            let row: Vec<String> = (0..10).map(|j| format!("{}", (i * j) as f64 * 0.01)).collect();
            s.push_str(&format!("{},{}\n", row.join(","), i % 6));
        }
        let ds = parse(&s).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.class_count()), (214, 10, 6));
    }

    #[test]
    fn parse_error_names_row() {
        let err = parse("f0,f1,label\n1,2,oops\n").unwrap_err();
        assert!(matches!(err, HseError::Parse { row: 2, .. }), "{err}");
        let err = parse("f0,f1\n1,2\n3,x\n").unwrap_err();
        assert!(matches!(err, HseError::Parse { row: 3, .. }), "{err}");
        let err = parse("f0,f1\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, HseError::Parse { row: 3, .. }), "{err}");
    }

    #[test]
    fn label_out_of_range_is_validation_error() {
        let opts = CsvOptions { class_count: Some(2), ..Default::default() };
        let err = Dataset::from_csv_reader("a,label\n0,0\n1,5\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, HseError::Validation(_)));
    }

    #[test]
    fn reserved_columns_and_custom_label_column() {
        let ds = parse("x,asset,label,y\n1,img/a.png,0,2\n3,img/b.png,1,4\n").unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.row(1), &[3.0, 4.0]);
        assert_eq!(ds.asset(0), Some("img/a.png"));

        let opts = CsvOptions { label_column: Some("cls".into()), ..Default::default() };
        let ds = Dataset::from_csv_reader("a,cls\n0.5,2\n1.5,0\n".as_bytes(), &opts).unwrap();
        assert_eq!(ds.class_count(), 3);
        assert_eq!(ds.dim(), 1);
    }

    #[test]
    fn sidecar_meta_is_applied() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("toy.csv"), "a,label\n0,0\n1,1\n").unwrap();
        std::fs::write(
            dir.path().join("toy.json"),
            r#"{"class_names": ["cat", "dog", "bird"], "name": "pets"}"#,
        )
        .unwrap();
        let ds = Dataset::load_csv(dir.path().join("toy.csv"), None).unwrap();
        assert_eq!(ds.name(), "pets");
        assert_eq!(ds.class_count(), 3);
        assert_eq!(ds.class_names().unwrap()[2], "bird");
    }

    #[test]
    fn split_state_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(split_state(5, &s(&[1, 3])).unwrap(), (vec![1, 3], vec![0, 2, 4]));
        assert_eq!(split_state(3, &s(&[])).unwrap(), (vec![], vec![0, 1, 2]));
        assert_eq!(split_state(3, &s(&[0, 1, 2])).unwrap(), (vec![0, 1, 2], vec![]));
        assert!(matches!(split_state(3, &s(&[3])), Err(HseError::Validation(_))));
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(Dataset::new("x", 1, 1, vec![f64::NAN], None, 2).is_err());
        assert!(Dataset::new("x", 0, 1, vec![], None, 2).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e12f64..1e12, 3), 1..20),
            labels_seed in 0usize..1000,
        ) {
            let n = rows.len();
            let labels: Vec<usize> = (0..n).map(|i| (i + labels_seed) % 3).collect();
            let ds = Dataset::new("rt", n, 3, rows.concat(), Some(labels), 3).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let opts = CsvOptions { class_count: Some(3), name: Some("rt".into()), ..Default::default() };
            let back = Dataset::from_csv_reader(buf.as_slice(), &opts).unwrap();
            let a: Vec<u64> = ds.features().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.features().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(ds.labels(), back.labels());
        }

        #[test]
        fn split_state_partitions(n in 1usize..60, picks in prop::collection::btree_set(0usize..60, 0..30)) {
            let labeled: BTreeSet<usize> = picks.into_iter().filter(|&i| i < n).collect();
            let (l, u) = split_state(n, &labeled).unwrap();
            let mut all: Vec<usize> = l.iter().chain(&u).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(l.iter().all(|i| !u.contains(i)));
        }
    }
}
