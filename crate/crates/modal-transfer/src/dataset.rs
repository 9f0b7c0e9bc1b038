//! Labeled feature datasets and transfer tasks.
//!
//! A [`LabeledDataset`] holds one domain's samples: a feature matrix, class
//! labels, and a train/test split. Class `normal_class` marks the baseline
//! (undamaged) condition used by normalisation transforms. The CSV exchange
//! format is one row per sample with the header
//!
//! ```text
//! domain_id,sample_id,split,class,f1..fd
//! ```

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};

use crate::spectral::ModalModel;
use crate::{Error, Result};

/// Train/test membership of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One domain's labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub domain_id: String,
    /// `samples x features`.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    /// Label of the baseline (undamaged) condition.
    pub normal_class: usize,
}

impl LabeledDataset {
    /// Builds and validates a dataset.
    ///
    /// Every class must appear in both partitions, all features must be
    /// finite, and at least one sample must carry the normal class.
    pub fn new(
        domain_id: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        split: Vec<Split>,
        normal_class: usize,
    ) -> Result<Self> {
        let ds = LabeledDataset {
            domain_id: domain_id.into(),
            features,
            labels,
            split,
            normal_class,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n || self.split.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} rows vs {} labels vs {} split flags",
                n,
                self.labels.len(),
                self.split.len()
            )));
        }
        if n == 0 || self.features.ncols() == 0 {
            return Err(Error::MissingData(format!(
                "dataset {} has no samples or no features",
                self.domain_id
            )));
        }
        if let Some(((i, j), v)) = self
            .features
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::Numerical(format!(
                "dataset {}: feature ({i}, {j}) = {v} is not finite",
                self.domain_id
            )));
        }
        let mut classes: Vec<usize> = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        for &c in &classes {
            let in_train = self
                .labels
                .iter()
                .zip(&self.split)
                .any(|(&l, &s)| l == c && s == Split::Train);
            let in_test = self
                .labels
                .iter()
                .zip(&self.split)
                .any(|(&l, &s)| l == c && s == Split::Test);
            if !in_train || !in_test {
                return Err(Error::MissingClass {
                    class: c,
                    context: format!(
                        "dataset {} partition {}",
                        self.domain_id,
                        if in_train { "test" } else { "train" }
                    ),
                });
            }
        }
        if !self.labels.contains(&self.normal_class) {
            return Err(Error::MissingClass {
                class: self.normal_class,
                context: format!("dataset {} (normal condition)", self.domain_id),
            });
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// True where the sample carries the normal-condition class.
    pub fn normal_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == self.normal_class).collect()
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    /// Writes the documented CSV form.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "domain_id".to_string(),
            "sample_id".to_string(),
            "split".to_string(),
            "class".to_string(),
        ];
        header.extend((1..=self.n_features()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n_samples() {
            let mut rec = vec![
                self.domain_id.clone(),
                i.to_string(),
                self.split[i].to_string(),
                self.labels[i].to_string(),
            ];
            rec.extend(self.features.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the documented CSV form. `normal_class` marks the baseline
    /// label (the study convention is class 0).
    pub fn from_csv<R: Read>(reader: R, normal_class: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers().map_err(csv_io)?.clone();
        let fixed = ["domain_id", "sample_id", "split", "class"];
        for (i, name) in fixed.iter().enumerate() {
            match header.get(i) {
                Some(h) if h == *name => {}
                other => {
                    return Err(Error::parse(
                        format!("header column {}", i + 1),
                        format!("expected '{name}', found '{}'", other.unwrap_or("<missing>")),
                    ))
                }
            }
        }
        let d = header.len().saturating_sub(fixed.len());
        if d == 0 {
            return Err(Error::parse("header", "no feature columns (f1..)"));
        }
        for j in 0..d {
            let expect = format!("f{}", j + 1);
            let got = header.get(fixed.len() + j).unwrap_or("<missing>");
            if got != expect {
                return Err(Error::parse(
                    format!("header column {}", fixed.len() + j + 1),
                    format!("expected '{expect}', found '{got}'"),
                ));
            }
        }

        let mut domain_id: Option<String> = None;
        let mut rows: Vec<f64> = Vec::new();
        let mut labels = Vec::new();
        let mut split = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_io)?;
            let line = rec
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            if rec.len() != fixed.len() + d {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("expected {} fields, found {}", fixed.len() + d, rec.len()),
                ));
            }
            let dom = rec.get(0).unwrap();
            match &domain_id {
                None => domain_id = Some(dom.to_string()),
                Some(existing) if existing == dom => {}
                Some(existing) => {
                    return Err(Error::parse(
                        format!("line {line}, field domain_id"),
                        format!("mixed domains '{existing}' and '{dom}'"),
                    ))
                }
            }
            let s = match rec.get(2).unwrap() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::parse(
                        format!("line {line}, field split"),
                        format!("expected 'train' or 'test', found '{other}'"),
                    ))
                }
            };
            let class: usize = rec.get(3).unwrap().parse().map_err(|_| {
                Error::parse(
                    format!("line {line}, field class"),
                    format!("'{}' is not a class label", rec.get(3).unwrap()),
                )
            })?;
            for j in 0..d {
                let cell = rec.get(fixed.len() + j).unwrap();
                let v: f64 = cell.parse().map_err(|_| {
                    Error::parse(
                        format!("line {line}, field f{}", j + 1),
                        format!("'{cell}' is not a number"),
                    )
                })?;
                rows.push(v);
            }
            labels.push(class);
            split.push(s);
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), rows)
            .map_err(|e| Error::parse("body", format!("inconsistent row lengths: {e}")))?;
        LabeledDataset::new(
            domain_id.ok_or_else(|| Error::parse("body", "file has no data rows"))?,
            features,
            labels,
            split,
            normal_class,
        )
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::parse("csv", e.to_string())
}

/// Copies the given columns of `x` into a new matrix, in the given order.
pub fn take_columns(x: ArrayView2<'_, f64>, cols: &[usize]) -> Result<Array2<f64>> {
    for &c in cols {
        if c >= x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "column {c} out of range for {} columns",
                x.ncols()
            )));
        }
    }
    let mut out = Array2::zeros((x.nrows(), cols.len()));
    for (k, &c) in cols.iter().enumerate() {
        out.column_mut(k).assign(&x.column(c));
    }
    Ok(out)
}

/// Copies the given rows of `x` into a new matrix, in the given order.
pub fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Result<Array2<f64>> {
    for &r in rows {
        if r >= x.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "row {r} out of range for {} rows",
                x.nrows()
            )));
        }
    }
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).assign(&x.row(r));
    }
    Ok(out)
}

/// A source/target pair with the modal models needed for similarity
/// measures.
#[derive(Debug, Clone)]
pub struct TransferTask {
    pub id: String,
    pub source: LabeledDataset,
    pub source_modal: ModalModel,
    pub target: LabeledDataset,
    pub target_modal: ModalModel,
}

impl TransferTask {
    pub fn new(
        id: impl Into<String>,
        source: LabeledDataset,
        source_modal: ModalModel,
        target: LabeledDataset,
        target_modal: ModalModel,
    ) -> Result<Self> {
        if source.n_features() != target.n_features() {
            return Err(Error::ShapeMismatch(format!(
                "source has {} features, target has {}",
                source.n_features(),
                target.n_features()
            )));
        }
        if source.classes() != target.classes() {
            return Err(Error::InvalidConfig(format!(
                "task class sets differ: {:?} vs {:?}",
                source.classes(),
                target.classes()
            )));
        }
        if source.normal_class != target.normal_class {
            return Err(Error::InvalidConfig(
                "source and target disagree on the normal class".into(),
            ));
        }
        Ok(TransferTask {
            id: id.into(),
            source,
            source_modal,
            target,
            target_modal,
        })
    }
}
