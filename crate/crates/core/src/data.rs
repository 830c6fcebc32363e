//! Tabular ingestion, one-hot encoding and row-index views.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Dense feature table with labels. Immutable once constructed.
///
/// Features are stored row-major. Construction enforces finiteness, unique
/// feature names and, for classification, labels in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<T>,
    feature_names: Vec<String>,
    n_rows: usize,
    n_features: usize,
    task: Task,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Vec<T>,
        labels: Vec<T>,
        feature_names: Vec<String>,
        task: Task,
    ) -> Result<Self> {
        let n_rows = labels.len();
        let n_features = feature_names.len();
        if n_rows == 0 {
            return Err(Error::Dataset("dataset has no rows".into()));
        }
        if n_features == 0 {
            return Err(Error::Dataset("dataset has no feature columns".into()));
        }
        if features.len() != n_rows * n_features {
            return Err(Error::Dataset(format!(
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                n_rows,
                n_features
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Dataset(format!("duplicate feature name '{name}'")));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Cell {
                row: pos / n_features,
                column: feature_names[pos % n_features].clone(),
                message: "non-finite value".into(),
            });
        }
        for (row, &y) in labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Label {
                    row,
                    message: "non-finite label".into(),
                });
            }
            if task == Task::Classification && y != T::zero() && y != T::one() {
                return Err(Error::Label {
                    row,
                    message: format!("classification label {y} is not 0 or 1"),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            n_rows,
            n_features,
            task,
        })
    }

    /// Builds a dataset from one vector per row.
    pub fn from_rows(
        rows: Vec<Vec<T>>,
        labels: Vec<T>,
        feature_names: Vec<String>,
        task: Task,
    ) -> Result<Self> {
        let m = feature_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::Dimension {
                expected: m,
                got: bad.len(),
            });
        }
        if rows.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        Self::new(rows.concat(), labels, feature_names, task)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> T {
        self.features[i * self.n_features + j]
    }

    #[inline]
    pub fn label(&self, i: usize) -> T {
        self.labels[i]
    }

    /// Returns a copy with `f` applied to every feature value, used to build
    /// transformed variants of the same table.
    pub fn map_features(&self, mut f: impl FnMut(usize, T) -> T) -> Result<Self> {
        let m = self.n_features;
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % m, v))
            .collect();
        Self::new(
            features,
            self.labels.clone(),
            self.feature_names.clone(),
            self.task,
        )
    }

    /// Writes the table as CSV with a trailing label column.
    pub fn write_csv<W: Write>(&self, writer: W, label_name: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_name);
        out.write_record(&header)?;
        for i in 0..self.n_rows {
            let mut record: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            record.push(self.labels[i].to_string());
            out.write_record(&record)?;
        }
        out.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Strictly increasing, nonempty list of row positions into a [`Dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowIndexSet(Vec<usize>);

impl RowIndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Dataset("row index set is empty".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dataset(
                "row indices must be strictly increasing".into(),
            ));
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices)
    }

    /// Every row of a dataset with `n` rows.
    pub fn all(n: usize) -> Self {
        assert!(n > 0, "row index set over an empty dataset");
        Self((0..n).collect())
    }

    /// Checks that every index addresses a row of `data`.
    pub fn check_bounds<T: Scalar>(&self, data: &Dataset<T>) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= data.n_rows() => Err(Error::Dataset(format!(
                "row index {last} out of range for {} rows",
                data.n_rows()
            ))),
            _ => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Splits into rows satisfying `goes_left` and the rest. Either side may
    /// be `None` when empty.
    pub fn partition(
        &self,
        mut goes_left: impl FnMut(usize) -> bool,
    ) -> (Option<RowIndexSet>, Option<RowIndexSet>) {
        let (left, right): (Vec<usize>, Vec<usize>) = self.0.iter().partition(|&&i| goes_left(i));
        let wrap = |v: Vec<usize>| (!v.is_empty()).then_some(RowIndexSet(v));
        (wrap(left), wrap(right))
    }
}

/// Indicator columns produced from one categorical column.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHot<T> {
    /// Distinct values in order of first occurrence.
    pub categories: Vec<String>,
    /// One column per category, each of the input's length.
    pub columns: Vec<Vec<T>>,
}

pub fn one_hot_encode<T: Scalar, S: AsRef<str>>(values: &[S]) -> OneHot<T> {
    let mut categories: Vec<String> = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let codes: Vec<usize> = values
        .iter()
        .map(|v| {
            let v = v.as_ref();
            *lookup.entry(v).or_insert_with(|| {
                categories.push(v.to_string());
                categories.len() - 1
            })
        })
        .collect();
    let columns = (0..categories.len())
        .map(|c| {
            codes
                .iter()
                .map(|&code| if code == c { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    OneHot {
        categories,
        columns,
    }
}

/// CSV reader with the options the command line exposes.
#[derive(Clone, Debug)]
pub struct CsvLoader {
    label_column: String,
    task: Task,
    categorical: Vec<String>,
    ignored: Vec<String>,
}

impl CsvLoader {
    pub fn new(label_column: impl Into<String>, task: Task) -> Self {
        Self {
            label_column: label_column.into(),
            task,
            categorical: Vec::new(),
            ignored: Vec::new(),
        }
    }

    pub fn categorical<S: AsRef<str>>(mut self, columns: &[S]) -> Self {
        self.categorical = columns.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    /// Columns dropped before encoding (identifiers and the like).
    pub fn ignore<S: AsRef<str>>(mut self, columns: &[S]) -> Self {
        self.ignored = columns.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    pub fn load<T: Scalar>(&self, path: impl AsRef<Path>) -> Result<Dataset<T>> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.from_reader(file)
    }

    pub fn from_reader<T: Scalar, R: Read>(&self, reader: R) -> Result<Dataset<T>> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let label_idx = find(&self.label_column)?;
        let categorical: HashSet<usize> = self
            .categorical
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?;
        let ignored: HashSet<usize> = self
            .ignored
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?;
        if categorical.contains(&label_idx) || ignored.contains(&label_idx) {
            return Err(Error::Config(format!(
                "label column '{}' cannot be categorical or ignored",
                self.label_column
            )));
        }

        let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
        if records.is_empty() {
            return Err(Error::Dataset("CSV has a header but no data rows".into()));
        }
        // Data rows start on line 2 of the file.
        let line_of = |r: usize| r + 2;

        let mut names = Vec::new();
        let mut columns: Vec<Vec<T>> = Vec::new();
        for (c, column_name) in header.iter().enumerate() {
            if c == label_idx || ignored.contains(&c) {
                continue;
            }
            let raw: Vec<&str> = records.iter().map(|r| &r[c]).collect();
            if let Some(r) = raw.iter().position(|v| v.is_empty()) {
                return Err(Error::Cell {
                    row: line_of(r),
                    column: column_name.clone(),
                    message: "missing value".into(),
                });
            }
            if categorical.contains(&c) {
                let encoded = one_hot_encode::<T, _>(&raw);
                for (cat, col) in encoded.categories.iter().zip(encoded.columns) {
                    names.push(format!("{column_name}={cat}"));
                    columns.push(col);
                }
            } else {
                let parsed = raw
                    .iter()
                    .enumerate()
                    .map(|(r, cell)| {
                        parse_finite::<T>(cell).map_err(|message| Error::Cell {
                            row: line_of(r),
                            column: column_name.clone(),
                            message,
                        })
                    })
                    .collect::<Result<Vec<T>>>()?;
                names.push(column_name.clone());
                columns.push(parsed);
            }
        }

        let raw_labels: Vec<&str> = records.iter().map(|r| &r[label_idx]).collect();
        let labels = parse_labels::<T>(&raw_labels, self.task, &line_of)?;

        let n = records.len();
        let m = columns.len();
        let mut features = Vec::with_capacity(n * m);
        for i in 0..n {
            features.extend(columns.iter().map(|col| col[i]));
        }
        Dataset::new(features, labels, names, self.task)
    }
}

/// Loads a CSV with a header row, one-hot encoding `categorical_columns`.
pub fn load_csv<T: Scalar, S: AsRef<str>>(
    path: impl AsRef<Path>,
    label_column: &str,
    task: Task,
    categorical_columns: &[S],
) -> Result<Dataset<T>> {
    CsvLoader::new(label_column, task)
        .categorical(categorical_columns)
        .load(path)
}

fn parse_finite<T: Scalar>(cell: &str) -> std::result::Result<T, String> {
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("cannot parse '{cell}' as a number"))?;
    let v = T::from_f64(v).unwrap_or_else(T::nan);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value '{cell}'"))
    }
}

fn parse_labels<T: Scalar>(
    raw: &[&str],
    task: Task,
    line_of: &dyn Fn(usize) -> usize,
) -> Result<Vec<T>> {
    if let Some(r) = raw.iter().position(|v| v.is_empty()) {
        return Err(Error::Label {
            row: line_of(r),
            message: "missing label".into(),
        });
    }
    let numeric: Vec<Option<f64>> = raw.iter().map(|v| v.parse::<f64>().ok()).collect();
    match task {
        Task::Regression => raw
            .iter()
            .zip(&numeric)
            .enumerate()
            .map(|(r, (cell, v))| match v.and_then(T::from_f64) {
                Some(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Label {
                    row: line_of(r),
                    message: format!("'{cell}' is not a finite number"),
                }),
            })
            .collect(),
        Task::Classification if numeric.iter().all(Option::is_some) => numeric
            .iter()
            .enumerate()
            .map(|(r, v)| match v {
                Some(v) if *v == 0.0 || *v == 1.0 => Ok(T::lit(*v)),
                Some(v) => Err(Error::Label {
                    row: line_of(r),
                    message: format!("classification label {v} is not 0 or 1"),
                }),
                None => unreachable!(),
            })
            .collect(),
        Task::Classification => {
            let distinct: BTreeSet<&str> = raw.iter().copied().collect();
            if distinct.len() > 2 {
                return Err(Error::Label {
                    row: line_of(0),
                    message: format!(
                        "classification needs two label values, found {}",
                        distinct.len()
                    ),
                });
            }
            let positive = distinct.iter().nth(1).copied();
            Ok(raw
                .iter()
                .map(|v| {
                    if Some(*v) == positive {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, task: Task, cats: &[&str]) -> Result<Dataset<f64>> {
        CsvLoader::new("y", task)
            .categorical(cats)
            .from_reader(text.as_bytes())
    }

    #[test]
    fn parses_numeric_csv() {
        let d = load("a,b,y\n1,2,0\n3,4.5,1\n-1,0,1\n", Task::Classification, &[]).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.task(), Task::Classification);
        assert_eq!(d.row(1), &[3.0, 4.5]);
        assert_eq!(d.labels(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn categorical_expands_in_place() {
        let d = load(
            "a,color,b,y\n1,red,5,0\n2,blue,6,1\n3,red,7,0\n",
            Task::Classification,
            &["color"],
        )
        .unwrap();
        assert_eq!(d.feature_names(), &["a", "color=red", "color=blue", "b"]);
        assert_eq!(d.row(0), &[1.0, 1.0, 0.0, 5.0]);
        assert_eq!(d.row(1), &[2.0, 0.0, 1.0, 6.0]);
    }

    #[test]
    fn nan_cell_is_rejected_with_location() {
        let err = load("a,b,y\n1,2,0\n3,NaN,1\n", Task::Classification, &[]).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_and_unparsable_cells() {
        assert!(matches!(
            load("a,y\n,0\n", Task::Regression, &[]),
            Err(Error::Cell { .. })
        ));
        assert!(matches!(
            load("a,y\nabc,0\n", Task::Regression, &[]),
            Err(Error::Cell { .. })
        ));
        assert!(matches!(
            load("a,z\n1,0\n", Task::Regression, &[]),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn classification_labels() {
        assert!(matches!(
            load("a,y\n1,0\n2,2\n", Task::Classification, &[]),
            Err(Error::Label { .. })
        ));
        let d = load("a,y\n1,M\n2,B\n3,M\n", Task::Classification, &[]).unwrap();
        assert_eq!(d.labels(), &[1.0, 0.0, 1.0]);
        assert!(load("a,y\n1,a\n2,b\n3,c\n", Task::Classification, &[]).is_err());
        let d = load("a,y\n1,2.5\n2,-1\n", Task::Regression, &[]).unwrap();
        assert_eq!(d.labels(), &[2.5, -1.0]);
    }

    #[test]
    fn one_hot_examples() {
        let oh = one_hot_encode::<f64, _>(&["red", "blue", "red"]);
        assert_eq!(oh.categories, vec!["red", "blue"]);
        assert_eq!(oh.columns, vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        let oh = one_hot_encode::<f64, _>(&["x", "x"]);
        assert_eq!(oh.columns, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn credit_card_schema_expands_to_33_columns() {
        // 23 attributes plus the label; SEX, EDUCATION and MARRIAGE are
        // categorical with 2, 7 and 4 levels respectively.
        let mut header: Vec<String> = vec!["LIMIT_BAL".into(), "SEX".into(), "EDUCATION".into()];
        header.push("MARRIAGE".into());
        header.push("AGE".into());
        header.extend((0..6).map(|k| format!("PAY_{k}")));
        header.extend((1..=6).map(|k| format!("BILL_AMT{k}")));
        header.extend((1..=6).map(|k| format!("PAY_AMT{k}")));
        header.push("y".into());
        assert_eq!(header.len(), 24);
        let mut text = header.join(",") + "\n";
        for i in 0..28 {
            let mut row = vec![format!("{}", 1000 * i)];
            row.push(format!("{}", 1 + i % 2));
            row.push(format!("{}", i % 7));
            row.push(format!("{}", i % 4));
            row.extend((0..19).map(|k| format!("{}", (i * k) % 5)));
            row.push(format!("{}", i % 2));
            text += &(row.join(",") + "\n");
        }
        let d = load(&text, Task::Classification, &["SEX", "EDUCATION", "MARRIAGE"]).unwrap();
        assert_eq!(d.n_features(), 33);
    }

    #[test]
    fn row_index_set_validation() {
        assert!(RowIndexSet::new(vec![]).is_err());
        assert!(RowIndexSet::new(vec![1, 1]).is_err());
        assert!(RowIndexSet::new(vec![2, 1]).is_err());
        let s = RowIndexSet::from_unsorted(vec![3, 1, 3, 0]).unwrap();
        assert_eq!(s.as_slice(), &[0, 1, 3]);
        let (l, r) = s.partition(|i| i < 2);
        assert_eq!(l.unwrap().as_slice(), &[0, 1]);
        assert_eq!(r.unwrap().as_slice(), &[3]);
        let (l, r) = s.partition(|_| true);
        assert!(l.is_some() && r.is_none());
    }

    #[test]
    fn dataset_invariants() {
        let names = vec!["a".to_string(), "a".to_string()];
        assert!(Dataset::<f64>::new(vec![1.0, 2.0], vec![0.0], names, Task::Regression).is_err());
        let names = vec!["a".to_string()];
        assert!(
            Dataset::<f64>::new(vec![f64::INFINITY], vec![0.0], names, Task::Regression).is_err()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn indicator_columns_sum_to_one(values in proptest::collection::vec(0u8..5, 1..40)) {
                let strs: Vec<String> = values.iter().map(|v| format!("v{v}")).collect();
                let oh = one_hot_encode::<f64, _>(&strs);
                for i in 0..strs.len() {
                    let s: f64 = oh.columns.iter().map(|c| c[i]).sum();
                    prop_assert_eq!(s, 1.0);
                }
            }
        }
    }
}
