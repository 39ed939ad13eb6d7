//! Observation and dataset types, CSV ingestion and covariate preprocessing.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CureError, Result};

pub const INTERCEPT_NAME: &str = "Intercept";

/// One subject: follow-up time, event indicator and the two covariate vectors.
///
/// `w` carries the incidence covariates with a leading intercept entry of
/// exactly 1; `z` carries the latency covariates without an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub time: f64,
    pub event: bool,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

impl SubjectRecord {
    pub fn delta(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }

    fn validate(&self, row: usize) -> Result<()> {
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(CureError::Data {
                row,
                column: "time".into(),
                message: format!(
                    "follow-up time must be finite and nonnegative, got {}",
                    self.time
                ),
            });
        }
        if self.w.first() != Some(&1.0) {
            return Err(CureError::Data {
                row,
                column: INTERCEPT_NAME.into(),
                message: "incidence design must start with an intercept of 1".into(),
            });
        }
        if let Some(v) = self.w.iter().chain(&self.z).find(|v| !v.is_finite()) {
            return Err(CureError::Data {
                row,
                column: "covariate".into(),
                message: format!("non-finite covariate value {v}"),
            });
        }
        Ok(())
    }
}

/// Column mapping used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub time_column: String,
    pub event_column: String,
    pub incidence_columns: Vec<String>,
    pub latency_columns: Vec<String>,
    #[serde(default)]
    pub center_columns: Vec<String>,
}

impl CovariateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.time_column == self.event_column {
            return Err(CureError::Config(
                "time and event columns must be distinct".into(),
            ));
        }
        if self.incidence_columns.is_empty() || self.latency_columns.is_empty() {
            return Err(CureError::Config(
                "incidence and latency column lists must be nonempty".into(),
            ));
        }
        for col in &self.center_columns {
            if !self.incidence_columns.contains(col) && !self.latency_columns.contains(col) {
                return Err(CureError::Config(format!(
                    "centering column `{col}` is not used as a covariate"
                )));
            }
        }
        Ok(())
    }
}

/// Validated, immutable collection of subjects.
///
/// Design matrices are cached row-major in original record order; `sort_index`
/// lists record indices by ascending time with ties kept in record order.
#[derive(Debug, Clone)]
pub struct CureDataset {
    records: Vec<SubjectRecord>,
    w_names: Vec<String>,
    z_names: Vec<String>,
    sort_index: Vec<usize>,
    w: Array2<f64>,
    z: Array2<f64>,
    dropped_rows: usize,
}

impl CureDataset {
    /// Builds a dataset, checking every record and the shared dimensions.
    /// `w_names` includes the intercept label.
    pub fn new(
        records: Vec<SubjectRecord>,
        w_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(CureError::InvalidDataset("no records".into()));
        }
        let w_dim = w_names.len();
        let z_dim = z_names.len();
        if w_dim == 0 || z_dim == 0 {
            return Err(CureError::InvalidDataset(
                "incidence and latency designs must be nonempty".into(),
            ));
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.w.len() != w_dim {
                return Err(CureError::DimensionMismatch {
                    expected: w_dim,
                    found: rec.w.len(),
                });
            }
            if rec.z.len() != z_dim {
                return Err(CureError::DimensionMismatch {
                    expected: z_dim,
                    found: rec.z.len(),
                });
            }
            rec.validate(i + 1)?;
        }
        if !records.iter().any(|r| r.event) {
            return Err(CureError::InvalidDataset(
                "at least one subject must have an event".into(),
            ));
        }

        let n = records.len();
        let w = Array2::from_shape_fn((n, w_dim), |(i, j)| records[i].w[j]);
        let z = Array2::from_shape_fn((n, z_dim), |(i, j)| records[i].z[j]);
        let sort_index = time_order(&records);
        Ok(Self {
            records,
            w_names,
            z_names,
            sort_index,
            w,
            z,
            dropped_rows: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn w_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn z_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SubjectRecord {
        &self.records[i]
    }

    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn sort_index(&self) -> &[usize] {
        &self.sort_index
    }

    /// Incidence design, one row per record, intercept in column 0.
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    /// Latency design, one row per record.
    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn time(&self, i: usize) -> f64 {
        self.records[i].time
    }

    pub fn event(&self, i: usize) -> bool {
        self.records[i].event
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn n_censored(&self) -> usize {
        self.n() - self.n_events()
    }

    /// Rows skipped during CSV loading because a used cell was missing.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Largest observed event time.
    pub fn last_event_time(&self) -> f64 {
        self.records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.time)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// New dataset made of the given record indices (repeats allowed).
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.w_names.clone(), self.z_names.clone())
    }

    /// Writes the dataset as CSV and returns the spec that reloads it.
    ///
    /// Values are written in shortest round-trip form, so reloading without
    /// centering reproduces every field bit for bit. A covariate name shared by
    /// both designs is written once and must hold identical values.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<CovariateSpec> {
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        let mut push = |name: &str, values: Vec<f64>| -> Result<()> {
            if let Some((_, existing)) = columns.iter().find(|(n, _)| n == name) {
                let same = existing
                    .iter()
                    .zip(&values)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(CureError::Config(format!(
                        "column `{name}` differs between incidence and latency designs"
                    )));
                }
                return Ok(());
            }
            columns.push((name.to_string(), values));
            Ok(())
        };
        for j in 1..self.w_dim() {
            push(&self.w_names[j], self.w.column(j).to_vec())?;
        }
        for j in 0..self.z_dim() {
            push(&self.z_names[j], self.z.column(j).to_vec())?;
        }

        let time_column = unique_name("time", &columns);
        let event_column = unique_name("event", &columns);
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec![time_column.clone(), event_column.clone()];
        header.extend(columns.iter().map(|(n, _)| n.clone()));
        writer.write_record(&header)?;
        for (i, rec) in self.records.iter().enumerate() {
            let mut row = vec![rec.time.to_string(), (rec.event as u8).to_string()];
            row.extend(columns.iter().map(|(_, v)| v[i].to_string()));
            writer.write_record(&row)?;
        }
        writer.flush()?;

        Ok(CovariateSpec {
            time_column,
            event_column,
            incidence_columns: self.w_names[1..].to_vec(),
            latency_columns: self.z_names.clone(),
            center_columns: Vec::new(),
        })
    }
}

fn unique_name(base: &str, columns: &[(String, Vec<f64>)]) -> String {
    let mut name = base.to_string();
    while columns.iter().any(|(n, _)| *n == name) {
        name.push('_');
    }
    name
}

fn time_order(records: &[SubjectRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    // stable sort keeps original order among ties
    idx.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));
    idx
}

/// Returns the dataset with `sort_index` recomputed from the record times.
pub fn sort_by_time(mut data: CureDataset) -> CureDataset {
    data.sort_index = time_order(&data.records);
    data
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads a comma-separated file with one header row.
///
/// Rows with a missing cell (empty, `NA`, `NaN` or `.`) in any used column are
/// dropped. Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, spec: &CovariateSpec) -> Result<CureDataset> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| -> Result<usize> {
        position
            .get(name)
            .copied()
            .ok_or_else(|| CureError::Config(format!("column `{name}` not found in header")))
    };

    let time_col = locate(&spec.time_column)?;
    let event_col = locate(&spec.event_column)?;
    // every distinct covariate column, in first-use order
    let mut cov_names: Vec<&str> = Vec::new();
    for name in spec.incidence_columns.iter().chain(&spec.latency_columns) {
        if !cov_names.contains(&name.as_str()) {
            cov_names.push(name);
        }
    }
    let cov_cols = cov_names
        .iter()
        .map(|n| locate(n))
        .collect::<Result<Vec<_>>>()?;

    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_names.len()];
    let mut dropped = 0;
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = k + 1;
        let cell = |col: usize| row.get(col).unwrap_or("");
        let used = std::iter::once(time_col)
            .chain(std::iter::once(event_col))
            .chain(cov_cols.iter().copied());
        if used.clone().any(|c| is_missing(cell(c))) {
            dropped += 1;
            continue;
        }
        let parse = |col: usize| -> Result<f64> {
            let raw = cell(col);
            raw.parse::<f64>().map_err(|_| CureError::Data {
                row: row_no,
                column: headers[col].to_string(),
                message: format!("`{raw}` is not a number"),
            })
        };

        let time = parse(time_col)?;
        if !time.is_finite() || time < 0.0 {
            return Err(CureError::Data {
                row: row_no,
                column: spec.time_column.clone(),
                message: format!("time must be finite and nonnegative, got {time}"),
            });
        }
        let event = parse(event_col)?;
        let event = if event == 1.0 {
            true
        } else if event == 0.0 {
            false
        } else {
            return Err(CureError::Data {
                row: row_no,
                column: spec.event_column.clone(),
                message: format!("event must be 0 or 1, got {event}"),
            });
        };
        for (values, &col) in covs.iter_mut().zip(&cov_cols) {
            let v = parse(col)?;
            if !v.is_finite() {
                return Err(CureError::Data {
                    row: row_no,
                    column: headers[col].to_string(),
                    message: "covariate must be finite".into(),
                });
            }
            values.push(v);
        }
        times.push(time);
        events.push(event);
    }

    let n = times.len();
    if n == 0 {
        return Err(CureError::InvalidDataset("no complete rows".into()));
    }
    for name in &spec.center_columns {
        let j = cov_names.iter().position(|c| c == name).expect("validated");
        let mean = covs[j].iter().sum::<f64>() / n as f64;
        covs[j].iter_mut().for_each(|v| *v -= mean);
    }
    if n > 1 {
        for name in &spec.incidence_columns {
            let j = cov_names.iter().position(|c| c == name).expect("present");
            let first = covs[j][0];
            if covs[j].iter().all(|&v| v == first) {
                return Err(CureError::Config(format!(
                    "incidence column `{name}` is constant; the intercept is added automatically"
                )));
            }
        }
    }

    let column = |name: &String| cov_names.iter().position(|c| c == name).expect("present");
    let w_idx: Vec<usize> = spec.incidence_columns.iter().map(column).collect();
    let z_idx: Vec<usize> = spec.latency_columns.iter().map(column).collect();
    let records = (0..n)
        .map(|i| {
            let mut w = Vec::with_capacity(w_idx.len() + 1);
            w.push(1.0);
            w.extend(w_idx.iter().map(|&j| covs[j][i]));
            SubjectRecord {
                time: times[i],
                event: events[i],
                w,
                z: z_idx.iter().map(|&j| covs[j][i]).collect(),
            }
        })
        .collect();

    let mut w_names = vec![INTERCEPT_NAME.to_string()];
    w_names.extend(spec.incidence_columns.iter().cloned());
    let mut data = CureDataset::new(records, w_names, spec.latency_columns.clone())?;
    data.dropped_rows = dropped;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record(time: f64, event: bool, x: f64) -> SubjectRecord {
        SubjectRecord {
            time,
            event,
            w: vec![1.0, x],
            z: vec![x],
        }
    }

    fn dataset(times: &[f64]) -> CureDataset {
        let records = times
            .iter()
            .enumerate()
            .map(|(i, &t)| record(t, i == 0, i as f64))
            .collect();
        CureDataset::new(
            records,
            vec!["Intercept".into(), "x".into()],
            vec!["x".into()],
        )
        .unwrap()
    }

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn spec(cols: &[&str]) -> CovariateSpec {
        CovariateSpec {
            time_column: "time".into(),
            event_column: "event".into(),
            incidence_columns: cols.iter().map(|s| s.to_string()).collect(),
            latency_columns: cols.iter().map(|s| s.to_string()).collect(),
            center_columns: vec![],
        }
    }

    #[test]
    fn sort_index_examples() {
        assert_eq!(dataset(&[3.0, 1.0, 2.0]).sort_index(), &[1, 2, 0]);
        assert_eq!(dataset(&[1.0, 2.0, 3.0]).sort_index(), &[0, 1, 2]);
        assert_eq!(dataset(&[2.0, 2.0, 1.0]).sort_index(), &[2, 0, 1]);
    }

    #[test]
    fn sort_by_time_is_idempotent() {
        let d = dataset(&[5.0, 1.0, 5.0, 0.5, 2.0]);
        let once = sort_by_time(d.clone());
        let twice = sort_by_time(once.clone());
        assert_eq!(once.sort_index(), twice.sort_index());
        assert_eq!(once.sort_index(), d.sort_index());
    }

    #[test]
    fn single_row_file() {
        let f = write_file("time,event,x\n1.0,1,1\n");
        let d = load_csv(f.path(), &spec(&["x"])).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.record(0).w, vec![1.0, 1.0]);
        assert_eq!(d.record(0).z, vec![1.0]);
    }

    #[test]
    fn bad_event_code_names_row() {
        let mut text = String::from("time,event,x\n");
        for i in 1..=9 {
            let ev = if i == 7 { 2 } else { i % 2 };
            text.push_str(&format!("{}.5,{ev},{}\n", i, i % 3));
        }
        let f = write_file(&text);
        match load_csv(f.path(), &spec(&["x"])) {
            Err(CureError::Data { row, column, .. }) => {
                assert_eq!(row, 7);
                assert_eq!(column, "event");
            }
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn negative_time_and_garbage_are_data_errors() {
        let f = write_file("time,event,x\n1,1,0\n-1,0,1\n");
        assert!(matches!(
            load_csv(f.path(), &spec(&["x"])),
            Err(CureError::Data { row: 2, .. })
        ));
        let f = write_file("time,event,x\n1,1,0\n2,0,abc\n");
        assert!(matches!(
            load_csv(f.path(), &spec(&["x"])),
            Err(CureError::Data { row: 2, .. })
        ));
    }

    #[test]
    fn missing_column_is_config_error() {
        let f = write_file("time,event,x\n1,1,0\n");
        assert!(matches!(
            load_csv(f.path(), &spec(&["y"])),
            Err(CureError::Config(_))
        ));
    }

    #[test]
    fn constant_incidence_column_rejected() {
        let f = write_file("time,event,one,x\n1,1,1,0\n2,0,1,1\n");
        let mut s = spec(&["x"]);
        s.incidence_columns = vec!["one".into(), "x".into()];
        assert!(matches!(load_csv(f.path(), &s), Err(CureError::Config(_))));
    }

    #[test]
    fn incomplete_rows_are_dropped_before_centering() {
        let f = write_file("time,event,x,age\n1,1,0,10\n2,0,1,NA\n3,1,1,20\n4,0,0,\n");
        let mut s = spec(&["x", "age"]);
        s.center_columns = vec!["age".into()];
        let d = load_csv(f.path(), &s).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.dropped_rows(), 2);
        assert_eq!(d.record(0).w, vec![1.0, 0.0, -5.0]);
        assert_eq!(d.record(1).z, vec![1.0, 5.0]);
    }

    #[test]
    fn record_validation() {
        let bad = SubjectRecord {
            time: 1.0,
            event: true,
            w: vec![2.0],
            z: vec![0.0],
        };
        assert!(CureDataset::new(vec![bad], vec!["I".into()], vec!["z".into()]).is_err());
        let no_event = vec![record(1.0, false, 0.0)];
        assert!(
            CureDataset::new(no_event, vec!["I".into(), "x".into()], vec!["x".into()]).is_err()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_dataset() -> impl Strategy<Value = CureDataset> {
            (2usize..25).prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.0f64..100.0, n),
                    proptest::collection::vec(any::<bool>(), n),
                    proptest::collection::vec(-1e6f64..1e6, n),
                    proptest::collection::vec(-5.0f64..5.0, n),
                )
                    .prop_map(|(t, mut e, a, b)| {
                        e[0] = true;
                        let records = (0..t.len())
                            .map(|i| SubjectRecord {
                                time: t[i],
                                event: e[i],
                                w: vec![1.0, a[i]],
                                z: vec![a[i], b[i]],
                            })
                            .collect();
                        CureDataset::new(
                            records,
                            vec!["Intercept".into(), "a".into()],
                            vec!["a".into(), "b".into()],
                        )
                        .unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn csv_round_trip_is_bit_exact(d in arb_dataset()) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("d.csv");
                let spec = d.write_csv(&path).unwrap();
                let back = load_csv(&path, &spec).unwrap();
                prop_assert_eq!(back.records(), d.records());
                prop_assert_eq!(back.w_names(), d.w_names());
                prop_assert_eq!(back.z_names(), d.z_names());
            }

            #[test]
            fn centered_columns_have_zero_mean(d in arb_dataset()) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("d.csv");
                let mut spec = d.write_csv(&path).unwrap();
                spec.center_columns = vec!["a".into(), "b".into()];
                let back = load_csv(&path, &spec).unwrap();
                let n = back.n() as f64;
                let scale = d.w().column(1).iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let mean_a = back.w().column(1).sum() / n;
                let mean_b = back.z().column(1).sum() / n;
                prop_assert!(mean_a.abs() <= 1e-12 * scale, "mean a {}", mean_a);
                prop_assert!(mean_b.abs() <= 1e-12 * 5.0, "mean b {}", mean_b);
            }

            #[test]
            fn sort_index_is_stable_permutation(d in arb_dataset()) {
                let idx = d.sort_index();
                let mut seen = idx.to_vec();
                seen.sort();
                prop_assert_eq!(seen, (0..d.n()).collect::<Vec<_>>());
                for pair in idx.windows(2) {
                    let (a, b) = (d.time(pair[0]), d.time(pair[1]));
                    prop_assert!(a < b || (a == b && pair[0] < pair[1]));
                }
            }
        }
    }
}
