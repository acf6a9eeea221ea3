//! Point files, period partitioning and the global spatial extent.
//!
//! A point file holds one JSON object per line:
//!
//! ```text
//! {"id": "s1", "period": 1941, "coords": [0.3, -1.2], "labels": {"party": "D"}}
//! ```
//!
//! `labels` is optional. Blank lines are ignored.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One embedded text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub id: String,
    pub period: i64,
    pub coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl PointRecord {
    pub fn new(id: impl Into<String>, period: i64, coords: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            period,
            coords,
            labels: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, dim: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(dim.into(), value.into());
        self
    }
}

/// Points grouped by period, periods strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodizedDataset {
    n: usize,
    periods: Vec<i64>,
    points: Vec<Vec<PointRecord>>,
}

impl PeriodizedDataset {
    /// Validates and groups records. Order within a period follows input order.
    pub fn from_records(n: usize, records: impl IntoIterator<Item = PointRecord>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimensionality must be positive"));
        }
        let mut seen = HashSet::new();
        let mut groups: BTreeMap<i64, Vec<PointRecord>> = BTreeMap::new();
        for record in records {
            validate_record(&record, n)?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::DuplicateId(record.id));
            }
            groups.entry(record.period).or_default().push(record);
        }
        let (periods, points) = groups.into_iter().unzip();
        Ok(Self { n, periods, points })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            periods: Vec::new(),
            points: Vec::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    /// Points of `period`; empty when the period has no data.
    pub fn points_in(&self, period: i64) -> &[PointRecord] {
        match self.periods.binary_search(&period) {
            Ok(i) => &self.points[i],
            Err(_) => &[],
        }
    }

    pub fn iter_periods(&self) -> impl Iterator<Item = (i64, &[PointRecord])> {
        self.periods
            .iter()
            .copied()
            .zip(self.points.iter().map(Vec::as_slice))
    }

    pub fn records(&self) -> impl Iterator<Item = &PointRecord> {
        self.points.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn into_records(self) -> impl Iterator<Item = PointRecord> {
        self.points.into_iter().flatten()
    }
}

fn validate_record(record: &PointRecord, n: usize) -> Result<()> {
    if record.coords.len() != n {
        return Err(Error::Dimension {
            id: record.id.clone(),
            expected: n,
            found: record.coords.len(),
        });
    }
    if let Some(index) = record.coords.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            id: record.id.clone(),
            index,
        });
    }
    Ok(())
}

/// Loads a point file.
pub fn load_points(path: impl AsRef<Path>, declared_n: usize) -> Result<PeriodizedDataset> {
    let file = File::open(path)?;
    read_points(BufReader::new(file), declared_n)
}

/// Streams point records from any line-oriented reader.
pub fn read_points<R: BufRead>(reader: R, declared_n: usize) -> Result<PeriodizedDataset> {
    if declared_n == 0 {
        return Err(Error::invalid("dimensionality must be positive"));
    }
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<i64, Vec<PointRecord>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::Parse {
                line: line_no,
                message: "invalid UTF-8".into(),
            },
            _ => Error::Io(e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PointRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        validate_record(&record, declared_n)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        groups.entry(record.period).or_default().push(record);
    }
    let (periods, points) = groups.into_iter().unzip();
    Ok(PeriodizedDataset {
        n: declared_n,
        periods,
        points,
    })
}

/// Writes the dataset back in point-file format, period by period.
pub fn write_points<W: Write>(ds: &PeriodizedDataset, mut out: W) -> Result<()> {
    for record in ds.records() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Axis-aligned closed box, one `[lo, hi]` interval per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    bounds: Vec<(f64, f64)>,
}

impl Extent {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("extent needs at least one dimension"));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!(
                    "dimension {d}: bounds [{lo}, {hi}] are not a finite interval"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn lo(&self, d: usize) -> f64 {
        self.bounds[d].0
    }

    pub fn hi(&self, d: usize) -> f64 {
        self.bounds[d].1
    }

    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.len() == self.bounds.len()
            && coords
                .iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }
}

/// Coordinatewise min/max over every point of every period.
pub fn compute_extent(ds: &PeriodizedDataset) -> Result<Extent> {
    let mut records = ds.records();
    let first = records.next().ok_or(Error::EmptyDataset)?;
    let mut bounds: Vec<(f64, f64)> = first.coords.iter().map(|&x| (x, x)).collect();
    for record in records {
        for (b, &x) in bounds.iter_mut().zip(&record.coords) {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
        }
    }
    Extent::new(bounds)
}

/// Projects high-dimensional vectors onto their top `target_n` principal
/// directions.
///
/// Directions are ordered by decreasing variance. Each direction's
/// largest-magnitude component is made positive (first index wins ties), so
/// the output is reproducible.
pub fn reduce_pca(points: &[Vec<f64>], target_n: usize) -> Result<Vec<Vec<f64>>> {
    if points.len() < 2 {
        return Err(Error::invalid("PCA needs at least two vectors"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("vectors have inconsistent dimensionality"));
    }
    if target_n == 0 || target_n > dim {
        return Err(Error::invalid(format!(
            "target dimensionality {target_n} must lie in 1..={dim}"
        )));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite values"));
    }

    let k = points.len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);

    let centered = DMatrix::from_fn(k, dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (k as f64 - 1.0);
    let eigen = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let directions: Vec<Vec<f64>> = order[..target_n]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eigen.eigenvectors.column(c).iter().copied().collect();
            let mut pivot = 0;
            for (i, x) in v.iter().enumerate() {
                if x.abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    Ok((0..k)
        .map(|i| {
            directions
                .iter()
                .map(|dir| centered.row(i).iter().zip(dir).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn load(text: &str, n: usize) -> Result<PeriodizedDataset> {
        read_points(Cursor::new(text), n)
    }

    #[test]
    fn empty_file_has_no_periods() {
        let ds = load("", 2).unwrap();
        assert!(ds.periods().is_empty());
        assert_eq!(ds.len(), 0);
    }

    #[test]
    fn groups_by_period() {
        let ds = load(
            r#"{"id":"b","period":1943,"coords":[1,2]}
{"id":"a","period":1941,"coords":[0.5,0.25],"labels":{"party":"D"}}
"#,
            2,
        )
        .unwrap();
        assert_eq!(ds.periods(), &[1941, 1943]);
        assert_eq!(ds.points_in(1941).len(), 1);
        assert_eq!(ds.points_in(1943).len(), 1);
        assert_eq!(ds.points_in(1941)[0].labels["party"], "D");
        assert!(ds.points_in(1942).is_empty());
    }

    #[test]
    fn wrong_dimensionality_names_the_id() {
        let err = load(r#"{"id":"p7","period":1,"coords":[1,2,3]}"#, 2).unwrap_err();
        match err {
            Error::Dimension { id, expected, found } => {
                assert_eq!((id.as_str(), expected, found), ("p7", 2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = load("\n{\"id\":\"a\",\"period\":1,\"coords\":[1,2]}\n{oops\n", 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"a\",\"period\":1,\"coords\":[1,2]}\n{\"id\":\"a\",\"period\":2,\"coords\":[1,2]}";
        assert!(matches!(load(text, 2), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let rec = PointRecord::new("x", 0, vec![1.0, f64::NAN]);
        let err = PeriodizedDataset::from_records(2, [rec]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn extent_of_two_points() {
        let ds = PeriodizedDataset::from_records(
            2,
            [
                PointRecord::new("a", 0, vec![0.0, 0.0]),
                PointRecord::new("b", 1, vec![2.0, 4.0]),
            ],
        )
        .unwrap();
        assert_eq!(compute_extent(&ds).unwrap().bounds(), &[(0.0, 2.0), (0.0, 4.0)]);
    }

    #[test]
    fn extent_of_single_point_is_degenerate() {
        let ds =
            PeriodizedDataset::from_records(2, [PointRecord::new("a", 0, vec![5.0, -1.0])]).unwrap();
        assert_eq!(compute_extent(&ds).unwrap().bounds(), &[(5.0, 5.0), (-1.0, -1.0)]);
    }

    #[test]
    fn extent_of_empty_dataset_fails() {
        assert!(matches!(
            compute_extent(&PeriodizedDataset::empty(2)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn pca_rejects_bad_input() {
        assert!(reduce_pca(&[vec![1.0, 2.0]], 1).is_err());
        assert!(reduce_pca(&[vec![1.0, 2.0], vec![1.0]], 1).is_err());
        assert!(reduce_pca(&[vec![1.0, 2.0], vec![3.0, 1.0]], 3).is_err());
    }

    #[test]
    fn pca_sign_convention_is_fixed() {
        // Data spread along -x: the leading direction must still point to +x.
        let pts = vec![vec![3.0, 0.0], vec![-3.0, 0.1], vec![0.0, -0.1]];
        let out = reduce_pca(&pts, 1).unwrap();
        assert!(out[0][0] > 0.0);
        assert!(out[1][0] < 0.0);
    }
}
