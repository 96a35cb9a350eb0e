use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::points::Points;

/// Column holding the regression target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

impl Default for TargetColumn {
    fn default() -> Self {
        TargetColumn::Name(String::new())
    }
}

impl FromStr for TargetColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.trim().to_string()),
        })
    }
}

/// Per-column affine maps fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Points,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Set once the data has been standardized.
    pub stats: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: Points, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.as_slice().iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        let feature_names = (0..x.dim()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            x,
            y,
            feature_names,
            target_name: "y".into(),
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Column means and sample standard deviations; zero spreads become 1.
    pub fn fit_standardization(&self) -> Result<Standardization> {
        if self.is_empty() {
            return usage("cannot standardize an empty dataset");
        }
        let (x_mean, x_std) = (0..self.dim()).map(|j| mean_std(&self.x.column(j))).unzip();
        let (y_mean, y_std) = mean_std(&self.y);
        Ok(Standardization {
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    pub fn apply_standardization(&self, s: &Standardization) -> Result<Self> {
        if s.x_mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.x_mean.len(),
                got: self.dim(),
            });
        }
        let d = self.dim();
        let data = self
            .x
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - s.x_mean[k % d]) / s.x_std[k % d])
            .collect();
        Ok(Self {
            x: Points::new(data, d)?,
            y: self.y.iter().map(|v| (v - s.y_mean) / s.y_std).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            stats: Some(s.clone()),
        })
    }
}

/// Z-scores both splits with statistics of `train` only.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let s = train.fit_standardization()?;
    Ok((train.apply_standardization(&s)?, test.apply_standardization(&s)?))
}

/// Reads a numeric CSV with a header row. Columns whose first value is not a
/// number are dropped with a warning; later unparsable cells are errors.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(Error::Parse {
            path: shown,
            line: 1,
            msg: "need at least one feature and one target column".into(),
        });
    }
    let target_idx = match target {
        TargetColumn::Index(i) if *i < headers.len() => *i,
        TargetColumn::Index(i) => return usage(format!("target column {i} out of range ({} columns)", headers.len())),
        TargetColumn::Name(name) if name.is_empty() => headers.len() - 1,
        TargetColumn::Name(name) => match headers.iter().position(|h| h == name) {
            Some(i) => i,
            None => return usage(format!("no column named `{name}` in {shown}")),
        },
    };

    let mut keep: Option<Vec<bool>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: shown.clone(),
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                path: shown,
                line,
                msg: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let keep = keep.get_or_insert_with(|| {
            let k: Vec<bool> = rec.iter().map(|c| c.parse::<f64>().is_ok()).collect();
            for (j, ok) in k.iter().enumerate() {
                if !ok && j != target_idx {
                    warn!("dropping non-numeric column `{}`", headers[j]);
                }
            }
            k
        });
        if !keep[target_idx] {
            return Err(Error::Parse {
                path: shown,
                line,
                msg: format!("target column `{}` is not numeric", headers[target_idx]),
            });
        }
        let mut row = Vec::with_capacity(headers.len());
        for (j, cell) in rec.iter().enumerate() {
            if !keep[j] {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                line,
                msg: format!("column `{}`: `{cell}` is not a number", headers[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: shown.clone(),
                    line,
                    msg: format!("column `{}`: non-finite value", headers[j]),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    let keep = match keep {
        Some(k) => k,
        None => return usage(format!("{shown} has no data rows")),
    };
    let kept: Vec<usize> = (0..headers.len()).filter(|&j| keep[j]).collect();
    let t = kept.iter().position(|&j| j == target_idx).expect("target kept");
    let d = kept.len() - 1;
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for row in &rows {
        for (k, v) in row.iter().enumerate() {
            if k == t {
                y.push(*v);
            } else {
                x.push(*v);
            }
        }
    }
    Ok(Dataset {
        x: Points::new(x, d)?,
        y,
        feature_names: kept.iter().filter(|&&j| j != target_idx).map(|&j| headers[j].clone()).collect(),
        target_name: headers[target_idx].clone(),
        stats: None,
    })
}

/// Random disjoint train/test split, deterministic in the seed.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return usage(format!("test fraction must lie in (0, 1), got {test_fraction}"));
    }
    let n = data.len();
    if n < 2 {
        return usage("need at least two rows to split");
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn toy_file_round_trips() {
        let f = write("a,b,y\n1.5,2,3\n-4,5e-1,6\n7,8,9.25\n");
        let d = load_csv(f.path(), &TargetColumn::default()).unwrap();
        assert_eq!(d.x.as_slice(), &[1.5, 2.0, -4.0, 0.5, 7.0, 8.0]);
        assert_eq!(d.y, vec![3.0, 6.0, 9.25]);
        assert_eq!(d.target_name, "y");
    }

    #[test]
    fn target_by_name_or_index() {
        let f = write("a,t,b\n1,2,3\n4,5,6\n");
        let by_name = load_csv(f.path(), &"t".parse().unwrap()).unwrap();
        let by_idx = load_csv(f.path(), &"1".parse().unwrap()).unwrap();
        assert_eq!(by_name.y, vec![2.0, 5.0]);
        assert_eq!(by_idx.y, by_name.y);
        assert_eq!(by_idx.x.as_slice(), &[1.0, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn non_numeric_columns_are_dropped() {
        let f = write("name,a,y\nfoo,1,2\nbar,3,4\n");
        let d = load_csv(f.path(), &TargetColumn::default()).unwrap();
        assert_eq!(d.dim(), 1);
        assert_eq!(d.feature_names, vec!["a".to_string()]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("a,y\n1,2\n3,oops\n");
        match load_csv(f.path(), &TargetColumn::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("a,y\n1,2\n3\n");
        assert!(matches!(load_csv(f.path(), &TargetColumn::default()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = Dataset::new(Points::from_scalars(&(0..10).map(f64::from).collect::<Vec<_>>()), (0..10).map(f64::from).collect()).unwrap();
        let (tr, te) = split(&d, 0.2, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, _) = split(&d, 0.2, 3).unwrap();
        assert_eq!(tr.y, tr2.y);
        let mut all: Vec<f64> = tr.y.iter().chain(&te.y).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, d.y);
        let differs = (0..20).any(|s| split(&d, 0.2, s).unwrap().1.y != te.y);
        assert!(differs);
        assert!(split(&d, 1.0, 0).is_err());
    }

    #[test]
    fn standardized_train_has_unit_moments() {
        let x = Points::new((0..40).map(|v| (v as f64 * 0.37).sin() * 5.0 + 2.0).collect(), 2).unwrap();
        let y: Vec<f64> = (0..20).map(|v| v as f64 * 3.0 - 1.0).collect();
        let d = Dataset::new(x, y).unwrap();
        let (tr, _) = standardize(&d, &d).unwrap();
        for j in 0..2 {
            let (m, s) = mean_std(&tr.x.column(j));
            assert!(m.abs() < 1e-8 && (s - 1.0).abs() < 1e-6);
        }
        let (m, s) = mean_std(&tr.y);
        assert!(m.abs() < 1e-8 && (s - 1.0).abs() < 1e-6);
    }
}
