//! Subject covariate tables from comma-separated text.
//!
//! The file must carry a header row with a `subject_id` column; every
//! other column is numeric. An all-ones `intercept` column is prepended
//! when absent, so the design matrix always starts with the intercept.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const SUBJECT_ID_COLUMN: &str = "subject_id";
pub const INTERCEPT_COLUMN: &str = "intercept";

/// N×Q design matrix with column names and aligned subject ids.
#[derive(Clone, Debug)]
pub struct CovariateTable {
    /// Design matrix; first column is the all-ones intercept.
    pub z: Array2<f64>,
    pub column_names: Vec<String>,
    pub subject_ids: Vec<String>,
}

impl CovariateTable {
    pub fn n_subjects(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.z.ncols()
    }

    /// Build a table from raw covariate columns (intercept prepended here).
    pub fn from_columns(
        subject_ids: Vec<String>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if n == 0 {
            return Err(Error::Data("covariate table has no rows".into()));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for id in &subject_ids {
                if !seen.insert(id) {
                    return Err(Error::Data(format!("duplicate subject id '{id}'")));
                }
            }
        }
        if names.len() != columns.len() {
            return Err(Error::Data("covariate name/column count mismatch".into()));
        }
        let has_intercept = names.first().map(|n| n == INTERCEPT_COLUMN).unwrap_or(false);
        let q = columns.len() + usize::from(!has_intercept);
        let mut z = Array2::<f64>::zeros((n, q));
        let mut column_names = Vec::with_capacity(q);
        let mut col0 = 0;
        if !has_intercept {
            for i in 0..n {
                z[(i, 0)] = 1.0;
            }
            column_names.push(INTERCEPT_COLUMN.to_string());
            col0 = 1;
        }
        for (j, (name, col)) in names.iter().zip(&columns).enumerate() {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "column '{name}' has {} values for {n} subjects",
                    col.len()
                )));
            }
            for (i, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-numeric value in column '{name}' row {i}")));
                }
                z[(i, j + col0)] = v;
            }
            column_names.push(name.clone());
        }
        let table = CovariateTable { z, column_names, subject_ids };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_subjects();
        for i in 0..n {
            if self.z[(i, 0)] != 1.0 {
                return Err(Error::Data(format!(
                    "intercept column must be all ones (row {i} is {})",
                    self.z[(i, 0)]
                )));
            }
        }
        if n > 1 {
            for j in 1..self.n_columns() {
                let col = self.z.column(j);
                let mean = col.sum() / n as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                if var <= 0.0 {
                    return Err(Error::Data(format!(
                        "zero-variance covariate '{}'",
                        self.column_names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reorder rows to match `manifest` (one subject id per entry).
    pub fn reorder(&self, manifest: &[String]) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> = self
            .subject_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(manifest.len());
        for id in manifest {
            match index.get(id.as_str()) {
                Some(&i) => rows.push(i),
                None => {
                    return Err(Error::Data(format!(
                        "manifest subject '{id}' not found in covariate table"
                    )))
                }
            }
        }
        let q = self.n_columns();
        let mut z = Array2::<f64>::zeros((rows.len(), q));
        let mut subject_ids = Vec::with_capacity(rows.len());
        for (new_i, &old_i) in rows.iter().enumerate() {
            for j in 0..q {
                z[(new_i, j)] = self.z[(old_i, j)];
            }
            subject_ids.push(self.subject_ids[old_i].clone());
        }
        Ok(CovariateTable { z, column_names: self.column_names.clone(), subject_ids })
    }
}

/// Read a covariate CSV; verify `required_columns` are present; reorder
/// rows by `manifest` when given.
pub fn read_covariates(
    path: &Path,
    required_columns: &[&str],
    manifest: Option<&[String]>,
) -> Result<CovariateTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
    let id_col = headers
        .iter()
        .position(|h| h == SUBJECT_ID_COLUMN)
        .ok_or_else(|| {
            Error::Data(format!("{}: missing required column '{SUBJECT_ID_COLUMN}'", path.display()))
        })?;
    for req in required_columns {
        if !headers.iter().any(|h| h == req) {
            return Err(Error::Data(format!(
                "{}: missing required column '{req}'",
                path.display()
            )));
        }
    }

    let value_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != id_col).collect();
    let mut subject_ids = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); value_cols.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        subject_ids.push(
            record
                .get(id_col)
                .ok_or_else(|| Error::Format(format!("{}: short row {}", path.display(), row_idx + 2)))?
                .to_string(),
        );
        for (k, &j) in value_cols.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: non-numeric cell '{cell}' in column '{}' row {}",
                    path.display(),
                    headers[j],
                    row_idx + 2
                ))
            })?;
            columns[k].push(v);
        }
    }

    let names: Vec<String> = value_cols.iter().map(|&j| headers[j].clone()).collect();
    let table = CovariateTable::from_columns(subject_ids, names, columns)?;
    match manifest {
        Some(m) => table.reorder(m),
        None => Ok(table),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_csv(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn intercept_prepended() {
        let (_d, path) = write_csv("subject_id,age\ns1,10\ns2,12\ns3,14\n");
        let t = read_covariates(&path, &["age"], None).unwrap();
        assert_eq!(t.n_subjects(), 3);
        assert_eq!(t.n_columns(), 2);
        assert_eq!(t.column_names, vec!["intercept", "age"]);
        for i in 0..3 {
            assert_eq!(t.z[(i, 0)], 1.0);
        }
        assert_eq!(t.z[(2, 1)], 14.0);
    }

    #[test]
    fn intercept_only_when_no_covariates() {
        let (_d, path) = write_csv("subject_id\ns1\ns2\n");
        let t = read_covariates(&path, &[], None).unwrap();
        assert_eq!(t.n_columns(), 1);
        assert_eq!(t.column_names, vec!["intercept"]);
    }

    #[test]
    fn paper_scale_shape() {
        // 355 rows x 4 covariate columns + intercept = 355x5.
        let mut content = String::from("subject_id,age,med,adhd,med_adhd\n");
        for i in 0..355 {
            content.push_str(&format!(
                "s{i},{},{},{},{}\n",
                8 + (i % 10),
                i % 2,
                20 + (i % 60),
                (i % 2) * (20 + (i % 60))
            ));
        }
        let (_d, path) = write_csv(&content);
        let t = read_covariates(&path, &["age", "med", "adhd", "med_adhd"], None).unwrap();
        assert_eq!(t.z.nrows(), 355);
        assert_eq!(t.z.ncols(), 5);
    }

    #[test]
    fn rejects_defects() {
        let (_d, p1) = write_csv("subject_id,age\ns1,10\ns1,12\n");
        assert!(read_covariates(&p1, &[], None).unwrap_err().to_string().contains("duplicate"));

        let (_d2, p2) = write_csv("subject_id,age\ns1,ten\n");
        assert!(read_covariates(&p2, &[], None).unwrap_err().to_string().contains("non-numeric"));

        let (_d3, p3) = write_csv("subject_id,age\ns1,10\ns2,12\n");
        assert!(read_covariates(&p3, &["sex"], None)
            .unwrap_err()
            .to_string()
            .contains("missing required column 'sex'"));

        // Constant non-intercept column.
        let (_d4, p4) = write_csv("subject_id,age,c\ns1,10,5\ns2,12,5\n");
        assert!(read_covariates(&p4, &[], None)
            .unwrap_err()
            .to_string()
            .contains("zero-variance covariate"));
    }

    #[test]
    fn manifest_reorders() {
        let (_d, path) = write_csv("subject_id,age\na,1\nb,2\nc,3\n");
        let manifest = vec!["c".to_string(), "a".to_string(), "b".to_string()];
        let t = read_covariates(&path, &[], Some(&manifest)).unwrap();
        assert_eq!(t.subject_ids, manifest);
        assert_eq!(t.z[(0, 1)], 3.0);
        assert_eq!(t.z[(1, 1)], 1.0);

        let missing = vec!["zz".to_string()];
        assert!(read_covariates(&path, &[], Some(&missing)).is_err());
    }
}
