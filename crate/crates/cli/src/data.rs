//! CSV input and output.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use svcgp::kernels::Coordinates;
use svcgp::linalg::Matrix;
use svcgp::model::{ModelSpec, INTERCEPT};

use crate::config::RunConfig;

/// A numeric table read from CSV, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| anyhow!("column '{name}' not found (available: {})", self.names.join(", ")))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.columns.iter().map(|c| c[i]).collect()).collect()
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let columns = (0..names.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self { names, columns }
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.with_context(|| format!("{}: line {line}", path.display()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                anyhow!("{}: line {line}, column '{}': cannot parse '{field}' as a number", path.display(), names[j])
            })?;
            columns[j].push(v);
        }
    }
    Ok(Table { names, columns })
}

/// Write rows of numbers under `names`, shortest round-trip formatting.
pub fn write_table<W: Write>(out: W, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    for row in rows {
        if row.len() != names.len() {
            bail!("row of {} values under {} column names", row.len(), names.len());
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_file(path: &Path, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_table(std::io::BufWriter::new(f), names, rows)
}

/// Design columns named by the config: an optional intercept, then predictors.
pub fn design(cfg: &RunConfig, table: &Table) -> Result<(Matrix, Vec<String>)> {
    let n = table.n_rows();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if cfg.data.intercept {
        names.push(INTERCEPT.to_string());
        cols.push(vec![1.0; n]);
    }
    for p in &cfg.data.predictors {
        cols.push(table.column(p)?.to_vec());
        names.push(p.clone());
    }
    if cols.is_empty() {
        bail!("the design has no columns: set data.intercept or data.predictors");
    }
    let data = cols.concat();
    Ok((Matrix::from_col_major(n, names.len(), data)?, names))
}

pub fn coordinates(cfg: &RunConfig, table: &Table) -> Result<Coordinates> {
    if cfg.data.coords.is_empty() {
        bail!("data.coords must name at least one coordinate column");
    }
    let cols: Vec<&[f64]> = cfg.data.coords.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    let dim = cols.len();
    let pts = (0..table.n_rows()).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    Ok(Coordinates::new(dim, pts)?)
}

pub fn model_spec(cfg: &RunConfig, table: &Table) -> Result<ModelSpec> {
    let y = table.column(&cfg.data.outcome)?.to_vec();
    let (x, x_names) = design(cfg, table)?;
    let coords = coordinates(cfg, table)?;
    let sel: Vec<String> = cfg.model.svc_cols.iter().map(|c| c.selector()).collect();
    let svc_cols = svcgp::model::resolve_columns(&x_names, &sel)?;
    Ok(ModelSpec {
        y,
        x,
        x_names,
        coords,
        svc_cols,
        standardize: cfg.model.standardize,
        correlation: cfg.correlation()?,
        cov_mode: cfg.cov_mode()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn missing_column_is_named() {
        let t = Table { names: vec!["a".into()], columns: vec![vec![1.0]] };
        let err = t.column("b").unwrap_err().to_string();
        assert!(err.contains("'b'"), "{err}");
    }

    #[test]
    fn parse_error_has_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "y,x\n1,2\n3,oops\n").unwrap();
        let err = read_table(&p).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'x'"), "{err}");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..20)) {
            let names: Vec<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
            let mut buf = Vec::new();
            write_table(&mut buf, &names, &rows).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.csv");
            std::fs::write(&p, &buf).unwrap();
            let t = read_table(&p).unwrap();
            prop_assert_eq!(&t.names, &names);
            prop_assert_eq!(t.rows(), rows);
        }
    }
}
