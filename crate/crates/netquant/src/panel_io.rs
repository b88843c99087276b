//! Panel datasets on disk: a JSON manifest pointing at CSV files.
//!
//! * `y.csv`: one row per node, one column per period.
//! * `z.csv`: one row per node, one column per node covariate.
//! * `f.csv`: one row per period, one column per common factor.
//! * `network.csv`: `from,to` edges (node `from` follows node `to`), with an
//!   optional `weight` column; without weights the adjacency is row-normalized.
//!
//! Node and period files may start with a label column named `node` or `t`.
//! Numbers are written in shortest round-trip form, so reloading is lossless.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use netquant_core::network::{row_normalize, AdjacencyMatrix, NetworkWeights};
use netquant_core::sim::PanelData;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub y: PathBuf,
    pub z: PathBuf,
    pub f: PathBuf,
    pub network: PathBuf,
    pub n: usize,
    /// Periods in `y.csv`, including the leading lag-only periods.
    pub t: usize,
    pub q: usize,
    pub m: usize,
    /// Lags of the common factors used in estimation.
    pub p: usize,
    #[serde(default)]
    pub standardize_z: bool,
    #[serde(default)]
    pub z_names: Vec<String>,
    #[serde(default)]
    pub f_names: Vec<String>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    fn resolve(&self, base: &Path, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            base.join(file)
        }
    }
}

/// Write `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Numeric table with an optional label column.
struct Table {
    rows: Vec<Vec<f64>>,
    header: Vec<String>,
}

fn read_table(path: &Path, label: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let mut header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::parse(path, "missing header row"));
    }
    let skip = usize::from(header[0] == label);
    header.drain(..skip);
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Data {
            path: path.to_path_buf(),
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let values = record
            .iter()
            .enumerate()
            .skip(skip)
            .map(|(c, field)| {
                let bad = |message: String| Error::Data {
                    path: path.to_path_buf(),
                    row,
                    column: c,
                    message,
                };
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(format!("cannot parse {field:?} as a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("non-finite value {field}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok(Table { rows, header })
}

fn to_matrix(path: &Path, table: &Table, rows: usize, cols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if table.header.len() != cols {
        return Err(Error::Shape {
            path: path.to_path_buf(),
            what: "value columns",
            expected: cols,
            found: table.header.len(),
        });
    }
    if table.rows.len() != rows {
        return Err(Error::Shape {
            path: path.to_path_buf(),
            what,
            expected: rows,
            found: table.rows.len(),
        });
    }
    for (r, row) in table.rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: r + 1,
                column: row.len(),
                message: format!("expected {cols} values, found {}", row.len()),
            });
        }
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| table.rows[i][j]))
}

fn read_network(path: &Path, n: usize) -> Result<NetworkWeights> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let header = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    let weighted = match header.len() {
        2 => false,
        3 => true,
        found => {
            return Err(Error::Shape {
                path: path.to_path_buf(),
                what: "columns (from,to[,weight])",
                expected: 2,
                found,
            })
        }
    };
    let mut edges = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let bad = |column: usize, message: String| Error::Data {
            path: path.to_path_buf(),
            row,
            column,
            message,
        };
        let record = record.map_err(|e| bad(0, e.to_string()))?;
        let node = |c: usize| -> Result<usize> {
            let field = record.get(c).unwrap_or("");
            let v: usize = field
                .parse()
                .map_err(|_| bad(c, format!("cannot parse {field:?} as a node index")))?;
            if v >= n {
                return Err(bad(c, format!("node {v} is out of range for n = {n}")));
            }
            Ok(v)
        };
        let (from, to) = (node(0)?, node(1)?);
        if from == to {
            return Err(bad(1, format!("self-loop at node {from}")));
        }
        if weighted {
            let field = record.get(2).unwrap_or("");
            let w: f64 = field
                .parse()
                .ok()
                .filter(|w: &f64| w.is_finite() && *w >= 0.0)
                .ok_or_else(|| bad(2, format!("invalid weight {field:?}")))?;
            rows[from].push((to, w));
        } else {
            edges.push((from, to));
        }
    }
    if weighted {
        Ok(NetworkWeights::from_weighted_rows(rows)?)
    } else {
        Ok(row_normalize(&AdjacencyMatrix::from_edges(n, edges)?))
    }
}

/// Scale each column to mean 0 and unit sample variance.
pub fn standardize_columns(z: &mut DMatrix<f64>, path: &Path) -> Result<()> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::parse(path, "standardizing needs at least two nodes"));
    }
    for j in 0..z.ncols() {
        let mut col = z.column_mut(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: 0,
                column: j,
                message: "column has zero variance and cannot be standardized".into(),
            });
        }
        let sd = var.sqrt();
        col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    Ok(())
}

pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, PanelData)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (yp, zp, fp, wp) = (
        manifest.resolve(base, &manifest.y),
        manifest.resolve(base, &manifest.z),
        manifest.resolve(base, &manifest.f),
        manifest.resolve(base, &manifest.network),
    );
    let y = to_matrix(&yp, &read_table(&yp, "node")?, manifest.n, manifest.t, "node rows")?;
    let mut z = to_matrix(&zp, &read_table(&zp, "node")?, manifest.n, manifest.q, "node rows")?;
    let f = to_matrix(&fp, &read_table(&fp, "t")?, manifest.t, manifest.m, "period rows")?;
    if manifest.standardize_z {
        standardize_columns(&mut z, &zp)?;
    }
    let network = read_network(&wp, manifest.n)?;
    let panel = PanelData::new(y, z, f, network)?;
    Ok((manifest, panel))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::parse("<memory>", e);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::parse("<memory>", e))
}

fn is_row_normalized(w: &NetworkWeights) -> bool {
    (0..w.n()).all(|i| {
        let row = w.row(i);
        let d = row.len() as f64;
        row.iter().all(|&(_, v)| v == 1.0 / d)
    })
}

/// Edge list CSV of a weight matrix; weights are written only when they are
/// not the row-normalized adjacency.
pub fn network_csv(w: &NetworkWeights) -> Result<Vec<u8>> {
    let weighted = !is_row_normalized(w);
    let mut header = vec!["from".to_string(), "to".to_string()];
    if weighted {
        header.push("weight".into());
    }
    let rows = (0..w.n()).flat_map(|i| {
        w.row(i).iter().map(move |&(j, v)| {
            let mut r = vec![i.to_string(), j.to_string()];
            if weighted {
                r.push(v.to_string());
            }
            r
        })
    });
    csv_bytes(&header, rows)
}

/// Write a panel and its manifest into `dir`; returns the manifest path.
pub fn write_dataset(panel: &PanelData, p: usize, dir: &Path) -> Result<PathBuf> {
    let (n, t, q, m) = (panel.n(), panel.periods(), panel.q(), panel.m());
    let mut header = vec!["node".to_string()];
    header.extend((0..t).map(|s| format!("t{s}")));
    let y = csv_bytes(
        &header,
        (0..n).map(|i| {
            let mut r = vec![i.to_string()];
            r.extend((0..t).map(|s| panel.y[(i, s)].to_string()));
            r
        }),
    )?;
    let z_names: Vec<String> = (1..=q).map(|l| format!("z{l}")).collect();
    let mut header = vec!["node".to_string()];
    header.extend(z_names.iter().cloned());
    let z = csv_bytes(
        &header,
        (0..n).map(|i| {
            let mut r = vec![i.to_string()];
            r.extend((0..q).map(|l| panel.z[(i, l)].to_string()));
            r
        }),
    )?;
    let f_names: Vec<String> = (1..=m).map(|k| format!("f{k}")).collect();
    let mut header = vec!["t".to_string()];
    header.extend(f_names.iter().cloned());
    let f = csv_bytes(
        &header,
        (0..t).map(|s| {
            let mut r = vec![s.to_string()];
            r.extend((0..m).map(|k| panel.f[(s, k)].to_string()));
            r
        }),
    )?;
    write_atomic(&dir.join("y.csv"), &y)?;
    write_atomic(&dir.join("z.csv"), &z)?;
    write_atomic(&dir.join("f.csv"), &f)?;
    write_atomic(&dir.join("network.csv"), &network_csv(&panel.network)?)?;
    let manifest = DatasetManifest {
        y: "y.csv".into(),
        z: "z.csv".into(),
        f: "f.csv".into(),
        network: "network.csv".into(),
        n,
        t,
        q,
        m,
        p,
        standardize_z: false,
        z_names,
        f_names,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::parse(&path, e))?;
    write_atomic(&path, &json)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn tables_round_trip_bitwise(
            values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 12),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("y.csv");
            let header = ["node", "t0", "t1", "t2"].map(String::from);
            let rows = (0..4).map(|i| {
                let mut r = vec![i.to_string()];
                r.extend((0..3).map(|s| values[i * 3 + s].to_string()));
                r
            });
            write_atomic(&path, &csv_bytes(&header, rows).unwrap()).unwrap();
            let m = to_matrix(&path, &read_table(&path, "node").unwrap(), 4, 3, "node rows").unwrap();
            for i in 0..4 {
                for s in 0..3 {
                    prop_assert_eq!(m[(i, s)].to_bits(), values[i * 3 + s].to_bits());
                }
            }
        }
    }

    #[test]
    fn standardize_examples() {
        let mut z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        standardize_columns(&mut z, Path::new("z.csv")).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 0.0, 1.0]);
        let mut flat = DMatrix::from_element(4, 2, 3.0);
        let err = standardize_columns(&mut flat, Path::new("z.csv")).unwrap_err();
        assert!(err.to_string().contains("zero variance"));
    }

    #[test]
    fn weighted_networks_keep_weights() {
        let w = NetworkWeights::from_weighted_rows(vec![vec![(1, 0.25)], vec![], vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let text = String::from_utf8(network_csv(&w).unwrap()).unwrap();
        assert!(text.starts_with("from,to,weight\n"));
        let adj = row_normalize(&AdjacencyMatrix::from_edges(3, [(0, 1), (2, 0), (2, 1)]).unwrap());
        let text = String::from_utf8(network_csv(&adj).unwrap()).unwrap();
        assert_eq!(text, "from,to\n0,1\n2,0\n2,1\n");
    }
}
