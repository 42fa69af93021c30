//! Two-file long format for datasets, and fit reports.
//!
//! Unit file: `cluster_id,unit_id,y,<mean covariates...>`.
//! Pair file: `cluster_id,unit_j,unit_k,<association covariates...>`.
//! Both are comma-delimited with a header row; lines starting with `#`
//! are ignored. When `intercept` is set a
//! constant column named `(Intercept)` is prepended to both designs on
//! load and dropped again on write.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::inference::SandwichEstimate;
use crate::model::{lexicographic_pairs, ClusterData, Dataset};
use crate::selection::FitResult;

pub const INTERCEPT_NAME: &str = "(Intercept)";

fn parse_err(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        op: "io::load_dataset",
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn header(path: &Path, rdr: &mut csv::Reader<File>, fixed: usize) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if h.len() < fixed {
        return Err(parse_err(
            path,
            1,
            format!("header needs at least {fixed} columns, found {}", h.len()),
        ));
    }
    Ok(h.iter().skip(fixed).map(str::to_string).collect())
}

fn parse_f64(path: &Path, line: u64, field: &str, column: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| {
        parse_err(
            path,
            line,
            format!("column '{column}': cannot parse '{field}' as a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            line,
            format!("column '{column}': non-finite value '{field}'"),
        ));
    }
    Ok(v)
}

struct UnitRows {
    ids: Vec<String>,
    y: Vec<u8>,
    x: Vec<Vec<f64>>,
}

/// Reads the two files into a validated dataset. Clusters keep the order
/// of first appearance in the unit file; units keep file order; pair rows
/// may come in any order and either orientation.
pub fn load_dataset(unit_path: &Path, pair_path: &Path, intercept: bool) -> Result<Dataset> {
    let mut units = open(unit_path)?;
    let mean_cols = header(unit_path, &mut units, 3)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_cluster: HashMap<String, UnitRows> = HashMap::new();
    for rec in units.records() {
        let rec = rec.map_err(|e| parse_err(unit_path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 + mean_cols.len() {
            return Err(parse_err(
                unit_path,
                line,
                format!("expected {} fields, found {}", 3 + mean_cols.len(), rec.len()),
            ));
        }
        let cid = rec[0].to_string();
        let uid = rec[1].to_string();
        let y = match &rec[2] {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(parse_err(unit_path, line, format!("response '{other}' is not binary"))),
        };
        let mut row = Vec::with_capacity(mean_cols.len() + 1);
        if intercept {
            row.push(1.0);
        }
        for (f, name) in rec.iter().skip(3).zip(&mean_cols) {
            row.push(parse_f64(unit_path, line, f, name)?);
        }
        let entry = by_cluster.entry(cid.clone()).or_insert_with(|| {
            order.push(cid.clone());
            UnitRows {
                ids: Vec::new(),
                y: Vec::new(),
                x: Vec::new(),
            }
        });
        if entry.ids.contains(&uid) {
            return Err(parse_err(
                unit_path,
                line,
                format!("duplicate unit '{uid}' in cluster '{cid}'"),
            ));
        }
        entry.ids.push(uid);
        entry.y.push(y);
        entry.x.push(row);
    }
    if order.is_empty() {
        return Err(parse_err(unit_path, 1, "no unit rows"));
    }

    let mut pairs = open(pair_path)?;
    let assoc_cols = header(pair_path, &mut pairs, 3)?;
    let q = assoc_cols.len() + usize::from(intercept);
    // cluster -> pair position -> covariate row
    let mut pair_rows: HashMap<String, Vec<Option<Vec<f64>>>> = HashMap::new();
    for rec in pairs.records() {
        let rec = rec.map_err(|e| parse_err(pair_path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 + assoc_cols.len() {
            return Err(parse_err(
                pair_path,
                line,
                format!("expected {} fields, found {}", 3 + assoc_cols.len(), rec.len()),
            ));
        }
        let cid = &rec[0];
        let Some(cluster) = by_cluster.get(cid) else {
            return Err(parse_err(pair_path, line, format!("unknown cluster '{cid}'")));
        };
        let locate = |u: &str| {
            cluster
                .ids
                .iter()
                .position(|id| id == u)
                .ok_or_else(|| parse_err(pair_path, line, format!("unknown unit '{u}' in cluster '{cid}'")))
        };
        let (a, b) = (locate(&rec[1])?, locate(&rec[2])?);
        if a == b {
            return Err(parse_err(
                pair_path,
                line,
                format!("pair of unit '{}' with itself", &rec[1]),
            ));
        }
        let (j, k) = (a.min(b), a.max(b));
        let n = cluster.ids.len();
        // Lexicographic position of (j, k).
        let pos = j * n - j * (j + 1) / 2 + (k - j - 1);
        let mut row = Vec::with_capacity(q);
        if intercept {
            row.push(1.0);
        }
        for (f, name) in rec.iter().skip(3).zip(&assoc_cols) {
            row.push(parse_f64(pair_path, line, f, name)?);
        }
        let slots = pair_rows
            .entry(cid.to_string())
            .or_insert_with(|| vec![None; n * (n - 1) / 2]);
        if slots[pos].is_some() {
            return Err(parse_err(
                pair_path,
                line,
                format!(
                    "duplicate pair ({}, {}) in cluster '{cid}'",
                    cluster.ids[j], cluster.ids[k]
                ),
            ));
        }
        slots[pos] = Some(row);
    }

    let p = mean_cols.len() + usize::from(intercept);
    let mut clusters = Vec::with_capacity(order.len());
    for cid in &order {
        let rows = by_cluster.remove(cid).expect("cluster recorded on first sight");
        let n = rows.ids.len();
        let m = n * (n - 1) / 2;
        let slots = pair_rows.remove(cid).unwrap_or_else(|| vec![None; m]);
        let mut z = DMatrix::zeros(m, q);
        for (pos, (j, k)) in lexicographic_pairs(n).into_iter().enumerate() {
            let Some(row) = &slots[pos] else {
                return Err(parse_err(
                    pair_path,
                    0,
                    format!("cluster '{cid}' is missing pair ({}, {})", rows.ids[j], rows.ids[k]),
                ));
            };
            for (c, &v) in row.iter().enumerate() {
                z[(pos, c)] = v;
            }
        }
        let x = DMatrix::from_fn(n, p, |r, c| rows.x[r][c]);
        clusters.push(ClusterData::with_unit_ids(cid.clone(), rows.ids, &rows.y, x, z)?);
    }
    let with_intercept = |cols: Vec<String>| {
        if intercept {
            std::iter::once(INTERCEPT_NAME.to_string()).chain(cols).collect()
        } else {
            cols
        }
    };
    Dataset::new(
        clusters,
        with_intercept(mean_cols),
        with_intercept(assoc_cols),
        intercept,
    )
}

fn to_csv(rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory cannot fail");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// Unit and pair files as strings. Floats use the shortest representation
/// that parses back to the same value.
pub fn dataset_csv(ds: &Dataset) -> (String, String) {
    let skip = usize::from(ds.has_intercept());
    let mut head = vec!["cluster_id".to_string(), "unit_id".into(), "y".into()];
    head.extend(ds.mean_names().iter().skip(skip).cloned());
    let units = std::iter::once(head).chain(ds.clusters().iter().flat_map(|c| {
        (0..c.n_units()).map(move |j| {
            let mut rec = vec![c.id.clone(), c.unit_ids[j].clone(), format!("{}", c.y[j] as u8)];
            rec.extend((skip..c.x.ncols()).map(|col| format!("{}", c.x[(j, col)])));
            rec
        })
    }));
    let units = to_csv(units);

    let mut head = vec!["cluster_id".to_string(), "unit_j".into(), "unit_k".into()];
    head.extend(ds.assoc_names().iter().skip(skip).cloned());
    let pairs = std::iter::once(head).chain(ds.clusters().iter().flat_map(|c| {
        c.pairs.iter().enumerate().map(move |(pos, &(j, k))| {
            let mut rec = vec![c.id.clone(), c.unit_ids[j].clone(), c.unit_ids[k].clone()];
            rec.extend((skip..c.z.ncols()).map(|col| format!("{}", c.z[(pos, col)])));
            rec
        })
    }));
    (units, to_csv(pairs))
}

/// Writes both files atomically; `preamble` (already `#`-prefixed) goes
/// at the top of each. If the second write fails the first is removed.
pub fn write_dataset(ds: &Dataset, unit_path: &Path, pair_path: &Path, preamble: &str) -> Result<()> {
    let (units, pairs) = dataset_csv(ds);
    write_atomic(unit_path, format!("{preamble}{units}").as_bytes())?;
    if let Err(e) = write_atomic(pair_path, format!("{preamble}{pairs}").as_bytes()) {
        let _ = std::fs::remove_file(unit_path);
        return Err(e);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::config("io::report_fit", format!("unknown format '{other}'"))),
        }
    }
}

fn cell(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.3}")
    }
}

/// Estimates and standard errors, mean block then association block.
/// Zero estimates print as `0` with an empty SE.
pub fn report_fit(ds: &Dataset, fit: &FitResult, se: Option<&SandwichEstimate>, format: ReportFormat) -> String {
    let se_beta = se.map(SandwichEstimate::se_beta).unwrap_or_else(|| vec![None; ds.p()]);
    let se_alpha = se.map(SandwichEstimate::se_alpha).unwrap_or_else(|| vec![None; ds.q()]);
    let blocks = [
        ("mean", "Mean model", ds.mean_names(), &fit.params.beta, se_beta),
        (
            "association",
            "Association model",
            ds.assoc_names(),
            &fit.params.alpha,
            se_alpha,
        ),
    ];
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("block,parameter,estimate,se\n");
            for (tag, _, names, est, ses) in &blocks {
                for (i, name) in names.iter().enumerate() {
                    let s = if est[i] == 0.0 {
                        String::new()
                    } else {
                        ses[i].map(|v| format!("{v:.3}")).unwrap_or_default()
                    };
                    let _ = writeln!(out, "{tag},{name},{},{s}", cell(est[i]));
                }
            }
        }
        ReportFormat::Text => {
            let width = blocks
                .iter()
                .flat_map(|b| b.2.iter())
                .map(String::len)
                .max()
                .unwrap_or(0)
                .max(9);
            for (k, (_, title, names, est, ses)) in blocks.iter().enumerate() {
                if k > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "{title}");
                let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}", "parameter", "estimate", "SE");
                for (i, name) in names.iter().enumerate() {
                    let s = if est[i] == 0.0 {
                        String::new()
                    } else {
                        ses[i].map(|v| format!("{v:.3}")).unwrap_or_default()
                    };
                    let _ = writeln!(out, "{name:<width$}  {:>10}  {s:>10}", cell(est[i]));
                }
            }
        }
    }
    out
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        op: "io::write_atomic",
        path: path.display().to_string(),
        source,
    };
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
