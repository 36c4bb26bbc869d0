//! CSV and JSON readers/writers and the model configuration file.
//!
//! Numeric CSV is written with 17 significant digits so a matrix read back
//! is bit-identical. `NA`, `NaN` and empty cells read as unobserved.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::car::{SpatialGraph, SpectralGraphCache};
use crate::covstruct::{hadamard_interaction, ComponentMatrix, CovariateSet};
use crate::error::{Error, Result};
use crate::identify::{default_beta_grid, linspace, DEFAULT_TOL};
use crate::linalg::{Mask, Matrix};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "null")
}

fn read_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn looks_like_header(row: &[String]) -> bool {
    row.iter().any(|f| !is_missing_token(f) && f.parse::<f64>().is_err())
}

/// A numeric table with optional column names and an observed mask.
#[derive(Clone, Debug)]
pub struct Table {
    pub names: Option<Vec<String>>,
    pub values: Matrix,
    pub observed: Mask,
}

/// Reads a numeric CSV; a non-numeric first row is taken as a header.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rows = read_records(path)?;
    let names = match rows.first() {
        Some(r) if looks_like_header(r) => Some(rows.remove(0)),
        _ => None,
    };
    let ncol = names
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .unwrap_or(0);
    let nrow = rows.len();
    let mut values = Matrix::zeros(nrow, ncol);
    let mut observed = Mask::from_element(nrow, ncol, true);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncol {
            return Err(parse_err(
                path,
                format!("row {} has {} fields, expected {ncol}", i + 1, row.len()),
            ));
        }
        for (j, f) in row.iter().enumerate() {
            if is_missing_token(f) {
                observed[(i, j)] = false;
                continue;
            }
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, format!("row {}, column {}: '{f}' is not a number", i + 1, j + 1)))?;
            if !v.is_finite() {
                observed[(i, j)] = false;
            } else {
                values[(i, j)] = v;
            }
        }
    }
    Ok(Table {
        names,
        values,
        observed,
    })
}

/// Reads a numeric CSV that must be fully observed.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let t = read_table(path)?;
    if t.observed.iter().any(|o| !o) {
        return Err(parse_err(path, "missing entries are not allowed here"));
    }
    Ok(t.values)
}

/// Observed mask from a 0/1 (or true/false) CSV.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let rows = read_records(path)?;
    let ncol = rows.first().map(Vec::len).unwrap_or(0);
    let mut mask = Mask::from_element(rows.len(), ncol, true);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncol {
            return Err(parse_err(path, format!("row {} has {} fields", i + 1, row.len())));
        }
        for (j, f) in row.iter().enumerate() {
            mask[(i, j)] = match f.as_str() {
                "1" | "true" | "TRUE" | "T" => true,
                "0" | "false" | "FALSE" | "F" => false,
                other => return Err(parse_err(path, format!("'{other}' is not a mask value"))),
            };
        }
    }
    Ok(mask)
}

/// Cluster labels, one per line or as `index,label` pairs. Labels may be
/// arbitrary strings; `NA`/empty labels get a cluster of their own.
pub fn read_labels(path: &Path, d: usize) -> Result<Vec<usize>> {
    let mut rows = read_records(path)?;
    let header = rows.first().is_some_and(|r| {
        (r.len() == 2 && r[0].parse::<usize>().is_err())
            || (r.len() == 1 && r[0].eq_ignore_ascii_case("label"))
    });
    if header {
        rows.remove(0);
    }
    let mut raw: Vec<Option<String>> = vec![None; d];
    let mut seen = vec![false; d];
    for (n, row) in rows.iter().enumerate() {
        let (idx, label) = match row.as_slice() {
            [label] => (n, label),
            [idx, label] => (
                idx.parse::<usize>()
                    .map_err(|_| parse_err(path, format!("row {}: bad index '{idx}'", n + 1)))?,
                label,
            ),
            _ => return Err(parse_err(path, format!("row {} must have 1 or 2 fields", n + 1))),
        };
        if idx >= d {
            return Err(parse_err(path, format!("index {idx} out of range for d = {d}")));
        }
        if seen[idx] {
            return Err(parse_err(path, format!("index {idx} listed twice")));
        }
        seen[idx] = true;
        raw[idx] = (!is_missing_token(label)).then(|| label.clone());
    }
    if let Some(miss) = seen.iter().position(|s| !s) {
        return Err(parse_err(path, format!("no label for variable {miss}")));
    }
    let mut names: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(d);
    let mut next_single = usize::MAX;
    for r in raw {
        match r {
            Some(l) => {
                let k = names.iter().position(|n| *n == l).unwrap_or_else(|| {
                    names.push(l);
                    names.len() - 1
                });
                out.push(k);
            }
            None => {
                out.push(next_single);
                next_single -= 1;
            }
        }
    }
    Ok(out)
}

/// Adjacency from a dense `d × d` 0/1 matrix or a two-column 0-based edge list.
pub fn read_adjacency(path: &Path, d: usize) -> Result<SpatialGraph> {
    let mut rows = read_records(path)?;
    if rows.first().is_some_and(|r| looks_like_header(r)) {
        rows.remove(0);
    }
    let square = rows.len() == d && rows.iter().all(|r| r.len() == d);
    // At d = 2 a two-row edge list is also square; a zero diagonal decides.
    let dense = square && (d != 2 || (rows[0][0] == "0" && rows[1][1] == "0"));
    if dense {
        let mut adj = Matrix::zeros(d, d);
        for (i, r) in rows.iter().enumerate() {
            for (j, f) in r.iter().enumerate() {
                adj[(i, j)] = f
                    .parse()
                    .map_err(|_| parse_err(path, format!("row {}: '{f}' is not a number", i + 1)))?;
            }
        }
        return SpatialGraph::from_adjacency(&adj);
    }
    let mut edges = Vec::with_capacity(rows.len());
    for (n, r) in rows.iter().enumerate() {
        let [a, b] = r.as_slice() else {
            return Err(parse_err(
                path,
                format!("expected a {d} x {d} matrix or a two-column edge list (row {})", n + 1),
            ));
        };
        let a: usize = a.parse().map_err(|_| parse_err(path, format!("row {}: bad node '{a}'", n + 1)))?;
        let b: usize = b.parse().map_err(|_| parse_err(path, format!("row {}: bad node '{b}'", n + 1)))?;
        edges.push((a, b));
    }
    SpatialGraph::from_edges(d, &edges)
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 24);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes values with unobserved cells as `NA`.
pub fn write_table(path: &Path, m: &Matrix, observed: &Mask) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| if observed[(i, j)] { format_f64(m[(i, j)]) } else { "NA".into() })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = String::new();
    for i in 0..mask.nrows() {
        let row: Vec<&str> = (0..mask.ncols()).map(|j| if mask[(i, j)] { "1" } else { "0" }).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_edges(path: &Path, graph: &SpatialGraph) -> Result<()> {
    let mut out = String::from("from,to\n");
    for (a, b) in graph.edges() {
        out.push_str(&format!("{a},{b}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, s + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentSpec {
    Cluster { name: String, labels: PathBuf },
    Global { name: String },
    /// A user-supplied PSD matrix with unit diagonal.
    Custom { name: String, matrix: PathBuf },
    Spatial { name: String, adjacency: PathBuf },
    Interaction { name: Option<String>, parents: [String; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Self::Points(p) => p.clone(),
            Self::Range { start, stop, count } => linspace(*start, *stop, *count),
        }
    }
}

/// Parses `a:b:n`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidInput(format!("grid '{s}' is not of the form a:b:n"));
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let a: f64 = a.parse().map_err(|_| bad())?;
    let b: f64 = b.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 || !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&b) || a > b {
        return Err(Error::InvalidInput(format!("grid '{s}' must satisfy 0 <= a <= b < 1, n >= 1")));
    }
    Ok(linspace(a, b, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Known,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub identify_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            identify_tol: DEFAULT_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSpec {
    pub b: usize,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self { b: 100, seed: 1 }
    }
}

/// Model configuration. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of variables; inferred from the data when absent.
    #[serde(default)]
    pub dim: Option<usize>,
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub beta_grid: Option<GridSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub bootstrap: BootstrapSpec,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ModelConfig = read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn beta_grid(&self) -> Vec<f64> {
        self.beta_grid.as_ref().map(GridSpec::points).unwrap_or_else(default_beta_grid)
    }

    /// Builds the covariate set for `d` variables, checking every referenced file.
    pub fn build_set(&self, d: usize) -> Result<CovariateSet> {
        if let Some(dim) = self.dim {
            if dim != d {
                return Err(Error::Dimension(format!("model is for {dim} variables, data have {d}")));
            }
        }
        let mut set = CovariateSet::new(d)?;
        for c in &self.components {
            set = match c {
                ComponentSpec::Cluster { name, labels } => {
                    set.with_cluster(name, read_labels(&self.resolve(labels), d)?)?
                }
                ComponentSpec::Global { name } => set.with_global(name)?,
                ComponentSpec::Custom { name, matrix } => {
                    let m = read_matrix(&self.resolve(matrix))?;
                    set.with_component(ComponentMatrix::custom(name.clone(), m)?)?
                }
                ComponentSpec::Spatial { name, adjacency } => {
                    let g = read_adjacency(&self.resolve(adjacency), d)?;
                    set.with_spatial_cache(name, Arc::new(SpectralGraphCache::new(g)?))?
                }
                ComponentSpec::Interaction { name, parents } => {
                    let a = set.component_by_name(&parents[0])?;
                    let b = set.component_by_name(&parents[1])?;
                    let mut c = hadamard_interaction(a, b)?;
                    if let Some(n) = name {
                        c = c.with_name(n.clone());
                    }
                    set.with_component(c)?
                }
            };
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn table_with_header_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "y.csv", "a,b\n1.5,NA\n,2\n");
        let t = read_table(&p).unwrap();
        assert_eq!(t.names.unwrap(), vec!["a", "b"]);
        assert_eq!(t.values[(0, 0)], 1.5);
        assert!(!t.observed[(0, 1)] && !t.observed[(1, 0)] && t.observed[(1, 1)]);
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, std::f64::consts::PI, -1e-300]);
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn labels_strings_and_singletons() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "l.csv", "index,label\n0,uk\n1,NA\n2,uk\n3,fr\n");
        let l = read_labels(&p, 4).unwrap();
        assert_eq!(l[0], l[2]);
        assert_ne!(l[1], l[0]);
        assert_ne!(l[3], l[0]);
        assert!(read_labels(&p, 5).is_err());
    }

    #[test]
    fn adjacency_dense_and_edges() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "0,1,0\n1,0,1\n0,1,0\n");
        let e = write(dir.path(), "e.csv", "from,to\n0,1\n1,2\n");
        assert_eq!(read_adjacency(&a, 3).unwrap(), read_adjacency(&e, 3).unwrap());
        let two = write(dir.path(), "two.csv", "0,1\n");
        assert_eq!(read_adjacency(&two, 2).unwrap().edges().len(), 1);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1:0.9:3").unwrap(), vec![0.1, 0.5, 0.9]);
        assert!(parse_grid("0.1:1.2:3").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "0\n0\n1\n1\n");
        write(dir.path(), "adj.csv", "0,1\n1,2\n2,3\n");
        let cfg = write(
            dir.path(),
            "model.json",
            r#"{"components":[{"kind":"cluster","name":"A","labels":"a.csv"},
                {"kind":"spatial","name":"sp","adjacency":"adj.csv"},
                {"kind":"interaction","name":"Axsp","parents":["A","sp"]}],
                "beta_grid":{"start":0.1,"stop":0.9,"count":5}}"#,
        );
        let cfg = ModelConfig::load(&cfg).unwrap();
        let set = cfg.build_set(4).unwrap();
        assert_eq!(set.components().len(), 4);
        assert_eq!(set.components()[3].name(), "Axsp");
        assert_eq!(cfg.beta_grid().len(), 5);
        assert_eq!(cfg.mode, Mode::Known);
    }

    #[test]
    fn missing_file_is_named() {
        let err = read_matrix(Path::new("/nonexistent/mu.csv")).unwrap_err();
        assert!(err.to_string().contains("mu.csv"));
    }
}
