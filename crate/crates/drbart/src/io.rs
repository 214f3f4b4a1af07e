//! File formats: CSV data loading and a line-delimited JSON format for
//! posterior draws.
//!
//! A draw file is JSONL: the first line is a header carrying a schema
//! version, the full chain configuration, move statistics, the
//! standardization maps, and the expected draw count; each following line is
//! one draw with its trees flattened in preorder. Trees serialize as a
//! preorder node list — a split node is followed by its entire left subtree,
//! then its right — so child indices never appear in the file and
//! deserialization rebuilds a preorder arena. Loading verifies the version,
//! re-checks structural sanity of every tree, and treats a short file as
//! corruption rather than silently returning fewer draws.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AffineMap, DataError, StandardizedData};
use crate::predict::Predictor;
use crate::sampler::{ChainConfig, Draw, MoveStats, PosteriorDraws};
use crate::tree::{Ensemble, Node, SplitAxis, SplitRule, Tree};

/// Bumped whenever the on-disk layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum IoError {
    /// Underlying filesystem failure.
    Io(String),
    /// A line failed to parse; 1-based line number.
    Parse { line: usize, why: String },
    /// The file was written by an incompatible layout.
    SchemaVersion { found: u32, supported: u32 },
    /// Fewer draws than the header promised.
    Truncated { expected: usize, found: usize },
    /// A flattened tree was structurally invalid.
    BadTree(String),
    /// CSV content problems, with enough context to find the cell.
    Csv(String),
    /// Data shape/standardization problems.
    Data(DataError),
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io(s) => write!(f, "{}", s),
            IoError::Parse { line, why } => write!(f, "line {}: {}", line, why),
            IoError::SchemaVersion { found, supported } => write!(
                f,
                "draw file uses schema version {}, this build supports {}",
                found, supported
            ),
            IoError::Truncated { expected, found } => write!(
                f,
                "draw file is truncated: header promises {} draws, found {}",
                expected, found
            ),
            IoError::BadTree(s) => write!(f, "bad tree payload: {}", s),
            IoError::Csv(s) => write!(f, "{}", s),
            IoError::Data(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for IoError {}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e.to_string())
    }
}

impl From<DataError> for IoError {
    fn from(e: DataError) -> Self {
        IoError::Data(e)
    }
}

/// One node of a preorder-flattened tree. `a` is the split axis: -1 for the
/// latent coordinate, otherwise a covariate index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "k")]
enum FlatNode {
    #[serde(rename = "s")]
    Split { a: i64, c: f64 },
    #[serde(rename = "l")]
    Leaf { v: f64 },
}

fn flatten_into(tree: &Tree, id: u32, out: &mut Vec<FlatNode>) -> Result<(), IoError> {
    match tree.nodes.get(id as usize) {
        None => Err(IoError::BadTree(format!("dangling child index {}", id))),
        Some(Node::Leaf { value }) => {
            out.push(FlatNode::Leaf { v: *value });
            Ok(())
        }
        Some(Node::Internal { rule, left, right }) => {
            let a = match rule.axis {
                SplitAxis::Latent => -1,
                SplitAxis::Covariate(j) => j as i64,
            };
            out.push(FlatNode::Split { a, c: rule.cutpoint });
            flatten_into(tree, *left, out)?;
            flatten_into(tree, *right, out)
        }
    }
}

fn flatten(tree: &Tree) -> Result<Vec<FlatNode>, IoError> {
    let mut out = Vec::with_capacity(tree.nodes.len());
    flatten_into(tree, tree.root(), &mut out)?;
    Ok(out)
}

fn build(nodes: &[FlatNode], pos: &mut usize, arena: &mut Vec<Node>, depth: u32) -> Result<u32, IoError> {
    if depth > 4096 {
        return Err(IoError::BadTree("nesting deeper than 4096".into()));
    }
    let here = *pos;
    *pos += 1;
    match nodes.get(here) {
        None => Err(IoError::BadTree("node list ends inside a subtree".into())),
        Some(FlatNode::Leaf { v }) => {
            if !v.is_finite() {
                return Err(IoError::BadTree(format!("non-finite leaf value {}", v)));
            }
            arena.push(Node::Leaf { value: *v });
            Ok(arena.len() as u32 - 1)
        }
        Some(FlatNode::Split { a, c }) => {
            if !c.is_finite() {
                return Err(IoError::BadTree(format!("non-finite cutpoint {}", c)));
            }
            let axis = if *a == -1 {
                SplitAxis::Latent
            } else if *a >= 0 && *a <= u32::MAX as i64 {
                SplitAxis::Covariate(*a as u32)
            } else {
                return Err(IoError::BadTree(format!("bad split axis {}", a)));
            };
            let id = arena.len() as u32;
            arena.push(Node::Internal {
                rule: SplitRule { axis, cutpoint: *c },
                left: 0,
                right: 0,
            });
            let left = build(nodes, pos, arena, depth + 1)?;
            let right = build(nodes, pos, arena, depth + 1)?;
            if let Node::Internal { left: l, right: r, .. } = &mut arena[id as usize] {
                *l = left;
                *r = right;
            }
            Ok(id)
        }
    }
}

fn unflatten(nodes: &[FlatNode]) -> Result<Tree, IoError> {
    let mut arena = Vec::with_capacity(nodes.len());
    let mut pos = 0usize;
    build(nodes, &mut pos, &mut arena, 0)?;
    if pos != nodes.len() {
        return Err(IoError::BadTree(format!(
            "{} trailing nodes after the root subtree",
            nodes.len() - pos
        )));
    }
    Ok(Tree { nodes: arena })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: u32,
    n_draws: usize,
    config: ChainConfig,
    stats: MoveStats,
    y_map: AffineMap,
    x_maps: Vec<AffineMap>,
    covariate_names: Vec<String>,
    response_name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRecord {
    sweep: u64,
    sigma0_sq: f64,
    mean: Vec<Vec<FlatNode>>,
    var: Vec<Vec<FlatNode>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    latents: Option<Vec<f64>>,
}

/// A loaded draw file: the posterior plus everything needed to query it on
/// the raw data scale.
#[derive(Debug, Clone)]
pub struct RunFile {
    pub posterior: PosteriorDraws,
    pub y_map: AffineMap,
    pub x_maps: Vec<AffineMap>,
    pub covariate_names: Vec<String>,
    pub response_name: String,
}

impl RunFile {
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor::with_maps(&self.posterior, self.y_map, self.x_maps.clone())
    }
}

/// Write a run to `path`, one JSON document per line, header first.
pub fn save_run(
    path: &Path,
    posterior: &PosteriorDraws,
    y_map: AffineMap,
    x_maps: &[AffineMap],
    covariate_names: &[String],
    response_name: &str,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: SCHEMA_VERSION,
        n_draws: posterior.draws.len(),
        config: posterior.config.clone(),
        stats: posterior.stats,
        y_map,
        x_maps: x_maps.to_vec(),
        covariate_names: covariate_names.to_vec(),
        response_name: response_name.to_string(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| IoError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    for d in &posterior.draws {
        let rec = DrawRecord {
            sweep: d.sweep,
            sigma0_sq: d.sigma0_sq,
            mean: d.mean.trees.iter().map(flatten).collect::<Result<_, _>>()?,
            var: d.var.trees.iter().map(flatten).collect::<Result<_, _>>()?,
            latents: d.latents.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| IoError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience wrapper taking the maps from the training data.
pub fn save_run_for(
    path: &Path,
    posterior: &PosteriorDraws,
    data: &StandardizedData,
) -> Result<(), IoError> {
    save_run(
        path,
        posterior,
        data.y_map,
        &data.x_maps,
        &data.covariate_names,
        &data.response_name,
    )
}

/// Read a run back; verifies schema version and draw count.
pub fn load_run(path: &Path) -> Result<RunFile, IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => return Err(IoError::Parse { line: 1, why: "empty file".into() }),
    };
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| IoError::Parse { line: 1, why: e.to_string() })?;
    if header.schema != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            found: header.schema,
            supported: SCHEMA_VERSION,
        });
    }
    let mut draws = Vec::with_capacity(header.n_draws);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line)
            .map_err(|e| IoError::Parse { line: k + 2, why: e.to_string() })?;
        if !rec.sigma0_sq.is_finite() || rec.sigma0_sq <= 0.0 {
            return Err(IoError::Parse {
                line: k + 2,
                why: format!("sigma0_sq {} must be positive and finite", rec.sigma0_sq),
            });
        }
        let mean = Ensemble {
            trees: rec.mean.iter().map(|t| unflatten(t)).collect::<Result<_, _>>()?,
        };
        let var = Ensemble {
            trees: rec.var.iter().map(|t| unflatten(t)).collect::<Result<_, _>>()?,
        };
        draws.push(Draw {
            sweep: rec.sweep,
            mean,
            var,
            sigma0_sq: rec.sigma0_sq,
            latents: rec.latents,
        });
    }
    if draws.len() != header.n_draws {
        return Err(IoError::Truncated { expected: header.n_draws, found: draws.len() });
    }
    Ok(RunFile {
        posterior: PosteriorDraws { config: header.config, draws, stats: header.stats },
        y_map: header.y_map,
        x_maps: header.x_maps,
        covariate_names: header.covariate_names,
        response_name: header.response_name,
    })
}

/// Load a CSV with a header row into standardized training data. Column
/// order follows `covariates` when given, otherwise every non-response
/// column in file order. With `log_response`, the response is logged before
/// standardization; nonpositive responses are then an error naming the row.
pub fn load_csv(
    path: &Path,
    response: &str,
    covariates: Option<&[String]>,
    log_response: bool,
) -> Result<StandardizedData, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::Csv(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let find = |name: &str| -> Result<usize, IoError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::Csv(format!("column {:?} not found in {:?}", name, headers)))
    };
    let y_idx = find(response)?;
    let x_cols: Vec<(String, usize)> = match covariates {
        Some(names) => {
            let mut cols = Vec::with_capacity(names.len());
            for n in names {
                if n == response {
                    return Err(IoError::Csv(format!(
                        "column {:?} cannot be both response and covariate",
                        n
                    )));
                }
                cols.push((n.clone(), find(n)?));
            }
            cols
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_idx)
            .map(|(i, h)| (h.clone(), i))
            .collect(),
    };
    if x_cols.is_empty() {
        return Err(IoError::Csv("no covariate columns left after removing the response".into()));
    }
    let mut x_raw: Vec<Vec<f64>> = Vec::new();
    let mut y_raw: Vec<f64> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Csv(e.to_string()))?;
        let cell = |idx: usize, name: &str| -> Result<f64, IoError> {
            let raw = rec.get(idx).ok_or_else(|| {
                IoError::Csv(format!("row {}: missing column {:?}", r + 2, name))
            })?;
            raw.parse::<f64>().map_err(|_| {
                IoError::Csv(format!(
                    "row {}, column {:?}: {:?} is not a number",
                    r + 2,
                    name,
                    raw
                ))
            })
        };
        let mut y = cell(y_idx, response)?;
        if log_response {
            if y <= 0.0 {
                return Err(IoError::Csv(format!(
                    "row {}: response {} must be positive to take logs",
                    r + 2,
                    y
                )));
            }
            y = y.ln();
        }
        y_raw.push(y);
        x_raw.push(
            x_cols
                .iter()
                .map(|(name, idx)| cell(*idx, name))
                .collect::<Result<Vec<f64>, IoError>>()?,
        );
    }
    if y_raw.is_empty() {
        return Err(IoError::Csv("no data rows".into()));
    }
    let names: Vec<String> = x_cols.into_iter().map(|(n, _)| n).collect();
    Ok(StandardizedData::from_raw(&x_raw, &y_raw, names, response.to_string())?)
}

/// Write a table of numeric rows with a header, RFC-4180 style.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::Csv(e.to_string()))?;
    w.write_record(header).map_err(|e| IoError::Csv(e.to_string()))?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{}", v)))
            .map_err(|e| IoError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
