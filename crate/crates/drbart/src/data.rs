//! Training data containers and the standardization maps between raw and
//! model scales. The samplers always see covariate columns in [0, 1] and a
//! response in [-0.5, 0.5]; queries are mapped back through the same affine
//! maps.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    /// A column had zero range, so the affine map is undefined.
    ZeroRange(String),
    /// Row lengths disagree or the matrix is empty.
    Shape(String),
    /// Non-finite value in the input.
    NotFinite { column: String, row: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::ZeroRange(c) => write!(f, "zero response range in column '{}'", c),
            DataError::Shape(msg) => write!(f, "bad data shape: {}", msg),
            DataError::NotFinite { column, row } => {
                write!(f, "non-finite value in column '{}' at row {}", column, row)
            }
        }
    }
}

impl std::error::Error for DataError {}

/// y_std = (y_raw - offset) / range - 0.5 style map, stored as the two
/// numbers needed to go back and forth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineMap {
    /// Raw-scale minimum.
    pub min: f64,
    /// Raw-scale range (max - min), strictly positive.
    pub range: f64,
    /// Standardized-scale lower end (0 for covariates, -0.5 for y).
    pub shift: f64,
}

impl AffineMap {
    pub fn to_standard(&self, raw: f64) -> f64 {
        (raw - self.min) / self.range + self.shift
    }

    pub fn to_raw(&self, std: f64) -> f64 {
        (std - self.shift) * self.range + self.min
    }

    fn fit(values: impl Iterator<Item = f64>, shift: f64) -> Option<AffineMap> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            return None;
        }
        Some(AffineMap { min, range: max - min, shift })
    }
}

/// Standardized training set: row-major covariates in [0, 1], response in
/// [-0.5, 0.5], plus per-axis sorted distinct covariate values (the split
/// cutpoint candidates) and the affine maps back to the raw scales.
#[derive(Debug, Clone)]
pub struct StandardizedData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub response_name: String,
    pub y_map: AffineMap,
    pub x_maps: Vec<AffineMap>,
    /// Per-column sorted deduplicated standardized values.
    pub x_distinct: Vec<Vec<f64>>,
}

impl StandardizedData {
    /// Standardize raw columns. `x_raw` is row-major, non-empty, rectangular.
    pub fn from_raw(
        x_raw: &[Vec<f64>],
        y_raw: &[f64],
        covariate_names: Vec<String>,
        response_name: String,
    ) -> Result<Self, DataError> {
        let n = y_raw.len();
        if n == 0 {
            return Err(DataError::Shape("no rows".into()));
        }
        if x_raw.len() != n {
            return Err(DataError::Shape(format!(
                "{} covariate rows vs {} responses",
                x_raw.len(),
                n
            )));
        }
        let p = x_raw[0].len();
        if p == 0 {
            return Err(DataError::Shape("no covariate columns".into()));
        }
        if covariate_names.len() != p {
            return Err(DataError::Shape(format!(
                "{} covariate names vs {} columns",
                covariate_names.len(),
                p
            )));
        }
        for (i, row) in x_raw.iter().enumerate() {
            if row.len() != p {
                return Err(DataError::Shape(format!(
                    "row {} has {} columns, expected {}",
                    i,
                    row.len(),
                    p
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NotFinite {
                        column: covariate_names[j].clone(),
                        row: i,
                    });
                }
            }
        }
        for (i, v) in y_raw.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NotFinite { column: response_name.clone(), row: i });
            }
        }
        let y_map = AffineMap::fit(y_raw.iter().copied(), -0.5)
            .ok_or_else(|| DataError::ZeroRange(response_name.clone()))?;
        let mut x_maps = Vec::with_capacity(p);
        for j in 0..p {
            let map = AffineMap::fit(x_raw.iter().map(|r| r[j]), 0.0)
                .ok_or_else(|| DataError::ZeroRange(covariate_names[j].clone()))?;
            x_maps.push(map);
        }
        let x: Vec<Vec<f64>> = x_raw
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| x_maps[j].to_standard(v))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = y_raw.iter().map(|&v| y_map.to_standard(v)).collect();
        let x_distinct = distinct_columns(&x, p);
        Ok(StandardizedData {
            x,
            y,
            covariate_names,
            response_name,
            y_map,
            x_maps,
            x_distinct,
        })
    }

    /// Wrap already-standardized data (synthetic benchmarks).
    pub fn from_standardized(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        y_map: AffineMap,
        x_maps: Vec<AffineMap>,
    ) -> Result<Self, DataError> {
        let n = y.len();
        if n == 0 || x.len() != n {
            return Err(DataError::Shape("empty or mismatched".into()));
        }
        let p = x[0].len();
        let x_distinct = distinct_columns(&x, p);
        Ok(StandardizedData {
            x,
            y,
            covariate_names: (0..p).map(|j| format!("x{}", j)).collect(),
            response_name: "y".into(),
            y_map,
            x_maps,
            x_distinct,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x_distinct.len()
    }

    /// Standardize a raw query row.
    pub fn standardize_query(&self, raw: &[f64]) -> Result<Vec<f64>, DataError> {
        if raw.len() != self.p() {
            return Err(DataError::Shape(format!(
                "query has {} values, model has {} covariates",
                raw.len(),
                self.p()
            )));
        }
        Ok(raw
            .iter()
            .enumerate()
            .map(|(j, &v)| self.x_maps[j].to_standard(v))
            .collect())
    }
}

fn distinct_columns(x: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|j| {
            let mut col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            col.dedup();
            col
        })
        .collect()
}

/// Identity map for data already on the model scale.
pub fn identity_map(shift: f64) -> AffineMap {
    AffineMap { min: shift, range: 1.0, shift }
}
