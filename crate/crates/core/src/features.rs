//! Feature matrices and the on-disk feature fixture format.
//!
//! A fixture is UTF-8 text: a header line `efa-features v1 <rows> <cols>`
//! followed by `rows` lines of `cols` whitespace-separated decimal values in
//! row-major order. Values are written in shortest round-trip form, so a
//! write/read cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{read_to_string, write_string, EfaError, Result};
use crate::tensor::Matrix;

const FIXTURE_MAGIC: &str = "efa-features";
const FIXTURE_VERSION: &str = "v1";

/// `N x d` token features with every value finite and `N, d >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(EfaError::Shape(format!("feature matrix must be non-empty, got {:?}", values.shape())));
        }
        if !values.is_finite() {
            return Err(EfaError::NonFinite("feature matrix".into()));
        }
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn to_fixture_string(&self) -> String {
        let mut out = format!("{FIXTURE_MAGIC} {FIXTURE_VERSION} {} {}\n", self.rows(), self.dim());
        for i in 0..self.rows() {
            let mut first = true;
            for v in self.0.row(i) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_fixture(text: &str, context: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| EfaError::parse(context, "empty fixture"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != FIXTURE_MAGIC {
            return Err(EfaError::parse(context, format!("bad header `{header}`")));
        }
        if fields[1] != FIXTURE_VERSION {
            return Err(EfaError::parse(context, format!("unsupported fixture version `{}`", fields[1])));
        }
        let rows: usize = fields[2].parse().map_err(|e| EfaError::parse(context, e))?;
        let cols: usize = fields[3].parse().map_err(|e| EfaError::parse(context, e))?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| EfaError::parse(context, format!("row {i}: {e}")))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(EfaError::parse(context, format!("row {i} has {} values, expected {cols}", data.len() - before)));
            }
        }
        if data.len() != rows * cols {
            return Err(EfaError::parse(context, format!("expected {rows} rows, found {}", data.len() / cols.max(1))));
        }
        Self::new(Matrix::from_vec(rows, cols, data)?)
    }

    pub fn read_fixture(path: &Path) -> Result<Self> {
        Self::parse_fixture(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn write_fixture(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_fixture_string())
    }
}
