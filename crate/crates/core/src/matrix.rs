//! Dense score matrices and the blocked row traversal every streaming
//! statistic is built on.
//!
//! Rows index training segments (or tracks) and columns index queries. The
//! values are stored row-major in either 32- or 64-bit floating point; all
//! arithmetic happens in `f64` on row blocks converted on the fly.
//!
//! Row blocks, reduction groups and waves have sizes that depend only on the
//! matrix shape, never on the thread count, so every reduction is performed
//! in the same order on any machine and results are bitwise reproducible.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AriaError, Result};

/// Target number of values per row block.
const BLOCK_ELEMS: usize = 1 << 16;
/// Consecutive blocks folded sequentially into one partial accumulator.
const GROUP_BLOCKS: usize = 8;
/// Partial accumulators evaluated concurrently before being merged in order.
const WAVE_GROUPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => f.write_str("f32"),
            Precision::F64 => f.write_str("f64"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = AriaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float32" => Ok(Precision::F32),
            "f64" | "float64" => Ok(Precision::F64),
            other => Err(AriaError::InvalidInput(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl MatrixData {
    fn len(&self) -> usize {
        match self {
            MatrixData::F32(v) => v.len(),
            MatrixData::F64(v) => v.len(),
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            MatrixData::F32(v) => v.iter().position(|x| !x.is_finite()),
            MatrixData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// A validated, immutable M×T score matrix with row and column identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: MatrixData,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: MatrixData,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AriaError::DimensionMismatch(format!(
                "score matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(AriaError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if row_ids.len() != rows {
            return Err(AriaError::DimensionMismatch(format!(
                "{} row ids for {rows} rows",
                row_ids.len()
            )));
        }
        if col_ids.len() != cols {
            return Err(AriaError::DimensionMismatch(format!(
                "{} column ids for {cols} columns",
                col_ids.len()
            )));
        }
        if let Some(pos) = data.first_non_finite() {
            return Err(AriaError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        check_unique(&row_ids, "row")?;
        check_unique(&col_ids, "column")?;
        Ok(ScoreMatrix {
            rows,
            cols,
            data,
            row_ids,
            col_ids,
        })
    }

    pub fn from_f64(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self> {
        Self::new(rows, cols, MatrixData::F64(values), row_ids, col_ids)
    }

    /// Builds a 64-bit matrix with generated ids `r0, r1, …` and `q0, q1, …`.
    pub fn from_rows_f64(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_f64(rows, cols, values, default_ids("r", rows), default_ids("q", cols))
    }

    /// Convenience for tests and small literals.
    pub fn from_nested(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let t = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != t) {
            return Err(AriaError::DimensionMismatch("ragged rows".into()));
        }
        Self::from_rows_f64(m, t, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn precision(&self) -> Precision {
        match self.data {
            MatrixData::F32(_) => Precision::F32,
            MatrixData::F64(_) => Precision::F64,
        }
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn col_index(&self, id: &str) -> Option<usize> {
        self.col_ids.iter().position(|c| c == id)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let idx = row * self.cols + col;
        match &self.data {
            MatrixData::F32(v) => v[idx] as f64,
            MatrixData::F64(v) => v[idx],
        }
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// All values as a row-major `f64` vector.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            MatrixData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            MatrixData::F64(v) => v.clone(),
        }
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    /// Same ids, new row-major values in the requested precision.
    pub fn with_values(&self, values: Vec<f64>, precision: Precision) -> Result<Self> {
        let data = match precision {
            Precision::F64 => MatrixData::F64(values),
            Precision::F32 => MatrixData::F32(values.into_iter().map(|x| x as f32).collect()),
        };
        Self::new(
            self.rows,
            self.cols,
            data,
            self.row_ids.clone(),
            self.col_ids.clone(),
        )
    }

    pub fn to_precision(&self, precision: Precision) -> Self {
        if precision == self.precision() {
            return self.clone();
        }
        let data = match &self.data {
            MatrixData::F32(v) => MatrixData::F64(v.iter().map(|&x| x as f64).collect()),
            MatrixData::F64(v) => MatrixData::F32(v.iter().map(|&x| x as f32).collect()),
        };
        ScoreMatrix {
            data,
            ..self.clone()
        }
    }

    pub(crate) fn block_rows(&self) -> usize {
        (BLOCK_ELEMS / self.cols).max(1)
    }

    /// Rows `start..end` as row-major `f64`, borrowing when no conversion is needed.
    pub(crate) fn block_f64<'a>(&'a self, start: usize, end: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
        let (lo, hi) = (start * self.cols, end * self.cols);
        match &self.data {
            MatrixData::F64(v) => &v[lo..hi],
            MatrixData::F32(v) => {
                buf.clear();
                buf.extend(v[lo..hi].iter().map(|&x| x as f64));
                buf
            }
        }
    }

    /// Ordered parallel reduction over row blocks.
    ///
    /// `fold(acc, first_row, block)` receives consecutive row blocks; partial
    /// accumulators are merged strictly in row order with `merge`.
    pub(crate) fn reduce_rows<A, I, F, G>(&self, init: I, fold: F, mut merge: G) -> A
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, usize, &[f64]) + Sync,
        G: FnMut(&mut A, A),
    {
        let br = self.block_rows();
        let group_rows = br * GROUP_BLOCKS;
        let ngroups = self.rows.div_ceil(group_rows);
        let mut acc = init();
        for wave in (0..ngroups).step_by(WAVE_GROUPS) {
            let end = (wave + WAVE_GROUPS).min(ngroups);
            let parts: Vec<A> = (wave..end)
                .into_par_iter()
                .map(|g| {
                    let mut part = init();
                    let mut buf = Vec::new();
                    let g_end = ((g + 1) * group_rows).min(self.rows);
                    let mut r0 = g * group_rows;
                    while r0 < g_end {
                        let r1 = (r0 + br).min(g_end);
                        let block = self.block_f64(r0, r1, &mut buf);
                        fold(&mut part, r0, block);
                        r0 = r1;
                    }
                    part
                })
                .collect();
            for part in parts {
                merge(&mut acc, part);
            }
        }
        acc
    }

    /// Parallel row-block map writing `out_cols` values per input row into
    /// `out` (row-major, `nrows × out_cols`).
    pub(crate) fn map_rows_into<F>(&self, out: &mut [f64], out_cols: usize, f: F)
    where
        F: Fn(usize, &[f64], &mut [f64]) + Sync,
    {
        assert_eq!(out.len(), self.rows * out_cols);
        let br = self.block_rows();
        out.par_chunks_mut(br * out_cols.max(1))
            .enumerate()
            .for_each(|(b, out_block)| {
                let r0 = b * br;
                let r1 = (r0 + br).min(self.rows);
                let mut buf = Vec::new();
                let block = self.block_f64(r0, r1, &mut buf);
                f(r0, block, out_block);
            });
    }
}

pub(crate) fn default_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub(crate) fn check_unique(ids: &[String], kind: &'static str) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(AriaError::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn merge(&mut self, other: CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-column sums and sums of squares from one streaming pass, each
/// accumulated with compensated summation.
#[derive(Debug, Clone)]
pub(crate) struct ColumnMoments {
    pub rows: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl ColumnMoments {
    pub(crate) fn compute(s: &ScoreMatrix) -> Self {
        let t = s.ncols();
        let init = || (vec![CompensatedSum::default(); t], vec![CompensatedSum::default(); t]);
        let (sum, sum_sq) = s.reduce_rows(
            init,
            |(sum, sq), _, block| {
                for row in block.chunks_exact(t) {
                    for ((a, b), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                        a.add(x);
                        b.add(x * x);
                    }
                }
            },
            |(sum, sq), (ps, pq)| {
                sum.iter_mut().zip(ps).for_each(|(a, b)| a.merge(b));
                sq.iter_mut().zip(pq).for_each(|(a, b)| a.merge(b));
            },
        );
        ColumnMoments {
            rows: s.nrows(),
            sum: sum.iter().map(CompensatedSum::value).collect(),
            sum_sq: sum_sq.iter().map(CompensatedSum::value).collect(),
        }
    }

    pub(crate) fn means(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.rows as f64).collect()
    }
}

/// Centered sums of squares `Σ (x − mean)²` per column (second pass).
pub(crate) fn centered_sum_sq(s: &ScoreMatrix, means: &[f64]) -> Vec<f64> {
    let t = s.ncols();
    s.reduce_rows(
        || vec![0.0; t],
        |acc, _, block| {
            for row in block.chunks_exact(t) {
                for ((a, &x), &m) in acc.iter_mut().zip(row).zip(means) {
                    let d = x - m;
                    *a += d * d;
                }
            }
        },
        |acc, part| {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        },
    )
}

/// Relative threshold below which a column's centered energy counts as zero.
pub const DEGENERATE_REL: f64 = 1e-20;

/// A column is degenerate (zero variance) when its centered energy vanishes
/// relative to its raw energy.
pub fn is_degenerate(centered_ss: f64, raw_ss: f64) -> bool {
    raw_ss == 0.0 || centered_ss <= DEGENERATE_REL * raw_ss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_with_position() {
        let err = ScoreMatrix::from_rows_f64(2, 2, vec![1.0, 2.0, f64::NAN, 4.0]).unwrap_err();
        assert!(matches!(err, AriaError::NonFinite { row: 1, col: 0 }));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = ScoreMatrix::from_f64(
            2,
            1,
            vec![1.0, 2.0],
            vec!["a".into(), "a".into()],
            vec!["q".into()],
        )
        .unwrap_err();
        assert!(matches!(err, AriaError::DuplicateId { kind: "row", .. }));
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(ScoreMatrix::from_rows_f64(0, 3, vec![]).is_err());
        assert!(ScoreMatrix::from_rows_f64(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn reduce_rows_matches_sequential_sum() {
        // Enough rows for several blocks, groups and waves.
        let rows = 3000;
        let cols = 40;
        let values: Vec<f64> = (0..rows * cols).map(|i| ((i * 7919) % 1000) as f64 / 7.0).collect();
        let s = ScoreMatrix::from_rows_f64(rows, cols, values.clone()).unwrap();
        let m = ColumnMoments::compute(&s);
        for j in 0..cols {
            let direct: f64 = (0..rows).map(|i| values[i * cols + j]).sum();
            assert!((m.sum[j] - direct).abs() <= 1e-9 * direct.abs());
            let sq: f64 = (0..rows).map(|i| values[i * cols + j].powi(2)).sum();
            assert!((m.sum_sq[j] - sq).abs() <= 1e-9 * sq);
        }
    }

    #[test]
    fn f32_blocks_convert() {
        let s = ScoreMatrix::new(
            2,
            2,
            MatrixData::F32(vec![1.5, 2.0, 3.0, 4.25]),
            default_ids("r", 2),
            default_ids("q", 2),
        )
        .unwrap();
        let mut buf = Vec::new();
        assert_eq!(s.block_f64(1, 2, &mut buf), &[3.0, 4.25]);
        let mut out = vec![0.0; 2];
        s.map_rows_into(&mut out, 1, |_, block, o| {
            for (row, o) in block.chunks_exact(2).zip(o.iter_mut()) {
                *o = row[0] + row[1];
            }
        });
        assert_eq!(out, vec![3.5, 7.25]);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}
