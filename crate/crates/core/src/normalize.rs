//! Per-query normalization of segment scores and averaging of segments
//! into tracks.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AriaError, Result};
use crate::io::SegmentMap;
use crate::matrix::{is_degenerate, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Zero mean, unit population standard deviation per column.
    Zscore,
    /// Average ranks scaled to `[0, 1]` per column, higher score ⇒ higher value.
    Rank,
    None,
}

impl FromStr for NormalizationMode {
    type Err = AriaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zscore" | "z-score" => Ok(NormalizationMode::Zscore),
            "rank" => Ok(NormalizationMode::Rank),
            "none" => Ok(NormalizationMode::None),
            other => Err(AriaError::InvalidInput(format!("unknown normalization mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormalizationMode::Zscore => "zscore",
            NormalizationMode::Rank => "rank",
            NormalizationMode::None => "none",
        })
    }
}

/// Default normalization per scoring method.
///
/// Near-symmetric bounded scores (TRAK, Grad-Cos) are z-scored; heavy-tailed
/// influence scores (LoGra, FactGraSS) are ranked. Methods that are only used
/// on segment-level data without aggregation (TracIn, GradDot) and the
/// track-indexed embedding baselines need no normalization.
pub fn default_mode_for_method(method: &str) -> Option<NormalizationMode> {
    let key: String = method.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    match key.as_str() {
        "trak" | "gradcos" => Some(NormalizationMode::Zscore),
        "logra" | "factgrass" => Some(NormalizationMode::Rank),
        "tracin" | "graddot" | "clap" | "mert" | "clews" | "embedding" | "cosine" => Some(NormalizationMode::None),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub matrix: ScoreMatrix,
    pub mode: NormalizationMode,
    /// Zero-variance columns mapped to all-zero under z-scoring.
    pub degenerate_columns: Vec<usize>,
}

/// Rescales every column of `s` to a common scale. The output keeps the
/// input precision.
pub fn normalize_per_query(s: &ScoreMatrix, mode: NormalizationMode) -> Result<Normalized> {
    let (m, t) = (s.nrows(), s.ncols());
    if mode == NormalizationMode::None {
        return Ok(Normalized {
            matrix: s.clone(),
            mode,
            degenerate_columns: Vec::new(),
        });
    }
    if mode == NormalizationMode::Rank && m < 2 {
        return Err(AriaError::InvalidInput(
            "rank normalization needs at least 2 rows (scale (rank-1)/(M-1) is undefined)".into(),
        ));
    }
    let columns: Vec<(Vec<f64>, bool)> = (0..t)
        .into_par_iter()
        .map(|j| {
            let col = s.column(j);
            match mode {
                NormalizationMode::Zscore => zscore_column(&col),
                NormalizationMode::Rank => (rank_column(&col), false),
                NormalizationMode::None => unreachable!(),
            }
        })
        .collect();
    let mut values = vec![0.0; m * t];
    let mut degenerate_columns = Vec::new();
    for (j, (col, degenerate)) in columns.into_iter().enumerate() {
        if degenerate {
            degenerate_columns.push(j);
        }
        for (i, v) in col.into_iter().enumerate() {
            values[i * t + j] = v;
        }
    }
    if !degenerate_columns.is_empty() {
        log::warn!("{} zero-variance columns set to zero by z-scoring", degenerate_columns.len());
    }
    Ok(Normalized {
        matrix: s.with_values(values, s.precision())?,
        mode,
        degenerate_columns,
    })
}

fn zscore_column(col: &[f64]) -> (Vec<f64>, bool) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let css: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
    let raw: f64 = col.iter().map(|x| x * x).sum();
    if is_degenerate(css, raw) {
        return (vec![0.0; col.len()], true);
    }
    let std = (css / n).sqrt();
    (col.iter().map(|x| (x - mean) / std).collect(), false)
}

/// `(rank − 1) / (M − 1)` with ascending ranks and averaged ties.
fn rank_column(col: &[f64]) -> Vec<f64> {
    let m = col.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let denom = (m - 1) as f64;
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && col[order[end]] == col[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end; their average minus one.
        let value = (start + end - 1) as f64 / 2.0 / denom;
        for &i in &order[start..end] {
            out[i] = value;
        }
        start = end;
    }
    out
}

/// Averages normalized segment rows into track rows.
///
/// Track order follows the segment map; every row of `s` must be mapped and
/// every mapped segment must be present.
pub fn aggregate_to_tracks(s: &ScoreMatrix, map: &SegmentMap) -> Result<ScoreMatrix> {
    let n = map.tracks().len();
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut unmapped = Vec::new();
    for (row, id) in s.row_ids().iter().enumerate() {
        match map.lookup(id) {
            Some((track, k)) => members[track].push((k, row)),
            None => unmapped.push(id.clone()),
        }
    }
    if !unmapped.is_empty() {
        return Err(AriaError::IdMismatch {
            what: "segment map (rows without a track)".into(),
            missing: Vec::new(),
            extra: unmapped,
        });
    }
    if map.num_segments() != s.nrows() {
        return Err(AriaError::DimensionMismatch(format!(
            "segment map lists {} segments but the matrix has {} rows",
            map.num_segments(),
            s.nrows()
        )));
    }
    let t = s.ncols();
    let rows: Vec<Vec<f64>> = members
        .par_iter_mut()
        .map(|segs| {
            segs.sort_unstable();
            let mut acc = vec![0.0; t];
            for &(_, row) in segs.iter() {
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += s.get(row, j);
                }
            }
            let count = segs.len() as f64;
            acc.iter_mut().for_each(|a| *a /= count);
            acc
        })
        .collect();
    ScoreMatrix::new(
        n,
        t,
        crate::matrix::MatrixData::F64(rows.concat()),
        map.tracks().to_vec(),
        s.col_ids().to_vec(),
    )
    .map(|m| m.to_precision(s.precision()))
}
