//! Rank-1 residual `R = S − σ₁u₁v₁ᵀ` and the paired homogeneity analysis of
//! a matrix and its residual.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{AriaError, Result};
use crate::features::FeatureSet;
use crate::homogeneity::{homogeneity_sweep, HomogeneityReport, NullModel, SweepOptions};
use crate::io::{Asm1StreamWriter, SegmentMap};
use crate::linalg::{truncated_svd, SvdMethod, SvdOptions};
use crate::matrix::{Precision, ScoreMatrix};
use crate::normalize::{aggregate_to_tracks, normalize_per_query, NormalizationMode};

/// Minimum power steps for the leading triplet on the randomized path.
pub const RESIDUAL_MIN_ITERS: usize = 4;

#[derive(Debug, Clone)]
pub struct Rank1Factor {
    pub sigma1: f64,
    pub u1: Vec<f64>,
    pub v1: Vec<f64>,
    pub method: SvdMethod,
}

/// Leading singular triplet at the best available accuracy.
pub fn leading_triplet(s: &ScoreMatrix, svd: &SvdOptions) -> Result<Rank1Factor> {
    let opts = SvdOptions {
        k: 1,
        min_iters: svd.min_iters.max(RESIDUAL_MIN_ITERS),
        ..svd.clone()
    };
    let tr = truncated_svd(s, &opts)?;
    if tr.sigmas[0] == 0.0 {
        return Err(AriaError::Numeric("rank-1 residual undefined: the matrix is zero".into()));
    }
    Ok(Rank1Factor {
        sigma1: tr.sigmas[0],
        u1: tr.u.column(0).iter().copied().collect(),
        v1: tr.v.column(0).iter().copied().collect(),
        method: tr.method,
    })
}

impl Rank1Factor {
    /// Residual rows `r0..r0 + block.len()/T` written into `out`.
    fn subtract_block(&self, r0: usize, block: &[f64], out: &mut [f64]) {
        let t = self.v1.len();
        for (i, (row, o)) in block.chunks_exact(t).zip(out.chunks_exact_mut(t)).enumerate() {
            let a = self.sigma1 * self.u1[r0 + i];
            for ((o, &x), &v) in o.iter_mut().zip(row).zip(&self.v1) {
                *o = x - a * v;
            }
        }
    }
}

/// `S − σ₁u₁v₁ᵀ`, in the precision of `s`.
pub fn rank1_residual(s: &ScoreMatrix, svd: &SvdOptions) -> Result<(ScoreMatrix, Rank1Factor)> {
    let f = leading_triplet(s, svd)?;
    Ok((subtract_rank1(s, &f)?, f))
}

pub fn subtract_rank1(s: &ScoreMatrix, f: &Rank1Factor) -> Result<ScoreMatrix> {
    let t = s.ncols();
    let mut out = vec![0.0; s.nrows() * t];
    s.map_rows_into(&mut out, t, |r0, block, o| f.subtract_block(r0, block, o));
    s.with_values(out, s.precision())
}

/// Streams the residual to an ASM1 file block by block.
pub fn write_rank1_residual(s: &ScoreMatrix, f: &Rank1Factor, path: &Path) -> Result<()> {
    let t = s.ncols();
    let mut w = Asm1StreamWriter::create(path, s.nrows(), t, s.precision())?;
    let rows_per_block = s.block_rows();
    let mut buf = Vec::new();
    let mut out = Vec::new();
    let mut r0 = 0;
    while r0 < s.nrows() {
        let r1 = (r0 + rows_per_block).min(s.nrows());
        let block = s.block_f64(r0, r1, &mut buf);
        out.resize(block.len(), 0.0);
        f.subtract_block(r0, block, &mut out);
        w.write_rows(&out).map_err(|e| AriaError::io(path, e))?;
        r0 = r1;
    }
    w.finish(s.row_ids(), s.col_ids())
}

/// `‖u₁ᵀR‖₂ / ‖R‖_F`, the orthogonality check of a residual.
pub fn residual_orthogonality(r: &ScoreMatrix, u1: &[f64]) -> f64 {
    let u = DMatrix::from_column_slice(u1.len(), 1, u1);
    let rm = r.to_dmatrix();
    let proj = u.transpose() * &rm;
    let fro = rm.norm();
    if fro == 0.0 {
        0.0
    } else {
        proj.norm() / fro
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub k: usize,
    pub channel: String,
    pub original_mean_z: Option<f64>,
    pub original_pos: Option<f64>,
    pub original_sig: Option<f64>,
    pub residual_mean_z: Option<f64>,
    pub residual_pos: Option<f64>,
    pub residual_sig: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedSweep {
    pub sigma1: f64,
    pub svd_method: SvdMethod,
    pub residual_precision: Precision,
    pub original: Vec<HomogeneityReport>,
    pub residual: Vec<HomogeneityReport>,
}

impl PairedSweep {
    /// Side-by-side summaries, one row per (K, channel).
    pub fn rows(&self) -> Vec<PairedRow> {
        let mut out = Vec::new();
        for (o, r) in self.original.iter().zip(&self.residual) {
            for (co, cr) in o.channels.iter().zip(&r.channels) {
                out.push(PairedRow {
                    k: o.k,
                    channel: co.channel.clone(),
                    original_mean_z: co.summary.map(|s| s.mean_z),
                    original_pos: co.summary.map(|s| s.pos),
                    original_sig: co.summary.map(|s| s.sig),
                    residual_mean_z: cr.summary.map(|s| s.mean_z),
                    residual_pos: cr.summary.map(|s| s.pos),
                    residual_sig: cr.summary.map(|s| s.sig),
                });
            }
        }
        out
    }
}

/// Inputs shared by the original and residual homogeneity runs.
pub struct SweepInputs<'a> {
    pub segment_map: &'a SegmentMap,
    pub mode: NormalizationMode,
    pub features: &'a FeatureSet,
    pub channels: &'a [String],
    pub null_models: &'a [NullModel],
    pub sweep: SweepOptions<'a>,
    pub svd: SvdOptions,
}

/// Normalization, aggregation and homogeneity on a segment-level matrix.
pub fn homogeneity_of_segments(s_seg: &ScoreMatrix, inputs: &SweepInputs<'_>) -> Result<Vec<HomogeneityReport>> {
    let norm = normalize_per_query(s_seg, inputs.mode)?;
    let track = aggregate_to_tracks(&norm.matrix, inputs.segment_map)?;
    let opts = SweepOptions {
        normalization: Some(inputs.mode),
        ..inputs.sweep.clone()
    };
    homogeneity_sweep(&track, inputs.features, inputs.channels, inputs.null_models, &opts)
}

/// The same homogeneity pipeline on `S` and on its rank-1 residual. When
/// `residual` is given it is used as the precomputed residual of `s_seg`.
pub fn residual_homogeneity_sweep(
    s_seg: &ScoreMatrix,
    inputs: &SweepInputs<'_>,
    residual: Option<(&ScoreMatrix, &Rank1Factor)>,
) -> Result<PairedSweep> {
    let owned;
    let (r, f) = match residual {
        Some(pair) => pair,
        None => {
            owned = rank1_residual(s_seg, &inputs.svd)?;
            (&owned.0, &owned.1)
        }
    };
    Ok(PairedSweep {
        sigma1: f.sigma1,
        svd_method: f.method,
        residual_precision: r.precision(),
        original: homogeneity_of_segments(s_seg, inputs)?,
        residual: homogeneity_of_segments(r, inputs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_columns_residual() {
        let s = ScoreMatrix::from_nested(&[&[3.0, 0.0], &[4.0, 0.0], &[0.0, 1.0]]).unwrap();
        let (r, f) = rank1_residual(&s, &SvdOptions::default()).unwrap();
        let want = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (g, w) in r.to_f64_vec().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((f.sigma1 - 5.0).abs() < 1e-12);
        assert!(residual_orthogonality(&r, &f.u1) < 1e-12);
    }

    #[test]
    fn rank_one_cancels() {
        let u = [1.0, -2.0, 0.5, 4.0];
        let v = [0.3, 0.7, -1.1];
        let vals: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let s = ScoreMatrix::from_rows_f64(4, 3, vals).unwrap();
        let (r, _) = rank1_residual(&s, &SvdOptions::default()).unwrap();
        let fro: f64 = s.to_f64_vec().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(r.to_f64_vec().iter().all(|x| x.abs() <= 1e-10 * fro));
    }

    #[test]
    fn zero_matrix_is_an_error() {
        let s = ScoreMatrix::from_rows_f64(2, 2, vec![0.0; 4]).unwrap();
        assert!(rank1_residual(&s, &SvdOptions::default()).is_err());
    }

    #[test]
    fn streamed_residual_matches_in_memory() {
        let vals: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 - 4.0).collect();
        let s = ScoreMatrix::from_rows_f64(12, 5, vals).unwrap();
        let (r, f) = rank1_residual(&s, &SvdOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.asm1");
        write_rank1_residual(&s, &f, &path).unwrap();
        let back = crate::io::read_asm1(&path).unwrap();
        assert_eq!(back.to_f64_vec(), r.to_f64_vec());
        assert_eq!(back.row_ids(), s.row_ids());
    }
}
