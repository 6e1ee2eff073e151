//! Alignment of the dominant left singular vector `u₁` of a track-level
//! matrix with each channel's features: the largest single-dimension
//! |correlation| (`α^max`) and the largest multivariate `√R²` over feature
//! groups (`α^reg`).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AriaError, Result};
use crate::features::{FeatureKind, FeatureSet, FeatureValue};
use crate::linalg::{truncated_svd, SvdMethod, SvdOptions};
use crate::matrix::{is_degenerate, ScoreMatrix};

/// Relative singular-value cutoff of the least-squares pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LeadingVector {
    pub u1: Vec<f64>,
    pub sigma1: f64,
    pub method: SvdMethod,
}

/// Unit-norm `u₁`, signed so that its largest-magnitude entry is positive.
pub fn leading_left_singular_vector(s_track: &ScoreMatrix, svd: &SvdOptions) -> Result<LeadingVector> {
    let tr = truncated_svd(s_track, &SvdOptions { k: 1, ..svd.clone() })?;
    let sigma1 = tr.sigmas[0];
    if sigma1 == 0.0 {
        return Err(AriaError::Numeric("σ₁ = 0: the matrix is zero".into()));
    }
    let mut u1: Vec<f64> = tr.u.column(0).iter().copied().collect();
    let norm = u1.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pivot = u1
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
        .0;
    let sign = if u1[pivot] < 0.0 { -1.0 } else { 1.0 };
    u1.iter_mut().for_each(|x| *x *= sign / norm);
    Ok(LeadingVector {
        u1,
        sigma1,
        method: tr.method,
    })
}

fn centered(values: &[f64]) -> (Vec<f64>, bool) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let c: Vec<f64> = values.iter().map(|x| x - mean).collect();
    let css: f64 = c.iter().map(|x| x * x).sum();
    let raw: f64 = values.iter().map(|x| x * x).sum();
    (c, is_degenerate(css, raw))
}

/// |Pearson correlation|, or `None` if either input is constant.
pub fn abs_correlation(y: &[f64], x: &[f64]) -> Option<f64> {
    let (yc, ydeg) = centered(y);
    let (xc, xdeg) = centered(x);
    if ydeg || xdeg {
        return None;
    }
    let dot: f64 = yc.iter().zip(&xc).map(|(a, b)| a * b).sum();
    let ny: f64 = yc.iter().map(|a| a * a).sum();
    let nx: f64 = xc.iter().map(|a| a * a).sum();
    Some((dot / (ny * nx).sqrt()).abs().min(1.0))
}

/// `√R²` of the least-squares fit of `y` on an intercept plus `columns`.
///
/// Columns are centered and scaled to unit norm (constant columns dropped)
/// and the fit uses a pseudo-inverse with relative cutoff [`PINV_RCOND`], so
/// collinear designs are handled. Returns `None` if `y` is constant.
pub fn ols_sqrt_r2(y: &[f64], columns: &[Vec<f64>]) -> Option<f64> {
    let n = y.len();
    let (yc, ydeg) = centered(y);
    if ydeg {
        return None;
    }
    let kept: Vec<Vec<f64>> = columns
        .iter()
        .filter_map(|c| {
            let (cc, deg) = centered(c);
            if deg {
                return None;
            }
            let norm = cc.iter().map(|x| x * x).sum::<f64>().sqrt();
            Some(cc.into_iter().map(|x| x / norm).collect())
        })
        .collect();
    if kept.is_empty() {
        return Some(0.0);
    }
    let x = DMatrix::from_fn(n, kept.len(), |r, c| kept[c][r]);
    let svd = x.svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let yv = nalgebra::DVector::from_vec(yc);
    let mut fitted_sq = 0.0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_RCOND * smax {
            let c = u.column(i).dot(&yv);
            fitted_sq += c * c;
        }
    }
    Some((fitted_sq / yv.norm_squared()).sqrt().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelAlignment {
    pub channel: String,
    pub alpha_max: Option<f64>,
    pub alpha_max_feature: Option<String>,
    pub alpha_max_dim: Option<usize>,
    pub alpha_reg: Option<f64>,
    pub alpha_reg_group: Option<String>,
    /// Sequence-valued features, which have no per-track vector.
    pub excluded_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub n_tracks: usize,
    /// Tracks left out because their features are missing.
    pub excluded_missing: usize,
    pub u1_norm_check: f64,
    pub sigma1: f64,
    pub svd_method: SvdMethod,
    /// `u₁` has no spread over the usable tracks, so no α is defined.
    pub u1_constant: bool,
    pub channels: Vec<ChannelAlignment>,
}

/// `α^max` and `α^reg` of one channel. `u1[i]` belongs to `track_ids[i]`.
pub fn axis_channel_alignment(u1: &[f64], track_ids: &[String], fs: &FeatureSet, channel: &str) -> Result<ChannelAlignment> {
    let (rows, y) = usable_rows(u1, track_ids, fs)?;
    channel_alignment(&y, &rows, fs, channel)
}

/// `(feature-set index, u₁ entry)` for tracks with complete features.
fn usable_rows(u1: &[f64], track_ids: &[String], fs: &FeatureSet) -> Result<(Vec<usize>, Vec<f64>)> {
    if u1.len() != track_ids.len() {
        return Err(AriaError::DimensionMismatch(format!(
            "u1 has {} entries for {} tracks",
            u1.len(),
            track_ids.len()
        )));
    }
    let mut unknown = Vec::new();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (id, &u) in track_ids.iter().zip(u1) {
        match fs.track_index(id) {
            Some(t) if fs.is_usable(t) => {
                rows.push(t);
                y.push(u);
            }
            Some(_) => {}
            None => unknown.push(id.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(AriaError::IdMismatch {
            what: "feature set (tracks without features)".into(),
            missing: unknown,
            extra: Vec::new(),
        });
    }
    Ok((rows, y))
}

fn channel_alignment(y: &[f64], rows: &[usize], fs: &FeatureSet, channel: &str) -> Result<ChannelAlignment> {
    let feats = fs.channel_features(channel);
    let mut excluded_features = Vec::new();
    // group name → columns, in declaration order
    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let mut alpha_max: Option<(f64, String, usize)> = None;
    for &d in &feats {
        let spec = &fs.specs()[d];
        if spec.kind == FeatureKind::LcsSequence {
            excluded_features.push(spec.id.clone());
            continue;
        }
        let gi = match groups.iter().position(|(g, _)| *g == spec.group) {
            Some(i) => i,
            None => {
                groups.push((spec.group.clone(), Vec::new()));
                groups.len() - 1
            }
        };
        for dim in 0..spec.dimension {
            let col: Vec<f64> = rows
                .iter()
                .map(|&t| match fs.value(d, t) {
                    Some(FeatureValue::Vector(v)) => v[dim],
                    _ => unreachable!("usable tracks carry every feature"),
                })
                .collect();
            if let Some(r) = abs_correlation(y, &col) {
                if alpha_max.as_ref().is_none_or(|(best, _, _)| r > *best) {
                    alpha_max = Some((r, spec.id.clone(), dim));
                }
            }
            groups[gi].1.push(col);
        }
    }
    if groups.is_empty() {
        return Err(AriaError::InvalidInput(format!(
            "channel `{channel}` has no vector-valued feature to align with"
        )));
    }
    let mut alpha_reg: Option<(f64, String)> = None;
    for (name, cols) in &groups {
        if let Some(r) = ols_sqrt_r2(y, cols) {
            if alpha_reg.as_ref().is_none_or(|(best, _)| r > *best) {
                alpha_reg = Some((r, name.clone()));
            }
        }
    }
    Ok(ChannelAlignment {
        channel: channel.to_string(),
        alpha_max: alpha_max.as_ref().map(|a| a.0),
        alpha_max_feature: alpha_max.as_ref().map(|a| a.1.clone()),
        alpha_max_dim: alpha_max.as_ref().map(|a| a.2),
        alpha_reg: alpha_reg.as_ref().map(|a| a.0),
        alpha_reg_group: alpha_reg.map(|a| a.1),
        excluded_features,
    })
}

/// `u₁` of `s_track` and its alignment with every listed channel.
pub fn alignment_report(s_track: &ScoreMatrix, fs: &FeatureSet, channels: &[String], svd: &SvdOptions) -> Result<AlignmentReport> {
    let lead = leading_left_singular_vector(s_track, svd)?;
    let (rows, y) = usable_rows(&lead.u1, s_track.row_ids(), fs)?;
    let u1_constant = rows.len() < 2 || centered(&y).1;
    let channels = channels
        .par_iter()
        .map(|c| channel_alignment(&y, &rows, fs, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentReport {
        n_tracks: s_track.nrows(),
        excluded_missing: s_track.nrows() - rows.len(),
        u1_norm_check: lead.u1.iter().map(|x| x * x).sum::<f64>().sqrt(),
        sigma1: lead.sigma1,
        svd_method: lead.method,
        u1_constant,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureData, FeatureSpec};

    #[test]
    fn u1_of_orthogonal_columns() {
        let s = ScoreMatrix::from_nested(&[&[3.0, 0.0], &[4.0, 0.0], &[0.0, 1.0]]).unwrap();
        let lead = leading_left_singular_vector(&s, &SvdOptions::default()).unwrap();
        assert!((lead.u1[0] - 0.6).abs() < 1e-12 && (lead.u1[1] - 0.8).abs() < 1e-12 && lead.u1[2].abs() < 1e-12);
        assert!((lead.sigma1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let u = [0.1, -0.9, 0.3];
        let vals: Vec<f64> = u.iter().flat_map(|a| [a * 2.0, a * -1.0]).collect();
        let s = ScoreMatrix::from_rows_f64(3, 2, vals).unwrap();
        let lead = leading_left_singular_vector(&s, &SvdOptions::default()).unwrap();
        let norm = (0.01f64 + 0.81 + 0.09).sqrt();
        for (got, want) in lead.u1.iter().zip(u) {
            assert!((got + want / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_is_an_error() {
        let s = ScoreMatrix::from_rows_f64(3, 2, vec![0.0; 6]).unwrap();
        assert!(leading_left_singular_vector(&s, &SvdOptions::default()).is_err());
    }

    #[test]
    fn exact_fit_and_perfect_correlation() {
        let y = [0.1, -0.4, 0.3, 0.9, -0.2, 0.05];
        let other = vec![1.0, 0.0, 2.0, 1.0, 3.0, 0.5];
        assert!((abs_correlation(&y, &y.map(|v| 3.0 * v - 1.0)).unwrap() - 1.0).abs() < 1e-12);
        let r = ols_sqrt_r2(&y, &[other.clone(), y.to_vec(), other.iter().map(|v| v * 2.0).collect()]).unwrap();
        assert!((r - 1.0).abs() < 1e-10);
    }

    #[test]
    fn channel_alignment_excludes_sequences() {
        let tracks: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let y = [0.5, 0.1, -0.3, 0.2, 0.9];
        let fs = FeatureSet::new(
            tracks.clone(),
            vec![FeatureSpec::vector("x", "harmony", 2, "x"), FeatureSpec::sequence("chords", "harmony")],
            vec![
                FeatureData::Vector(y.iter().enumerate().map(|(i, &v)| Some(vec![2.0 * v + 1.0, i as f64])).collect()),
                FeatureData::Sequence(vec![Some(vec![1]); 5]),
            ],
            Vec::<String>::new(),
        )
        .unwrap();
        let ca = axis_channel_alignment(&y, &tracks, &fs, "harmony").unwrap();
        assert!((ca.alpha_max.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ca.alpha_max_dim, Some(0));
        assert!(ca.alpha_reg.unwrap() >= ca.alpha_max.unwrap() - 1e-12);
        assert_eq!(ca.excluded_features, vec!["chords".to_string()]);
    }
}
