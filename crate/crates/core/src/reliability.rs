//! Structural diagnostics of a raw score matrix: mean absolute inter-query
//! correlation κ, singular energy ratios and the mean concentration ratio p.

use rand::seq::index::sample;
use serde::{Serialize, Serializer};

use crate::error::{AriaError, Result};
use crate::linalg::{centered_gram, truncated_svd_with_gram, SvdMethod, SvdOptions};
use crate::matrix::{centered_sum_sq, is_degenerate, ColumnMoments, CompensatedSum, Precision, ScoreMatrix};
use crate::rng::keyed_rng;

pub const DEFAULT_KAPPA_MAX_QUERIES: usize = 1024;

/// Whether κ used every non-degenerate column or a seeded subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaSubsample {
    Exact,
    Sampled(usize),
}

impl Serialize for KappaSubsample {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KappaSubsample::Exact => s.serialize_str("exact"),
            KappaSubsample::Sampled(n) => s.serialize_u64(*n as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    pub kappa: f64,
    /// Number of columns entering the pairwise mean.
    pub used: usize,
    pub subsample: KappaSubsample,
    /// Zero-variance columns excluded from pairing.
    pub degenerate_columns: usize,
}

/// Mean |Pearson correlation| over all pairs of distinct columns, or over a
/// seeded uniform subset of `max_queries` non-degenerate columns.
pub fn mean_abs_inter_query_correlation(s: &ScoreMatrix, max_queries: usize, seed: u64) -> Result<KappaEstimate> {
    let moments = ColumnMoments::compute(s);
    kappa_from_moments(s, &moments, max_queries, seed, None)
}

fn check_kappa_args(s: &ScoreMatrix, max_queries: usize) -> Result<()> {
    if s.ncols() < 2 {
        return Err(AriaError::InvalidInput("κ needs at least 2 query columns".into()));
    }
    if max_queries < 2 {
        return Err(AriaError::InvalidInput("κ needs max_queries ≥ 2".into()));
    }
    Ok(())
}

/// κ given the first-pass moments. When `full_gram` is supplied (a centered
/// Gram matrix over all columns) no further pass over `s` is made.
fn kappa_from_moments(
    s: &ScoreMatrix,
    moments: &ColumnMoments,
    max_queries: usize,
    seed: u64,
    full_gram: Option<&[f64]>,
) -> Result<KappaEstimate> {
    check_kappa_args(s, max_queries)?;
    let t = s.ncols();
    let css: Vec<f64> = match full_gram {
        Some(g) => (0..t).map(|j| g[j * t + j]).collect(),
        None => centered_sum_sq(s, &moments.means()),
    };
    let usable: Vec<usize> = (0..t).filter(|&j| !is_degenerate(css[j], moments.sum_sq[j])).collect();
    let degenerate_columns = t - usable.len();
    if usable.len() < 2 {
        return Err(AriaError::Numeric(format!(
            "κ undefined: only {} of {t} columns have nonzero variance",
            usable.len()
        )));
    }
    let (selected, subsample) = if usable.len() <= max_queries {
        (usable, KappaSubsample::Exact)
    } else {
        let mut rng = keyed_rng(seed, "kappa", 0);
        let mut idx: Vec<usize> = sample(&mut rng, usable.len(), max_queries).into_iter().map(|i| usable[i]).collect();
        idx.sort_unstable();
        (idx, KappaSubsample::Sampled(max_queries))
    };
    let q = selected.len();
    let gram = match full_gram {
        Some(g) => selected
            .iter()
            .flat_map(|&a| selected.iter().map(move |&b| g[a * t + b]))
            .collect(),
        None => {
            let means = moments.means();
            let shift: Vec<f64> = selected.iter().map(|&j| means[j]).collect();
            centered_gram(s, &selected, &shift)
        }
    };
    let mut total = 0.0;
    for a in 0..q {
        let daa = gram[a * q + a];
        for b in a + 1..q {
            let r = gram[a * q + b] / (daa * gram[b * q + b]).sqrt();
            total += r.abs().min(1.0);
        }
    }
    Ok(KappaEstimate {
        kappa: total / (q * (q - 1) / 2) as f64,
        used: q,
        subsample,
        degenerate_columns,
    })
}

/// `‖S‖_F²` by compensated summation.
pub fn frobenius_sq(s: &ScoreMatrix) -> f64 {
    s.reduce_rows(
        CompensatedSum::default,
        |acc, _, block| block.iter().for_each(|&x| acc.add(x * x)),
        |acc, part| acc.merge(part),
    )
    .value()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRatios {
    pub sigmas: Vec<f64>,
    /// `σᵢ² / ‖S‖_F²`.
    pub ratios: Vec<f64>,
    /// `r₂ + … + r₅` (over the available components when `k < 5`).
    pub r_trailing: f64,
    pub frobenius_sq: f64,
    pub svd: SvdInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SvdInfo {
    pub method: SvdMethod,
    pub k: usize,
    pub iterations: usize,
    pub residual: f64,
    pub seed: u64,
}

/// Top-`opts.k` singular values and their Frobenius energy fractions.
pub fn singular_energy_ratios(s: &ScoreMatrix, opts: &SvdOptions) -> Result<EnergyRatios> {
    energy_ratios_with(s, opts, frobenius_sq(s), None)
}

fn energy_ratios_with(s: &ScoreMatrix, opts: &SvdOptions, frob: f64, gram: Option<&[f64]>) -> Result<EnergyRatios> {
    let min_dim = s.nrows().min(s.ncols());
    if opts.k < 5.min(min_dim) {
        return Err(AriaError::InvalidInput(format!(
            "svd k = {} is too small to report r2:5 (need at least {})",
            opts.k,
            5.min(min_dim)
        )));
    }
    if frob == 0.0 {
        return Err(AriaError::Numeric("energy ratios undefined for an all-zero matrix".into()));
    }
    let tr = truncated_svd_with_gram(s, opts, gram)?;
    let ratios: Vec<f64> = tr.sigmas.iter().map(|x| (x * x / frob).clamp(0.0, 1.0)).collect();
    let r_trailing = ratios.iter().take(5).skip(1).sum();
    Ok(EnergyRatios {
        sigmas: tr.sigmas,
        ratios,
        r_trailing,
        frobenius_sq: frob,
        svd: SvdInfo {
            method: tr.method,
            k: opts.k,
            iterations: tr.iterations,
            residual: tr.residual,
            seed: opts.seed,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concentration {
    pub p: f64,
    /// All-zero columns; each contributes a zero term.
    pub zero_columns: Vec<usize>,
}

/// `p = (1/T) Σ_j M μ_j² / ‖S_·j‖²`, from a single streaming pass.
pub fn mean_concentration_ratio(s: &ScoreMatrix) -> Concentration {
    concentration_from_moments(&ColumnMoments::compute(s))
}

fn concentration_from_moments(m: &ColumnMoments) -> Concentration {
    let rows = m.rows as f64;
    let mut zero_columns = Vec::new();
    let mut total = 0.0;
    for (j, (&sum, &sq)) in m.sum.iter().zip(&m.sum_sq).enumerate() {
        if sq == 0.0 {
            zero_columns.push(j);
            continue;
        }
        // M μ² = (Σx)² / M
        total += (sum * sum / rows / sq).clamp(0.0, 1.0);
    }
    Concentration {
        p: (total / m.sum.len() as f64).clamp(0.0, 1.0),
        zero_columns,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseConfig {
    pub kappa_max_queries: usize,
    pub svd: SvdOptions,
    /// Seed for κ column subsampling.
    pub seed: u64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            kappa_max_queries: DEFAULT_KAPPA_MAX_QUERIES,
            svd: SvdOptions::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityReport {
    pub rows: usize,
    pub cols: usize,
    pub precision: Precision,
    /// `None` when fewer than two columns have nonzero variance.
    pub kappa: Option<f64>,
    pub kappa_query_subsample: KappaSubsample,
    pub kappa_queries_used: usize,
    pub kappa_seed: u64,
    pub degenerate_columns: usize,
    pub singular_values: Vec<f64>,
    pub energy_ratios: Vec<f64>,
    pub r1: f64,
    pub r_trailing: f64,
    pub frobenius_sq: f64,
    pub p: f64,
    pub zero_columns: usize,
    pub svd: SvdInfo,
}

/// κ, energy ratios and p for one raw matrix.
///
/// Small matrices take a dense SVD. Otherwise, when every column enters κ and
/// the Gram path applies, a single centered Gram pass serves both κ and the
/// SVD power steps.
pub fn diagnose(s: &ScoreMatrix, cfg: &DiagnoseConfig) -> Result<ReliabilityReport> {
    check_kappa_args(s, cfg.kappa_max_queries)?;
    let (m, t) = (s.nrows(), s.ncols());
    let k = cfg.svd.k.min(m.min(t));
    let svd = SvdOptions { k, ..cfg.svd.clone() };
    let moments = ColumnMoments::compute(s);
    let means = moments.means();
    let frob = moments.sum_sq.iter().fold(CompensatedSum::default(), |mut acc, &x| {
        acc.add(x);
        acc
    });
    let frob = frob.value();

    let shared = svd.uses_gram(m, t) && t <= cfg.kappa_max_queries;
    let centered = shared.then(|| {
        let all: Vec<usize> = (0..t).collect();
        centered_gram(s, &all, &means)
    });
    let kappa = match kappa_from_moments(s, &moments, cfg.kappa_max_queries, cfg.seed, centered.as_deref()) {
        Ok(k) => Some(k),
        Err(AriaError::Numeric(msg)) => {
            log::warn!("{msg}");
            None
        }
        Err(e) => return Err(e),
    };
    // AᵀA = centered Gram + M μ μᵀ
    let raw_gram = centered.map(|mut g| {
        let rows = m as f64;
        for a in 0..t {
            for b in 0..t {
                g[a * t + b] += rows * means[a] * means[b];
            }
        }
        g
    });
    let energy = energy_ratios_with(s, &svd, frob, raw_gram.as_deref())?;
    let conc = concentration_from_moments(&moments);
    let degenerate_columns = match &kappa {
        Some(k) => k.degenerate_columns,
        None => t - usable_count(s, &moments),
    };
    Ok(ReliabilityReport {
        rows: m,
        cols: t,
        precision: s.precision(),
        kappa: kappa.as_ref().map(|k| k.kappa),
        kappa_query_subsample: kappa.as_ref().map_or(KappaSubsample::Exact, |k| k.subsample),
        kappa_queries_used: kappa.as_ref().map_or(0, |k| k.used),
        kappa_seed: cfg.seed,
        degenerate_columns,
        r1: energy.ratios[0],
        r_trailing: energy.r_trailing,
        singular_values: energy.sigmas,
        energy_ratios: energy.ratios,
        frobenius_sq: frob,
        p: conc.p,
        zero_columns: conc.zero_columns.len(),
        svd: energy.svd,
    })
}

fn usable_count(s: &ScoreMatrix, moments: &ColumnMoments) -> usize {
    let css = centered_sum_sq(s, &moments.means());
    css.iter().zip(&moments.sum_sq).filter(|(&c, &r)| !is_degenerate(c, r)).count()
}
