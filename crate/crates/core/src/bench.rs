//! Synthetic score matrices and feature tables with planted structure, and
//! brute-force reference diagnostics for small matrices.
//!
//! Regimes:
//! - `collapsed-rank1`: `S = √c·A + √(1−c)·Q + ε·E` with `A = u vᵀ` a
//!   query-independent axis raised on the planted group, `Q` and `E`
//!   independent Gaussian noise. Planted rows carry reduced noise
//!   (`planted_noise_scale`), so once the axis is removed their scores sit
//!   near zero.
//! - `offset-dominated`: `S = 1 μᵀ + ε·E` with positive per-query offsets.
//! - `query-dependent`: each query raises its own random group of tracks by
//!   `planted_elevation` over unit Gaussian noise.
//! - `iid-noise`: unit Gaussian noise.
//!
//! `A` and `Q` are scaled to squared Frobenius norm `M·T` (`Q` in
//! expectation), so `c` is the planted energy share of the axis. All draws
//! are keyed by `(seed, entity)` and rows can be generated in any order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AriaError, Result};
use crate::features::{FeatureData, FeatureSet, FeatureSpec, MAX_INTERVAL};
use crate::io::{atomic_write, write_json, Asm1StreamWriter, SegmentMap};
use crate::matrix::{is_degenerate, MatrixData, Precision, ScoreMatrix};
use crate::rng::keyed_rng;

/// Regime thresholds on fast-path diagnostics.
pub const COLLAPSED_R1: f64 = 0.8;
pub const OFFSET_P: f64 = 0.8;
pub const QUERY_DEPENDENT_KAPPA: f64 = 0.1;
pub const QUERY_DEPENDENT_R1: f64 = 0.2;
/// Largest `M·T` accepted by [`oracle_diagnostics`].
pub const ORACLE_MAX_ENTRIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    CollapsedRank1,
    OffsetDominated,
    QueryDependent,
    IidNoise,
}

impl FromStr for Regime {
    type Err = AriaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collapsed-rank1" => Ok(Regime::CollapsedRank1),
            "offset-dominated" => Ok(Regime::OffsetDominated),
            "query-dependent" => Ok(Regime::QueryDependent),
            "iid-noise" => Ok(Regime::IidNoise),
            other => Err(AriaError::InvalidInput(format!(
                "unknown regime `{other}` (expected collapsed-rank1, offset-dominated, query-dependent or iid-noise)"
            ))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::CollapsedRank1 => "collapsed-rank1",
            Regime::OffsetDominated => "offset-dominated",
            Regime::QueryDependent => "query-dependent",
            Regime::IidNoise => "iid-noise",
        })
    }
}

/// Regime read off the diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosedRegime {
    Collapsed,
    OffsetDominated,
    QueryDependent,
    Unclassified,
}

/// Offset first (a constant offset is itself rank-1), then collapse, then
/// query dependence.
pub fn classify_regime(r1: f64, p: f64, kappa: Option<f64>) -> DiagnosedRegime {
    if p > OFFSET_P {
        DiagnosedRegime::OffsetDominated
    } else if r1 > COLLAPSED_R1 {
        DiagnosedRegime::Collapsed
    } else if kappa.is_some_and(|k| k < QUERY_DEPENDENT_KAPPA) && r1 < QUERY_DEPENDENT_R1 {
        DiagnosedRegime::QueryDependent
    } else {
        DiagnosedRegime::Unclassified
    }
}

/// How the `M` segments are spread over the `N` tracks (contiguously).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentPolicy {
    /// Sizes differ by at most one.
    Equal,
    /// One segment each, the remaining `M − N` assigned uniformly at random.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSpec {
    /// Segments (rows).
    pub m: usize,
    /// Queries (columns).
    pub t: usize,
    /// Tracks.
    pub n: usize,
    pub segments: SegmentPolicy,
    pub regime: Regime,
    /// Energy share `c ∈ [0, 1]` of the rank-1 axis (collapsed regime).
    pub collapse_strength: f64,
    /// Scale `ε ≥ 0` of the additive noise (signal scale for offsets).
    pub noise: f64,
    /// Number of planted tracks.
    pub planted_size: usize,
    /// Axis offset of planted tracks (collapsed) or per-query group lift.
    pub planted_elevation: f64,
    /// Noise scale on planted rows, in `[0, 1]` (collapsed regime).
    pub planted_noise_scale: f64,
    /// Size of each query's raised group (query-dependent regime).
    pub query_group_size: usize,
    /// Feature coherence of the planted group, in `[0, 1]`.
    pub coherence: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            m: 2000,
            t: 64,
            n: 1000,
            segments: SegmentPolicy::Equal,
            regime: Regime::CollapsedRank1,
            collapse_strength: 0.9,
            noise: 0.05,
            planted_size: 100,
            planted_elevation: 3.0,
            planted_noise_scale: 0.2,
            query_group_size: 20,
            coherence: 0.9,
            precision: Precision::F64,
            seed: 7,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AriaError::InvalidInput(format!("planted spec: {msg}")));
        if self.n == 0 || self.t == 0 {
            return bad("M, T and N must be positive".into());
        }
        if self.m < self.n {
            return bad(format!("M = {} segments cannot cover N = {} tracks", self.m, self.n));
        }
        if !(0.0..=1.0).contains(&self.collapse_strength) {
            return bad(format!("collapse_strength {} outside [0, 1]", self.collapse_strength));
        }
        if !(0.0..=1.0).contains(&self.coherence) {
            return bad(format!("coherence {} outside [0, 1]", self.coherence));
        }
        if !(0.0..=1.0).contains(&self.planted_noise_scale) {
            return bad(format!("planted_noise_scale {} outside [0, 1]", self.planted_noise_scale));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if !self.planted_elevation.is_finite() {
            return bad("planted_elevation must be finite".into());
        }
        if self.planted_size > self.n {
            return bad(format!("planted_size {} exceeds N = {}", self.planted_size, self.n));
        }
        if self.regime == Regime::QueryDependent && (self.query_group_size == 0 || self.query_group_size > self.n) {
            return bad(format!("query_group_size must lie in 1..={}", self.n));
        }
        Ok(())
    }
}

pub fn track_id(i: usize) -> String {
    format!("t{i:06}")
}

pub fn segment_id(track: usize, k: usize) -> String {
    format!("t{track:06}#{k}")
}

pub fn query_id(j: usize) -> String {
    format!("q{j:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub regime: Regime,
    pub expected_regime: DiagnosedRegime,
    /// Planted energy share of the rank-1 component, `‖√c·A‖²/‖S‖²`
    /// (`1μᵀ` for offsets); absent when not computed.
    pub planted_r1: Option<f64>,
    pub planted_group: Vec<String>,
    /// Raised tracks per query (query-dependent regime).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_groups: Option<Vec<Vec<String>>>,
    pub spec: PlantedSpec,
}

/// Row-range generator for a planted matrix.
pub struct PlantedGenerator {
    spec: PlantedSpec,
    /// First segment of each track, plus `M` at the end.
    starts: Vec<usize>,
    segment_track: Vec<u32>,
    planted: Vec<bool>,
    planted_tracks: Vec<usize>,
    axis: Vec<f64>,
    v: Vec<f64>,
    offsets: Vec<f64>,
    a_scale: f64,
    q_scale: f64,
    query_groups: Vec<Vec<usize>>,
    /// Queries raising each track (query-dependent regime).
    raised_by: Vec<Vec<u32>>,
}

impl PlantedGenerator {
    pub fn new(spec: &PlantedSpec) -> Result<Self> {
        spec.validate()?;
        let (m, n, t, seed) = (spec.m, spec.n, spec.t, spec.seed);
        let sizes = segment_sizes(spec);
        let mut starts = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for &s in &sizes {
            starts.push(acc);
            acc += s;
        }
        starts.push(acc);
        let mut segment_track = vec![0u32; m];
        for tr in 0..n {
            segment_track[starts[tr]..starts[tr + 1]].iter_mut().for_each(|x| *x = tr as u32);
        }

        let planted_tracks = planted_group(spec);
        let mut planted = vec![false; n];
        planted_tracks.iter().for_each(|&i| planted[i] = true);

        let axis: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut keyed_rng(seed, "axis", i as u64));
                z + if planted[i] { spec.planted_elevation } else { 0.0 }
            })
            .collect();
        let mut vrng = keyed_rng(seed, "query-axis", 0);
        let v: Vec<f64> = (0..t).map(|_| vrng.random_range(0.95..1.05)).collect();
        let mut orng = keyed_rng(seed, "offsets", 0);
        let offsets: Vec<f64> = (0..t).map(|_| orng.random_range(1.0..2.0)).collect();

        let u_sq: f64 = (0..n).map(|i| axis[i] * axis[i] * sizes[i] as f64).sum();
        let v_sq: f64 = v.iter().map(|x| x * x).sum();
        let mt = (m * t) as f64;
        let a_scale = if u_sq > 0.0 { (mt / (u_sq * v_sq)).sqrt() } else { 0.0 };
        let row_sq: f64 = (0..n)
            .map(|i| sizes[i] as f64 * if planted[i] { spec.planted_noise_scale.powi(2) } else { 1.0 })
            .sum();
        let q_scale = if row_sq > 0.0 { (m as f64 / row_sq).sqrt() } else { 0.0 };

        let mut query_groups = Vec::new();
        let mut raised_by = Vec::new();
        if spec.regime == Regime::QueryDependent {
            raised_by = vec![Vec::new(); n];
            for j in 0..t {
                let mut rng = keyed_rng(seed, "query-group", j as u64);
                let mut g: Vec<usize> = sample(&mut rng, n, spec.query_group_size).into_vec();
                g.sort_unstable();
                for &tr in &g {
                    raised_by[tr].push(j as u32);
                }
                query_groups.push(g);
            }
        }
        Ok(PlantedGenerator {
            spec: spec.clone(),
            starts,
            segment_track,
            planted,
            planted_tracks,
            axis,
            v,
            offsets,
            a_scale,
            q_scale,
            query_groups,
            raised_by,
        })
    }

    pub fn spec(&self) -> &PlantedSpec {
        &self.spec
    }

    /// Row-major values of segments `r0..r1`.
    pub fn rows(&self, r0: usize, r1: usize) -> Vec<f64> {
        let t = self.spec.t;
        let mut out = vec![0.0; (r1 - r0) * t];
        out.par_chunks_mut(t).enumerate().for_each(|(i, row)| self.fill_row(r0 + i, row));
        out
    }

    fn fill_row(&self, r: usize, row: &mut [f64]) {
        let spec = &self.spec;
        let tr = self.segment_track[r] as usize;
        let mut rng = keyed_rng(spec.seed, "row", r as u64);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        match spec.regime {
            Regime::IidNoise => row.iter_mut().for_each(|x| *x = normal()),
            Regime::OffsetDominated => {
                for (x, &mu) in row.iter_mut().zip(&self.offsets) {
                    *x = mu + spec.noise * normal();
                }
            }
            Regime::QueryDependent => {
                row.iter_mut().for_each(|x| *x = normal());
                for &j in &self.raised_by[tr] {
                    row[j as usize] += spec.planted_elevation;
                }
            }
            Regime::CollapsedRank1 => {
                let c = spec.collapse_strength;
                let row_scale = if self.planted[tr] { spec.planted_noise_scale } else { 1.0 };
                let a = c.sqrt() * self.a_scale * self.axis[tr];
                let q = (1.0 - c).sqrt() * self.q_scale * row_scale;
                let e = spec.noise * row_scale;
                for (x, &vj) in row.iter_mut().zip(&self.v) {
                    let (g, h) = (normal(), normal());
                    *x = a * vj + q * g + e * h;
                }
            }
        }
    }

    pub fn row_ids(&self) -> Vec<String> {
        (0..self.spec.n)
            .flat_map(|tr| (0..self.starts[tr + 1] - self.starts[tr]).map(move |k| segment_id(tr, k)))
            .collect()
    }

    pub fn col_ids(&self) -> Vec<String> {
        (0..self.spec.t).map(query_id).collect()
    }

    pub fn track_ids(&self) -> Vec<String> {
        (0..self.spec.n).map(track_id).collect()
    }

    pub fn segment_map(&self) -> Result<SegmentMap> {
        let pairs: Vec<(String, String)> = (0..self.spec.n)
            .flat_map(|tr| (0..self.starts[tr + 1] - self.starts[tr]).map(move |k| (segment_id(tr, k), track_id(tr))))
            .collect();
        SegmentMap::from_pairs(pairs)
    }

    /// Planted track indices, ascending.
    pub fn planted_tracks(&self) -> &[usize] {
        &self.planted_tracks
    }

    fn expected_regime(&self) -> DiagnosedRegime {
        let s = &self.spec;
        match s.regime {
            Regime::OffsetDominated => DiagnosedRegime::OffsetDominated,
            Regime::QueryDependent | Regime::IidNoise => DiagnosedRegime::QueryDependent,
            Regime::CollapsedRank1 if s.collapse_strength / (1.0 + s.noise * s.noise) > COLLAPSED_R1 => DiagnosedRegime::Collapsed,
            Regime::CollapsedRank1 => DiagnosedRegime::Unclassified,
        }
    }

    pub fn ground_truth(&self, frobenius_sq: Option<f64>) -> GroundTruth {
        let s = &self.spec;
        let planted_energy = match s.regime {
            Regime::CollapsedRank1 => Some(s.collapse_strength * (s.m * s.t) as f64),
            Regime::OffsetDominated => Some(s.m as f64 * self.offsets.iter().map(|x| x * x).sum::<f64>()),
            _ => None,
        };
        GroundTruth {
            regime: s.regime,
            expected_regime: self.expected_regime(),
            planted_r1: match (planted_energy, frobenius_sq) {
                (Some(e), Some(f)) if f > 0.0 => Some((e / f).min(1.0)),
                _ => None,
            },
            planted_group: self.planted_tracks.iter().map(|&i| track_id(i)).collect(),
            query_groups: (s.regime == Regime::QueryDependent)
                .then(|| self.query_groups.iter().map(|g| g.iter().map(|&i| track_id(i)).collect()).collect()),
            spec: s.clone(),
        }
    }
}

fn segment_sizes(spec: &PlantedSpec) -> Vec<usize> {
    let (m, n) = (spec.m, spec.n);
    match spec.segments {
        SegmentPolicy::Equal => (0..n).map(|i| m / n + usize::from(i < m % n)).collect(),
        SegmentPolicy::Random => {
            let mut sizes = vec![1; n];
            let mut rng = keyed_rng(spec.seed, "segments", 0);
            for _ in 0..m - n {
                sizes[rng.random_range(0..n)] += 1;
            }
            sizes
        }
    }
}

fn planted_group(spec: &PlantedSpec) -> Vec<usize> {
    let mut rng = keyed_rng(spec.seed, "planted", 0);
    let mut g = sample(&mut rng, spec.n, spec.planted_size).into_vec();
    g.sort_unstable();
    g
}

#[derive(Debug, Clone)]
pub struct PlantedMatrix {
    pub matrix: ScoreMatrix,
    pub segment_map: SegmentMap,
    pub truth: GroundTruth,
}

/// Generates the full planted matrix in memory.
pub fn generate_matrix(spec: &PlantedSpec) -> Result<PlantedMatrix> {
    let g = PlantedGenerator::new(spec)?;
    let values = g.rows(0, spec.m);
    let frob: f64 = values.iter().map(|x| x * x).sum();
    let data = match spec.precision {
        Precision::F64 => MatrixData::F64(values),
        Precision::F32 => MatrixData::F32(values.into_iter().map(|x| x as f32).collect()),
    };
    let matrix = ScoreMatrix::new(spec.m, spec.t, data, g.row_ids(), g.col_ids())?;
    Ok(PlantedMatrix {
        matrix,
        segment_map: g.segment_map()?,
        truth: g.ground_truth(Some(frob)),
    })
}

/// Files written by [`write_simulation`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationPaths {
    pub matrix: PathBuf,
    pub segment_map: PathBuf,
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
}

/// Streams a planted matrix to `<prefix>matrix.asm1` and writes the segment
/// map, a feature set for `layout` and the ground truth beside it. The
/// matrix never has to fit in memory.
pub fn write_simulation(spec: &PlantedSpec, layout: &[ChannelGen], prefix: &Path) -> Result<SimulationPaths> {
    let g = PlantedGenerator::new(spec)?;
    let file = |name: &str| -> PathBuf {
        let mut p = prefix.as_os_str().to_owned();
        p.push(name);
        PathBuf::from(p)
    };
    let paths = SimulationPaths {
        matrix: file("matrix.asm1"),
        segment_map: file("segments.csv"),
        manifest: file("features"),
        ground_truth: file("truth.json"),
    };
    if let Some(dir) = paths.matrix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AriaError::io(dir, e))?;
    }
    let mut w = Asm1StreamWriter::create(&paths.matrix, spec.m, spec.t, spec.precision)?;
    let block = (1 << 20) / spec.t.max(1);
    let mut frob = 0.0;
    let mut r0 = 0;
    while r0 < spec.m {
        let r1 = (r0 + block.max(1)).min(spec.m);
        let mut rows = g.rows(r0, r1);
        if spec.precision == Precision::F32 {
            rows.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        frob += rows.iter().map(|x| x * x).sum::<f64>();
        w.write_rows(&rows).map_err(|e| AriaError::io(&paths.matrix, e))?;
        r0 = r1;
    }
    let row_ids = g.row_ids();
    w.finish(&row_ids, &g.col_ids())?;
    let map = g.segment_map()?;
    atomic_write(&paths.segment_map, |w| map.write_csv(w, &row_ids))?;
    let fs = generate_features(spec.n, layout, g.planted_tracks(), spec.coherence, spec.seed)?;
    let manifest = fs.write_manifest(&paths.manifest)?;
    write_json(&paths.ground_truth, &g.ground_truth(Some(frob)))?;
    Ok(SimulationPaths { manifest, ..paths })
}

/// One generated feature: vector of dimension `dim`, or a chord sequence when `dim == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGen {
    pub id: String,
    pub dim: usize,
    /// Regression group; defaults to the feature id.
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGen {
    pub name: String,
    pub features: Vec<FeatureGen>,
    /// Whether the planted group is coherent in this channel.
    #[serde(default = "default_true")]
    pub coherent: bool,
}

fn default_true() -> bool {
    true
}

/// Three channels resembling a rhythm/harmony/timbre split, with one chord
/// sequence feature.
pub fn default_layout() -> Vec<ChannelGen> {
    let f = |id: &str, dim: usize| FeatureGen {
        id: id.into(),
        dim,
        group: None,
    };
    vec![
        ChannelGen {
            name: "rhythm".into(),
            features: vec![f("tempo", 1), f("onset_profile", 4)],
            coherent: true,
        },
        ChannelGen {
            name: "harmony".into(),
            features: vec![f("chroma", 12), f("chords", 0)],
            coherent: true,
        },
        ChannelGen {
            name: "timbre".into(),
            features: vec![f("mfcc", 13), f("spectral", 3)],
            coherent: true,
        },
    ]
}

/// Feature values for tracks `0..n`.
///
/// Background tracks draw every dimension from `N(0, 1)`. In coherent
/// channels, planted tracks draw `√coh · centroid + √(1 − coh) · N(0, 1)`
/// around a per-feature centroid, so their marginal distribution matches the
/// background while pairwise distances shrink with `coh`. Sequences are
/// random chord-interval strings of length 4–12; planted tracks copy a shared
/// template with probability `coh`.
pub fn generate_features(
    n: usize,
    layout: &[ChannelGen],
    planted_group: &[usize],
    coherence: f64,
    seed: u64,
) -> Result<FeatureSet> {
    if !(0.0..=1.0).contains(&coherence) {
        return Err(AriaError::InvalidInput(format!("coherence {coherence} outside [0, 1]")));
    }
    if let Some(&bad) = planted_group.iter().find(|&&i| i >= n) {
        return Err(AriaError::InvalidInput(format!("planted track {bad} outside 0..{n}")));
    }
    let mut planted = vec![false; n];
    planted_group.iter().for_each(|&i| planted[i] = true);
    let (a, b) = (coherence.sqrt(), (1.0 - coherence).sqrt());
    let mut specs = Vec::new();
    let mut data = Vec::new();
    for ch in layout {
        for fg in &ch.features {
            let key = format!("feature/{}", fg.id);
            let coherent = |i: usize| ch.coherent && planted[i];
            if fg.dim == 0 {
                let mut trng = keyed_rng(seed, &key, u64::MAX);
                let template = random_sequence(&mut trng);
                let values = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = keyed_rng(seed, &key, i as u64);
                        let copy = rng.random::<f64>() < coherence;
                        Some(if coherent(i) && copy { template.clone() } else { random_sequence(&mut rng) })
                    })
                    .collect();
                let mut spec = FeatureSpec::sequence(&fg.id, &ch.name);
                if let Some(g) = &fg.group {
                    spec.group = g.clone();
                }
                specs.push(spec);
                data.push(FeatureData::Sequence(values));
            } else {
                let mut crng = keyed_rng(seed, &key, u64::MAX);
                let centroid: Vec<f64> = (0..fg.dim).map(|_| StandardNormal.sample(&mut crng)).collect();
                let values = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = keyed_rng(seed, &key, i as u64);
                        let noise: Vec<f64> = (0..fg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                        Some(if coherent(i) {
                            centroid.iter().zip(&noise).map(|(c, e)| a * c + b * e).collect()
                        } else {
                            noise
                        })
                    })
                    .collect();
                specs.push(FeatureSpec::vector(&fg.id, &ch.name, fg.dim, fg.group.as_deref().unwrap_or(&fg.id)));
                data.push(FeatureData::Vector(values));
            }
        }
    }
    FeatureSet::new((0..n).map(track_id).collect(), specs, data, Vec::<String>::new())
}

fn random_sequence(rng: &mut impl Rng) -> Vec<u8> {
    let len = rng.random_range(4..=12);
    (0..len).map(|_| rng.random_range(0..=MAX_INTERVAL)).collect()
}

/// Reference diagnostics by direct evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleDiagnostics {
    /// `None` when fewer than two columns have nonzero variance.
    pub kappa: Option<f64>,
    pub degenerate_columns: usize,
    /// The full spectrum, descending.
    pub sigmas: Vec<f64>,
    pub ratios: Vec<f64>,
    pub r_trailing: f64,
    pub frobenius_sq: f64,
    pub p: f64,
}

/// Dense SVD, all-pairs Pearson and the direct concentration formula.
pub fn oracle_diagnostics(s: &ScoreMatrix) -> Result<OracleDiagnostics> {
    let (m, t) = (s.nrows(), s.ncols());
    if m * t > ORACLE_MAX_ENTRIES {
        return Err(AriaError::InvalidInput(format!(
            "oracle limited to {ORACLE_MAX_ENTRIES} entries, matrix has {}",
            m * t
        )));
    }
    let cols: Vec<Vec<f64>> = (0..t).map(|j| s.column(j)).collect();
    let frobenius_sq: f64 = cols.iter().flatten().map(|x| x * x).sum();

    let mut usable = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let mean = c.iter().sum::<f64>() / m as f64;
        let css: f64 = c.iter().map(|x| (x - mean) * (x - mean)).sum();
        let raw: f64 = c.iter().map(|x| x * x).sum();
        if !is_degenerate(css, raw) {
            usable.push(j);
        }
    }
    let pearson = |a: &[f64], b: &[f64]| -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    };
    let kappa = (usable.len() >= 2).then(|| {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (i, &a) in usable.iter().enumerate() {
            for &b in &usable[i + 1..] {
                total += pearson(&cols[a], &cols[b]).abs();
                pairs += 1;
            }
        }
        total / pairs as f64
    });

    let dm = DMatrix::from_fn(m, t, |i, j| cols[j][i]);
    let mut sigmas: Vec<f64> = dm.singular_values().iter().copied().collect();
    sigmas.sort_by(|a, b| b.total_cmp(a));
    let ratios: Vec<f64> = sigmas.iter().map(|x| x * x / frobenius_sq).collect();
    let r_trailing = ratios.iter().skip(1).take(4).sum();

    let p = cols
        .iter()
        .map(|c| {
            let sq: f64 = c.iter().map(|x| x * x).sum();
            if sq == 0.0 {
                0.0
            } else {
                let mean = c.iter().sum::<f64>() / m as f64;
                m as f64 * mean * mean / sq
            }
        })
        .sum::<f64>()
        / t as f64;

    Ok(OracleDiagnostics {
        kappa,
        degenerate_columns: t - usable.len(),
        sigmas,
        ratios,
        r_trailing,
        frobenius_sq,
        p,
    })
}
