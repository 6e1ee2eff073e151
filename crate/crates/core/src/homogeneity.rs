//! Within-group musical homogeneity of top-K retrieval groups, calibrated
//! against groups drawn at random from the training pool.
//!
//! For a group `A` and feature `d`, `g_d(A)` is the mean similarity over all
//! unordered pairs. A null model holds the mean and spread of `g_d` over `B`
//! random groups of the same size, plus the spread of the channel average of
//! the per-feature standardized values. A query's channel score is
//! `z_c = (g̃_c − μ_c) / σ_c` with `g̃_c` the mean of `(g_d − μ_d) / σ_d`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AriaError, Result};
use crate::features::FeatureSet;
use crate::io::QueryLabels;
use crate::matrix::ScoreMatrix;
use crate::normalize::NormalizationMode;
use crate::rng::keyed_rng;

pub const DEFAULT_K_LIST: [usize; 7] = [20, 50, 100, 200, 300, 400, 500];
pub const DEFAULT_B: usize = 200;
/// One-sided 2.5% threshold on `z_c`.
pub const SIG_THRESHOLD: f64 = 1.96;
/// Null spreads at or below this fraction of the null mean count as zero.
pub const NULL_DEGENERATE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackGroup {
    pub query_id: String,
    pub k: usize,
    /// Ordered by descending score.
    pub track_ids: Vec<String>,
    /// Positions of `track_ids` in the feature set.
    #[serde(skip)]
    pub tracks: Vec<usize>,
    /// Higher-ranked tracks passed over because their features are missing.
    pub skipped_missing: usize,
}

/// Feature-set index of every row of a track-level matrix.
pub fn row_feature_index(s_track: &ScoreMatrix, fs: &FeatureSet) -> Result<Vec<usize>> {
    let mut missing = Vec::new();
    let rows: Vec<usize> = s_track
        .row_ids()
        .iter()
        .map(|id| {
            fs.track_index(id).unwrap_or_else(|| {
                missing.push(id.clone());
                usize::MAX
            })
        })
        .collect();
    if !missing.is_empty() {
        return Err(AriaError::IdMismatch {
            what: "feature set (score-matrix tracks without features)".into(),
            missing,
            extra: Vec::new(),
        });
    }
    Ok(rows)
}

/// Rows ranked by descending score, ties by ascending id; returns the
/// first `k` usable rows and the count of unusable rows ranked among them.
fn ranked_usable(column: &[f64], ids: &[String], usable: &[bool], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let available = usable.iter().filter(|&&u| u).count();
    if k > available {
        return Err(AriaError::InvalidInput(format!(
            "K = {k} exceeds the {available} tracks with complete features"
        )));
    }
    let cmp = |&a: &usize, &b: &usize| -> Ordering { column[b].total_cmp(&column[a]).then_with(|| ids[a].cmp(&ids[b])) };
    let n_missing = usable.len() - available;
    let take = (k + n_missing).min(column.len());
    let mut order: Vec<usize> = (0..column.len()).collect();
    if take < order.len() && take > 0 {
        order.select_nth_unstable_by(take - 1, cmp);
        order.truncate(take);
    }
    order.sort_by(cmp);
    let mut picked = Vec::with_capacity(k);
    // skipped[i] = unusable rows ranked above the (i+1)-th pick
    let mut skipped = Vec::with_capacity(k);
    let mut passed = 0;
    for r in order {
        if picked.len() == k {
            break;
        }
        if usable[r] {
            picked.push(r);
            skipped.push(passed);
        } else {
            passed += 1;
        }
    }
    Ok((picked, skipped))
}

/// The `k` highest-scoring tracks with complete features for `query`.
pub fn top_k_group(s_track: &ScoreMatrix, fs: &FeatureSet, query: &str, k: usize) -> Result<TrackGroup> {
    let j = s_track
        .col_index(query)
        .ok_or_else(|| AriaError::InvalidInput(format!("unknown query `{query}`")))?;
    let rows = row_feature_index(s_track, fs)?;
    let usable: Vec<bool> = rows.iter().map(|&t| fs.is_usable(t)).collect();
    let (picked, skipped) = ranked_usable(&s_track.column(j), s_track.row_ids(), &usable, k)?;
    Ok(TrackGroup {
        query_id: query.to_string(),
        k,
        track_ids: picked.iter().map(|&r| s_track.row_ids()[r].clone()).collect(),
        tracks: picked.iter().map(|&r| rows[r]).collect(),
        skipped_missing: skipped.last().copied().unwrap_or(0),
    })
}

/// `g_d`: mean similarity over all unordered pairs of `tracks`.
pub fn group_similarity(tracks: &[usize], feature: usize, fs: &FeatureSet) -> Result<f64> {
    let k = tracks.len();
    if k < 2 {
        return Err(AriaError::InvalidInput(format!("group similarity needs K ≥ 2, got {k}")));
    }
    if let Some(&t) = tracks.iter().find(|&&t| !fs.has_value(feature, t)) {
        return Err(AriaError::InvalidInput(format!(
            "track `{}` has no value for feature `{}`",
            fs.tracks()[t],
            fs.specs()[feature].id
        )));
    }
    let mut total = 0.0;
    for j in 1..k {
        for i in 0..j {
            total += fs.similarity(feature, tracks[i], tracks[j]);
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// `g_d` for every prefix length in `ks` (ascending) of one ranked list,
/// accumulating pair sums as the prefix grows.
fn prefix_group_similarity(tracks: &[usize], feature: usize, fs: &FeatureSet, ks: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ks.len());
    let mut next = ks.iter().peekable();
    let mut total = 0.0;
    for j in 1..tracks.len() {
        let mut row = 0.0;
        for i in 0..j {
            row += fs.similarity(feature, tracks[i], tracks[j]);
        }
        total += row;
        while next.peek().is_some_and(|&&k| k == j + 1) {
            next.next();
            out.push(total / (j * (j + 1) / 2) as f64);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureNull {
    pub feature: String,
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelNull {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    /// Non-degenerate features entering the channel mean.
    pub features: Vec<String>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullModel {
    pub k: usize,
    pub b: usize,
    pub seed: u64,
    pub pool_size: usize,
    pub feature_set: String,
    pub features: Vec<FeatureNull>,
    pub channels: Vec<ChannelNull>,
    /// Feature-set index of each entry of `features`.
    #[serde(skip)]
    feature_index: Vec<usize>,
}

/// Short identity recorded in reports that use a null model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullModelId {
    pub k: usize,
    pub b: usize,
    pub seed: u64,
    pub feature_set: String,
}

impl NullModel {
    /// Null statistics from `b` groups of `k` tracks sampled uniformly without
    /// replacement from the usable tracks; group `i` is keyed by `(seed, i)`.
    pub fn build(fs: &FeatureSet, channels: &[String], k: usize, b: usize, seed: u64) -> Result<Self> {
        let pool = fs.usable_tracks();
        if k < 2 || k > pool.len() {
            return Err(AriaError::InvalidInput(format!(
                "null model needs 2 ≤ K ≤ {} usable tracks, got K = {k}",
                pool.len()
            )));
        }
        let groups: Vec<Vec<usize>> = (0..b)
            .map(|i| {
                let mut rng = keyed_rng(seed, "null-group", i as u64);
                sample(&mut rng, pool.len(), k).into_iter().map(|p| pool[p]).collect()
            })
            .collect();
        Self::from_groups(fs, channels, k, &groups, seed)
    }

    /// Null statistics from explicit groups.
    pub fn from_groups(fs: &FeatureSet, channels: &[String], k: usize, groups: &[Vec<usize>], seed: u64) -> Result<Self> {
        if groups.len() < 2 {
            return Err(AriaError::InvalidInput(format!("null model needs B ≥ 2 groups, got {}", groups.len())));
        }
        if let Some(g) = groups.iter().find(|g| g.len() != k) {
            return Err(AriaError::InvalidInput(format!("null group of size {} where K = {k}", g.len())));
        }
        let feature_index = channel_feature_list(fs, channels)?;
        let values: Vec<Vec<f64>> = groups
            .par_iter()
            .map(|g| feature_index.iter().map(|&d| group_similarity(g, d, fs)).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()?;
        let features: Vec<FeatureNull> = feature_index
            .iter()
            .enumerate()
            .map(|(f, &d)| {
                let (mean, std) = population_stats(values.iter().map(|v| v[f]));
                let spec = &fs.specs()[d];
                FeatureNull {
                    feature: spec.id.clone(),
                    channel: spec.channel.clone(),
                    mean,
                    std,
                    degenerate: std <= NULL_DEGENERATE_REL * mean.abs().max(f64::MIN_POSITIVE),
                }
            })
            .collect();
        for f in features.iter().filter(|f| f.degenerate) {
            log::warn!("feature `{}` has zero null spread at K = {k}; excluded from its channel", f.feature);
        }
        let channels: Vec<ChannelNull> = channels
            .iter()
            .map(|c| {
                let members: Vec<usize> = (0..features.len())
                    .filter(|&f| &features[f].channel == c && !features[f].degenerate)
                    .collect();
                if members.is_empty() {
                    return ChannelNull {
                        channel: c.clone(),
                        mean: 0.0,
                        std: 0.0,
                        features: Vec::new(),
                        degenerate: true,
                    };
                }
                let (mean, std) = population_stats(values.iter().map(|v| standardized_mean(v, &features, &members)));
                ChannelNull {
                    channel: c.clone(),
                    mean,
                    std,
                    features: members.iter().map(|&f| features[f].feature.clone()).collect(),
                    degenerate: std <= NULL_DEGENERATE_REL * mean.abs().max(1.0),
                }
            })
            .collect();
        Ok(NullModel {
            k,
            b: groups.len(),
            seed,
            pool_size: fs.usable_tracks().len(),
            feature_set: fs.fingerprint(),
            features,
            channels,
            feature_index,
        })
    }

    pub fn id(&self) -> NullModelId {
        NullModelId {
            k: self.k,
            b: self.b,
            seed: self.seed,
            feature_set: self.feature_set.clone(),
        }
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelNull> {
        self.channels.iter().find(|c| c.channel == name)
    }

    /// `g_d` for every modelled feature, in model order.
    fn group_values(&self, tracks: &[usize], fs: &FeatureSet) -> Result<Vec<f64>> {
        self.feature_index.iter().map(|&d| group_similarity(tracks, d, fs)).collect()
    }

    /// `z_c` from per-feature `g_d` values in model order.
    fn z_from_values(&self, channel: &str, values: &[f64]) -> Result<f64> {
        let c = self
            .channel(channel)
            .ok_or_else(|| AriaError::InvalidInput(format!("channel `{channel}` is not in the null model")))?;
        if c.degenerate {
            return Err(AriaError::Numeric(format!(
                "channel `{channel}` has a degenerate null at K = {}",
                self.k
            )));
        }
        let members: Vec<usize> = (0..self.features.len())
            .filter(|&f| self.features[f].channel == channel && !self.features[f].degenerate)
            .collect();
        Ok((standardized_mean(values, &self.features, &members) - c.mean) / c.std)
    }
}

/// Convenience wrapper over [`NullModel::build`].
pub fn build_null_model(fs: &FeatureSet, channels: &[String], k: usize, b: usize, seed: u64) -> Result<NullModel> {
    NullModel::build(fs, channels, k, b, seed)
}

fn channel_feature_list(fs: &FeatureSet, channels: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for c in channels {
        let feats = fs.channel_features(c);
        if feats.is_empty() {
            return Err(AriaError::InvalidInput(format!("channel `{c}` has no features")));
        }
        out.extend(feats);
    }
    Ok(out)
}

fn standardized_mean(values: &[f64], features: &[FeatureNull], members: &[usize]) -> f64 {
    members.iter().map(|&f| (values[f] - features[f].mean) / features[f].std).sum::<f64>() / members.len() as f64
}

/// Mean and population standard deviation, summed in iteration order.
fn population_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Channel z-score of one group against a null model of the same K.
pub fn channel_z(group: &TrackGroup, channel: &str, fs: &FeatureSet, null: &NullModel) -> Result<f64> {
    if group.tracks.len() != null.k || group.k != null.k {
        return Err(AriaError::InvalidInput(format!(
            "group has K = {} but the null model was built for K = {}",
            group.tracks.len(),
            null.k
        )));
    }
    null.z_from_values(channel, &null.group_values(&group.tracks, fs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean_z: f64,
    /// Fraction with `z > 0`.
    pub pos: f64,
    /// Fraction with `z > threshold`.
    pub sig: f64,
}

pub fn summarize(z: &[f64], threshold: f64) -> Result<Summary> {
    if z.is_empty() {
        return Err(AriaError::InvalidInput("cannot summarize an empty list of z-scores".into()));
    }
    let n = z.len() as f64;
    Ok(Summary {
        n: z.len(),
        mean_z: z.iter().sum::<f64>() / n,
        pos: z.iter().filter(|&&x| x > 0.0).count() as f64 / n,
        sig: z.iter().filter(|&&x| x > threshold).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratum {
    pub label: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strata {
    /// Sorted by label.
    pub strata: Vec<Stratum>,
    pub unlabeled: usize,
}

/// Per-label summaries of `(query_id, z)` pairs; unlabeled queries are counted.
pub fn stratify_summary(z: &[(String, f64)], labels: &QueryLabels, threshold: f64) -> Result<Strata> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut unlabeled = 0;
    for (q, value) in z {
        match labels.get(q) {
            Some(label) => groups.entry(label).or_default().push(*value),
            None => unlabeled += 1,
        }
    }
    if groups.is_empty() {
        return Err(AriaError::InvalidInput("no query carries a label".into()));
    }
    let strata = groups
        .into_iter()
        .map(|(label, values)| {
            Ok(Stratum {
                label: label.to_string(),
                summary: summarize(&values, threshold)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Strata { strata, unlabeled })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelResult {
    pub channel: String,
    /// `None` when the channel's null is degenerate.
    pub summary: Option<Summary>,
    /// One value per query, aligned with the report's query list.
    pub z: Vec<f64>,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Strata>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub k: usize,
    pub normalization: Option<NormalizationMode>,
    pub threshold: f64,
    pub null_model: NullModelId,
    pub queries: Vec<String>,
    /// Tracks skipped for missing features, summed over queries.
    pub skipped_missing: usize,
    pub channels: Vec<ChannelResult>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions<'a> {
    /// Query subset; all columns when `None`.
    pub queries: Option<&'a [String]>,
    pub threshold: Option<f64>,
    pub normalization: Option<NormalizationMode>,
    pub labels: Option<&'a QueryLabels>,
}

/// Homogeneity reports for every null model's K, over the chosen queries.
///
/// Each query's ranking is computed once; groups for increasing K are
/// prefixes of it, so pair sums are shared across K.
pub fn homogeneity_sweep(
    s_track: &ScoreMatrix,
    fs: &FeatureSet,
    channels: &[String],
    null_models: &[NullModel],
    opts: &SweepOptions<'_>,
) -> Result<Vec<HomogeneityReport>> {
    if null_models.is_empty() {
        return Err(AriaError::InvalidInput("homogeneity sweep needs at least one null model".into()));
    }
    let fingerprint = fs.fingerprint();
    for nm in null_models {
        if nm.feature_set != fingerprint {
            return Err(AriaError::InvalidInput(format!("null model for K = {} was built on a different feature set", nm.k)));
        }
        for c in channels {
            if nm.channel(c).is_none() {
                return Err(AriaError::InvalidInput(format!("null model for K = {} lacks channel `{c}`", nm.k)));
            }
        }
    }
    let mut models: Vec<&NullModel> = null_models.iter().collect();
    models.sort_by_key(|m| m.k);
    let ks: Vec<usize> = models.iter().map(|m| m.k).collect();
    if ks.windows(2).any(|w| w[0] == w[1]) {
        return Err(AriaError::InvalidInput("duplicate K among null models".into()));
    }
    let k_max = *ks.last().unwrap_or(&0);
    let features = models[0].feature_index.clone();
    if models.iter().any(|m| m.feature_index != features) {
        return Err(AriaError::InvalidInput("null models cover different feature lists".into()));
    }

    let queries: Vec<String> = match opts.queries {
        Some(q) => q.to_vec(),
        None => s_track.col_ids().to_vec(),
    };
    let cols: Vec<usize> = queries
        .iter()
        .map(|q| s_track.col_index(q).ok_or_else(|| AriaError::InvalidInput(format!("unknown query `{q}`"))))
        .collect::<Result<_>>()?;
    let rows = row_feature_index(s_track, fs)?;
    let usable: Vec<bool> = rows.iter().map(|&t| fs.is_usable(t)).collect();
    let threshold = opts.threshold.unwrap_or(SIG_THRESHOLD);

    // per query: (g values [K][feature], skipped per K)
    let per_query: Vec<(Vec<Vec<f64>>, Vec<usize>)> = cols
        .par_iter()
        .map(|&j| {
            let (picked, skipped) = ranked_usable(&s_track.column(j), s_track.row_ids(), &usable, k_max)?;
            let tracks: Vec<usize> = picked.iter().map(|&r| rows[r]).collect();
            let by_feature: Vec<Vec<f64>> = features
                .iter()
                .map(|&d| prefix_group_similarity(&tracks, d, fs, &ks))
                .collect();
            let by_k = (0..ks.len()).map(|ki| by_feature.iter().map(|v| v[ki]).collect()).collect();
            let skipped_k = ks.iter().map(|&k| skipped[k - 1]).collect();
            Ok((by_k, skipped_k))
        })
        .collect::<Result<_>>()?;

    models
        .iter()
        .enumerate()
        .map(|(ki, nm)| {
            let channel_results = channels
                .iter()
                .map(|c| {
                    let degenerate = nm.channel(c).is_some_and(|cn| cn.degenerate);
                    if degenerate {
                        return Ok(ChannelResult {
                            channel: c.clone(),
                            summary: None,
                            z: Vec::new(),
                            degenerate,
                            strata: None,
                        });
                    }
                    let z: Vec<f64> = per_query
                        .iter()
                        .map(|(g, _)| nm.z_from_values(c, &g[ki]))
                        .collect::<Result<_>>()?;
                    let strata = match opts.labels {
                        Some(labels) => {
                            let pairs: Vec<(String, f64)> = queries.iter().cloned().zip(z.iter().copied()).collect();
                            Some(stratify_summary(&pairs, labels, threshold)?)
                        }
                        None => None,
                    };
                    Ok(ChannelResult {
                        channel: c.clone(),
                        summary: Some(summarize(&z, threshold)?),
                        z,
                        degenerate,
                        strata,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HomogeneityReport {
                k: nm.k,
                normalization: opts.normalization,
                threshold,
                null_model: nm.id(),
                queries: queries.clone(),
                skipped_missing: per_query.iter().map(|(_, s)| s[ki]).sum(),
                channels: channel_results,
            })
        })
        .collect()
}

/// Null models for each K in `k_list`, built in parallel.
pub fn build_null_models(fs: &FeatureSet, channels: &[String], k_list: &[usize], b: usize, seed: u64) -> Result<Vec<NullModel>> {
    k_list.par_iter().map(|&k| NullModel::build(fs, channels, k, b, seed)).collect()
}
