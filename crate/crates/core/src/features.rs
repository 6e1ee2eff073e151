//! Per-track feature tables grouped into evidence channels.
//!
//! A feature set is loaded from a JSON manifest:
//!
//! ```json
//! {
//!   "tracks_path": "tracks.txt",
//!   "missing": ["t17"],
//!   "features": [
//!     {"id": "chroma", "channel": "harmonic", "kind": "standardized-euclidean",
//!      "dimension": 12, "group": "chroma", "path": "chroma.csv", "std_path": "chroma_std.csv"},
//!     {"id": "chords", "channel": "harmonic", "kind": "lcs-sequence", "path": "chords.txt"}
//!   ]
//! }
//! ```
//!
//! Vector features are CSV files with header `track_id,d0,…`; sequence
//! features hold one `track_id,i1 i2 …` line per track with integers 0–11.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AriaError, Result};
use crate::io::{atomic_write, csv_reader, write_json};

/// Largest allowed root-motion interval (mod 12).
pub const MAX_INTERVAL: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    StandardizedEuclidean,
    LcsSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub channel: String,
    pub kind: FeatureKind,
    /// Vector length; 0 for sequence features.
    pub dimension: usize,
    /// Feature group used by the multivariate alignment regression.
    pub group: String,
    /// Per-dimension population standard deviation over all tracks.
    pub std_vector: Vec<f64>,
}

impl FeatureSpec {
    pub fn vector(id: &str, channel: &str, dimension: usize, group: &str) -> Self {
        FeatureSpec {
            id: id.into(),
            channel: channel.into(),
            kind: FeatureKind::StandardizedEuclidean,
            dimension,
            group: group.into(),
            std_vector: Vec::new(),
        }
    }

    pub fn sequence(id: &str, channel: &str) -> Self {
        FeatureSpec {
            id: id.into(),
            channel: channel.into(),
            kind: FeatureKind::LcsSequence,
            dimension: 0,
            group: id.into(),
            std_vector: Vec::new(),
        }
    }

    /// Dimensions with zero spread across tracks.
    pub fn degenerate_dims(&self) -> Vec<usize> {
        self.std_vector
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Raw values for one feature, one entry per track (`None` = missing).
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureData {
    Vector(Vec<Option<Vec<f64>>>),
    Sequence(Vec<Option<Vec<u8>>>),
}

/// A borrowed feature value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureValue<'a> {
    Vector(&'a [f64]),
    Sequence(&'a [u8]),
}

#[derive(Debug, Clone)]
enum Column {
    Vector {
        dim: usize,
        raw: Vec<f64>,
        /// `raw / std` per dimension; zero-spread dimensions are zeroed.
        scaled: Vec<f64>,
    },
    Sequence(Vec<Vec<u8>>),
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    tracks: Vec<String>,
    index: HashMap<String, usize>,
    specs: Vec<FeatureSpec>,
    columns: Vec<Column>,
    present: Vec<Vec<bool>>,
    missing: BTreeSet<usize>,
    channels: Vec<String>,
}

impl FeatureSet {
    /// Validates raw feature data and fills in any empty `std_vector`.
    ///
    /// Every track must have a value for every feature unless it appears in
    /// `missing`; missing tracks never take part in null sampling or groups.
    pub fn new<I, S>(tracks: Vec<String>, mut specs: Vec<FeatureSpec>, data: Vec<FeatureData>, missing: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        crate::matrix::check_unique(&tracks, "track")?;
        let n = tracks.len();
        let index: HashMap<String, usize> = tracks.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut missing_set = BTreeSet::new();
        for id in missing {
            let id = id.as_ref();
            let t = *index
                .get(id)
                .ok_or_else(|| AriaError::InvalidInput(format!("missing-set track `{id}` is not in the track list")))?;
            missing_set.insert(t);
        }
        if specs.len() != data.len() {
            return Err(AriaError::DimensionMismatch(format!(
                "{} feature specs but {} data columns",
                specs.len(),
                data.len()
            )));
        }
        crate::matrix::check_unique(&specs.iter().map(|s| s.id.clone()).collect::<Vec<_>>(), "feature")?;

        let mut columns = Vec::with_capacity(specs.len());
        let mut present = Vec::with_capacity(specs.len());
        for (spec, data) in specs.iter_mut().zip(data) {
            if spec.channel.is_empty() {
                return Err(AriaError::InvalidInput(format!("feature `{}` has an empty channel", spec.id)));
            }
            let (column, mask) = build_column(spec, data, n)?;
            if let Some(t) = mask.iter().enumerate().find(|(t, &p)| !p && !missing_set.contains(t)).map(|(t, _)| t) {
                return Err(AriaError::InvalidInput(format!(
                    "feature `{}` has no value for track `{}` and the track is not in the missing set",
                    spec.id, tracks[t]
                )));
            }
            columns.push(column);
            present.push(mask);
        }

        let mut channels: Vec<String> = Vec::new();
        for spec in &specs {
            if !channels.contains(&spec.channel) {
                channels.push(spec.channel.clone());
            }
        }
        Ok(FeatureSet {
            tracks,
            index,
            specs,
            columns,
            present,
            missing: missing_set,
            channels,
        })
    }

    pub fn tracks(&self) -> &[String] {
        &self.tracks
    }

    pub fn num_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn track_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn feature_index(&self, id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.id == id)
    }

    /// Channel names in order of first declaration.
    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    /// Indices of the features belonging to `channel`, in declaration order.
    pub fn channel_features(&self, channel: &str) -> Vec<usize> {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.channel == channel)
            .map(|(i, _)| i)
            .collect()
    }

    /// Tracks eligible for groups and null sampling.
    pub fn is_usable(&self, track: usize) -> bool {
        !self.missing.contains(&track)
    }

    pub fn usable_tracks(&self) -> Vec<usize> {
        (0..self.tracks.len()).filter(|&t| self.is_usable(t)).collect()
    }

    pub fn missing_tracks(&self) -> impl Iterator<Item = &str> {
        self.missing.iter().map(|&t| self.tracks[t].as_str())
    }

    pub fn has_value(&self, feature: usize, track: usize) -> bool {
        self.present[feature][track]
    }

    pub fn value(&self, feature: usize, track: usize) -> Option<FeatureValue<'_>> {
        if !self.present[feature][track] {
            return None;
        }
        Some(match &self.columns[feature] {
            Column::Vector { dim, raw, .. } => FeatureValue::Vector(&raw[track * dim..(track + 1) * dim]),
            Column::Sequence(seqs) => FeatureValue::Sequence(&seqs[track]),
        })
    }

    /// Standardized vector (`raw / std`) for a vector feature.
    pub fn scaled(&self, feature: usize, track: usize) -> Option<&[f64]> {
        match &self.columns[feature] {
            Column::Vector { dim, scaled, .. } if self.present[feature][track] => {
                Some(&scaled[track * dim..(track + 1) * dim])
            }
            _ => None,
        }
    }

    /// `sim_d` between two tracks, using the set's standardization.
    ///
    /// Panics if either track lacks the feature.
    pub fn similarity(&self, feature: usize, a: usize, b: usize) -> f64 {
        match &self.columns[feature] {
            Column::Vector { dim, scaled, .. } => crate::similarity::scaled_vector_similarity(
                &scaled[a * dim..(a + 1) * dim],
                &scaled[b * dim..(b + 1) * dim],
            ),
            Column::Sequence(seqs) => crate::similarity::lcs_similarity(&seqs[a], &seqs[b]),
        }
    }

    /// Content fingerprint (SHA-256 over ids, specs and values).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tracks {
            h.update(t.as_bytes());
            h.update([0]);
        }
        for &m in &self.missing {
            h.update((m as u64).to_le_bytes());
        }
        for (spec, col) in self.specs.iter().zip(&self.columns) {
            h.update(serde_json::to_vec(spec).unwrap_or_default());
            match col {
                Column::Vector { raw, .. } => raw.iter().for_each(|x| h.update(x.to_le_bytes())),
                Column::Sequence(seqs) => seqs.iter().for_each(|s| {
                    h.update((s.len() as u64).to_le_bytes());
                    h.update(s);
                }),
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes the set as a manifest plus per-feature files under `dir`.
    pub fn write_manifest(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| AriaError::io(dir, e))?;
        atomic_write(&dir.join("tracks.txt"), |w| {
            writeln!(w, "track_id")?;
            self.tracks.iter().try_for_each(|t| writeln!(w, "{t}"))
        })?;
        let mut features = Vec::new();
        for (f, (spec, col)) in self.specs.iter().zip(&self.columns).enumerate() {
            let present = &self.present[f];
            let (path, std_path) = match col {
                Column::Vector { dim, raw, .. } => {
                    let path = format!("{}.csv", spec.id);
                    atomic_write(&dir.join(&path), |w| {
                        let header: Vec<String> = (0..*dim).map(|d| format!("d{d}")).collect();
                        writeln!(w, "track_id,{}", header.join(","))?;
                        for (t, id) in self.tracks.iter().enumerate().filter(|(t, _)| present[*t]) {
                            let vals: Vec<String> = raw[t * dim..(t + 1) * dim].iter().map(|x| format!("{x}")).collect();
                            writeln!(w, "{id},{}", vals.join(","))?;
                        }
                        Ok(())
                    })?;
                    let std_path = format!("{}_std.csv", spec.id);
                    atomic_write(&dir.join(&std_path), |w| {
                        let vals: Vec<String> = spec.std_vector.iter().map(|x| format!("{x}")).collect();
                        writeln!(w, "{}", vals.join(","))
                    })?;
                    (path, Some(std_path))
                }
                Column::Sequence(seqs) => {
                    let path = format!("{}.txt", spec.id);
                    atomic_write(&dir.join(&path), |w| {
                        for (t, id) in self.tracks.iter().enumerate().filter(|(t, _)| present[*t]) {
                            let vals: Vec<String> = seqs[t].iter().map(|x| x.to_string()).collect();
                            writeln!(w, "{id},{}", vals.join(" "))?;
                        }
                        Ok(())
                    })?;
                    (path, None)
                }
            };
            features.push(ManifestFeature {
                id: spec.id.clone(),
                channel: spec.channel.clone(),
                kind: spec.kind,
                dimension: spec.dimension,
                group: Some(spec.group.clone()),
                path,
                std_path,
            });
        }
        let manifest = FeatureManifest {
            features,
            tracks_path: "tracks.txt".into(),
            missing: self.missing_tracks().map(String::from).collect(),
        };
        let path = dir.join("manifest.json");
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

fn build_column(spec: &mut FeatureSpec, data: FeatureData, n: usize) -> Result<(Column, Vec<bool>)> {
    match (spec.kind, data) {
        (FeatureKind::StandardizedEuclidean, FeatureData::Vector(values)) => {
            let dim = spec.dimension;
            if dim == 0 {
                return Err(AriaError::InvalidInput(format!("vector feature `{}` needs dimension >= 1", spec.id)));
            }
            if values.len() != n {
                return Err(AriaError::DimensionMismatch(format!(
                    "feature `{}` has {} track entries, expected {n}",
                    spec.id,
                    values.len()
                )));
            }
            let mut raw = vec![0.0; n * dim];
            let mut mask = vec![false; n];
            for (t, v) in values.into_iter().enumerate() {
                if let Some(v) = v {
                    if v.len() != dim {
                        return Err(AriaError::DimensionMismatch(format!(
                            "feature `{}` declares dimension {dim}, track {t} has {}",
                            spec.id,
                            v.len()
                        )));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(AriaError::InvalidInput(format!("feature `{}` has a non-finite value at track {t}", spec.id)));
                    }
                    raw[t * dim..(t + 1) * dim].copy_from_slice(&v);
                    mask[t] = true;
                }
            }
            if spec.std_vector.is_empty() {
                spec.std_vector = population_std(&raw, dim, &mask);
            } else if spec.std_vector.len() != dim {
                return Err(AriaError::DimensionMismatch(format!(
                    "feature `{}` std vector has length {}, expected {dim}",
                    spec.id,
                    spec.std_vector.len()
                )));
            }
            if let Some(s) = spec.std_vector.iter().find(|s| !s.is_finite() || **s < 0.0) {
                return Err(AriaError::InvalidInput(format!("feature `{}` has invalid std entry {s}", spec.id)));
            }
            let degenerate = spec.degenerate_dims();
            if !degenerate.is_empty() {
                log::warn!("feature `{}`: zero-spread dimensions {:?} are ignored by similarities", spec.id, degenerate);
            }
            let scaled = raw
                .chunks_exact(dim)
                .flat_map(|row| {
                    row.iter()
                        .zip(&spec.std_vector)
                        .map(|(&x, &s)| if s > 0.0 { x / s } else { 0.0 })
                })
                .collect();
            Ok((Column::Vector { dim, raw, scaled }, mask))
        }
        (FeatureKind::LcsSequence, FeatureData::Sequence(values)) => {
            if values.len() != n {
                return Err(AriaError::DimensionMismatch(format!(
                    "feature `{}` has {} track entries, expected {n}",
                    spec.id,
                    values.len()
                )));
            }
            spec.dimension = 0;
            spec.std_vector.clear();
            let mut mask = vec![false; n];
            let mut seqs = Vec::with_capacity(n);
            for (t, v) in values.into_iter().enumerate() {
                match v {
                    Some(v) => {
                        if let Some(bad) = v.iter().find(|&&x| x > MAX_INTERVAL) {
                            return Err(AriaError::InvalidInput(format!(
                                "feature `{}` track {t}: interval {bad} outside 0..=11",
                                spec.id
                            )));
                        }
                        mask[t] = true;
                        seqs.push(v);
                    }
                    None => seqs.push(Vec::new()),
                }
            }
            Ok((Column::Sequence(seqs), mask))
        }
        (kind, _) => Err(AriaError::InvalidInput(format!(
            "feature `{}` is declared {kind:?} but its data has the other kind",
            spec.id
        ))),
    }
}

/// Population (divide-by-N) standard deviation per dimension over present rows.
fn population_std(raw: &[f64], dim: usize, mask: &[bool]) -> Vec<f64> {
    let count = mask.iter().filter(|&&p| p).count();
    if count == 0 {
        return vec![0.0; dim];
    }
    let rows = || raw.chunks_exact(dim).zip(mask).filter(|(_, &p)| p).map(|(r, _)| r);
    let mut mean = vec![0.0; dim];
    for r in rows() {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; dim];
    for r in rows() {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.into_iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / count as f64).sqrt();
            // Treat rounding noise around a constant column as exact zero.
            if s <= 1e-12 * m.abs() {
                0.0
            } else {
                s
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureManifest {
    pub features: Vec<ManifestFeature>,
    pub tracks_path: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFeature {
    pub id: String,
    pub channel: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub dimension: usize,
    #[serde(default)]
    pub group: Option<String>,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_path: Option<String>,
}

pub fn load_feature_set(manifest_path: impl AsRef<Path>) -> Result<FeatureSet> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| AriaError::io(manifest_path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: FeatureManifest = serde_path_to_error::deserialize(de).map_err(|e| AriaError::Config {
        path: e.path().to_string(),
        message: format!("{}: {}", manifest_path.display(), e.inner()),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let tracks = read_track_list(&base.join(&manifest.tracks_path))?;
    let index: HashMap<&str, usize> = tracks.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let declared: BTreeSet<usize> = manifest.missing.iter().filter_map(|m| index.get(m.as_str()).copied()).collect();
    let mut specs = Vec::new();
    let mut data = Vec::new();
    for mf in &manifest.features {
        let path = base.join(&mf.path);
        let mut spec = FeatureSpec {
            id: mf.id.clone(),
            channel: mf.channel.clone(),
            kind: mf.kind,
            dimension: mf.dimension,
            group: mf.group.clone().unwrap_or_else(|| mf.id.clone()),
            std_vector: Vec::new(),
        };
        let column = match mf.kind {
            FeatureKind::StandardizedEuclidean => {
                if let Some(sp) = &mf.std_path {
                    spec.std_vector = read_number_list(&base.join(sp))?;
                }
                FeatureData::Vector(read_vector_file(&path, &mf.id, mf.dimension, &tracks, &index, &declared)?)
            }
            FeatureKind::LcsSequence => FeatureData::Sequence(read_sequence_file(&path, &mf.id, &tracks, &index, &declared)?),
        };
        specs.push(spec);
        data.push(column);
    }
    FeatureSet::new(tracks, specs, data, &manifest.missing)
}

fn read_track_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| AriaError::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(i, l)| !l.is_empty() && !(*i == 0 && *l == "track_id"))
        .map(|(_, l)| l.to_string())
        .collect())
}

fn read_number_list(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| AriaError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split([',', ' ', '\t']).map(str::trim).filter(|t| !t.is_empty()).collect();
        if i == 0 && tokens.first().is_some_and(|t| t.parse::<f64>().is_err()) {
            continue;
        }
        for t in tokens {
            out.push(
                t.parse()
                    .map_err(|_| AriaError::parse(path.display(), format!("bad number `{t}`")))?,
            );
        }
    }
    Ok(out)
}

/// Reports ids present in the file but not in the track list, and vice versa.
fn id_mismatch(what: &str, tracks: &[String], seen: &[bool], extra: Vec<String>, declared: &BTreeSet<usize>) -> Result<()> {
    let missing: Vec<String> = tracks
        .iter()
        .enumerate()
        .filter(|(t, _)| !seen[*t] && !declared.contains(t))
        .map(|(_, id)| id.clone())
        .collect();
    if extra.is_empty() && missing.is_empty() {
        Ok(())
    } else {
        Err(AriaError::IdMismatch {
            what: what.to_string(),
            missing,
            extra,
        })
    }
}

fn read_vector_file(
    path: &Path,
    id: &str,
    dim: usize,
    tracks: &[String],
    index: &HashMap<&str, usize>,
    declared: &BTreeSet<usize>,
) -> Result<Vec<Option<Vec<f64>>>> {
    let name = path.display().to_string();
    let mut out = vec![None; tracks.len()];
    let mut seen = vec![false; tracks.len()];
    let mut extra = Vec::new();
    for (line, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| AriaError::parse(&name, e.to_string()))?;
        if line == 0 && rec.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            if rec.len() != dim + 1 {
                return Err(AriaError::DimensionMismatch(format!(
                    "{name}: header has {} value columns, manifest declares {dim}",
                    rec.len().saturating_sub(1)
                )));
            }
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(AriaError::DimensionMismatch(format!(
                "{name}: line {line} has {} values, manifest declares {dim}",
                rec.len().saturating_sub(1)
            )));
        }
        let track = &rec[0];
        let Some(&t) = index.get(track) else {
            extra.push(track.to_string());
            continue;
        };
        if seen[t] {
            return Err(AriaError::DuplicateId {
                kind: "feature row",
                id: track.to_string(),
            });
        }
        seen[t] = true;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| AriaError::parse(&name, format!("line {line}: bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        out[t] = Some(values);
    }
    id_mismatch(&format!("feature `{id}`"), tracks, &seen, extra, declared)?;
    Ok(out)
}

fn read_sequence_file(
    path: &Path,
    id: &str,
    tracks: &[String],
    index: &HashMap<&str, usize>,
    declared: &BTreeSet<usize>,
) -> Result<Vec<Option<Vec<u8>>>> {
    let name = path.display().to_string();
    let mut out = vec![None; tracks.len()];
    let mut seen = vec![false; tracks.len()];
    let mut extra = Vec::new();
    for (line, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| AriaError::parse(&name, e.to_string()))?;
        if line == 0 && rec.get(0) == Some("track_id") {
            continue;
        }
        if rec.is_empty() || rec.len() > 2 {
            return Err(AriaError::parse(&name, format!("line {line}: expected `track_id,i1 i2 …`")));
        }
        let track = &rec[0];
        let Some(&t) = index.get(track) else {
            extra.push(track.to_string());
            continue;
        };
        if seen[t] {
            return Err(AriaError::DuplicateId {
                kind: "feature row",
                id: track.to_string(),
            });
        }
        seen[t] = true;
        let seq = rec
            .get(1)
            .unwrap_or("")
            .split_whitespace()
            .map(|tok| {
                tok.parse::<u8>()
                    .ok()
                    .filter(|&x| x <= MAX_INTERVAL)
                    .ok_or_else(|| AriaError::parse(&name, format!("line {line}: `{tok}` is not an interval in 0..=11")))
            })
            .collect::<Result<Vec<_>>>()?;
        out[t] = Some(seq);
    }
    id_mismatch(&format!("feature `{id}`"), tracks, &seen, extra, declared)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn computes_population_std() {
        let fs = FeatureSet::new(
            ids(3),
            vec![FeatureSpec::vector("f", "c", 2, "f")],
            vec![FeatureData::Vector(vec![
                Some(vec![1.0, 5.0]),
                Some(vec![2.0, 5.0]),
                Some(vec![3.0, 5.0]),
            ])],
            Vec::<String>::new(),
        )
        .unwrap();
        let spec = &fs.specs()[0];
        assert!((spec.std_vector[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(spec.std_vector[1], 0.0);
        assert_eq!(spec.degenerate_dims(), vec![1]);
    }

    #[test]
    fn missing_value_requires_missing_set() {
        let specs = vec![FeatureSpec::vector("f", "c", 1, "f")];
        let data = || vec![FeatureData::Vector(vec![Some(vec![1.0]), None])];
        assert!(FeatureSet::new(ids(2), specs.clone(), data(), Vec::<String>::new()).is_err());
        let fs = FeatureSet::new(ids(2), specs, data(), ["t1"]).unwrap();
        assert_eq!(fs.usable_tracks(), vec![0]);
    }

    #[test]
    fn rejects_bad_dimension_interval_and_negative_std() {
        let err = FeatureSet::new(
            ids(1),
            vec![FeatureSpec::vector("f", "c", 2, "f")],
            vec![FeatureData::Vector(vec![Some(vec![1.0])])],
            Vec::<String>::new(),
        );
        assert!(matches!(err, Err(AriaError::DimensionMismatch(_))));

        let err = FeatureSet::new(
            ids(1),
            vec![FeatureSpec::sequence("s", "c")],
            vec![FeatureData::Sequence(vec![Some(vec![3, 12])])],
            Vec::<String>::new(),
        );
        assert!(err.is_err());

        let mut spec = FeatureSpec::vector("f", "c", 1, "f");
        spec.std_vector = vec![-1.0];
        let err = FeatureSet::new(ids(1), vec![spec], vec![FeatureData::Vector(vec![Some(vec![1.0])])], Vec::<String>::new());
        assert!(err.is_err());
    }

    #[test]
    fn manifest_round_trip_and_id_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let chroma: Vec<Option<Vec<f64>>> = (0..3).map(|t| Some((0..12).map(|d| (t * 12 + d) as f64 * 0.5).collect())).collect();
        let fs = FeatureSet::new(
            ids(3),
            vec![FeatureSpec::vector("chroma", "harmonic", 12, "chroma"), FeatureSpec::sequence("chords", "harmonic")],
            vec![
                FeatureData::Vector(chroma),
                FeatureData::Sequence(vec![Some(vec![2, 5, 7]), Some(vec![]), Some(vec![11])]),
            ],
            Vec::<String>::new(),
        )
        .unwrap();
        let manifest = fs.write_manifest(dir.path()).unwrap();
        let back = load_feature_set(&manifest).unwrap();
        assert_eq!(back.specs()[0].std_vector.len(), 12);
        assert_eq!(back.fingerprint(), fs.fingerprint());
        assert_eq!(back.value(1, 0), Some(FeatureValue::Sequence(&[2, 5, 7])));

        std::fs::write(dir.path().join("chroma.csv"), {
            let mut s = String::from("track_id");
            (0..12).for_each(|d| s.push_str(&format!(",d{d}")));
            s.push('\n');
            for t in ["t0", "t1", "zz"] {
                s.push_str(t);
                (0..12).for_each(|_| s.push_str(",1"));
                s.push('\n');
            }
            s
        })
        .unwrap();
        let err = load_feature_set(&manifest).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("zz") && msg.contains("t2"), "{msg}");
    }
}
