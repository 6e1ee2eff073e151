//! Config-driven runs over (method, stage) settings.
//!
//! A run reads one JSON config, executes the requested stages for every
//! setting and writes `<out>/<method>__<stage>/report.json` per setting plus
//! combined CSVs (`reliability.csv`, `homogeneity.csv`, `alignment.csv`,
//! `residual_sweep.csv`, `strata.csv`) and `run.json` at the top level.
//! Relative paths in the config resolve against the config's directory.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{alignment_report, AlignmentReport};
use crate::error::{AriaError, Result};
use crate::features::{load_feature_set, FeatureSet};
use crate::homogeneity::{
    build_null_models, HomogeneityReport, NullModel, SweepOptions, DEFAULT_B, DEFAULT_K_LIST,
    SIG_THRESHOLD,
};
use crate::io::{atomic_write, load_score_matrix, write_json, MatrixFormat, QueryLabels, SegmentMap};
use crate::linalg::{SvdMethod, SvdOptions};
use crate::matrix::Precision;
use crate::normalize::{aggregate_to_tracks, default_mode_for_method, normalize_per_query, NormalizationMode};
use crate::reliability::{diagnose, DiagnoseConfig, ReliabilityReport, DEFAULT_KAPPA_MAX_QUERIES};
use crate::residual::{homogeneity_of_segments, rank1_residual, write_rank1_residual, PairedRow, SweepInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Diagnose,
    Homogeneity,
    Align,
    ResidualSweep,
    Stratify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub method: String,
    pub stage: String,
    pub matrix: PathBuf,
    #[serde(default)]
    pub format: Option<MatrixFormat>,
    #[serde(default)]
    pub segment_map: Option<PathBuf>,
    #[serde(default)]
    pub normalize: Option<NormalizationMode>,
    /// Overrides the run-level stage list.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Default segment map; without one every row is its own track.
    #[serde(default)]
    pub segment_map: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Channels to analyse; all feature-set channels when absent.
    #[serde(default)]
    pub channels: Option<Vec<String>>,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_kappa_max_queries")]
    pub kappa_max_queries: usize,
    #[serde(default = "default_svd_k")]
    pub svd_k: usize,
    #[serde(default = "default_svd_method")]
    pub svd_method: SvdMethod,
    /// Write each setting's rank-1 residual as `residual.asm1`.
    #[serde(default = "default_true")]
    pub materialize_residual: bool,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    pub settings: Vec<Setting>,
}

fn default_seed() -> u64 {
    7
}
fn default_k_list() -> Vec<usize> {
    DEFAULT_K_LIST.to_vec()
}
fn default_b() -> usize {
    DEFAULT_B
}
fn default_threshold() -> f64 {
    SIG_THRESHOLD
}
fn default_kappa_max_queries() -> usize {
    DEFAULT_KAPPA_MAX_QUERIES
}
fn default_svd_k() -> usize {
    8
}
fn default_svd_method() -> SvdMethod {
    SvdMethod::Auto
}
fn default_true() -> bool {
    true
}
fn default_stages() -> Vec<Stage> {
    vec![Stage::Diagnose]
}

impl RunConfig {
    /// Parses and validates a config file; schema errors name the field path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AriaError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| AriaError::Config {
            path: path.display().to_string(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let err = |message: String| {
            Err(AriaError::Config {
                path: path.display().to_string(),
                message,
            })
        };
        if self.settings.is_empty() {
            return err("`settings` is empty".into());
        }
        let mut names = BTreeSet::new();
        for (i, s) in self.settings.iter().enumerate() {
            if !names.insert(setting_dir_name(s)) {
                return err(format!("settings[{i}]: duplicate (method, stage) `{}`/`{}`", s.method, s.stage));
            }
            let stages = s.stages.as_deref().unwrap_or(&self.stages);
            if stages.is_empty() {
                return err(format!("settings[{i}]: no stages to run"));
            }
            let needs_features = stages
                .iter()
                .any(|st| matches!(st, Stage::Homogeneity | Stage::Align | Stage::ResidualSweep | Stage::Stratify));
            if needs_features && self.features.is_none() {
                return err(format!("settings[{i}]: stages {stages:?} need `features`"));
            }
            if stages.contains(&Stage::Stratify) {
                if self.labels.is_none() {
                    return err(format!("settings[{i}]: stage `stratify` needs `labels`"));
                }
                if !stages.contains(&Stage::Homogeneity) {
                    return err(format!("settings[{i}]: stage `stratify` needs stage `homogeneity`"));
                }
            }
            if s.normalize.is_none() && default_mode_for_method(&s.method).is_none() {
                return err(format!(
                    "settings[{i}]: no default normalization for method `{}`; set `normalize`",
                    s.method
                ));
            }
        }
        if self.k_list.is_empty() || self.k_list.iter().any(|&k| k < 2) {
            return err("`k_list` must be non-empty with every K ≥ 2".into());
        }
        if self.b < 2 {
            return err("`b` must be at least 2".into());
        }
        Ok(())
    }

    /// SHA-256 of the parsed config in canonical serialized form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).unwrap_or_default()))
    }
}

fn setting_dir_name(s: &Setting) -> String {
    let clean = |x: &str| -> String {
        x.chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect()
    };
    format!("{}__{}", clean(&s.method), clean(&s.stage))
}

/// Modelling conventions recorded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub std: &'static str,
    pub rank_ties: &'static str,
    pub rank_scale: &'static str,
    pub null_std: &'static str,
    pub lcs_empty: &'static str,
    pub sig_comparison: &'static str,
    pub alignment_sequences: &'static str,
}

pub const CONVENTIONS: Conventions = Conventions {
    std: "population",
    rank_ties: "average",
    rank_scale: "(rank-1)/(M-1), ascending in score",
    null_std: "population",
    lcs_empty: "both empty = 1, one empty = 0",
    sig_comparison: "strict z > threshold",
    alignment_sequences: "excluded",
};

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSweepReport {
    pub sigma1: f64,
    pub svd_method: SvdMethod,
    pub residual_path: Option<String>,
    pub rows: Vec<PairedRow>,
    pub residual: Vec<HomogeneityReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingReport {
    pub config_hash: String,
    pub method: String,
    pub stage: String,
    pub matrix: String,
    pub rows: usize,
    pub cols: usize,
    pub precision: Precision,
    pub normalization: NormalizationMode,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub conventions: Conventions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homogeneity: Option<Vec<HomogeneityReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_sweep: Option<ResidualSweepReport>,
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    config_hash: String,
    config: &'a RunConfig,
    settings: Vec<String>,
}

struct Shared {
    features: Option<FeatureSet>,
    channels: Vec<String>,
    null_models: Vec<NullModel>,
    labels: Option<QueryLabels>,
    default_map: Option<SegmentMap>,
}

/// Executes `config_path`, writing into `out` (or the config's
/// `output_dir`). Returns the run directory.
pub fn run_config(config_path: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let cfg = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let out_dir = match (out, &cfg.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => resolve(o),
        (None, None) => {
            return Err(AriaError::Config {
                path: config_path.display().to_string(),
                message: "no output directory: set `output_dir` or pass one explicitly".into(),
            })
        }
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| AriaError::io(&out_dir, e))?;
    let hash = cfg.hash();

    let all_stages: BTreeSet<Stage> = cfg
        .settings
        .iter()
        .flat_map(|s| s.stages.clone().unwrap_or_else(|| cfg.stages.clone()))
        .collect();
    let features = cfg.features.as_deref().map(|p| load_feature_set(resolve(p))).transpose()?;
    let channels = match (&cfg.channels, &features) {
        (Some(c), Some(fs)) => {
            if let Some(bad) = c.iter().find(|c| !fs.channels().contains(c)) {
                return Err(AriaError::Config {
                    path: config_path.display().to_string(),
                    message: format!("channel `{bad}` is not in the feature set"),
                });
            }
            c.clone()
        }
        (None, Some(fs)) => fs.channels().to_vec(),
        _ => Vec::new(),
    };
    let needs_null = all_stages.contains(&Stage::Homogeneity) || all_stages.contains(&Stage::ResidualSweep);
    let null_models = match (&features, needs_null) {
        (Some(fs), true) => {
            log::info!("building null models for K = {:?} (B = {})", cfg.k_list, cfg.b);
            build_null_models(fs, &channels, &cfg.k_list, cfg.b, cfg.seed)?
        }
        _ => Vec::new(),
    };
    let labels = cfg.labels.as_deref().map(|p| QueryLabels::load(resolve(p))).transpose()?;
    let default_map = cfg.segment_map.as_deref().map(|p| SegmentMap::load(resolve(p))).transpose()?;
    let shared = Shared {
        features,
        channels,
        null_models,
        labels,
        default_map,
    };

    let reports: Vec<SettingReport> = cfg
        .settings
        .par_iter()
        .map(|s| run_setting(&cfg, &hash, s, &shared, &resolve, &out_dir))
        .collect::<Result<_>>()?;

    for (s, rep) in cfg.settings.iter().zip(&reports) {
        write_json(&out_dir.join(setting_dir_name(s)).join("report.json"), rep)?;
    }
    write_combined_csvs(&out_dir, &reports)?;
    write_json(
        &out_dir.join("run.json"),
        &RunSummary {
            config_hash: hash,
            config: &cfg,
            settings: cfg.settings.iter().map(setting_dir_name).collect(),
        },
    )?;
    Ok(out_dir)
}

fn run_setting(
    cfg: &RunConfig,
    hash: &str,
    setting: &Setting,
    shared: &Shared,
    resolve: &(dyn Fn(&Path) -> PathBuf + Sync),
    out_dir: &Path,
) -> Result<SettingReport> {
    let stages = setting.stages.clone().unwrap_or_else(|| cfg.stages.clone());
    let has = |st: Stage| stages.contains(&st);
    let path = resolve(&setting.matrix);
    let format = setting.format.unwrap_or_else(|| MatrixFormat::from_path(&path));
    log::info!("[{}/{}] loading {}", setting.method, setting.stage, path.display());
    let s = load_score_matrix(&path, format)?;
    let mode = setting
        .normalize
        .or_else(|| default_mode_for_method(&setting.method))
        .unwrap_or(NormalizationMode::None);
    let svd = SvdOptions {
        k: cfg.svd_k,
        method: cfg.svd_method,
        seed: cfg.seed,
        ..SvdOptions::default()
    };

    let reliability = if has(Stage::Diagnose) {
        Some(diagnose(
            &s,
            &DiagnoseConfig {
                kappa_max_queries: cfg.kappa_max_queries,
                svd: svd.clone(),
                seed: cfg.seed,
            },
        )?)
    } else {
        None
    };

    let needs_tracks = has(Stage::Homogeneity) || has(Stage::Align) || has(Stage::ResidualSweep);
    let own_map = setting.segment_map.as_deref().map(|p| SegmentMap::load(resolve(p))).transpose()?;
    let map = match (own_map, &shared.default_map, needs_tracks) {
        (Some(m), _, _) => Some(m),
        (None, Some(m), _) => Some(m.clone()),
        (None, None, true) => Some(SegmentMap::identity(s.row_ids())?),
        _ => None,
    };

    let mut homogeneity = None;
    let mut alignment = None;
    let mut residual_sweep = None;
    if let (Some(fs), Some(map)) = (&shared.features, &map) {
        let labels = if has(Stage::Stratify) { shared.labels.as_ref() } else { None };
        if let Some(l) = labels {
            l.validate_against(s.col_ids())?;
        }
        let inputs = SweepInputs {
            segment_map: map,
            mode,
            features: fs,
            channels: &shared.channels,
            null_models: &shared.null_models,
            sweep: SweepOptions {
                threshold: Some(cfg.threshold),
                labels,
                ..SweepOptions::default()
            },
            svd: svd.clone(),
        };
        if has(Stage::Homogeneity) || has(Stage::ResidualSweep) {
            homogeneity = Some(homogeneity_of_segments(&s, &inputs)?);
        }
        if has(Stage::Align) {
            let track = aggregate_to_tracks(&normalize_per_query(&s, mode)?.matrix, map)?;
            alignment = Some(alignment_report(&track, fs, &shared.channels, &svd)?);
        }
        if has(Stage::ResidualSweep) {
            let (r, factor) = rank1_residual(&s, &svd)?;
            let residual_path = if cfg.materialize_residual {
                let p = out_dir.join(setting_dir_name(setting)).join("residual.asm1");
                write_rank1_residual(&s, &factor, &p)?;
                Some(format!("{}/residual.asm1", setting_dir_name(setting)))
            } else {
                None
            };
            let residual_inputs = SweepInputs {
                sweep: SweepOptions {
                    labels: None,
                    ..inputs.sweep.clone()
                },
                ..inputs
            };
            let residual = homogeneity_of_segments(&r, &residual_inputs)?;
            let original = homogeneity.as_ref().expect("computed above");
            let paired = crate::residual::PairedSweep {
                sigma1: factor.sigma1,
                svd_method: factor.method,
                residual_precision: r.precision(),
                original: original.clone(),
                residual,
            };
            residual_sweep = Some(ResidualSweepReport {
                sigma1: paired.sigma1,
                svd_method: paired.svd_method,
                residual_path,
                rows: paired.rows(),
                residual: paired.residual,
            });
        }
        if !has(Stage::Homogeneity) {
            homogeneity = None;
        }
    }

    Ok(SettingReport {
        config_hash: hash.to_string(),
        method: setting.method.clone(),
        stage: setting.stage.clone(),
        matrix: setting.matrix.display().to_string(),
        rows: s.nrows(),
        cols: s.ncols(),
        precision: s.precision(),
        normalization: mode,
        seed: cfg.seed,
        stages,
        conventions: CONVENTIONS,
        reliability,
        homogeneity,
        alignment,
        residual_sweep,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_combined_csvs(out: &Path, reports: &[SettingReport]) -> Result<()> {
    atomic_write(&out.join("reliability.csv"), |w| {
        writeln!(
            w,
            "method,stage,normalization,rows,cols,precision,kappa,kappa_query_subsample,r1,r_trailing,p,degenerate_columns,svd_method"
        )?;
        for r in reports {
            if let Some(rel) = &r.reliability {
                let sub = serde_json::to_value(rel.kappa_query_subsample).unwrap_or_default();
                let sub = sub.as_str().map(str::to_string).unwrap_or_else(|| sub.to_string());
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&r.method),
                    csv_field(&r.stage),
                    r.normalization,
                    rel.rows,
                    rel.cols,
                    rel.precision,
                    fmt_opt(rel.kappa),
                    sub,
                    rel.r1,
                    rel.r_trailing,
                    rel.p,
                    rel.degenerate_columns,
                    rel.svd.method
                )?;
            }
        }
        Ok(())
    })?;
    atomic_write(&out.join("homogeneity.csv"), |w| {
        writeln!(w, "method,stage,channel,k,mean_z,pos,sig,n")?;
        for r in reports {
            for h in r.homogeneity.iter().flatten() {
                for c in &h.channels {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        csv_field(&r.method),
                        csv_field(&r.stage),
                        csv_field(&c.channel),
                        h.k,
                        fmt_opt(c.summary.map(|s| s.mean_z)),
                        fmt_opt(c.summary.map(|s| s.pos)),
                        fmt_opt(c.summary.map(|s| s.sig)),
                        c.summary.map(|s| s.n).unwrap_or(0)
                    )?;
                }
            }
        }
        Ok(())
    })?;
    atomic_write(&out.join("strata.csv"), |w| {
        writeln!(w, "method,stage,channel,k,label,n,mean_z,pos,sig")?;
        for r in reports {
            for h in r.homogeneity.iter().flatten() {
                for c in &h.channels {
                    for st in c.strata.iter().flat_map(|s| &s.strata) {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{},{}",
                            csv_field(&r.method),
                            csv_field(&r.stage),
                            csv_field(&c.channel),
                            h.k,
                            csv_field(&st.label),
                            st.summary.n,
                            st.summary.mean_z,
                            st.summary.pos,
                            st.summary.sig
                        )?;
                    }
                }
            }
        }
        Ok(())
    })?;
    atomic_write(&out.join("residual_sweep.csv"), |w| {
        writeln!(
            w,
            "method,stage,channel,k,original_mean_z,original_pos,original_sig,residual_mean_z,residual_pos,residual_sig"
        )?;
        for r in reports {
            for row in r.residual_sweep.iter().flat_map(|rs| &rs.rows) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&r.method),
                    csv_field(&r.stage),
                    csv_field(&row.channel),
                    row.k,
                    fmt_opt(row.original_mean_z),
                    fmt_opt(row.original_pos),
                    fmt_opt(row.original_sig),
                    fmt_opt(row.residual_mean_z),
                    fmt_opt(row.residual_pos),
                    fmt_opt(row.residual_sig)
                )?;
            }
        }
        Ok(())
    })?;
    atomic_write(&out.join("alignment.csv"), |w| {
        writeln!(w, "method,stage,channel,alpha_max,alpha_max_feature,alpha_max_dim,alpha_reg,alpha_reg_group")?;
        for r in reports {
            for c in r.alignment.iter().flat_map(|a| &a.channels) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    csv_field(&r.method),
                    csv_field(&r.stage),
                    csv_field(&c.channel),
                    fmt_opt(c.alpha_max),
                    csv_field(c.alpha_max_feature.as_deref().unwrap_or("")),
                    c.alpha_max_dim.map(|d| d.to_string()).unwrap_or_default(),
                    fmt_opt(c.alpha_reg),
                    csv_field(c.alpha_reg_group.as_deref().unwrap_or(""))
                )?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

/// Plot-ready per-(K, channel) summaries of one sweep.
pub fn write_homogeneity_csv(path: &Path, reports: &[HomogeneityReport]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "channel,k,mean_z,pos,sig,n")?;
        for h in reports {
            for c in &h.channels {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    csv_field(&c.channel),
                    h.k,
                    fmt_opt(c.summary.map(|s| s.mean_z)),
                    fmt_opt(c.summary.map(|s| s.pos)),
                    fmt_opt(c.summary.map(|s| s.sig)),
                    c.summary.map(|s| s.n).unwrap_or(0)
                )?;
            }
        }
        Ok(())
    })
}

/// Paired original/residual curves, one row per (K, channel).
pub fn write_paired_csv(path: &Path, rows: &[PairedRow]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(
            w,
            "channel,k,original_mean_z,original_pos,original_sig,residual_mean_z,residual_pos,residual_sig"
        )?;
        for row in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                csv_field(&row.channel),
                row.k,
                fmt_opt(row.original_mean_z),
                fmt_opt(row.original_pos),
                fmt_opt(row.original_sig),
                fmt_opt(row.residual_mean_z),
                fmt_opt(row.residual_pos),
                fmt_opt(row.residual_sig)
            )?;
        }
        Ok(())
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"settings":[{"method":"TRAK","stage":"s1","matrix":"m.csv","normalise":"rank"}]}"#).unwrap();
        let err = RunConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("settings[0]"), "{err}");
        std::fs::write(&p, r#"{"b":"many","settings":[]}"#).unwrap();
        let err = RunConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("b"), "{err}");
    }

    #[test]
    fn stage_dependencies_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"stages":["homogeneity"],"settings":[{"method":"TRAK","stage":"s1","matrix":"m.csv"}]}"#).unwrap();
        assert!(RunConfig::load(&p).unwrap_err().to_string().contains("features"));
        std::fs::write(&p, r#"{"settings":[{"method":"Mystery","stage":"s1","matrix":"m.csv"}]}"#).unwrap();
        assert!(RunConfig::load(&p).unwrap_err().to_string().contains("normalize"));
    }

    #[test]
    fn setting_names_are_path_safe() {
        let s = Setting {
            method: "Grad-Cos".into(),
            stage: "stage 1/a".into(),
            matrix: "m".into(),
            format: None,
            segment_map: None,
            normalize: None,
            stages: None,
        };
        assert_eq!(setting_dir_name(&s), "Grad-Cos__stage_1_a");
    }
}
