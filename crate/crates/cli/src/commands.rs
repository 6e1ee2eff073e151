use std::path::Path;

use aria_core::bench::{default_layout, write_simulation, PlantedSpec};
use aria_core::embedding::{cosine_embedding_scores, EmbeddingTable};
use aria_core::features::{load_feature_set, FeatureSet};
use aria_core::homogeneity::{build_null_models, SweepOptions};
use aria_core::io::{load_score_matrix, write_json, write_score_matrix, MatrixFormat, QueryLabels, SegmentMap};
use aria_core::linalg::{SvdMethod, SvdOptions};
use aria_core::normalize::{default_mode_for_method, NormalizationMode};
use aria_core::pipeline::{run_config, write_homogeneity_csv, write_paired_csv};
use aria_core::reliability::{diagnose, DiagnoseConfig};
use aria_core::residual::{
    homogeneity_of_segments, leading_triplet, rank1_residual, residual_homogeneity_sweep, write_rank1_residual,
    SweepInputs,
};
use aria_core::{AriaError, Result, ScoreMatrix};
use serde_json::json;

use crate::{
    AlignArgs, Command, DiagnoseArgs, GroupArgs, MatrixArgs, ResidualArgs, ResidualSweepArgs, RunArgs,
    ScoreEmbeddingsArgs, SimulateArgs, SvdArgs,
};

pub(crate) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Homogeneity(a) => cmd_homogeneity(&a.group),
        Command::Align(a) => cmd_align(&a),
        Command::Residual(a) => cmd_residual(&a),
        Command::ResidualSweep(a) => cmd_residual_sweep(&a),
        Command::ScoreEmbeddings(a) => cmd_score_embeddings(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Run(a) => cmd_run(&a),
    }
}

fn load(m: &MatrixArgs) -> Result<ScoreMatrix> {
    let format = m.format.unwrap_or_else(|| MatrixFormat::from_path(&m.matrix));
    let s = load_score_matrix(&m.matrix, format)?;
    log::info!("loaded {} ({} x {}, {})", m.matrix.display(), s.nrows(), s.ncols(), s.precision());
    Ok(s)
}

fn svd_options(a: &SvdArgs) -> SvdOptions {
    SvdOptions {
        k: a.svd_k,
        method: if a.exact_svd { SvdMethod::Exact } else { a.svd_method },
        seed: a.seed,
        ..SvdOptions::default()
    }
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            log::info!("wrote {}", p.display());
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn channels_of(fs: &FeatureSet, requested: Option<&[String]>) -> Result<Vec<String>> {
    match requested {
        None => Ok(fs.channels().to_vec()),
        Some(c) => {
            if let Some(bad) = c.iter().find(|c| !fs.channels().contains(c)) {
                return Err(AriaError::InvalidInput(format!(
                    "channel `{bad}` is not in the feature set (have {})",
                    fs.channels().join(", ")
                )));
            }
            Ok(c.to_vec())
        }
    }
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let s = load(&a.matrix)?;
    let report = diagnose(
        &s,
        &DiagnoseConfig {
            kappa_max_queries: a.kappa_max_queries,
            svd: svd_options(&a.svd),
            seed: a.svd.seed,
        },
    )?;
    log::info!(
        "kappa = {}, r1 = {:.4}, p = {:.4}",
        report.kappa.map_or("n/a".into(), |k| format!("{k:.4}")),
        report.r1,
        report.p
    );
    emit(
        a.out.as_deref(),
        &json!({ "matrix": a.matrix.matrix.display().to_string(), "reliability": report }),
    )
}

/// Everything a homogeneity-style command needs, loaded from flags.
struct GroupContext {
    s: ScoreMatrix,
    map: SegmentMap,
    fs: FeatureSet,
    channels: Vec<String>,
    mode: NormalizationMode,
    labels: Option<QueryLabels>,
}

fn group_context(a: &GroupArgs) -> Result<GroupContext> {
    let mode = match (a.normalize, a.method.as_deref()) {
        (Some(m), _) => m,
        (None, Some(method)) => default_mode_for_method(method).ok_or_else(|| {
            AriaError::InvalidInput(format!("no default normalization for method `{method}`; pass --normalize"))
        })?,
        (None, None) => return Err(AriaError::InvalidInput("pass --normalize or --method".into())),
    };
    let s = load(&a.matrix)?;
    let map = match &a.segmap {
        Some(p) => SegmentMap::load(p)?,
        None => SegmentMap::identity(s.row_ids())?,
    };
    let fs = load_feature_set(&a.features)?;
    let channels = channels_of(&fs, a.channels.as_deref())?;
    let labels = a.labels.as_deref().map(QueryLabels::load).transpose()?;
    if let Some(l) = &labels {
        l.validate_against(s.col_ids())?;
    }
    Ok(GroupContext {
        s,
        map,
        fs,
        channels,
        mode,
        labels,
    })
}

fn csv_beside(out: Option<&Path>) -> Option<std::path::PathBuf> {
    out.map(|p| p.with_extension("csv"))
}

fn cmd_homogeneity(a: &GroupArgs) -> Result<()> {
    let ctx = group_context(a)?;
    log::info!("building null models for K = {:?} (B = {})", a.k, a.b);
    let nulls = build_null_models(&ctx.fs, &ctx.channels, &a.k, a.b, a.svd.seed)?;
    let inputs = SweepInputs {
        segment_map: &ctx.map,
        mode: ctx.mode,
        features: &ctx.fs,
        channels: &ctx.channels,
        null_models: &nulls,
        sweep: SweepOptions {
            threshold: Some(a.threshold),
            labels: ctx.labels.as_ref(),
            ..SweepOptions::default()
        },
        svd: svd_options(&a.svd),
    };
    let reports = homogeneity_of_segments(&ctx.s, &inputs)?;
    if let Some(csv) = csv_beside(a.out.as_deref()) {
        write_homogeneity_csv(&csv, &reports)?;
    }
    emit(
        a.out.as_deref(),
        &json!({
            "matrix": a.matrix.matrix.display().to_string(),
            "normalization": ctx.mode,
            "seed": a.svd.seed,
            "b": a.b,
            "reports": reports,
        }),
    )
}

fn cmd_residual_sweep(a: &ResidualSweepArgs) -> Result<()> {
    let g = &a.group;
    let ctx = group_context(g)?;
    let svd = svd_options(&g.svd);
    let (r, factor) = rank1_residual(&ctx.s, &svd)?;
    log::info!("sigma1 = {:.6e} ({})", factor.sigma1, factor.method);
    if let Some(p) = &a.residual_out {
        write_score_matrix(p, &r, MatrixFormat::from_path(p))?;
    }
    let nulls = build_null_models(&ctx.fs, &ctx.channels, &g.k, g.b, g.svd.seed)?;
    let inputs = SweepInputs {
        segment_map: &ctx.map,
        mode: ctx.mode,
        features: &ctx.fs,
        channels: &ctx.channels,
        null_models: &nulls,
        sweep: SweepOptions {
            threshold: Some(g.threshold),
            labels: ctx.labels.as_ref(),
            ..SweepOptions::default()
        },
        svd,
    };
    let paired = residual_homogeneity_sweep(&ctx.s, &inputs, Some((&r, &factor)))?;
    let rows = paired.rows();
    if let Some(csv) = csv_beside(g.out.as_deref()) {
        write_paired_csv(&csv, &rows)?;
    }
    emit(
        g.out.as_deref(),
        &json!({
            "matrix": g.matrix.matrix.display().to_string(),
            "normalization": ctx.mode,
            "seed": g.svd.seed,
            "b": g.b,
            "sigma1": paired.sigma1,
            "svd_method": paired.svd_method,
            "residual_precision": paired.residual_precision,
            "rows": rows,
            "original": paired.original,
            "residual": paired.residual,
        }),
    )
}

fn cmd_align(a: &AlignArgs) -> Result<()> {
    let s = load(&a.matrix)?;
    let fs = load_feature_set(&a.features)?;
    let channels = channels_of(&fs, a.channels.as_deref())?;
    let report = aria_core::alignment::alignment_report(&s, &fs, &channels, &svd_options(&a.svd))?;
    emit(
        a.out.as_deref(),
        &json!({ "matrix": a.matrix.matrix.display().to_string(), "alignment": report }),
    )
}

fn cmd_residual(a: &ResidualArgs) -> Result<()> {
    let s = load(&a.matrix)?;
    let svd = svd_options(&a.svd);
    let factor = match MatrixFormat::from_path(&a.out) {
        MatrixFormat::Asm1 => {
            let f = leading_triplet(&s, &svd)?;
            write_rank1_residual(&s, &f, &a.out)?;
            f
        }
        MatrixFormat::Csv => {
            let (r, f) = rank1_residual(&s, &svd)?;
            write_score_matrix(&a.out, &r, MatrixFormat::Csv)?;
            f
        }
    };
    log::info!("sigma1 = {:.6e} ({}); wrote {}", factor.sigma1, factor.method, a.out.display());
    Ok(())
}

fn cmd_score_embeddings(a: &ScoreEmbeddingsArgs) -> Result<()> {
    let q = EmbeddingTable::load(&a.queries)?;
    let t = EmbeddingTable::load(&a.tracks)?;
    let s = cosine_embedding_scores(&q, &t)?.to_precision(a.precision);
    write_score_matrix(&a.out, &s, MatrixFormat::from_path(&a.out))?;
    log::info!("wrote {} ({} x {})", a.out.display(), s.nrows(), s.ncols());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec: PlantedSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| AriaError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| AriaError::parse(p.display(), e.to_string()))?
        }
        None => PlantedSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { spec.$f = v; } )* };
    }
    set!(regime, m, t, n, collapse_strength, noise, planted_size, coherence, precision, seed);
    let paths = write_simulation(&spec, &default_layout(), &a.out_prefix)?;
    println!("{}", serde_json::to_string_pretty(&paths)?);
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let dir = run_config(&a.config, a.out.as_deref())?;
    log::info!("wrote run outputs to {}", dir.display());
    println!("{}", dir.display());
    Ok(())
}
