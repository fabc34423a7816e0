//! `analyze`: compare exported rate maps across two environments. Runs the
//! grid-value and peak-distance remapping measures with shuffle nulls, the
//! grid correlation-matrix preservation test, and per-layer cross-world
//! correlations. Pointing both directories at the same maps is the
//! within-environment sanity mode.

use std::path::{Path, PathBuf};

use serde::Serialize;

use gridmem::evalmetrics::{cross_env_correlation, rate_maps_from_csv, Layer, RateMap, RateMapSet};
use gridmem::remapanalysis::{
    analyze_remapping, grid_corr_matrix_test, AnalysisError, AnalysisReport, TrialData,
};

use crate::config::{self, measure_kinds, ConfigArgs};
use crate::{runtime, usage, write_json, CliError};

#[derive(clap::Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Directory holding ratemaps_grid.csv and ratemaps_place.csv.
    #[arg(long, value_name = "DIR")]
    pub dir_a: PathBuf,

    /// Second directory with the same layout; may equal --dir-a.
    #[arg(long, value_name = "DIR")]
    pub dir_b: PathBuf,

    /// Measure to run: gridAtPlace, minDist, or both. Defaults to the
    /// config's analysis.measure.
    #[arg(long)]
    pub measure: Option<String>,

    /// Shuffle iterations, overriding analysis.n_shuffles.
    #[arg(long)]
    pub n_shuffles: Option<usize>,

    /// Minimum admitted pairs, overriding analysis.min_pairs.
    #[arg(long)]
    pub min_pairs: Option<usize>,

    /// Skip the correlation-matrix preservation test.
    #[arg(long)]
    pub no_matrix: bool,

    /// Skip the per-layer cross-environment correlation summary.
    #[arg(long)]
    pub no_cross_env: bool,
}

struct Trial {
    data: TrialData,
    grid_occupancy: Vec<usize>,
    place_occupancy: Vec<usize>,
    width: usize,
}

#[derive(Serialize)]
struct MatrixBlock {
    r_obs: f64,
    p: f64,
    n_pairs: usize,
    n_shuffles: usize,
}

#[derive(Serialize)]
struct CrossEnvBlock {
    grid_mean_r: Option<f64>,
    grid_units_used: usize,
    place_mean_r: Option<f64>,
    place_units_used: usize,
}

#[derive(Serialize)]
struct AnalyzeOutput {
    dir_a: String,
    dir_b: String,
    width: usize,
    grid_units: usize,
    place_units: usize,
    reports: Vec<AnalysisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<MatrixBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_env: Option<CrossEnvBlock>,
}

fn load_layer(dir: &Path, layer: &str) -> Result<(Vec<RateMap>, Vec<usize>), CliError> {
    let path = dir.join(format!("ratemaps_{layer}.csv"));
    let text = std::fs::read_to_string(&path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    rate_maps_from_csv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_trial(dir: &Path) -> Result<Trial, CliError> {
    let (grid_maps, grid_occupancy) = load_layer(dir, "grid")?;
    let (place_maps, place_occupancy) = load_layer(dir, "place")?;
    let gw = grid_maps.first().map(|m| m.width).unwrap_or(0);
    let pw = place_maps.first().map(|m| m.width).unwrap_or(0);
    if gw == 0 || pw == 0 {
        return Err(usage(format!("{}: no rate maps found", dir.display())));
    }
    if gw != pw {
        return Err(usage(format!(
            "{}: grid maps are {gw} wide but place maps are {pw} wide",
            dir.display()
        )));
    }
    Ok(Trial {
        data: TrialData {
            grid_maps,
            place_maps,
        },
        grid_occupancy,
        place_occupancy,
        width: gw,
    })
}

fn map_analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::TooFewPairs { .. } => runtime(e.to_string()),
        AnalysisError::MinDistNeedsFits | AnalysisError::Degenerate(_) => usage(e.to_string()),
    }
}

fn mean_correlation(
    a: &Trial,
    b: &Trial,
    layer: Layer,
    min_visits: usize,
) -> Result<(Option<f64>, usize), CliError> {
    let pick = |t: &Trial| -> RateMapSet {
        let (maps, occupancy) = match layer {
            Layer::Grid => (t.data.grid_maps.clone(), t.grid_occupancy.clone()),
            _ => (t.data.place_maps.clone(), t.place_occupancy.clone()),
        };
        RateMapSet {
            layer,
            width: t.width,
            maps,
            occupancy,
            min_visits,
        }
    };
    let rs = cross_env_correlation(&pick(a), &pick(b))
        .map_err(|e| usage(format!("cross-environment correlation: {e}")))?;
    let finite: Vec<f64> = rs.iter().filter_map(|r| *r).collect();
    if finite.is_empty() {
        return Ok((None, 0));
    }
    Ok((
        Some(finite.iter().sum::<f64>() / finite.len() as f64),
        finite.len(),
    ))
}

pub fn run(args: &AnalyzeArgs) -> Result<(), CliError> {
    let mut cfg = config::resolve(&args.cfg)?;
    if let Some(n) = args.n_shuffles {
        cfg.analysis.n_shuffles = n;
    }
    if let Some(m) = args.min_pairs {
        cfg.analysis.min_pairs = m;
    }
    if cfg.analysis.n_shuffles < 100 {
        return Err(usage("--n-shuffles must be at least 100"));
    }
    let measure = args.measure.clone().unwrap_or(cfg.analysis.measure.clone());
    let kinds = measure_kinds(&measure)?;

    let a = load_trial(&args.dir_a)?;
    let b = load_trial(&args.dir_b)?;
    if a.width != b.width {
        return Err(usage(format!(
            "incompatible widths: {} is {} wide, {} is {} wide",
            args.dir_a.display(),
            a.width,
            args.dir_b.display(),
            b.width
        )));
    }

    let mut reports = Vec::new();
    for kind in kinds {
        let acfg = cfg.analysis.analysis_config(kind, cfg.seed);
        let (report, _null) =
            analyze_remapping(&a.data, &b.data, &acfg).map_err(map_analysis_err)?;
        println!(
            "{}: r={:.4} p={:.4} ({} pairs, {} shuffles)",
            report.measure, report.r_obs, report.p, report.n_pairs, report.n_shuffles
        );
        reports.push(report);
    }

    let matrix = if args.no_matrix {
        None
    } else {
        let null = grid_corr_matrix_test(
            &a.data.grid_maps,
            &b.data.grid_maps,
            cfg.analysis.n_shuffles,
            cfg.seed.wrapping_add(0x3A7),
        )
        .map_err(map_analysis_err)?;
        println!(
            "gridCorrMatrix: r={:.4} p={:.4} ({} unit pairs, {} shuffles)",
            null.r_obs, null.p, null.n_pairs, null.n_shuffles
        );
        Some(MatrixBlock {
            r_obs: null.r_obs,
            p: null.p,
            n_pairs: null.n_pairs,
            n_shuffles: null.n_shuffles,
        })
    };

    let cross_env = if args.no_cross_env {
        None
    } else {
        let (grid_mean_r, grid_units_used) =
            mean_correlation(&a, &b, Layer::Grid, cfg.eval.min_visits)?;
        let (place_mean_r, place_units_used) =
            mean_correlation(&a, &b, Layer::Place, cfg.eval.min_visits)?;
        println!(
            "cross-env mean r: grid {} ({} units), place {} ({} units)",
            grid_mean_r.map_or("n/a".into(), |r| format!("{r:.4}")),
            grid_units_used,
            place_mean_r.map_or("n/a".into(), |r| format!("{r:.4}")),
            place_units_used
        );
        Some(CrossEnvBlock {
            grid_mean_r,
            grid_units_used,
            place_mean_r,
            place_units_used,
        })
    };

    let out = AnalyzeOutput {
        dir_a: args.dir_a.display().to_string(),
        dir_b: args.dir_b.display().to_string(),
        width: a.width,
        grid_units: a.data.grid_maps.len(),
        place_units: a.data.place_maps.len(),
        reports,
        matrix,
        cross_env,
    };
    let path = cfg.out_dir.join("analysis_report.json");
    write_json(&path, &out)?;
    println!("report: {}", path.display());
    Ok(())
}
