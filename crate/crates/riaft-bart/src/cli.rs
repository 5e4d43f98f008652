//! Batch command-line surface: fit, effects, sensitivity, simulate, truth.
//!
//! Exit-code contract: 0 success, 2 usage error, 3 data error, 4 numerical
//! failure. Every successful run writes a `manifest.json` recording the
//! command, the config snapshot, the seed, the input-data checksum, crate
//! version, wall time and output paths — enough to reproduce the run
//! bit-identically (the manifest itself carries timing and is not part of
//! the determinism contract; all other outputs are).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{AnalysisConfig, ConfigError, ConfoundingFile};
use crate::data::{load_dataset, save_dataset, DataError};
use crate::effects::{
    cate, effects_summary_csv, rmst_effect, survival_curve_csv, survival_prob_effect,
    counterfactual_survival, survival_grid, EffectEstimate, EffectsError, DEFAULT_SURVIVAL_GRID,
};
use crate::gps::GpsError;
use crate::sampler::{
    dataset_sha256, export_trace, fit, PosteriorStore, SamplerError,
};
use crate::sensitivity::{run_sensitivity, sensitivity_report_csv, SensitivityConfig, SensitivityError};
use crate::sim::{
    compute_truth, gen_dataset, gen_sa_illustrative, Scenario, SimError, TruthScale,
};

#[derive(Parser, Debug)]
#[command(
    name = "riaft-bart",
    version,
    about = "Random-intercept AFT regression with a Bayesian sum-of-trees mean function for causal survival analysis with multiple treatments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the model and write the posterior store, trace and manifest.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise treatment effects from a fitted posterior store.
    Effects {
        #[arg(long)]
        store: PathBuf,
        /// Comma-separated label pairs, e.g. `1:2,1:3`.
        #[arg(long)]
        pairs: String,
        /// logtime | surv | rmst
        #[arg(long, default_value = "logtime")]
        scale: String,
        #[arg(long)]
        tstar: Option<f64>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Survival/RMST grid size.
        #[arg(long, default_value_t = DEFAULT_SURVIVAL_GRID)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confounding-function sensitivity analysis (one report row per
    /// scenario and pair).
    Sensitivity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "cf-spec")]
        cf_spec: PathBuf,
        #[arg(long, default_value_t = 30)]
        q1: usize,
        #[arg(long, default_value_t = 30)]
        q2: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a benchmark dataset (and its ground truth) for a scenario.
    Simulate {
        /// ph10 | ph40 | nph10 | nph40 | sa-illustrative
        #[arg(long)]
        scenario: String,
        /// Cluster size n_k.
        #[arg(long)]
        nk: Option<usize>,
        /// Number of clusters K.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo ground-truth effects for a scenario.
    Truth {
        #[arg(long)]
        scenario: String,
        /// logtime | surv | rmst
        #[arg(long, default_value = "logtime")]
        scale: String,
        #[arg(long)]
        tstar: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        nmc: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::CenteringNoConvergence { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Data(d) => d.into(),
            SamplerError::Config(msg) => CliError::Usage(msg),
            SamplerError::Numerical(msg) => CliError::Numerical(msg),
            SamplerError::Io(io) => CliError::Data(io.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EffectsError> for CliError {
    fn from(e: EffectsError) -> Self {
        match e {
            EffectsError::UnknownArm(_) | EffectsError::ArmOutOfRange(_) => {
                CliError::Usage(e.to_string())
            }
            EffectsError::BadGrid(_) | EffectsError::GridTooShort { .. } => {
                CliError::Usage(e.to_string())
            }
            EffectsError::EmptyReferenceGroup(_) => CliError::Data(e.to_string()),
            EffectsError::Io(io) => CliError::Data(io.to_string()),
        }
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::Gps(g) => g.into(),
            SensitivityError::Replicate { .. } => CliError::Numerical(e.to_string()),
            SensitivityError::Sampler(s) => s.into(),
            SensitivityError::Config(msg) => CliError::Usage(msg),
            SensitivityError::NegativeBound(_) => CliError::Usage(e.to_string()),
            SensitivityError::Io(io) => CliError::Data(io.to_string()),
        }
    }
}

impl From<GpsError> for CliError {
    fn from(e: GpsError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadCensorTarget(_) => CliError::Usage(e.to_string()),
            SimError::BracketFailure(_) => CliError::Numerical(e.to_string()),
            SimError::TableParse(msg) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: u64,
    data_sha256: Option<String>,
    crate_version: &'static str,
    wall_time_secs: f64,
    outputs: Vec<String>,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    data_sha256: Option<String>,
    started: Instant,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed,
        data_sha256,
        crate_version: env!("CARGO_PKG_VERSION"),
        wall_time_secs: started.elapsed().as_secs_f64(),
        outputs: outputs
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect(),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            data,
            config,
            seed,
            draws,
            burnin,
            trees,
            chains,
            out,
        } => cmd_fit(&data, config.as_deref(), seed, draws, burnin, trees, chains, &out),
        Command::Effects {
            store,
            pairs,
            scale,
            tstar,
            level,
            grid,
            out,
        } => cmd_effects(&store, &pairs, &scale, tstar, level, grid, &out),
        Command::Sensitivity {
            data,
            config,
            cf_spec,
            q1,
            q2,
            seed,
            out,
        } => cmd_sensitivity(&data, config.as_deref(), &cf_spec, q1, q2, seed, &out),
        Command::Simulate {
            scenario,
            nk,
            k,
            seed,
            out,
        } => cmd_simulate(&scenario, nk, k, seed, &out),
        Command::Truth {
            scenario,
            scale,
            tstar,
            nmc,
            seed,
            out,
        } => cmd_truth(&scenario, &scale, tstar, nmc, seed, &out),
    }
}

fn load_config(path: Option<&Path>) -> Result<AnalysisConfig, CliError> {
    match path {
        Some(p) => Ok(AnalysisConfig::load(p)?),
        None => Ok(AnalysisConfig::default()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    draws: Option<usize>,
    burnin: Option<usize>,
    trees: Option<usize>,
    chains: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg_file = load_config(config)?;
    let mut cfg = cfg_file.sampler_config()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = draws {
        cfg.draws = d;
    }
    if let Some(b) = burnin {
        cfg.burnin = b;
    }
    if let Some(t) = trees {
        cfg.trees = t;
    }
    if let Some(c) = chains {
        cfg.chains = c;
    }
    let ds = load_dataset(data, &cfg_file.ingest_schema())?;
    std::fs::create_dir_all(out)?;
    let store = fit(&ds, &cfg)?;
    let store_path = out.join("store.json");
    let trace_path = out.join("trace.csv");
    store.save(&store_path)?;
    export_trace(&store, &trace_path)?;
    write_manifest(
        out,
        "fit",
        serde_json::to_value(&cfg).unwrap(),
        cfg.seed,
        Some(dataset_sha256(&ds)),
        started,
        &[store_path, trace_path],
    )?;
    Ok(())
}

fn parse_pairs(store: &PosteriorStore, pairs: &str) -> Result<Vec<(usize, usize)>, CliError> {
    let mut out = Vec::new();
    for chunk in pairs.split(',') {
        let (a, b) = chunk
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("bad pair `{chunk}` (expected A:B)")))?;
        let find = |label: &str| -> Result<usize, CliError> {
            store
                .arm_labels
                .iter()
                .position(|l| l == label.trim())
                .ok_or_else(|| CliError::Usage(format!("unknown treatment label `{label}`")))
        };
        out.push((find(a)?, find(b)?));
    }
    if out.is_empty() {
        return Err(CliError::Usage("no pairs requested".into()));
    }
    Ok(out)
}

fn cmd_effects(
    store_path: &Path,
    pairs: &str,
    scale: &str,
    tstar: Option<f64>,
    level: f64,
    grid: usize,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let store = PosteriorStore::load(store_path)?;
    let pair_ids = parse_pairs(&store, pairs)?;
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(CliError::Usage("level must be in (0, 1)".into()));
    }
    let mut estimates: Vec<EffectEstimate> = Vec::new();
    let mut outputs = Vec::new();
    std::fs::create_dir_all(out)?;
    match scale {
        "logtime" => {
            for &(a, b) in &pair_ids {
                estimates.push(cate(&store, a, b, level)?);
            }
        }
        "surv" | "rmst" => {
            let t_star = tstar.ok_or_else(|| {
                CliError::Usage(format!("--scale {scale} requires --tstar"))
            })?;
            if t_star <= 0.0 {
                return Err(CliError::Usage("--tstar must be positive".into()));
            }
            for &(a, b) in &pair_ids {
                if scale == "surv" {
                    estimates.push(survival_prob_effect(&store, a, b, t_star, level)?);
                } else {
                    estimates.push(rmst_effect(&store, a, b, t_star, grid, level)?);
                }
            }
            // survival curves for every arm involved, on the same grid
            let mut arms: Vec<usize> = pair_ids.iter().flat_map(|&(a, b)| [a, b]).collect();
            arms.sort_unstable();
            arms.dedup();
            let g = survival_grid(t_star, grid.max(2));
            let curves: Vec<_> = arms
                .into_iter()
                .map(|a| counterfactual_survival(&store, a, &g))
                .collect::<Result<_, _>>()?;
            let curves_path = out.join("curves.csv");
            survival_curve_csv(&store, &curves, level, &curves_path)?;
            outputs.push(curves_path);
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown scale `{other}` (use logtime, surv, rmst)"
            )))
        }
    }
    let effects_path = out.join("effects.csv");
    effects_summary_csv(&estimates, &effects_path)?;
    outputs.insert(0, effects_path);
    write_manifest(
        out,
        "effects",
        serde_json::json!({
            "store": store_path.to_string_lossy(),
            "pairs": pairs,
            "scale": scale,
            "tstar": tstar,
            "level": level,
            "grid": grid,
        }),
        store.seed,
        None,
        started,
        &outputs,
    )?;
    Ok(())
}

fn cmd_sensitivity(
    data: &Path,
    config: Option<&Path>,
    cf_spec: &Path,
    q1: usize,
    q2: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg_file = load_config(config)?;
    let mut cfg = cfg_file.sampler_config()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = load_dataset(data, &cfg_file.ingest_schema())?;
    let scenarios = ConfoundingFile::load(cf_spec)?.resolve(&ds)?;
    let sa_cfg = SensitivityConfig {
        q1,
        q2,
        ..SensitivityConfig::default()
    };
    let mut blocks = Vec::new();
    for (name, spec) in scenarios {
        let result = run_sensitivity(&ds, &cfg, &spec, &sa_cfg)?;
        blocks.push((name, spec, result));
    }
    std::fs::create_dir_all(out)?;
    let report_path = out.join("sensitivity.csv");
    sensitivity_report_csv(&blocks, &report_path)?;
    write_manifest(
        out,
        "sensitivity",
        serde_json::json!({
            "sampler": serde_json::to_value(&cfg).unwrap(),
            "cf_spec": cf_spec.to_string_lossy(),
            "q1": q1,
            "q2": q2,
        }),
        cfg.seed,
        Some(dataset_sha256(&ds)),
        started,
        &[report_path],
    )?;
    Ok(())
}

fn scenario_config(
    name: &str,
    nk: Option<usize>,
    k: Option<usize>,
    seed: Option<u64>,
) -> Result<(Scenario, crate::sim::DgpConfig), CliError> {
    let scenario = Scenario::parse(name)
        .ok_or_else(|| CliError::Usage(format!("unknown scenario `{name}`")))?;
    let mut cfg = scenario.config();
    if let Some(nk) = nk {
        cfg.cluster_size = nk;
    }
    if let Some(k) = k {
        cfg.clusters = k;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.clusters == 0 || cfg.cluster_size == 0 {
        return Err(CliError::Usage("k and nk must be positive".into()));
    }
    Ok((scenario, cfg))
}

fn cmd_simulate(
    name: &str,
    nk: Option<usize>,
    k: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let (scenario, cfg) = scenario_config(name, nk, k, seed)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    let truth_json: serde_json::Value;
    match scenario {
        Scenario::SaIllustrative => {
            let sa = gen_sa_illustrative(&cfg)?;
            let data_path = out.join("dataset.csv");
            let full_path = out.join("dataset_full.csv");
            save_dataset(&sa.measured, &data_path)?;
            save_dataset(&sa.full, &full_path)?;
            truth_json = serde_json::json!({
                "scenario": name,
                "censored_fraction": sa.censored_fraction,
                "logtime_truth": sa.truth,
                "true_confounding": (0..3).flat_map(|j| (0..3).map(move |m| (j, m)))
                    .filter(|(j, m)| j != m)
                    .map(|(j, m)| serde_json::json!({
                        "treated": j + 1,
                        "other": m + 1,
                        "c": sa.true_confounding.get(j, m),
                    }))
                    .collect::<Vec<_>>(),
                "unmeasured_covariate": "x2",
            });
            outputs.push(data_path);
            outputs.push(full_path);
        }
        _ => {
            let sim = gen_dataset(&cfg)?;
            let data_path = out.join("dataset.csv");
            save_dataset(&sim.dataset, &data_path)?;
            truth_json = serde_json::json!({
                "scenario": name,
                "censor_rate": sim.censor_rate,
                "censored_fraction": sim.censored_fraction,
                "note": "declare x6 and x7 categorical at ingest",
            });
            outputs.push(data_path);
        }
    }
    let truth_path = out.join("generation.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth_json).unwrap())?;
    outputs.push(truth_path);
    write_manifest(
        out,
        "simulate",
        serde_json::to_value(&cfg).unwrap(),
        cfg.seed,
        None,
        started,
        &outputs,
    )?;
    Ok(())
}

fn cmd_truth(
    name: &str,
    scale: &str,
    tstar: Option<f64>,
    nmc: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let (_, cfg) = scenario_config(name, None, None, seed)?;
    let truth_scale = match scale {
        "logtime" => TruthScale::LogTime,
        "surv" => TruthScale::Survival {
            t_star: tstar.unwrap_or(60.0),
        },
        "rmst" => TruthScale::Rmst {
            t_star: tstar.unwrap_or(60.0),
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown scale `{other}` (use logtime, surv, rmst)"
            )))
        }
    };
    if nmc == 0 {
        return Err(CliError::Usage("--nmc must be positive".into()));
    }
    let truth = compute_truth(&cfg, truth_scale, nmc);
    std::fs::create_dir_all(out)?;
    let path = out.join("truth.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&serde_json::json!({
            "scenario": name,
            "scale": scale,
            "tstar": tstar,
            "truth": truth,
        }))
        .unwrap(),
    )?;
    for &((a, b), v, se) in &truth.pairs {
        println!("CATE[{}:{}] = {v:.4} (mc se {se:.5})", a + 1, b + 1);
    }
    write_manifest(
        out,
        "truth",
        serde_json::json!({ "scenario": name, "scale": scale, "nmc": nmc }),
        cfg.seed,
        None,
        started,
        &[path],
    )?;
    Ok(())
}
