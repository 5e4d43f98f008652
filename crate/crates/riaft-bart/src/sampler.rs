//! The Metropolis-within-Gibbs orchestrator: sweep scheduling, burn-in and
//! thinning, posterior storage on the counterfactual design, trace export,
//! and checkpoint/resume.
//!
//! One sweep is, in order:
//! 1. draw every cluster intercept b_k, then tau^2, then alpha;
//! 2. one Bayesian-backfitting pass over the trees (structure move plus
//!    conjugate leaf redraw per tree) on responses z - b, then draw sigma^2;
//! 3. impute the censored latent log-times from lower-truncated normals.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::impute_censored;
use crate::data::{center_responses, fit_centering, CenteringInfo, DataError, SurvivalDataset};
use crate::design::{Cutpoints, DesignMatrix, TreatmentCoding};
use crate::random_effects::{
    draw_alpha, draw_b, draw_tau2, init_random_effects, AlphaShape, RandomEffectsState,
};
use crate::rng::{stream_rng, RngCheckpoint};
use crate::trees::{
    calibrate_lambda, BackfitState, SigmaPrior, TreeEnsemble, TreeHyper, DEFAULT_MOVE_PROBS,
};

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("checkpoint was written for different data (hash {expected}, got {found})")]
    DataMismatch { expected: String, found: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Full sampler configuration. Defaults follow the model's published
/// settings: 3500 retained draws after 1000 burn-in sweeps, 200 trees,
/// k = 2, nu = 3, depth prior 0.95 (1+d)^-2, n_min = 5, move probabilities
/// grow/prune/change/swap = 0.25/0.25/0.40/0.10.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub draws: usize,
    pub burnin: usize,
    pub thin: usize,
    pub trees: usize,
    pub k: f64,
    pub nu: f64,
    pub base: f64,
    pub power: f64,
    pub n_min: usize,
    pub move_probs: [f64; 4],
    pub seed: u64,
    pub chains: usize,
    pub coding: TreatmentCoding,
    pub alpha_shape: AlphaShape,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            draws: 3500,
            burnin: 1000,
            thin: 1,
            trees: 200,
            k: 2.0,
            nu: 3.0,
            base: 0.95,
            power: 2.0,
            n_min: 5,
            move_probs: DEFAULT_MOVE_PROBS,
            seed: 20220728,
            chains: 1,
            coding: TreatmentCoding::Reference,
            alpha_shape: AlphaShape::FullConditional,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.draws < 1 || self.thin < 1 || self.chains < 1 || self.trees < 1 {
            return Err(SamplerError::Config(
                "draws, thin, chains and trees must be at least 1".into(),
            ));
        }
        let s: f64 = self.move_probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.move_probs.iter().any(|p| *p < 0.0) {
            return Err(SamplerError::Config(
                "move probabilities must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.k > 0.0) || !(self.nu > 0.0) || !(self.base > 0.0 && self.base < 1.0) {
            return Err(SamplerError::Config("k, nu must be positive; 0 < base < 1".into()));
        }
        Ok(())
    }

    pub fn tree_hyper(&self) -> TreeHyper {
        TreeHyper {
            n_trees: self.trees,
            k: self.k,
            base: self.base,
            power: self.power,
            n_min: self.n_min,
            move_probs: self.move_probs,
        }
    }
}

/// Retained posterior draws: f evaluated on the counterfactual design (all
/// J arm assignments for every row, with mu_aft added back), the cluster
/// intercepts, and the scalar parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PosteriorStore {
    pub version: u32,
    pub n: usize,
    pub n_arms: usize,
    pub n_clusters: usize,
    pub draws: usize,
    pub mu_aft: f64,
    pub sigma_aft: f64,
    /// draws x (n_arms x n), draw-major then arm-major: value for draw d,
    /// arm a, row i sits at `d * n_arms * n + a * n + i`.
    pub f: Vec<f64>,
    /// draws x n_clusters.
    pub b: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub tau2: Vec<f64>,
    pub alpha: Vec<f64>,
    pub arm_labels: Vec<String>,
    pub cluster_labels: Vec<String>,
    pub row_cluster: Vec<usize>,
    pub row_arm: Vec<usize>,
    pub seed: u64,
    pub chains: usize,
}

impl PosteriorStore {
    #[inline]
    pub fn f_value(&self, draw: usize, arm: usize, row: usize) -> f64 {
        self.f[draw * self.n_arms * self.n + arm * self.n + row]
    }

    pub fn b_value(&self, draw: usize, cluster: usize) -> f64 {
        self.b[draw * self.n_clusters + cluster]
    }

    pub fn sigma(&self, draw: usize) -> f64 {
        self.sigma2[draw].sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<(), SamplerError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SamplerError> {
        let file = std::fs::File::open(path)?;
        let store: PosteriorStore = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| SamplerError::Corrupt(e.to_string()))?;
        if store.version != STORE_FORMAT_VERSION {
            return Err(SamplerError::VersionMismatch {
                found: store.version,
                expected: STORE_FORMAT_VERSION,
            });
        }
        Ok(store)
    }

    fn assert_invariants(&self) {
        assert_eq!(self.sigma2.len(), self.draws);
        assert!(self.sigma2.iter().all(|v| *v > 0.0));
        assert!(self.tau2.iter().all(|v| *v > 0.0));
        assert!(self.alpha.iter().all(|v| *v > 0.0));
        assert!(self.f.iter().all(|v| v.is_finite()));
    }
}

/// Mutable part of one chain, advanced sweep by sweep.
#[derive(Debug, Clone)]
pub struct SweepState {
    pub backfit: BackfitState,
    pub re: RandomEffectsState,
    pub sigma2: f64,
    pub z: Vec<f64>,
}

/// One full Metropolis-within-Gibbs sweep over the chain state.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep<R: Rng>(
    st: &mut SweepState,
    design: &DesignMatrix,
    cuts: &Cutpoints,
    observed_centered: &[f64],
    event: &[bool],
    clusters: &[usize],
    cluster_sizes: &[usize],
    sigma_prior: &SigmaPrior,
    alpha_shape: AlphaShape,
    rng: &mut R,
    mut step_log: Option<&mut Vec<&'static str>>,
) {
    let n = design.n_rows();
    let k = cluster_sizes.len();
    if let Some(log) = step_log.as_deref_mut() {
        log.clear();
    }
    st.backfit.refresh_total_fit();

    // Step 1: random intercepts, then tau^2, then alpha.
    let mut resid_sums = vec![0.0; k];
    {
        let fit = st.backfit.total_fit();
        for i in 0..n {
            resid_sums[clusters[i]] += st.z[i] - fit[i];
        }
    }
    for c in 0..k {
        st.re.b[c] = draw_b(
            resid_sums[c],
            cluster_sizes[c],
            st.re.alpha,
            st.re.tau2,
            st.sigma2,
            rng,
        );
    }
    if let Some(log) = step_log.as_deref_mut() {
        log.push("b");
    }
    st.re.tau2 = draw_tau2(&st.re.b, st.re.alpha, rng);
    if let Some(log) = step_log.as_deref_mut() {
        log.push("tau2");
    }
    st.re.alpha = draw_alpha(&st.re.b, st.re.tau2, alpha_shape, rng);
    if let Some(log) = step_log.as_deref_mut() {
        log.push("alpha");
    }

    // Step 2: trees on z - b, then sigma^2 from the full residuals.
    let mut responses = vec![0.0; n];
    for i in 0..n {
        responses[i] = st.z[i] - st.re.b[clusters[i]];
    }
    st.backfit.backfit_step(design, cuts, &responses, st.sigma2, rng);
    if let Some(log) = step_log.as_deref_mut() {
        log.push("trees");
    }
    let fit = st.backfit.total_fit();
    let residuals: Vec<f64> = (0..n).map(|i| responses[i] - fit[i]).collect();
    st.sigma2 = crate::trees::draw_sigma2(&residuals, sigma_prior, rng);
    if let Some(log) = step_log.as_deref_mut() {
        log.push("sigma2");
    }

    // Step 3: censored-row augmentation.
    let location: Vec<f64> = (0..n).map(|i| fit[i] + st.re.b[clusters[i]]).collect();
    impute_censored(
        &mut st.z,
        observed_centered,
        event,
        &location,
        st.sigma2.sqrt(),
        rng,
    );
    if let Some(log) = step_log.as_deref_mut() {
        log.push("impute");
    }
}

/// A single riAFT-BART chain with all of its immutable context, ready to be
/// advanced, checkpointed, or run to completion.
pub struct Chain {
    cfg: SamplerConfig,
    stream: u64,
    centering: CenteringInfo,
    sigma_prior: SigmaPrior,
    design: DesignMatrix,
    cf_design: DesignMatrix,
    cuts: Cutpoints,
    observed_centered: Vec<f64>,
    event: Vec<bool>,
    clusters: Vec<usize>,
    cluster_sizes: Vec<usize>,
    row_arm: Vec<usize>,
    arm_labels: Vec<String>,
    cluster_labels: Vec<String>,
    data_hash: String,
    offsets: Option<Vec<f64>>,
    state: SweepState,
    rng: rand_chacha::ChaCha20Rng,
    sweep_index: usize,
    retained: RetainedDraws,
    step_log: Vec<&'static str>,
    pub intercept_only_init: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
struct RetainedDraws {
    f: Vec<f64>,
    b: Vec<f64>,
    sigma2: Vec<f64>,
    tau2: Vec<f64>,
    alpha: Vec<f64>,
    count: usize,
}

/// Options for non-default fits: response offsets (sensitivity analysis),
/// an externally fitted centering, and the RNG stream.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub offsets: Option<Vec<f64>>,
    pub centering: Option<CenteringInfo>,
    pub stream: u64,
}

impl Chain {
    pub fn new(ds: &SurvivalDataset, cfg: &SamplerConfig, opts: FitOptions) -> Result<Self, SamplerError> {
        cfg.validate()?;
        if let Some(ref off) = opts.offsets {
            if off.len() != ds.n_rows() {
                return Err(SamplerError::Config("offset length mismatch".into()));
            }
        }
        let centering = match opts.centering {
            Some(c) => c,
            None => fit_centering(ds)?,
        };
        let mut observed_centered = center_responses(ds, &centering);
        if let Some(ref off) = opts.offsets {
            for (zc, o) in observed_centered.iter_mut().zip(off) {
                *zc -= o;
            }
        }
        let design = DesignMatrix::observed(ds, cfg.coding);
        let cf_design = DesignMatrix::counterfactual(ds, cfg.coding);
        let cuts = Cutpoints::from_design(&design);

        let init = init_random_effects(ds, &observed_centered);
        let sigma_prior = SigmaPrior::new(cfg.nu, calibrate_lambda(init.sigma0, cfg.nu));
        let hyper = cfg.tree_hyper();
        let leaf_sd = hyper.leaf_sd(centering.sigma_aft.max(1e-8));
        let ensemble = TreeEnsemble::stumps(hyper, leaf_sd);
        let backfit = BackfitState::new(ensemble, &design, &cuts);

        let state = SweepState {
            backfit,
            sigma2: (init.sigma0 * init.sigma0).max(1e-12),
            re: init.state,
            z: observed_centered.clone(),
        };
        let rng = stream_rng(cfg.seed, opts.stream);
        Ok(Chain {
            cfg: cfg.clone(),
            stream: opts.stream,
            centering,
            sigma_prior,
            design,
            cf_design,
            cuts,
            observed_centered,
            event: ds.events().to_vec(),
            clusters: ds.clusters().to_vec(),
            cluster_sizes: ds.cluster_sizes(),
            row_arm: ds.arms().to_vec(),
            arm_labels: ds.arm_labels().to_vec(),
            cluster_labels: ds.cluster_labels().to_vec(),
            data_hash: dataset_sha256(ds),
            offsets: opts.offsets,
            state,
            rng,
            sweep_index: 0,
            retained: RetainedDraws::default(),
            step_log: Vec::new(),
            intercept_only_init: init.intercept_only_fallback,
        })
    }

    pub fn total_sweeps(&self) -> usize {
        self.cfg.burnin + self.cfg.draws * self.cfg.thin
    }

    pub fn sweep_index(&self) -> usize {
        self.sweep_index
    }

    /// Step tags of the most recent sweep, in execution order.
    pub fn last_sweep_steps(&self) -> &[&'static str] {
        &self.step_log
    }

    /// Current latent complete-data centered log-times.
    pub fn latent_times(&self) -> &[f64] {
        &self.state.z
    }

    /// The observed centered log-times (imputation truncation bounds).
    pub fn observed_centered(&self) -> &[f64] {
        &self.observed_centered
    }

    /// Event indicators in row order.
    pub fn events(&self) -> &[bool] {
        &self.event
    }

    pub fn centering(&self) -> CenteringInfo {
        self.centering
    }

    pub fn sigma_prior(&self) -> SigmaPrior {
        self.sigma_prior
    }

    /// Advance the chain by `n` sweeps (capped at the configured total),
    /// retaining every `thin`-th post-burn-in state.
    pub fn run_sweeps(&mut self, n: usize) {
        let total = self.total_sweeps();
        let mut cf_values = vec![0.0; self.cf_design.n_rows()];
        for _ in 0..n {
            if self.sweep_index >= total {
                break;
            }
            run_sweep(
                &mut self.state,
                &self.design,
                &self.cuts,
                &self.observed_centered,
                &self.event,
                &self.clusters,
                &self.cluster_sizes,
                &self.sigma_prior,
                self.cfg.alpha_shape,
                &mut self.rng,
                Some(&mut self.step_log),
            );
            self.sweep_index += 1;
            if self.sweep_index > self.cfg.burnin {
                let post = self.sweep_index - self.cfg.burnin;
                if post % self.cfg.thin == 0 {
                    crate::trees::evaluate_into(
                        &self.state.backfit.ensemble,
                        &self.cf_design,
                        &mut cf_values,
                    );
                    self.retained
                        .f
                        .extend(cf_values.iter().map(|v| v + self.centering.mu_aft));
                    self.retained.b.extend_from_slice(&self.state.re.b);
                    self.retained.sigma2.push(self.state.sigma2);
                    self.retained.tau2.push(self.state.re.tau2);
                    self.retained.alpha.push(self.state.re.alpha);
                    self.retained.count += 1;
                }
            }
        }
    }

    pub fn run_to_end(&mut self) {
        let remaining = self.total_sweeps() - self.sweep_index;
        self.run_sweeps(remaining);
    }

    pub fn is_finished(&self) -> bool {
        self.sweep_index >= self.total_sweeps()
    }

    /// Consume the finished chain into a store.
    pub fn into_store(self) -> Result<PosteriorStore, SamplerError> {
        if !self.is_finished() {
            return Err(SamplerError::Config(
                "chain has not completed its configured sweeps".into(),
            ));
        }
        let n = self.design.n_rows() / 1.max(1); // design rows == dataset rows
        let store = PosteriorStore {
            version: STORE_FORMAT_VERSION,
            n,
            n_arms: self.arm_labels.len(),
            n_clusters: self.cluster_sizes.len(),
            draws: self.retained.count,
            mu_aft: self.centering.mu_aft,
            sigma_aft: self.centering.sigma_aft,
            f: self.retained.f,
            b: self.retained.b,
            sigma2: self.retained.sigma2,
            tau2: self.retained.tau2,
            alpha: self.retained.alpha,
            arm_labels: self.arm_labels,
            cluster_labels: self.cluster_labels,
            row_cluster: self.clusters,
            row_arm: self.row_arm,
            seed: self.cfg.seed,
            chains: 1,
        };
        store.assert_invariants();
        Ok(store)
    }

    /// Write a versioned checkpoint sufficient to resume the identical
    /// trajectory.
    pub fn checkpoint(&self, path: &Path) -> Result<(), SamplerError> {
        let ckpt = CheckpointFile {
            version: CHECKPOINT_FORMAT_VERSION,
            config: self.cfg.clone(),
            stream: self.stream,
            centering: self.centering,
            sigma_prior: self.sigma_prior,
            data_hash: self.data_hash.clone(),
            offsets: self.offsets.clone(),
            sweep_index: self.sweep_index,
            ensemble: self.state.backfit.ensemble.clone(),
            re: self.state.re.clone(),
            sigma2: self.state.sigma2,
            z: self.state.z.clone(),
            rng: RngCheckpoint::capture(self.cfg.seed, self.stream, &self.rng),
            retained: self.retained.clone(),
            intercept_only_init: self.intercept_only_init,
        };
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &ckpt)?;
        w.flush()?;
        Ok(())
    }

    /// Rebuild a chain from a checkpoint; the same dataset must be supplied.
    pub fn resume(path: &Path, ds: &SurvivalDataset) -> Result<Self, SamplerError> {
        let file = std::fs::File::open(path)?;
        let ckpt: CheckpointFile = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| SamplerError::Corrupt(e.to_string()))?;
        if ckpt.version != CHECKPOINT_FORMAT_VERSION {
            return Err(SamplerError::VersionMismatch {
                found: ckpt.version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let found = dataset_sha256(ds);
        if found != ckpt.data_hash {
            return Err(SamplerError::DataMismatch {
                expected: ckpt.data_hash,
                found,
            });
        }
        let mut chain = Chain::new(
            ds,
            &ckpt.config,
            FitOptions {
                offsets: ckpt.offsets.clone(),
                centering: Some(ckpt.centering),
                stream: ckpt.stream,
            },
        )?;
        // Replace the freshly initialized state with the checkpointed one.
        chain.state.backfit = BackfitState::new(ckpt.ensemble, &chain.design, &chain.cuts);
        chain.state.re = ckpt.re;
        chain.state.sigma2 = ckpt.sigma2;
        chain.state.z = ckpt.z;
        chain.rng = ckpt.rng.restore();
        chain.sweep_index = ckpt.sweep_index;
        chain.retained = ckpt.retained;
        chain.sigma_prior = ckpt.sigma_prior;
        chain.intercept_only_init = ckpt.intercept_only_init;
        Ok(chain)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    version: u32,
    config: SamplerConfig,
    stream: u64,
    centering: CenteringInfo,
    sigma_prior: SigmaPrior,
    data_hash: String,
    offsets: Option<Vec<f64>>,
    sweep_index: usize,
    ensemble: TreeEnsemble,
    re: RandomEffectsState,
    sigma2: f64,
    z: Vec<f64>,
    rng: RngCheckpoint,
    retained: RetainedDraws,
    intercept_only_init: bool,
}

/// SHA-256 of the dataset's canonical serialization.
pub fn dataset_sha256(ds: &SurvivalDataset) -> String {
    let bytes = serde_json::to_vec(ds).expect("dataset serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hex_string(&hasher.finalize())
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fit the model: runs `cfg.chains` chains on streams `0..chains` and
/// concatenates their retained draws in chain order. Deterministic for a
/// fixed (data, config, seed).
pub fn fit(ds: &SurvivalDataset, cfg: &SamplerConfig) -> Result<PosteriorStore, SamplerError> {
    fit_with_options(ds, cfg, FitOptions::default())
}

pub fn fit_with_options(
    ds: &SurvivalDataset,
    cfg: &SamplerConfig,
    opts: FitOptions,
) -> Result<PosteriorStore, SamplerError> {
    cfg.validate()?;
    let stores: Vec<Result<PosteriorStore, SamplerError>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = Chain::new(
                ds,
                cfg,
                FitOptions {
                    offsets: opts.offsets.clone(),
                    centering: opts.centering,
                    stream: opts.stream + c as u64,
                },
            )?;
            chain.run_to_end();
            chain.into_store()
        })
        .collect();
    let mut merged: Option<PosteriorStore> = None;
    for st in stores {
        let st = st?;
        match merged.as_mut() {
            None => merged = Some(st),
            Some(m) => {
                m.f.extend_from_slice(&st.f);
                m.b.extend_from_slice(&st.b);
                m.sigma2.extend_from_slice(&st.sigma2);
                m.tau2.extend_from_slice(&st.tau2);
                m.alpha.extend_from_slice(&st.alpha);
                m.draws += st.draws;
                m.chains += 1;
            }
        }
    }
    let store = merged.expect("at least one chain");
    store.assert_invariants();
    Ok(store)
}

/// Write the trace CSV: one row per retained draw with sigma, tau, alpha and
/// every cluster intercept.
pub fn export_trace(store: &PosteriorStore, path: &Path) -> Result<(), SamplerError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "draw,sigma,tau,alpha")?;
    for k in 0..store.n_clusters {
        write!(w, ",b_{}", k + 1)?;
    }
    writeln!(w)?;
    for d in 0..store.draws {
        write!(
            w,
            "{},{},{},{}",
            d + 1,
            store.sigma2[d].sqrt(),
            store.tau2[d].sqrt(),
            store.alpha[d]
        )?;
        for k in 0..store.n_clusters {
            write!(w, ",{}", store.b_value(d, k))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed trace rows: (draw, sigma, tau, alpha, b).
pub type TraceRow = (usize, f64, f64, f64, Vec<f64>);

pub fn import_trace(path: &Path) -> Result<Vec<TraceRow>, SamplerError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| SamplerError::Corrupt(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SamplerError::Corrupt(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, SamplerError> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| SamplerError::Corrupt(format!("bad trace field {i}")))
        };
        let draw = parse(0)? as usize;
        let b: Vec<f64> = (4..rec.len()).map(parse).collect::<Result<_, _>>()?;
        out.push((draw, parse(1)?, parse(2)?, parse(3)?, b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset_from_reader, IngestSchema};
    use rand_distr::Distribution;

    fn synthetic_lognormal(n: usize, k: usize, seed: u64, censor: f64) -> SurvivalDataset {
        let mut rng = stream_rng(seed, 0);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut csv = String::from("time,event,cluster,trt,x1,x2\n");
        for i in 0..n {
            let x1: f64 = normal.sample(&mut rng);
            let x2: f64 = normal.sample(&mut rng);
            let logt = 1.0 + 0.5 * x1 + normal.sample(&mut rng) * 0.6;
            let t = logt.exp();
            let censored = rand::Rng::gen::<f64>(&mut rng) < censor;
            let (y, e) = if censored { (t * 0.7, 0) } else { (t, 1) };
            csv.push_str(&format!(
                "{y},{e},c{},{},{x1},{x2}\n",
                i % k,
                1 + (i % 2),
            ));
        }
        load_dataset_from_reader(csv.as_bytes(), &IngestSchema::default()).unwrap()
    }

    fn small_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            draws: 10,
            burnin: 15,
            thin: 2,
            trees: 5,
            n_min: 2,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn store_shape_and_invariants() {
        let ds = synthetic_lognormal(20, 2, 41, 0.2);
        let store = fit(&ds, &small_cfg(7)).unwrap();
        assert_eq!(store.draws, 10);
        assert_eq!(store.f.len(), 10 * 2 * 20);
        assert_eq!(store.b.len(), 10 * 2);
        assert!(store.sigma2.iter().all(|v| *v > 0.0));
        assert!(store.tau2.iter().all(|v| *v > 0.0));
        assert!(store.alpha.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn same_seed_gives_bit_identical_store() {
        let ds = synthetic_lognormal(18, 3, 42, 0.15);
        let a = fit(&ds, &small_cfg(9)).unwrap();
        let b = fit(&ds, &small_cfg(9)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = fit(&ds, &small_cfg(10)).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn sweep_order_is_logged() {
        let ds = synthetic_lognormal(12, 2, 43, 0.2);
        let mut chain = Chain::new(&ds, &small_cfg(11), FitOptions::default()).unwrap();
        chain.run_sweeps(1);
        assert_eq!(
            chain.last_sweep_steps(),
            &["b", "tau2", "alpha", "trees", "sigma2", "impute"]
        );
    }

    #[test]
    fn flat_dgp_posterior_covers_truth() {
        // f == const, b == 0, no censoring: posterior mean of f within
        // 3 posterior sd of the constant on every design point.
        let mut rng = stream_rng(44, 0);
        let normal = rand_distr::Normal::new(0.0, 0.3).unwrap();
        let mut csv = String::from("time,event,cluster,trt,x1\n");
        let truth = 1.2f64;
        for i in 0..60 {
            let x1: f64 = normal.sample(&mut rng);
            let t = (truth + normal.sample(&mut rng)).exp();
            csv.push_str(&format!("{t},1,c{},{},{x1}\n", i % 3, 1 + (i % 2)));
        }
        let ds = load_dataset_from_reader(csv.as_bytes(), &IngestSchema::default()).unwrap();
        let cfg = SamplerConfig {
            draws: 300,
            burnin: 200,
            trees: 20,
            n_min: 2,
            seed: 3,
            ..SamplerConfig::default()
        };
        let store = fit(&ds, &cfg).unwrap();
        for arm in 0..store.n_arms {
            for i in (0..store.n).step_by(7) {
                let vals: Vec<f64> = (0..store.draws)
                    .map(|d| store.f_value(d, arm, i))
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>()
                    / vals.len() as f64)
                    .sqrt();
                assert!(
                    (m - truth).abs() < 3.0 * sd.max(0.05),
                    "arm {arm} row {i}: mean {m}, sd {sd}"
                );
            }
        }
    }

    #[test]
    fn trace_roundtrip_is_exact() {
        let ds = synthetic_lognormal(15, 2, 45, 0.1);
        let store = fit(&ds, &small_cfg(13)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        export_trace(&store, &path).unwrap();
        let rows = import_trace(&path).unwrap();
        assert_eq!(rows.len(), store.draws);
        for (d, row) in rows.iter().enumerate() {
            assert_eq!(row.0, d + 1);
            assert_eq!(row.1, store.sigma2[d].sqrt());
            assert_eq!(row.2, store.tau2[d].sqrt());
            assert_eq!(row.3, store.alpha[d]);
            assert_eq!(row.4.len(), store.n_clusters);
            for k in 0..store.n_clusters {
                assert_eq!(row.4[k], store.b_value(d, k));
            }
            assert!(row.1 > 0.0 && row.2 > 0.0);
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let ds = synthetic_lognormal(16, 2, 46, 0.25);
        let cfg = SamplerConfig {
            draws: 30,
            burnin: 20,
            thin: 1,
            trees: 4,
            n_min: 2,
            seed: 17,
            ..SamplerConfig::default()
        };
        let mut full = Chain::new(&ds, &cfg, FitOptions::default()).unwrap();
        full.run_to_end();
        let full_store = full.into_store().unwrap();

        let mut part = Chain::new(&ds, &cfg, FitOptions::default()).unwrap();
        part.run_sweeps(25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        part.checkpoint(&path).unwrap();
        drop(part);
        let mut resumed = Chain::resume(&path, &ds).unwrap();
        resumed.run_to_end();
        let resumed_store = resumed.into_store().unwrap();
        assert_eq!(
            serde_json::to_string(&full_store).unwrap(),
            serde_json::to_string(&resumed_store).unwrap()
        );
    }

    #[test]
    fn resume_from_garbage_is_corrupt_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        std::fs::write(&path, b"").unwrap();
        let ds = synthetic_lognormal(10, 2, 47, 0.0);
        match Chain::resume(&path, &ds) {
            Err(SamplerError::Corrupt(_)) => {}
            Err(other) => panic!("expected corrupt error, got {other:?}"),
            Ok(_) => panic!("expected corrupt error, got a chain"),
        }
    }

    #[test]
    fn version_bump_is_detected() {
        let ds = synthetic_lognormal(10, 2, 48, 0.0);
        let mut chain = Chain::new(&ds, &small_cfg(19), FitOptions::default()).unwrap();
        chain.run_sweeps(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        chain.checkpoint(&path).unwrap();
        let txt = std::fs::read_to_string(&path).unwrap();
        let bumped = txt.replacen("\"version\":1", "\"version\":999", 1);
        std::fs::write(&path, bumped).unwrap();
        match Chain::resume(&path, &ds) {
            Err(SamplerError::VersionMismatch { found: 999, .. }) => {}
            Err(other) => panic!("expected version mismatch, got {other:?}"),
            Ok(_) => panic!("expected version mismatch, got a chain"),
        }
    }

    #[test]
    fn multi_chain_concatenates_in_order_with_distinct_streams() {
        let ds = synthetic_lognormal(14, 2, 49, 0.1);
        let mut cfg = small_cfg(23);
        cfg.chains = 2;
        let store = fit(&ds, &cfg).unwrap();
        assert_eq!(store.draws, 20);
        assert_eq!(store.chains, 2);
        // chain 0's draws equal a single-chain run with the same seed
        cfg.chains = 1;
        let single = fit(&ds, &cfg).unwrap();
        assert_eq!(&store.sigma2[..10], &single.sigma2[..]);
        // chain 1 differs
        assert_ne!(&store.sigma2[10..], &single.sigma2[..]);
    }

    #[test]
    fn zero_censoring_matches_augmentation_disabled_semantics() {
        // With no censored rows the imputation step must not consume RNG or
        // mutate z: two fits on fully-observed data, one with delta forced to
        // all-events, are trivially the same run; here we assert z stays fixed.
        let ds = synthetic_lognormal(12, 2, 50, 0.0);
        let cfg = small_cfg(29);
        let mut chain = Chain::new(&ds, &cfg, FitOptions::default()).unwrap();
        let z0 = chain.state.z.clone();
        chain.run_sweeps(5);
        assert_eq!(chain.state.z, z0);
    }
}
