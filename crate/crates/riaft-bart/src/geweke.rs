//! Joint-distribution ("getting it right") tests for the sampler, plus the
//! small statistical helpers they and the test suites share.
//!
//! The harness compares two ways of sampling from the joint p(theta, y):
//! marginal-conditional (theta from the prior, y given theta, independent
//! replicates) and successive-conditional (alternate one sampler sweep of
//! theta given y with a fresh draw of y given theta). If the sampler's
//! transition kernel leaves the posterior invariant, every test function of
//! (theta, y) has the same distribution under both schemes.
//!
//! Scale parameters here have heavy-tailed (inverse-gamma shape 1) priors
//! without finite moments, so the z-tests are applied to variance-stabilized
//! transforms (log, asinh); under the null any measurable transform has
//! identical distribution in both samplers.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::design::{Cutpoints, DesignMatrix, TreatmentCoding};
use crate::random_effects::{draw_alpha, draw_b, draw_tau2, AlphaShape, RandomEffectsState};
use crate::sampler::{run_sweep, SweepState};
use crate::trees::{
    draw_inverse_gamma, draw_sigma2, sample_tree_from_prior, BackfitState, SigmaPrior,
    TreeEnsemble, TreeHyper,
};

/// One tested statistic: its name, the two sample means, and the z-score.
#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: String,
    pub mean_marginal: f64,
    pub mean_successive: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean of a correlated sequence by batch means.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let b = n_batches.max(2);
    let len = xs.len() / b;
    assert!(len >= 1, "too few samples for batch means");
    let means: Vec<f64> = (0..b)
        .map(|i| mean(&xs[i * len..(i + 1) * len]))
        .collect();
    (variance(&means) / b as f64).sqrt()
}

fn zscores(names: &[&str], marginal: &[Vec<f64>], successive: &[Vec<f64>]) -> GewekeReport {
    let stats = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let m1 = mean(&marginal[i]);
            let m2 = mean(&successive[i]);
            let se1 = (variance(&marginal[i]) / marginal[i].len() as f64).sqrt();
            let se2 = batch_means_se(&successive[i], 50);
            GewekeStat {
                name: name.to_string(),
                mean_marginal: m1,
                mean_successive: m2,
                z: (m1 - m2) / (se1 * se1 + se2 * se2).sqrt(),
            }
        })
        .collect();
    GewekeReport { stats }
}

/// Fixed-hyperparameter toy model for the full riAFT-BART kernel.
pub struct ToyModel {
    pub design: DesignMatrix,
    pub cuts: Cutpoints,
    pub clusters: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub hyper: TreeHyper,
    pub leaf_sd: f64,
    pub sigma_prior: SigmaPrior,
    pub alpha_shape: AlphaShape,
}

pub struct ToyState {
    pub ensemble: TreeEnsemble,
    pub re: RandomEffectsState,
    pub sigma2: f64,
}

impl ToyModel {
    /// N rows split evenly over `k` clusters, two covariates, `h` trees.
    pub fn toy(n: usize, k: usize, h: usize, alpha_shape: AlphaShape, seed: u64) -> Self {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let mut csv = String::from("time,event,cluster,trt,x1,x2\n");
        for i in 0..n {
            let x1: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            let x2: f64 = rng.gen::<f64>();
            csv.push_str(&format!("1,1,c{},{},{x1},{x2}\n", i % k, 1 + i % 2));
        }
        let ds =
            crate::data::load_dataset_from_reader(csv.as_bytes(), &crate::data::IngestSchema::default())
                .unwrap();
        let design = DesignMatrix::observed(&ds, TreatmentCoding::Reference);
        let cuts = Cutpoints::from_design(&design);
        let hyper = TreeHyper {
            n_trees: h,
            n_min: 1,
            ..TreeHyper::default()
        };
        ToyModel {
            design,
            cuts,
            clusters: ds.clusters().to_vec(),
            cluster_sizes: ds.cluster_sizes(),
            hyper,
            leaf_sd: 0.4,
            sigma_prior: SigmaPrior::new(3.0, 1.0),
            alpha_shape,
        }
    }

    pub fn prior_draw<R: Rng>(&self, rng: &mut R) -> ToyState {
        let trees = (0..self.hyper.n_trees)
            .map(|_| sample_tree_from_prior(&self.design, &self.cuts, &self.hyper, self.leaf_sd, rng))
            .collect();
        let ensemble = TreeEnsemble {
            trees,
            leaf_sd: self.leaf_sd,
            hyper: self.hyper,
        };
        let tau2 = draw_inverse_gamma(1.0, 1.0, rng);
        let alpha = draw_inverse_gamma(1.0, 1.0, rng);
        let k = self.cluster_sizes.len();
        let sd = (alpha * tau2).sqrt();
        let b = (0..k)
            .map(|_| sd * crate::rng::standard_normal(rng))
            .collect();
        let sigma2 = draw_inverse_gamma(
            self.sigma_prior.nu / 2.0,
            self.sigma_prior.nu * self.sigma_prior.lambda / 2.0,
            rng,
        );
        ToyState {
            ensemble,
            re: RandomEffectsState { b, alpha, tau2 },
            sigma2,
        }
    }

    pub fn gen_data<R: Rng>(&self, f: &[f64], re: &RandomEffectsState, sigma2: f64, rng: &mut R) -> Vec<f64> {
        let sd = sigma2.sqrt();
        (0..self.design.n_rows())
            .map(|i| {
f[i] + re.b[self.clusters[i]] + sd * crate::rng::standard_normal(rng)
            })
            .collect()
    }

    fn test_functions(f: &[f64], re: &RandomEffectsState, sigma2: f64) -> [f64; 6] {
        let ssb: f64 = re.b.iter().map(|x| x * x).sum();
        [
            sigma2.ln(),
            re.tau2.ln(),
            re.alpha.ln(),
            re.b[0].asinh(),
            ssb.ln_1p(),
            mean(f),
        ]
    }
}

pub const FULL_MODEL_STAT_NAMES: [&str; 6] = [
    "log sigma2",
    "log tau2",
    "log alpha",
    "asinh b1",
    "log1p sum b^2",
    "mean f",
];

/// Run the full-model joint-distribution test.
pub fn geweke_full_model(
    model: &ToyModel,
    n_marginal: usize,
    n_successive: usize,
    thin: usize,
    seed: u64,
) -> GewekeReport {
    let mut rng = crate::rng::stream_rng(seed, 0);
    let names = FULL_MODEL_STAT_NAMES;
    let mut marginal: Vec<Vec<f64>> = vec![Vec::with_capacity(n_marginal); names.len()];
    for _ in 0..n_marginal {
        let st = model.prior_draw(&mut rng);
        let f = crate::trees::evaluate(&st.ensemble, &model.design);
        let g = ToyModel::test_functions(&f, &st.re, st.sigma2);
        for (slot, v) in marginal.iter_mut().zip(g) {
            slot.push(v);
        }
    }

    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(n_successive); names.len()];
    let init = model.prior_draw(&mut rng);
    let f0 = crate::trees::evaluate(&init.ensemble, &model.design);
    let mut y = model.gen_data(&f0, &init.re, init.sigma2, &mut rng);
    let event = vec![true; model.design.n_rows()];
    let mut state = SweepState {
        backfit: BackfitState::new(init.ensemble, &model.design, &model.cuts),
        re: init.re,
        sigma2: init.sigma2,
        z: y.clone(),
    };
    for _ in 0..n_successive {
        for _ in 0..thin {
            state.z = y.clone();
            run_sweep(
                &mut state,
                &model.design,
                &model.cuts,
                &y,
                &event,
                &model.clusters,
                &model.cluster_sizes,
                &model.sigma_prior,
                model.alpha_shape,
                &mut rng,
                None,
            );
            y = model.gen_data(state.backfit.total_fit(), &state.re, state.sigma2, &mut rng);
        }
        let g = ToyModel::test_functions(state.backfit.total_fit(), &state.re, state.sigma2);
        for (slot, v) in successive.iter_mut().zip(g) {
            slot.push(v);
        }
    }
    zscores(&names, &marginal, &successive)
}

/// Joint-distribution test for the random-effects subsystem alone
/// (b, alpha, tau^2, sigma^2 with f fixed at zero): y_ik ~ N(b_k, sigma^2).
pub fn geweke_random_effects(
    n_per_cluster: usize,
    k: usize,
    alpha_shape: AlphaShape,
    n_marginal: usize,
    n_successive: usize,
    thin: usize,
    seed: u64,
) -> GewekeReport {
    let sigma_prior = SigmaPrior::new(3.0, 1.0);
    let names = [
        "log sigma2",
        "log tau2",
        "log alpha",
        "asinh b1",
        "asinh b2",
        "asinh b3",
        "log1p sum b^2",
        "mean y",
        "log1p var y",
        "asinh mean b",
    ];
    let n = n_per_cluster * k;
    let clusters: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut rng = crate::rng::stream_rng(seed, 0);

    let prior_draw = |rng: &mut rand_chacha::ChaCha20Rng| {
        let tau2 = draw_inverse_gamma(1.0, 1.0, rng);
        let alpha = draw_inverse_gamma(1.0, 1.0, rng);
        let sd = (alpha * tau2).sqrt();
        let b: Vec<f64> = (0..k)
            .map(|_| sd * crate::rng::standard_normal(rng))
            .collect();
        let sigma2 = draw_inverse_gamma(sigma_prior.nu / 2.0, sigma_prior.nu * sigma_prior.lambda / 2.0, rng);
        (b, alpha, tau2, sigma2)
    };
    let gen_y = |b: &[f64], sigma2: f64, rng: &mut rand_chacha::ChaCha20Rng| -> Vec<f64> {
        let sd = sigma2.sqrt();
        clusters
            .iter()
            .map(|&c| b[c] + sd * crate::rng::standard_normal(rng))
            .collect()
    };
    let stats = |b: &[f64], alpha: f64, tau2: f64, sigma2: f64, y: &[f64]| -> [f64; 10] {
        let ssb: f64 = b.iter().map(|x| x * x).sum();
        let bbar = b.iter().sum::<f64>() / b.len() as f64;
        [
            sigma2.ln(),
            tau2.ln(),
            alpha.ln(),
            b[0].asinh(),
            b[1].asinh(),
            b[2].asinh(),
            ssb.ln_1p(),
            mean(y),
            variance(y).ln_1p(),
            bbar.asinh(),
        ]
    };

    let mut marginal: Vec<Vec<f64>> = vec![Vec::with_capacity(n_marginal); names.len()];
    for _ in 0..n_marginal {
        let (b, alpha, tau2, sigma2) = prior_draw(&mut rng);
        let y = gen_y(&b, sigma2, &mut rng);
        for (slot, v) in marginal.iter_mut().zip(stats(&b, alpha, tau2, sigma2, &y)) {
            slot.push(v);
        }
    }

    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(n_successive); names.len()];
    let (mut b, mut alpha, mut tau2, mut sigma2) = prior_draw(&mut rng);
    let mut y = gen_y(&b, sigma2, &mut rng);
    for _ in 0..n_successive {
        for _ in 0..thin {
            // kernel: b | rest, tau2 | rest, alpha | rest, sigma2 | rest
            let mut sums = vec![0.0; k];
            for (i, &c) in clusters.iter().enumerate() {
                sums[c] += y[i];
            }
            for c in 0..k {
                b[c] = draw_b(sums[c], n_per_cluster, alpha, tau2, sigma2, &mut rng);
            }
            tau2 = draw_tau2(&b, alpha, &mut rng);
            alpha = draw_alpha(&b, tau2, alpha_shape, &mut rng);
            let resid: Vec<f64> = clusters
                .iter()
                .enumerate()
                .map(|(i, &c)| y[i] - b[c])
                .collect();
            sigma2 = draw_sigma2(&resid, &sigma_prior, &mut rng);
            y = gen_y(&b, sigma2, &mut rng);
        }
        for (slot, v) in successive.iter_mut().zip(stats(&b, alpha, tau2, sigma2, &y)) {
            slot.push(v);
        }
    }
    zscores(&names, &marginal, &successive)
}

// ---------------------------------------------------------------------------
// Distribution-comparison helpers shared by the test suites.
// ---------------------------------------------------------------------------

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// One-sample KS statistic against an analytic CDF.
pub fn ks_statistic_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
    }
    d
}

/// Asymptotic KS p-value (Stephens correction). Pass `n2 == usize::MAX` for
/// the one-sample case.
pub fn ks_pvalue(d: f64, n1: usize, n2: usize) -> f64 {
    let ne = if n2 == usize::MAX {
        n1 as f64
    } else {
        (n1 as f64 * n2 as f64) / (n1 as f64 + n2 as f64)
    };
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..101 {
        let sign = if j % 2 == 1 { 2.0 } else { -2.0 };
        p += sign * (-2.0 * (j as f64 * lambda).powi(2)).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Two-sample chi-square homogeneity test on binned integer samples.
/// Bins with total count below 10 are merged downward.
pub fn chi_square_two_sample_pvalue(a: &[usize], b: &[usize], n_bins: usize) -> f64 {
    let mut ca = vec![0.0f64; n_bins];
    let mut cb = vec![0.0f64; n_bins];
    for &v in a {
        ca[v.min(n_bins - 1)] += 1.0;
    }
    for &v in b {
        cb[v.min(n_bins - 1)] += 1.0;
    }
    // merge sparse bins to keep expected counts healthy
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for i in 0..n_bins {
        acc.0 += ca[i];
        acc.1 += cb[i];
        if acc.0 + acc.1 >= 10.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += acc.0;
            last.1 += acc.1;
        } else {
            bins.push(acc);
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let na: f64 = bins.iter().map(|x| x.0).sum();
    let nb: f64 = bins.iter().map(|x| x.1).sum();
    let total = na + nb;
    let mut stat = 0.0;
    for (oa, ob) in &bins {
        let col = oa + ob;
        let ea = na * col / total;
        let eb = nb * col / total;
        stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = (bins.len() - 1) as f64;
    let chi = ChiSquared::new(df).unwrap();
    1.0 - chi.cdf(stat)
}
