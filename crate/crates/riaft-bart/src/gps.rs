//! Generalized propensity scores with posterior-style uncertainty.
//!
//! The default estimator is a multinomial logistic regression with a shared
//! per-cluster intercept offset added to every non-reference arm (the same
//! structure as a random-intercept multinomial logit with one cluster effect),
//! fit by Newton's method with a weak ridge. Uncertainty comes from a
//! Bayesian bootstrap: `q1` Dirichlet-weighted refits. The estimator sits
//! behind [`GpsMethod`] so a tree-based probit model can be slotted in later.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::data::SurvivalDataset;

#[derive(Debug, Error)]
pub enum GpsError {
    #[error("separation or degenerate fit for treatment level `{0}`")]
    Degenerate(String),
    #[error("normal equations singular in the propensity fit")]
    Singular,
    #[error("propensity fit did not converge after {0} iterations")]
    NoConvergence(usize),
}

/// Pluggable GPS estimator family.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum GpsMethod {
    /// Multinomial logit with shared cluster offsets; `ridge` is the L2
    /// penalty added to the Newton system for conditioning.
    MultinomialLogit { ridge: f64 },
}

impl Default for GpsMethod {
    fn default() -> Self {
        GpsMethod::MultinomialLogit { ridge: 1e-6 }
    }
}

/// `q1` bootstrap draws of the N x J propensity matrix plus the point fit.
#[derive(Debug, Clone)]
pub struct GpsDraws {
    pub n: usize,
    pub n_arms: usize,
    /// Each draw is row-major N x J; rows sum to one.
    pub draws: Vec<Vec<f64>>,
    /// The unweighted point fit.
    pub mean: Vec<f64>,
}

impl GpsDraws {
    pub fn draw(&self, q: usize) -> &[f64] {
        &self.draws[q]
    }
}

/// Fit the GPS model and return `q1` Bayesian-bootstrap draws.
pub fn estimate_gps<R: Rng>(
    ds: &SurvivalDataset,
    method: &GpsMethod,
    q1: usize,
    rng: &mut R,
) -> Result<GpsDraws, GpsError> {
    assert!(ds.n_arms() >= 2);
    assert!(q1 >= 1);
    let GpsMethod::MultinomialLogit { ridge } = method;
    let base = vec![1.0; ds.n_rows()];
    let fit0 = MnlFit::fit(ds, &base, *ridge, None)?;
    let mean = fit0.probabilities(ds);
    let mut draws = Vec::with_capacity(q1);
    for _ in 0..q1 {
        let mut weights: Vec<f64> = (0..ds.n_rows())
            .map(|_| -(rng.gen::<f64>().max(f64::MIN_POSITIVE)).ln())
            .collect();
        let total: f64 = weights.iter().sum();
        let scale = ds.n_rows() as f64 / total;
        weights.iter_mut().for_each(|w| *w *= scale);
        let fit = MnlFit::fit(ds, &weights, *ridge, Some(&fit0.theta))?;
        draws.push(fit.probabilities(ds));
    }
    Ok(GpsDraws {
        n: ds.n_rows(),
        n_arms: ds.n_arms(),
        draws,
        mean,
    })
}

/// Parameter layout: for each non-reference arm j (0..J-1, reference is the
/// last arm): intercept then P covariate coefficients; then K-1 shared
/// cluster offsets (last cluster is the reference).
struct MnlFit {
    theta: DVector<f64>,
    n_arms: usize,
    p: usize,
    k: usize,
}

const MAX_NEWTON_ITERS: usize = 200;
const COEF_DIVERGENCE_BOUND: f64 = 12.0;

impl MnlFit {
    fn n_params(n_arms: usize, p: usize, k: usize) -> usize {
        (n_arms - 1) * (p + 1) + k.saturating_sub(1)
    }

    fn fit(
        ds: &SurvivalDataset,
        weights: &[f64],
        ridge: f64,
        warm: Option<&DVector<f64>>,
    ) -> Result<Self, GpsError> {
        let n = ds.n_rows();
        let j = ds.n_arms();
        let p = ds.n_covariates();
        let k = ds.n_clusters();
        let dim = Self::n_params(j, p, k);
        let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(dim));

        let mut probs = vec![0.0; j];
        let mut iters = 0;
        loop {
            iters += 1;
            if iters > MAX_NEWTON_ITERS {
                return Err(GpsError::NoConvergence(MAX_NEWTON_ITERS));
            }
            let mut grad = DVector::<f64>::zeros(dim);
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            let mut loglik = 0.0;
            for i in 0..n {
                let w = weights[i];
                let x = ds.covariate_row(i);
                let c = ds.clusters()[i];
                row_probs(&theta, x, c, j, p, k, &mut probs);
                let a = ds.arms()[i];
                loglik += w * probs[a].max(1e-300).ln();

                // gradient
                for arm in 0..j - 1 {
                    let r = f64::from(a == arm) - probs[arm];
                    let base = arm * (p + 1);
                    grad[base] += w * r;
                    for (q, &xq) in x.iter().enumerate() {
                        grad[base + 1 + q] += w * r * xq;
                    }
                }
                if c + 1 < k {
                    let tc = (j - 1) * (p + 1) + c;
                    let nonref = 1.0 - probs[j - 1];
                    grad[tc] += w * (f64::from(a != j - 1) - nonref);
                }

                // Hessian blocks (negative definite; we accumulate -H)
                for arm in 0..j - 1 {
                    let base_a = arm * (p + 1);
                    for arm2 in arm..j - 1 {
                        let base_b = arm2 * (p + 1);
                        let s = if arm == arm2 {
                            probs[arm] * (1.0 - probs[arm])
                        } else {
                            -probs[arm] * probs[arm2]
                        };
                        let ws = w * s;
                        hess[(base_a, base_b)] += ws;
                        for (q, &xq) in x.iter().enumerate() {
                            hess[(base_a, base_b + 1 + q)] += ws * xq;
                            if arm != arm2 {
                                // coef of arm x intercept of arm2 (upper triangle)
                                hess[(base_a + 1 + q, base_b)] += ws * xq;
                            }
                        }
                        for (q, &xq) in x.iter().enumerate() {
                            for (r2, &xr) in x.iter().enumerate().skip(if arm == arm2 { q } else { 0 }) {
                                hess[(base_a + 1 + q, base_b + 1 + r2)] += ws * xq * xr;
                            }
                        }
                    }
                }
                if c + 1 < k {
                    let tc = (j - 1) * (p + 1) + c;
                    let pref = probs[j - 1];
                    let s_tau = (1.0 - pref) * pref;
                    hess[(tc, tc)] += w * s_tau;
                    for arm in 0..j - 1 {
                        let base_a = arm * (p + 1);
                        let s = probs[arm] * pref;
                        hess[(base_a, tc)] += w * s;
                        for (q, &xq) in x.iter().enumerate() {
                            hess[(base_a + 1 + q, tc)] += w * s * xq;
                        }
                    }
                }
            }
            // symmetrize and ridge
            for a in 0..dim {
                for b2 in 0..a {
                    hess[(a, b2)] = hess[(b2, a)];
                }
                hess[(a, a)] += ridge.max(1e-12);
                grad[a] -= ridge.max(1e-12) * theta[a];
            }
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax < 1e-7 * n as f64 {
                break;
            }
            let chol = nalgebra::Cholesky::new(hess).ok_or(GpsError::Singular)?;
            let delta = chol.solve(&grad);
            // step halving against the penalized log likelihood
            let pen = |th: &DVector<f64>| -> f64 {
                let mut ll = 0.0;
                let mut pp = vec![0.0; j];
                for i in 0..n {
                    row_probs(th, ds.covariate_row(i), ds.clusters()[i], j, p, k, &mut pp);
                    ll += weights[i] * pp[ds.arms()[i]].max(1e-300).ln();
                }
                ll - 0.5 * ridge.max(1e-12) * th.norm_squared()
            };
            let ll0 = loglik - 0.5 * ridge.max(1e-12) * theta.norm_squared();
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let cand = &theta + &delta * step;
                if pen(&cand) > ll0 - 1e-12 {
                    theta = cand;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }

        // Separation check: an arm is degenerate when its coefficients have
        // run away and its fitted probabilities hug 0/1 for every row.
        let mut pp = vec![0.0; j];
        for arm in 0..j - 1 {
            let base = arm * (p + 1);
            let runaway = (0..=p).any(|q| theta[base + q].abs() > COEF_DIVERGENCE_BOUND);
            if !runaway {
                continue;
            }
            let interior = (0..n).any(|i| {
                row_probs(&theta, ds.covariate_row(i), ds.clusters()[i], j, p, k, &mut pp);
                pp[arm] > 1e-4 && pp[arm] < 1.0 - 1e-4
            });
            if !interior {
                return Err(GpsError::Degenerate(ds.arm_labels()[arm].clone()));
            }
        }
        Ok(MnlFit {
            theta,
            n_arms: j,
            p,
            k,
        })
    }

    fn probabilities(&self, ds: &SurvivalDataset) -> Vec<f64> {
        let n = ds.n_rows();
        let j = self.n_arms;
        let mut out = vec![0.0; n * j];
        let mut probs = vec![0.0; j];
        for i in 0..n {
            row_probs(
                &self.theta,
                ds.covariate_row(i),
                ds.clusters()[i],
                j,
                self.p,
                self.k,
                &mut probs,
            );
            out[i * j..(i + 1) * j].copy_from_slice(&probs);
        }
        out
    }
}

fn row_probs(
    theta: &DVector<f64>,
    x: &[f64],
    cluster: usize,
    j: usize,
    p: usize,
    k: usize,
    out: &mut [f64],
) {
    let tau = if cluster + 1 < k {
        theta[(j - 1) * (p + 1) + cluster]
    } else {
        0.0
    };
    let mut max_eta = 0.0f64;
    for arm in 0..j - 1 {
        let base = arm * (p + 1);
        let mut eta = theta[base] + tau;
        for (q, &xq) in x.iter().enumerate() {
            eta += theta[base + 1 + q] * xq;
        }
        out[arm] = eta;
        max_eta = max_eta.max(eta);
    }
    out[j - 1] = 0.0;
    let mut denom = 0.0;
    for arm in 0..j {
        out[arm] = (out[arm] - max_eta).exp();
        denom += out[arm];
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
}
