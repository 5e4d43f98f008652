//! Confounding-function sensitivity analysis for individual-level unmeasured
//! confounding: sign-constrained uniform priors per ordered treatment pair,
//! the bias formula, the outcome adjustment, and the nested Monte Carlo
//! driver that pools posteriors across Q1 x Q2 adjusted fits.
//!
//! The adjustment for a row treated with arm j subtracts
//! `sum_{m != j} P(A = m | x, v) * c(j, m)` from its centered complete-data
//! log-time. Because the shift is constant within one replicate fit, applying
//! it once to the observed centered log-times (and thereby to the truncation
//! bound of every censored row) is identical to re-applying it to the imputed
//! values inside every sweep.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{fit_centering, SurvivalDataset};
use crate::effects::equal_tail;
use crate::gps::{estimate_gps, GpsDraws, GpsError, GpsMethod};
use crate::rng::{stream_rng, STREAM_GPS};
use crate::sampler::{fit_with_options, FitOptions, SamplerConfig, SamplerError};

/// RNG stream reserved for confounding-function prior draws.
pub const STREAM_CONFOUNDING: u64 = 1 << 41;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("confounding bound must be non-negative, got {0}")]
    NegativeBound(f64),
    #[error("replicate (q1={q1}, q2={q2}) failed: {source}")]
    Replicate {
        q1: usize,
        q2: usize,
        source: SamplerError,
    },
    #[error("gps estimation failed: {0}")]
    Gps(#[from] GpsError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

/// Prior for one ordered pair's confounding function, constant in (x, v).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum CfPrior {
    /// Uniform(0, bound): those treated with the first arm have longer
    /// potential log survival under it than those treated with the second.
    Positive(f64),
    /// Uniform(-bound, 0).
    Negative(f64),
    /// Uniform(-bound, bound).
    Free(f64),
    /// Degenerate point mass (known confounding function).
    Point(f64),
}

impl CfPrior {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        match self {
            CfPrior::Positive(b) | CfPrior::Negative(b) | CfPrior::Free(b) => {
                if *b < 0.0 || !b.is_finite() {
                    return Err(SensitivityError::NegativeBound(*b));
                }
            }
            CfPrior::Point(v) => {
                if !v.is_finite() {
                    return Err(SensitivityError::NegativeBound(*v));
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            CfPrior::Positive(b) => rng.gen::<f64>() * b,
            CfPrior::Negative(b) => -rng.gen::<f64>() * b,
            CfPrior::Free(b) => (2.0 * rng.gen::<f64>() - 1.0) * b,
            CfPrior::Point(v) => v,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CfPrior::Positive(b) => format!("+{b}"),
            CfPrior::Negative(b) => format!("-{b}"),
            CfPrior::Free(b) => format!("free{b}"),
            CfPrior::Point(v) => format!("point{v}"),
        }
    }
}

/// Priors for every ordered treatment pair (j, m), j != m. Unspecified pairs
/// default to a point mass at zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfoundingSpec {
    n_arms: usize,
    /// Row-major (j * n_arms + m); the diagonal is unused.
    priors: Vec<CfPrior>,
}

impl ConfoundingSpec {
    pub fn zero(n_arms: usize) -> Self {
        assert!(n_arms >= 2);
        ConfoundingSpec {
            n_arms,
            priors: vec![CfPrior::Point(0.0); n_arms * n_arms],
        }
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn set(&mut self, treated: usize, other: usize, prior: CfPrior) -> Result<(), SensitivityError> {
        if treated == other || treated >= self.n_arms || other >= self.n_arms {
            return Err(SensitivityError::Config(format!(
                "invalid pair ({treated}, {other})"
            )));
        }
        prior.validate()?;
        self.priors[treated * self.n_arms + other] = prior;
        Ok(())
    }

    pub fn get(&self, treated: usize, other: usize) -> CfPrior {
        self.priors[treated * self.n_arms + other]
    }

    pub fn is_zero(&self) -> bool {
        self.priors
            .iter()
            .all(|p| matches!(p, CfPrior::Point(v) if *v == 0.0))
    }

    /// One draw of the full set of confounding values.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> ConfoundingValues {
        let mut c = vec![0.0; self.n_arms * self.n_arms];
        for j in 0..self.n_arms {
            for m in 0..self.n_arms {
                if j != m {
                    c[j * self.n_arms + m] = self.priors[j * self.n_arms + m].draw(rng);
                }
            }
        }
        ConfoundingValues {
            n_arms: self.n_arms,
            c,
        }
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        for j in 0..self.n_arms {
            for m in 0..self.n_arms {
                if j != m {
                    let p = self.priors[j * self.n_arms + m];
                    if !matches!(p, CfPrior::Point(v) if v == 0.0) {
                        parts.push(format!("c({},{})={}", j + 1, m + 1, p.describe()));
                    }
                }
            }
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join(";")
        }
    }
}

/// One realized set of confounding-function values, constant in (x, v).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundingValues {
    n_arms: usize,
    c: Vec<f64>,
}

impl ConfoundingValues {
    pub fn zero(n_arms: usize) -> Self {
        ConfoundingValues {
            n_arms,
            c: vec![0.0; n_arms * n_arms],
        }
    }

    pub fn from_values(n_arms: usize, values: &[(usize, usize, f64)]) -> Self {
        let mut out = Self::zero(n_arms);
        for &(j, m, v) in values {
            out.c[j * n_arms + m] = v;
        }
        out
    }

    #[inline]
    pub fn get(&self, treated: usize, other: usize) -> f64 {
        self.c[treated * self.n_arms + other]
    }
}

/// Draw `count` independent confounding-value sets from the spec's priors.
pub fn draw_confounding<R: Rng>(
    spec: &ConfoundingSpec,
    count: usize,
    rng: &mut R,
) -> Vec<ConfoundingValues> {
    (0..count).map(|_| spec.draw(rng)).collect()
}

/// Adjusted complete-data log-times: for a row treated with arm j,
/// `z - sum_{m != j} gps[m] * c(j, m)`. Zero confounding is the identity map.
pub fn adjust_outcomes(
    z: &[f64],
    arms: &[usize],
    gps: &[f64],
    values: &ConfoundingValues,
) -> Vec<f64> {
    let n = z.len();
    let j = values.n_arms;
    assert_eq!(arms.len(), n);
    assert_eq!(gps.len(), n * j);
    (0..n)
        .map(|i| {
            let a = arms[i];
            let mut shift = 0.0;
            for m in 0..j {
                if m != a {
                    shift += gps[i * j + m] * values.get(a, m);
                }
            }
            z[i] - shift
        })
        .collect()
}

/// Per-row adjustment shifts (the quantity subtracted by [`adjust_outcomes`]).
pub fn adjustment_shifts(arms: &[usize], gps: &[f64], values: &ConfoundingValues) -> Vec<f64> {
    let n = arms.len();
    let j = values.n_arms;
    (0..n)
        .map(|i| {
            let a = arms[i];
            let mut shift = 0.0;
            for m in 0..j {
                if m != a {
                    shift += gps[i * j + m] * values.get(a, m);
                }
            }
            shift
        })
        .collect()
}

/// Bias of the naive contrast for the pair (a_j, a_j') at one covariate
/// value:
/// `-p_j c(a_j', a_j) + p_j' c(a_j, a_j')
///  - sum_{m not in {j, j'}} p_m [c(a_j', a_m) - c(a_j, a_m)]`.
pub fn bias_formula(
    gps_row: &[f64],
    values: &ConfoundingValues,
    arm_a: usize,
    arm_b: usize,
) -> f64 {
    let j = values.n_arms;
    assert_eq!(gps_row.len(), j);
    let mut bias = -gps_row[arm_a] * values.get(arm_b, arm_a) + gps_row[arm_b] * values.get(arm_a, arm_b);
    for m in 0..j {
        if m != arm_a && m != arm_b {
            bias -= gps_row[m] * (values.get(arm_b, m) - values.get(arm_a, m));
        }
    }
    bias
}

/// Pooled effect for one pair across the Q1 x Q2 replicates: the default
/// interval is equal-tail quantiles of the union of all posterior
/// functionals; the moment interval uses the pooled mean and variance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PooledEffect {
    pub arm_a: usize,
    pub arm_b: usize,
    pub arm_a_label: String,
    pub arm_b_label: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_moment: f64,
    pub upper_moment: f64,
    pub level: f64,
    pub pooled_draws: Vec<f64>,
    pub per_replicate_mean: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SensitivityResult {
    pub q1: usize,
    pub q2: usize,
    pub pairs: Vec<PooledEffect>,
}

#[derive(Debug, Clone)]
pub struct SensitivityConfig {
    pub q1: usize,
    pub q2: usize,
    pub gps_method: GpsMethod,
    pub level: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            q1: 30,
            q2: 30,
            gps_method: GpsMethod::default(),
            level: 0.95,
        }
    }
}

/// Run the full sensitivity analysis: estimate the GPS with uncertainty,
/// draw confounding values, fit the model on each of Q1 x Q2 adjusted data
/// sets (replicate (i, j) runs single-chain on RNG stream `i * q2 + j`, so
/// a single replicate with zero confounding reproduces a plain fit bit for
/// bit), and pool the per-draw CATE functionals for every ordered pair
/// (a < b).
pub fn run_sensitivity(
    ds: &SurvivalDataset,
    cfg: &SamplerConfig,
    spec: &ConfoundingSpec,
    sa: &SensitivityConfig,
) -> Result<SensitivityResult, SensitivityError> {
    if sa.q1 < 1 || sa.q2 < 1 {
        return Err(SensitivityError::Config("q1 and q2 must be at least 1".into()));
    }
    if spec.n_arms() != ds.n_arms() {
        return Err(SensitivityError::Config(format!(
            "confounding spec has {} arms, data has {}",
            spec.n_arms(),
            ds.n_arms()
        )));
    }
    let centering = fit_centering(ds).map_err(SamplerError::from)?;
    let mut gps_rng = stream_rng(cfg.seed, STREAM_GPS);
    let gps: GpsDraws = estimate_gps(ds, &sa.gps_method, sa.q1, &mut gps_rng)?;

    let mut cf_rng = stream_rng(cfg.seed, STREAM_CONFOUNDING);
    let gammas: Vec<Vec<ConfoundingValues>> = (0..sa.q1)
        .map(|_| draw_confounding(spec, sa.q2, &mut cf_rng))
        .collect();

    let mut replicate_cfg = cfg.clone();
    replicate_cfg.chains = 1;

    let arms = ds.arms().to_vec();
    let replicates: Vec<Result<Vec<Vec<f64>>, SensitivityError>> = (0..sa.q1 * sa.q2)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / sa.q2, idx % sa.q2);
            let shifts = adjustment_shifts(&arms, gps.draw(i), &gammas[i][j]);
            let store = fit_with_options(
                ds,
                &replicate_cfg,
                FitOptions {
                    offsets: Some(shifts),
                    centering: Some(centering),
                    stream: (i * sa.q2 + j) as u64,
                },
            )
            .map_err(|source| SensitivityError::Replicate { q1: i, q2: j, source })?;
            // per-draw CATE functionals for every ordered pair a < b
            let mut per_pair = Vec::new();
            for a in 0..store.n_arms {
                for b in (a + 1)..store.n_arms {
                    let draws: Vec<f64> = (0..store.draws)
                        .map(|d| {
                            let mut acc = 0.0;
                            for r in 0..store.n {
                                acc += store.f_value(d, a, r) - store.f_value(d, b, r);
                            }
                            acc / store.n as f64
                        })
                        .collect();
                    per_pair.push(draws);
                }
            }
            Ok(per_pair)
        })
        .collect();

    let mut collected = Vec::with_capacity(replicates.len());
    for r in replicates {
        collected.push(r?);
    }

    let n_arms = ds.n_arms();
    let mut pair_idx = Vec::new();
    for a in 0..n_arms {
        for b in (a + 1)..n_arms {
            pair_idx.push((a, b));
        }
    }
    let z = normal_quantile(0.5 + sa.level / 2.0);
    let pairs = pair_idx
        .iter()
        .enumerate()
        .map(|(pi, &(a, b))| {
            let mut pooled = Vec::new();
            let mut per_replicate_mean = Vec::new();
            for rep in &collected {
                let draws = &rep[pi];
                per_replicate_mean.push(draws.iter().sum::<f64>() / draws.len() as f64);
                pooled.extend_from_slice(draws);
            }
            let estimate = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let (lower, upper) = equal_tail(&pooled, sa.level);
            let var =
                pooled.iter().map(|v| (v - estimate).powi(2)).sum::<f64>() / pooled.len() as f64;
            let half = z * var.sqrt();
            PooledEffect {
                arm_a: a,
                arm_b: b,
                arm_a_label: ds.arm_labels()[a].clone(),
                arm_b_label: ds.arm_labels()[b].clone(),
                estimate,
                lower,
                upper,
                lower_moment: estimate - half,
                upper_moment: estimate + half,
                level: sa.level,
                pooled_draws: pooled,
                per_replicate_mean,
            }
        })
        .collect();
    Ok(SensitivityResult {
        q1: sa.q1,
        q2: sa.q2,
        pairs,
    })
}

fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Sensitivity report CSV, one row per (scenario, pair).
pub fn sensitivity_report_csv(
    blocks: &[(String, ConfoundingSpec, SensitivityResult)],
    path: &Path,
) -> Result<(), SensitivityError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "scenario,pair,estimate,lower,upper,lower_moment,upper_moment,level,q1,q2,confounding"
    )?;
    for (name, spec, res) in blocks {
        for p in &res.pairs {
            writeln!(
                w,
                "{name},{}:{},{},{},{},{},{},{},{},{},{}",
                p.arm_a_label,
                p.arm_b_label,
                p.estimate,
                p.lower,
                p.upper,
                p.lower_moment,
                p.upper_moment,
                p.level,
                res.q1,
                res.q2,
                spec.describe()
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Exact discrete three-arm toy with one binary unmeasured confounder,
/// used by the bias-identity oracles. All expectations are closed-form.
pub struct DiscreteToy {
    /// P(U = 1).
    pub p_u: f64,
    /// P(A = j | u) indexed [u][j].
    pub assign: [[f64; 3]; 2],
    /// E[log T(j) | u] indexed [u][j].
    pub mean_log_t: [[f64; 3]; 2],
}

impl DiscreteToy {
    pub fn canonical() -> Self {
        DiscreteToy {
            p_u: 0.4,
            assign: [[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]],
            mean_log_t: [[1.0, 0.4, -0.2], [2.0, 1.8, 0.9]],
        }
    }

    pub fn p_arm(&self, j: usize) -> f64 {
        (1.0 - self.p_u) * self.assign[0][j] + self.p_u * self.assign[1][j]
    }

    pub fn p_u_given_arm(&self, j: usize) -> f64 {
        self.p_u * self.assign[1][j] / self.p_arm(j)
    }

    /// E[log T(j) | A = m].
    pub fn mean_potential_given_arm(&self, j: usize, m: usize) -> f64 {
        let pu = self.p_u_given_arm(m);
        (1.0 - pu) * self.mean_log_t[0][j] + pu * self.mean_log_t[1][j]
    }

    /// True confounding function c(j, m).
    pub fn confounding(&self, j: usize, m: usize) -> f64 {
        self.mean_potential_given_arm(j, j) - self.mean_potential_given_arm(j, m)
    }

    pub fn confounding_values(&self) -> ConfoundingValues {
        let mut vals = Vec::new();
        for j in 0..3 {
            for m in 0..3 {
                if j != m {
                    vals.push((j, m, self.confounding(j, m)));
                }
            }
        }
        ConfoundingValues::from_values(3, &vals)
    }

    /// Population CATE on the log scale.
    pub fn cate(&self, j: usize, m: usize) -> f64 {
        let e = |arm: usize| {
            (1.0 - self.p_u) * self.mean_log_t[0][arm] + self.p_u * self.mean_log_t[1][arm]
        };
        e(j) - e(m)
    }

    /// Naive observed contrast E[log T | A=j] - E[log T | A=m].
    pub fn naive(&self, j: usize, m: usize) -> f64 {
        self.mean_potential_given_arm(j, j) - self.mean_potential_given_arm(m, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_confounding_is_bitwise_identity() {
        let z = vec![0.3, -1.2, 4.5, 0.0];
        let arms = vec![0, 1, 2, 1];
        let gps = vec![1.0 / 3.0; 12];
        let values = ConfoundingValues::zero(3);
        let adjusted = adjust_outcomes(&z, &arms, &gps, &values);
        assert_eq!(adjusted, z);
    }

    #[test]
    fn two_arm_arithmetic_example() {
        // J=2, GPS=(0.5, 0.5), c(1,2)=0.4: a row with A=1 shifts by -0.2
        let values = ConfoundingValues::from_values(2, &[(0, 1, 0.4)]);
        let adjusted = adjust_outcomes(&[1.0], &[0], &[0.5, 0.5], &values);
        assert!((adjusted[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn prior_draw_bounds_and_moments() {
        let mut rng = crate::rng::stream_rng(81, 0);
        let mut spec = ConfoundingSpec::zero(3);
        spec.set(0, 1, CfPrior::Positive(0.675)).unwrap();
        spec.set(1, 0, CfPrior::Negative(0.675)).unwrap();
        spec.set(1, 2, CfPrior::Free(0.5)).unwrap();
        let draws = draw_confounding(&spec, 50_000, &mut rng);
        let mut sum01 = 0.0;
        for d in &draws {
            let c01 = d.get(0, 1);
            assert!((0.0..=0.675).contains(&c01));
            assert!((-0.675..=0.0).contains(&d.get(1, 0)));
            assert!(d.get(1, 2).abs() <= 0.5);
            assert_eq!(d.get(2, 0), 0.0);
            sum01 += c01;
        }
        let mean01 = sum01 / draws.len() as f64;
        assert!((mean01 - 0.675 / 2.0).abs() / (0.675 / 2.0) < 0.01, "{mean01}");
    }

    #[test]
    fn zero_bound_reduces_to_point_mass_zero() {
        let mut rng = crate::rng::stream_rng(82, 0);
        let mut spec = ConfoundingSpec::zero(2);
        spec.set(0, 1, CfPrior::Free(0.0)).unwrap();
        for d in draw_confounding(&spec, 100, &mut rng) {
            assert_eq!(d.get(0, 1), 0.0);
        }
        assert!(ConfoundingSpec::zero(2).is_zero());
    }

    #[test]
    fn negative_bound_rejected() {
        let mut spec = ConfoundingSpec::zero(2);
        assert!(matches!(
            spec.set(0, 1, CfPrior::Positive(-0.1)),
            Err(SensitivityError::NegativeBound(_))
        ));
    }

    #[test]
    fn bias_formula_trivial_cases() {
        let values = ConfoundingValues::zero(3);
        assert_eq!(bias_formula(&[0.2, 0.3, 0.5], &values, 0, 1), 0.0);

        // J=2 structural reduction: empty third-arm sum
        let v2 = ConfoundingValues::from_values(2, &[(0, 1, 0.7), (1, 0, -0.4)]);
        let p = [0.6, 0.4];
        let expect = -p[0] * v2.get(1, 0) + p[1] * v2.get(0, 1);
        assert!((bias_formula(&p, &v2, 0, 1) - expect).abs() < 1e-15);
    }

    #[test]
    fn bias_formula_is_antisymmetric_under_pair_swap() {
        let toy = DiscreteToy::canonical();
        let values = toy.confounding_values();
        let p = [toy.p_arm(0), toy.p_arm(1), toy.p_arm(2)];
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    let fwd = bias_formula(&p, &values, a, b);
                    let rev = bias_formula(&p, &values, b, a);
                    assert!((fwd + rev).abs() < 1e-14, "({a},{b}): {fwd} vs {rev}");
                }
            }
        }
    }

    // Exhaustive-enumeration oracle: on the discrete toy the bias formula
    // must equal naive minus truth to float precision, for every pair.
    #[test]
    fn bias_formula_matches_enumeration() {
        let toy = DiscreteToy::canonical();
        let values = toy.confounding_values();
        let p = [toy.p_arm(0), toy.p_arm(1), toy.p_arm(2)];
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    let brute = toy.naive(a, b) - toy.cate(a, b);
                    let formula = bias_formula(&p, &values, a, b);
                    assert!(
                        (brute - formula).abs() < 1e-12,
                        "pair ({a},{b}): {brute} vs {formula}"
                    );
                }
            }
        }
    }

    // Adjusting expectations by the confounding shifts removes the bias
    // exactly (the identity behind the outcome correction).
    #[test]
    fn adjustment_removes_bias_exactly_in_expectation() {
        let toy = DiscreteToy::canonical();
        let values = toy.confounding_values();
        let p = [toy.p_arm(0), toy.p_arm(1), toy.p_arm(2)];
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    let shift = |j: usize| -> f64 {
                        (0..3)
                            .filter(|m| *m != j)
                            .map(|m| p[m] * values.get(j, m))
                            .sum()
                    };
                    let adjusted = (toy.naive(a, b) - shift(a) + shift(b)) - toy.cate(a, b);
                    assert!(adjusted.abs() < 1e-12, "pair ({a},{b}): residual {adjusted}");
                }
            }
        }
    }

    #[test]
    fn spec_describe_lists_nonzero_pairs() {
        let mut spec = ConfoundingSpec::zero(3);
        spec.set(1, 2, CfPrior::Positive(0.675)).unwrap();
        spec.set(2, 1, CfPrior::Negative(0.675)).unwrap();
        let d = spec.describe();
        assert!(d.contains("c(2,3)=+0.675"));
        assert!(d.contains("c(3,2)=-0.675"));
    }
}
