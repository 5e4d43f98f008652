//! Posterior causal-effect estimation: pairwise effects on the log-time,
//! survival-probability and restricted-mean-survival scales, plus
//! counterfactual survival curves.
//!
//! Everything here is a pure function over an immutable [`PosteriorStore`];
//! draw-level work is parallelized with rayon.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::sampler::PosteriorStore;

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("unknown treatment label `{0}`")]
    UnknownArm(String),
    #[error("arm index {0} out of range")]
    ArmOutOfRange(usize),
    #[error("reference group for arm {0} is empty")]
    EmptyReferenceGroup(usize),
    #[error("grid must be ascending and positive (t = 0 allowed only as the first point): {0}")]
    BadGrid(String),
    #[error("grid ends at {grid_max} but t* = {t_star}")]
    GridTooShort { grid_max: f64, t_star: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scale of a pairwise effect.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EffectScale {
    LogTime,
    SurvivalProb { t_star: f64 },
    Rmst { t_star: f64 },
}

impl EffectScale {
    pub fn name(&self) -> &'static str {
        match self {
            EffectScale::LogTime => "logtime",
            EffectScale::SurvivalProb { .. } => "surv",
            EffectScale::Rmst { .. } => "rmst",
        }
    }
}

/// A pairwise treatment effect: posterior mean and equal-tail credible
/// interval over the per-draw functionals.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EffectEstimate {
    pub arm_a: usize,
    pub arm_b: usize,
    pub arm_a_label: String,
    pub arm_b_label: String,
    pub scale: EffectScale,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub draws: Vec<f64>,
}

impl EffectEstimate {
    fn from_draws(
        store: &PosteriorStore,
        arm_a: usize,
        arm_b: usize,
        scale: EffectScale,
        draws: Vec<f64>,
        level: f64,
    ) -> Self {
        assert!((0.0..1.0).contains(&level) && level > 0.0);
        match scale {
            EffectScale::SurvivalProb { .. } => {
                debug_assert!(draws.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
            EffectScale::Rmst { t_star } => {
                debug_assert!(draws.iter().all(|v| v.abs() <= t_star));
            }
            EffectScale::LogTime => {}
        }
        let point = mean(&draws);
        let (lower, upper) = equal_tail(&draws, level);
        EffectEstimate {
            arm_a,
            arm_b,
            arm_a_label: store.arm_labels[arm_a].clone(),
            arm_b_label: store.arm_labels[arm_b].clone(),
            scale,
            point,
            lower,
            upper,
            level,
            draws,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Equal-tail interval by linear-interpolation quantiles.
pub fn equal_tail(draws: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail))
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn check_arm(store: &PosteriorStore, arm: usize) -> Result<(), EffectsError> {
    if arm >= store.n_arms {
        Err(EffectsError::ArmOutOfRange(arm))
    } else {
        Ok(())
    }
}

/// Log-time CATE for the ordered pair (a, b): per draw, the average over all
/// individuals of f(a, x_i) - f(b, x_i). The cluster intercepts cancel
/// exactly in this contrast.
pub fn cate(
    store: &PosteriorStore,
    arm_a: usize,
    arm_b: usize,
    level: f64,
) -> Result<EffectEstimate, EffectsError> {
    check_arm(store, arm_a)?;
    check_arm(store, arm_b)?;
    let n = store.n as f64;
    let draws: Vec<f64> = (0..store.draws)
        .map(|d| {
            let mut acc = 0.0;
            for i in 0..store.n {
                acc += store.f_value(d, arm_a, i) - store.f_value(d, arm_b, i);
            }
            acc / n
        })
        .collect();
    Ok(EffectEstimate::from_draws(
        store,
        arm_a,
        arm_b,
        EffectScale::LogTime,
        draws,
        level,
    ))
}

/// Log-time CATT: as [`cate`] but averaging only over rows whose observed
/// treatment is the reference arm.
pub fn catt(
    store: &PosteriorStore,
    reference: usize,
    comparator: usize,
    level: f64,
) -> Result<EffectEstimate, EffectsError> {
    check_arm(store, reference)?;
    check_arm(store, comparator)?;
    let rows: Vec<usize> = (0..store.n)
        .filter(|&i| store.row_arm[i] == reference)
        .collect();
    if rows.is_empty() {
        return Err(EffectsError::EmptyReferenceGroup(reference));
    }
    let nj = rows.len() as f64;
    let draws: Vec<f64> = (0..store.draws)
        .map(|d| {
            let mut acc = 0.0;
            for &i in &rows {
                acc += store.f_value(d, reference, i) - store.f_value(d, comparator, i);
            }
            acc / nj
        })
        .collect();
    Ok(EffectEstimate::from_draws(
        store,
        reference,
        comparator,
        EffectScale::LogTime,
        draws,
        level,
    ))
}

/// Counterfactual group survival curve for one arm: per draw, the average
/// over individuals of 1 - Phi((log t - f(a, x_i) - b_{k(i)}) / sigma),
/// using the draw's own cluster intercepts and residual sd. The stored f
/// already carries mu_aft added back.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SurvivalCurve {
    pub arm: usize,
    pub grid: Vec<f64>,
    /// draws x grid, row-major per draw.
    pub values: Vec<f64>,
    pub draws: usize,
}

impl SurvivalCurve {
    pub fn value(&self, draw: usize, g: usize) -> f64 {
        self.values[draw * self.grid.len() + g]
    }

    /// Pointwise posterior mean and equal-tail band.
    pub fn summarize(&self, level: f64) -> Vec<(f64, f64, f64, f64)> {
        let g = self.grid.len();
        (0..g)
            .map(|j| {
                let col: Vec<f64> = (0..self.draws).map(|d| self.value(d, j)).collect();
                let (lo, hi) = equal_tail(&col, level);
                (self.grid[j], mean(&col), lo, hi)
            })
            .collect()
    }
}

fn validate_grid(grid: &[f64]) -> Result<(), EffectsError> {
    if grid.is_empty() {
        return Err(EffectsError::BadGrid("empty grid".into()));
    }
    for (i, &t) in grid.iter().enumerate() {
        if !t.is_finite() || t < 0.0 || (t == 0.0 && i > 0) {
            return Err(EffectsError::BadGrid(format!("non-positive grid point {t} at {i}")));
        }
        if i > 0 && t <= grid[i - 1] {
            return Err(EffectsError::BadGrid(format!("grid not ascending at {i}")));
        }
    }
    Ok(())
}

pub fn counterfactual_survival(
    store: &PosteriorStore,
    arm: usize,
    grid: &[f64],
) -> Result<SurvivalCurve, EffectsError> {
    check_arm(store, arm)?;
    validate_grid(grid)?;
    let g = grid.len();
    let log_grid: Vec<f64> = grid.iter().map(|t| t.ln()).collect(); // ln 0 = -inf -> S = 1
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let values: Vec<f64> = (0..store.draws)
        .into_par_iter()
        .flat_map_iter(|d| {
            let sigma = store.sigma2[d].sqrt();
            let mut row = vec![0.0; g];
            for i in 0..store.n {
                let m = store.f_value(d, arm, i) + store.b_value(d, store.row_cluster[i]);
                for (j, &u) in log_grid.iter().enumerate() {
                    let s = if u == f64::NEG_INFINITY {
                        1.0
                    } else {
                        1.0 - std_normal.cdf((u - m) / sigma)
                    };
                    row[j] += s;
                }
            }
            let n = store.n as f64;
            row.iter_mut().for_each(|v| *v /= n);
            row
        })
        .collect();
    Ok(SurvivalCurve {
        arm,
        grid: grid.to_vec(),
        values,
        draws: store.draws,
    })
}

/// Equally spaced grid of `n` points on [0, t_star].
pub fn survival_grid(t_star: f64, n: usize) -> Vec<f64> {
    assert!(t_star > 0.0 && n >= 2);
    (0..n).map(|i| t_star * i as f64 / (n - 1) as f64).collect()
}

pub const DEFAULT_SURVIVAL_GRID: usize = 2048;

/// Trapezoidal restricted mean survival time on [0, t_star], one value per
/// draw. The grid must start at or below the first positive time and reach
/// t_star; S is linearly interpolated at t_star when it falls between grid
/// points, and S(0) = 1 is prepended when the grid starts after zero.
pub fn rmst(curve: &SurvivalCurve, t_star: f64) -> Result<Vec<f64>, EffectsError> {
    if t_star <= 0.0 {
        return Err(EffectsError::BadGrid("t* must be positive".into()));
    }
    let gmax = *curve.grid.last().unwrap();
    if gmax < t_star {
        return Err(EffectsError::GridTooShort {
            grid_max: gmax,
            t_star,
        });
    }
    let g = curve.grid.len();
    let out = (0..curve.draws)
        .map(|d| {
            let mut area = 0.0;
            let mut prev_t = 0.0;
            let mut prev_s = 1.0;
            for j in 0..g {
                let t = curve.grid[j];
                let s = curve.value(d, j);
                if t == 0.0 {
                    prev_t = 0.0;
                    prev_s = s;
                    continue;
                }
                if t >= t_star {
                    // interpolate S at t_star and close the integral
                    let w = if t == prev_t { 0.0 } else { (t_star - prev_t) / (t - prev_t) };
                    let s_star = prev_s + w * (s - prev_s);
                    area += 0.5 * (prev_s + s_star) * (t_star - prev_t);
                    return area;
                }
                area += 0.5 * (prev_s + s) * (t - prev_t);
                prev_t = t;
                prev_s = s;
            }
            area
        })
        .collect();
    Ok(out)
}

/// Difference in group survival probability at t_star for (a, b).
pub fn survival_prob_effect(
    store: &PosteriorStore,
    arm_a: usize,
    arm_b: usize,
    t_star: f64,
    level: f64,
) -> Result<EffectEstimate, EffectsError> {
    if t_star <= 0.0 {
        return Err(EffectsError::BadGrid("t* must be positive".into()));
    }
    let grid = [t_star];
    let sa = counterfactual_survival(store, arm_a, &grid)?;
    let sb = counterfactual_survival(store, arm_b, &grid)?;
    let draws: Vec<f64> = (0..store.draws)
        .map(|d| sa.value(d, 0) - sb.value(d, 0))
        .collect();
    Ok(EffectEstimate::from_draws(
        store,
        arm_a,
        arm_b,
        EffectScale::SurvivalProb { t_star },
        draws,
        level,
    ))
}

/// Difference in restricted mean survival time on [0, t_star] for (a, b),
/// by trapezoid on an equally spaced grid of `grid_n` points.
pub fn rmst_effect(
    store: &PosteriorStore,
    arm_a: usize,
    arm_b: usize,
    t_star: f64,
    grid_n: usize,
    level: f64,
) -> Result<EffectEstimate, EffectsError> {
    let grid = survival_grid(t_star, grid_n.max(2));
    let sa = counterfactual_survival(store, arm_a, &grid)?;
    let sb = counterfactual_survival(store, arm_b, &grid)?;
    let ra = rmst(&sa, t_star)?;
    let rb = rmst(&sb, t_star)?;
    let draws: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x - y).collect();
    Ok(EffectEstimate::from_draws(
        store,
        arm_a,
        arm_b,
        EffectScale::Rmst { t_star },
        draws,
        level,
    ))
}

/// Effects summary CSV: pair, scale, estimate, lower, upper.
pub fn effects_summary_csv(estimates: &[EffectEstimate], path: &Path) -> Result<(), EffectsError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "pair,scale,estimate,lower,upper,level")?;
    for e in estimates {
        writeln!(
            w,
            "{}:{},{},{},{},{},{}",
            e.arm_a_label,
            e.arm_b_label,
            e.scale.name(),
            e.point,
            e.lower,
            e.upper,
            e.level
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Survival-curve CSV suitable for plotting: arm, t, mean, lower, upper.
pub fn survival_curve_csv(
    store: &PosteriorStore,
    curves: &[SurvivalCurve],
    level: f64,
    path: &Path,
) -> Result<(), EffectsError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "arm,t,mean,lower,upper")?;
    for c in curves {
        for (t, m, lo, hi) in c.summarize(level) {
            writeln!(w, "{},{t},{m},{lo},{hi}", store.arm_labels[c.arm])?;
        }
    }
    w.flush()?;
    Ok(())
}
