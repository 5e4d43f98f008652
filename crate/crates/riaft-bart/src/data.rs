//! Clustered survival datasets: ingest, validation, response centering.
//!
//! Every other module consumes [`SurvivalDataset`]. Treatments and clusters
//! are re-indexed to dense `0..J`, `0..K` at construction (sorted label
//! order, numeric-aware) with the original labels retained. Categorical
//! covariates are expanded to 0/1 indicator columns at ingest; missing
//! values are rejected, not imputed.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("missing value, row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("malformed value `{value}`, row {row}, column `{column}`")]
    MalformedValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-positive time, row {0}")]
    NonPositiveTime(usize),
    #[error("event indicator must be 0 or 1, row {0}")]
    BadEventIndicator(usize),
    #[error("dataset must contain at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("at least two treatment levels required, got {0}")]
    TooFewTreatments(usize),
    #[error("all rows are censored; residual scale is unidentified")]
    AllCensored,
    #[error("log-times have zero variance; residual scale is degenerate")]
    DegenerateScale,
    #[error("centering fit did not converge after {iters} iterations (mu={mu}, sigma={sigma})")]
    CenteringNoConvergence { iters: usize, mu: f64, sigma: f64 },
    #[error("column count mismatch, row {0}")]
    RaggedRow(usize),
}

/// Column mapping and covariate declarations for CSV ingest.
#[derive(Debug, Clone)]
pub struct IngestSchema {
    pub time: String,
    pub event: String,
    pub cluster: String,
    pub trt: String,
    /// Covariate columns to expand into indicator columns (first category
    /// is the dropped reference).
    pub categorical: Vec<String>,
    /// Columns ignored entirely.
    pub exclude: Vec<String>,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            time: "time".into(),
            event: "event".into(),
            cluster: "cluster".into(),
            trt: "trt".into(),
            categorical: Vec::new(),
            exclude: Vec::new(),
        }
    }
}

/// A validated clustered survival dataset with dense treatment and cluster
/// indices.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurvivalDataset {
    x: Vec<f64>,
    n_cols: usize,
    names: Vec<String>,
    y: Vec<f64>,
    event: Vec<bool>,
    arm: Vec<usize>,
    cluster: Vec<usize>,
    arm_labels: Vec<String>,
    cluster_labels: Vec<String>,
}

impl SurvivalDataset {
    /// Build a dataset from columns, re-indexing labels densely and
    /// validating every invariant.
    pub fn from_parts(
        x: Vec<f64>,
        n_cols: usize,
        names: Vec<String>,
        y: Vec<f64>,
        event: Vec<bool>,
        arm_labels_per_row: &[String],
        cluster_labels_per_row: &[String],
    ) -> Result<Self, DataError> {
        let n = y.len();
        if n == 0 {
            return Err(DataError::TooFewRows { needed: 1, got: 0 });
        }
        assert_eq!(x.len(), n * n_cols, "design storage mismatch");
        assert_eq!(names.len(), n_cols, "name count mismatch");
        for (i, &t) in y.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(DataError::NonPositiveTime(i + 1));
            }
        }
        let (arm, arm_labels) = dense_index(arm_labels_per_row);
        let (cluster, cluster_labels) = dense_index(cluster_labels_per_row);
        if arm_labels.len() < 2 {
            return Err(DataError::TooFewTreatments(arm_labels.len()));
        }
        Ok(SurvivalDataset {
            x,
            n_cols,
            names,
            y,
            event,
            arm,
            cluster,
            arm_labels,
            cluster_labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
    pub fn n_covariates(&self) -> usize {
        self.n_cols
    }
    pub fn n_arms(&self) -> usize {
        self.arm_labels.len()
    }
    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }
    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }
    pub fn times(&self) -> &[f64] {
        &self.y
    }
    pub fn events(&self) -> &[bool] {
        &self.event
    }
    /// Dense 0-based treatment index per row.
    pub fn arms(&self) -> &[usize] {
        &self.arm
    }
    /// Dense 0-based cluster index per row.
    pub fn clusters(&self) -> &[usize] {
        &self.cluster
    }
    pub fn arm_labels(&self) -> &[String] {
        &self.arm_labels
    }
    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }
    pub fn arm_by_label(&self, label: &str) -> Option<usize> {
        self.arm_labels.iter().position(|l| l == label)
    }
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters()];
        for &k in &self.cluster {
            sizes[k] += 1;
        }
        sizes
    }
    pub fn censored_fraction(&self) -> f64 {
        self.event.iter().filter(|e| !**e).count() as f64 / self.n_rows() as f64
    }

    /// Multiply every observed time by `m > 0` (unit change).
    pub fn rescale_times(&mut self, m: f64) {
        assert!(m > 0.0 && m.is_finite());
        for t in &mut self.y {
            *t *= m;
        }
    }
}

/// Dense re-indexing by sorted label order; numeric labels sort numerically.
fn dense_index(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeSet<&String> = labels.iter().collect();
    let mut ordered: Vec<String> = distinct.into_iter().cloned().collect();
    let all_numeric = ordered.iter().all(|l| l.parse::<f64>().is_ok());
    if all_numeric {
        ordered.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap()
        });
    }
    let idx = |l: &String| ordered.iter().position(|o| o == l).unwrap();
    (labels.iter().map(idx).collect(), ordered)
}

/// Load a dataset from a CSV file per the schema. Remaining header columns
/// (not mapped, not excluded) become covariates; declared categorical
/// columns are expanded to indicator columns named `col=value` with the
/// first (sorted) category dropped.
pub fn load_dataset(path: &Path, schema: &IngestSchema) -> Result<SurvivalDataset, DataError> {
    let file = std::fs::File::open(path)?;
    load_dataset_from_reader(file, schema)
}

pub fn load_dataset_from_reader<R: Read>(
    reader: R,
    schema: &IngestSchema,
) -> Result<SurvivalDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    };
    let time_i = col(&schema.time)?;
    let event_i = col(&schema.event)?;
    let cluster_i = col(&schema.cluster)?;
    let trt_i = col(&schema.trt)?;
    for c in schema.categorical.iter().chain(schema.exclude.iter()) {
        col(c)?;
    }

    let special = [time_i, event_i, cluster_i, trt_i];
    let excluded: Vec<usize> = schema
        .exclude
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|i| !special.contains(i) && !excluded.contains(i))
        .collect();
    let categorical: Vec<usize> = schema
        .categorical
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;

    let mut y = Vec::new();
    let mut event = Vec::new();
    let mut arm_lab = Vec::new();
    let mut cluster_lab = Vec::new();
    let mut raw_cov: Vec<Vec<String>> = vec![Vec::new(); cov_cols.len()];

    for (ri, record) in rdr.records().enumerate() {
        let row = ri + 1; // 1-based data row, matching spec error messages
        let record = record?;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRow(row));
        }
        let cell = |i: usize| -> Result<&str, DataError> {
            let v = record.get(i).unwrap_or("").trim();
            if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
                Err(DataError::MissingValue {
                    row,
                    column: headers[i].clone(),
                })
            } else {
                Ok(v)
            }
        };
        let parse_f64 = |i: usize| -> Result<f64, DataError> {
            let v = cell(i)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| DataError::MalformedValue {
                    row,
                    column: headers[i].clone(),
                    value: v.to_string(),
                })
        };
        let t = parse_f64(time_i)?;
        if !(t > 0.0) {
            return Err(DataError::NonPositiveTime(row));
        }
        let e = parse_f64(event_i)?;
        if e != 0.0 && e != 1.0 {
            return Err(DataError::BadEventIndicator(row));
        }
        y.push(t);
        event.push(e == 1.0);
        cluster_lab.push(cell(cluster_i)?.to_string());
        arm_lab.push(cell(trt_i)?.to_string());
        for (slot, &ci) in raw_cov.iter_mut().zip(cov_cols.iter()) {
            slot.push(cell(ci)?.to_string());
        }
    }
    if y.is_empty() {
        return Err(DataError::TooFewRows { needed: 1, got: 0 });
    }

    // Expand covariates: categorical -> dropped-first indicators, others parsed numeric.
    let n = y.len();
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (slot, &ci) in raw_cov.iter().zip(cov_cols.iter()) {
        let hname = &headers[ci];
        if categorical.contains(&ci) {
            let mut levels: Vec<String> = slot
                .iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .cloned()
                .collect();
            if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
                levels.sort_by(|a, b| {
                    a.parse::<f64>()
                        .unwrap()
                        .partial_cmp(&b.parse::<f64>().unwrap())
                        .unwrap()
                });
            }
            for level in levels.iter().skip(1) {
                names.push(format!("{hname}={level}"));
                columns.push(slot.iter().map(|v| f64::from(v == level)).collect());
            }
        } else {
            let mut colv = Vec::with_capacity(n);
            for (ri, v) in slot.iter().enumerate() {
                let x = v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    DataError::MalformedValue {
                        row: ri + 1,
                        column: hname.clone(),
                        value: v.clone(),
                    }
                })?;
                colv.push(x);
            }
            names.push(hname.clone());
            columns.push(colv);
        }
    }
    let n_cols = columns.len();
    let mut x = vec![0.0; n * n_cols];
    for (j, colv) in columns.iter().enumerate() {
        for i in 0..n {
            x[i * n_cols + j] = colv[i];
        }
    }
    SurvivalDataset::from_parts(x, n_cols, names, y, event, &arm_lab, &cluster_lab)
}

/// Write the dense-indexed dataset back to CSV. `load_dataset` on the output
/// (with no categorical declarations) reproduces the dataset exactly.
pub fn save_dataset(ds: &SurvivalDataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    save_dataset_to_writer(ds, file)
}

pub fn save_dataset_to_writer<W: Write>(ds: &SurvivalDataset, w: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![
        "time".to_string(),
        "event".to_string(),
        "cluster".to_string(),
        "trt".to_string(),
    ];
    header.extend(ds.names.iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..ds.n_rows() {
        let mut rec = vec![
            format!("{}", ds.y[i]),
            if ds.event[i] { "1".into() } else { "0".into() },
            ds.cluster_labels[ds.cluster[i]].clone(),
            ds.arm_labels[ds.arm[i]].clone(),
        ];
        rec.extend(ds.covariate_row(i).iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Intercept and residual scale of the lognormal intercept-only AFT fit,
/// in log-time units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CenteringInfo {
    pub mu_aft: f64,
    pub sigma_aft: f64,
}

/// Full MLE output including observed-information standard errors.
#[derive(Debug, Clone, Copy)]
pub struct CenteringFit {
    pub info: CenteringInfo,
    pub se_mu: f64,
    pub se_sigma: f64,
    pub iterations: usize,
}

/// Fit the lognormal intercept-only AFT model by maximum likelihood.
///
/// With zero censoring this reduces to the sample mean and MLE (divisor N)
/// standard deviation of the log-times.
pub fn fit_centering(ds: &SurvivalDataset) -> Result<CenteringInfo, DataError> {
    fit_centering_detailed(ds).map(|f| f.info)
}

pub fn fit_centering_detailed(ds: &SurvivalDataset) -> Result<CenteringFit, DataError> {
    if ds.n_rows() < 2 {
        return Err(DataError::TooFewRows {
            needed: 2,
            got: ds.n_rows(),
        });
    }
    let logt: Vec<f64> = ds.times().iter().map(|t| t.ln()).collect();
    lognormal_intercept_mle(&logt, ds.events())
}

/// Newton-Raphson in (mu, log sigma); gradient tolerance 1e-8, 100 iteration
/// cap, initialized treating censored rows as events.
pub fn lognormal_intercept_mle(logt: &[f64], event: &[bool]) -> Result<CenteringFit, DataError> {
    let n = logt.len();
    assert_eq!(event.len(), n);
    if !event.iter().any(|&e| e) {
        return Err(DataError::AllCensored);
    }
    let mean0 = logt.iter().sum::<f64>() / n as f64;
    let var0 = logt.iter().map(|u| (u - mean0).powi(2)).sum::<f64>() / n as f64;
    if var0 <= 0.0 {
        return Err(DataError::DegenerateScale);
    }
    let mut mu = mean0;
    let mut s = 0.5 * var0.ln(); // log sigma

    let loglik = |mu: f64, s: f64| -> f64 {
        let sig = s.exp();
        let mut ll = 0.0;
        for (&u, &e) in logt.iter().zip(event) {
            let r = (u - mu) / sig;
            if e {
                ll += -s - 0.5 * r * r;
            } else {
                ll += norm_log_sf(r);
            }
        }
        ll
    };

    // Gradient tolerance scales with the sample size: the log likelihood is
    // O(n), so its float-evaluation noise is too; 1e-8 is per observation.
    let gtol = 1e-8 * (n as f64).max(1.0);
    let mut iterations = 0;
    for iter in 0..100 {
        iterations = iter + 1;
        let sig = s.exp();
        let (mut g_mu, mut g_s) = (0.0, 0.0);
        let (mut h_mm, mut h_ms, mut h_ss) = (0.0, 0.0, 0.0);
        for (&u, &e) in logt.iter().zip(event) {
            let r = (u - mu) / sig;
            if e {
                g_mu += r / sig;
                g_s += r * r - 1.0;
                h_mm += -1.0 / (sig * sig);
                h_ms += -2.0 * r / sig;
                h_ss += -2.0 * r * r;
            } else {
                let h = norm_hazard(r);
                let hp = h * (h - r); // d hazard / d r
                g_mu += h / sig;
                g_s += h * r;
                h_mm += -hp / (sig * sig);
                h_ms += -(hp * r + h) / sig;
                h_ss += -r * (hp * r + h);
            }
        }
        let gnorm = (g_mu * g_mu + g_s * g_s).sqrt();
        let line_search_dead = gnorm < 1e4 * gtol; // noise-floor fallback below
        if gnorm < gtol {
            return finish(mu, s, logt, event, iterations);
        }
        // Newton step with step halving; fall back to a unit gradient step
        // whenever the Hessian is unusable (near-singular or not giving an
        // ascent direction).
        let det = h_mm * h_ss - h_ms * h_ms;
        let (mut dmu, mut ds) = if det.abs() > 1e-300 {
            ((-g_mu * h_ss + g_s * h_ms) / det, (g_mu * h_ms - g_s * h_mm) / det)
        } else {
            (0.0, 0.0)
        };
        let dot = dmu * g_mu + ds * g_s;
        let dnorm = (dmu * dmu + ds * ds).sqrt();
        if !dot.is_finite() || dot <= 0.0 || !dnorm.is_finite() || dnorm > 1e6 {
            dmu = g_mu / gnorm;
            ds = g_s / gnorm;
        }
        let ll0 = loglik(mu, s);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (mu1, s1) = (mu + step * dmu, s + step * ds);
            let ll1 = loglik(mu1, s1);
            if mu1.is_finite() && s1.is_finite() && ll1.is_finite() && ll1 > ll0 - 1e-14 {
                mu = mu1;
                s = s1;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if line_search_dead {
                // The gradient is already at the float noise floor of the
                // O(n) likelihood; further line searches cannot resolve an
                // improvement. Finish with the information-based errors.
                return finish(mu, s, logt, event, iterations);
            }
            break;
        }
    }
    Err(DataError::CenteringNoConvergence {
        iters: iterations,
        mu,
        sigma: s.exp(),
    })
}

/// Final MLE packaging: observed-information standard errors at (mu, s).
fn finish(
    mu: f64,
    s: f64,
    logt: &[f64],
    event: &[bool],
    iterations: usize,
) -> Result<CenteringFit, DataError> {
    let sig = s.exp();
    let (mut h_mm, mut h_ms, mut h_ss) = (0.0, 0.0, 0.0);
    for (&u, &e) in logt.iter().zip(event) {
        let r = (u - mu) / sig;
        if e {
            h_mm += -1.0 / (sig * sig);
            h_ms += -2.0 * r / sig;
            h_ss += -2.0 * r * r;
        } else {
            let h = norm_hazard(r);
            let hp = h * (h - r);
            h_mm += -hp / (sig * sig);
            h_ms += -(hp * r + h) / sig;
            h_ss += -r * (hp * r + h);
        }
    }
    let det = h_mm * h_ss - h_ms * h_ms;
    let (se_mu, se_s) = if det.abs() > 0.0 && h_mm < 0.0 {
        ((-h_ss / det).max(0.0).sqrt(), (-h_mm / det).max(0.0).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(CenteringFit {
        info: CenteringInfo {
            mu_aft: mu,
            sigma_aft: sig,
        },
        se_mu,
        se_sigma: sig * se_s,
        iterations,
    })
}

/// Centered log-times: `log y - mu_aft` per row.
pub fn center_responses(ds: &SurvivalDataset, c: &CenteringInfo) -> Vec<f64> {
    ds.times().iter().map(|t| t.ln() - c.mu_aft).collect()
}

/// log(1 - Phi(r)), stable in the upper tail.
pub fn norm_log_sf(r: f64) -> f64 {
    if r < 30.0 {
        (0.5 * erfc(r / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic expansion: Phi_c(r) ~ phi(r)/r * (1 - 1/r^2 + 3/r^4)
        -0.5 * r * r - (r * (2.0 * std::f64::consts::PI).sqrt()).ln()
            + (1.0 - 1.0 / (r * r) + 3.0 / (r * r * r * r)).ln()
    }
}

/// Standard normal hazard phi(r) / (1 - Phi(r)).
pub fn norm_hazard(r: f64) -> f64 {
    let log_phi = -0.5 * r * r - 0.5 * (2.0 * std::f64::consts::PI).ln();
    (log_phi - norm_log_sf(r)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn tiny_csv() -> &'static str {
        "time,event,cluster,trt,x1\n2,1,a,1,0.5\n3,0,a,2,-1\n5,1,b,1,2\n7,1,b,2,0\n"
    }

    #[test]
    fn parses_four_row_csv() {
        let ds = load_dataset_from_reader(tiny_csv().as_bytes(), &IngestSchema::default()).unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(ds.n_clusters(), 2);
        assert_eq!(ds.n_arms(), 2);
        assert_eq!(ds.times(), &[2.0, 3.0, 5.0, 7.0]);
        assert_eq!(ds.events(), &[true, false, true, true]);
        assert_eq!(ds.covariate_names(), &["x1".to_string()]);
    }

    #[test]
    fn rejects_non_positive_time_naming_row() {
        let csv = "time,event,cluster,trt\n2,1,a,1\n3,1,a,2\n0,1,b,1\n";
        let err = load_dataset_from_reader(csv.as_bytes(), &IngestSchema::default()).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("non-positive time"), "{msg}");
        assert!(msg.contains("row 3"), "{msg}");
    }

    #[test]
    fn rejects_missing_value_naming_row_and_column() {
        let csv = "time,event,cluster,trt,x1\n2,1,a,1,0.5\n3,1,a,2,\n";
        let err = load_dataset_from_reader(csv.as_bytes(), &IngestSchema::default()).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("row 2") && msg.contains("x1"), "{msg}");
    }

    #[test]
    fn unknown_mapped_column_is_an_error() {
        let schema = IngestSchema {
            time: "t".into(),
            ..IngestSchema::default()
        };
        let err = load_dataset_from_reader(tiny_csv().as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, DataError::UnknownColumn(_)));
    }

    #[test]
    fn categorical_expansion_drops_first_level() {
        let csv = "time,event,cluster,trt,c\n1,1,a,1,0\n2,1,a,2,1\n3,1,b,1,2\n4,1,b,2,1\n";
        let schema = IngestSchema {
            categorical: vec!["c".into()],
            ..IngestSchema::default()
        };
        let ds = load_dataset_from_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(ds.covariate_names(), &["c=1".to_string(), "c=2".to_string()]);
        assert_eq!(ds.covariate_row(0), &[0.0, 0.0]);
        assert_eq!(ds.covariate_row(1), &[1.0, 0.0]);
        assert_eq!(ds.covariate_row(2), &[0.0, 1.0]);
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let ds = load_dataset_from_reader(tiny_csv().as_bytes(), &IngestSchema::default()).unwrap();
        let mut buf = Vec::new();
        save_dataset_to_writer(&ds, &mut buf).unwrap();
        let ds2 = load_dataset_from_reader(buf.as_slice(), &IngestSchema::default()).unwrap();
        assert_eq!(ds, ds2);
    }

    #[test]
    fn centering_zero_variance_is_degenerate() {
        let logt = vec![0.0; 4];
        let event = vec![true; 4];
        let err = lognormal_intercept_mle(&logt, &event).unwrap_err();
        assert!(matches!(err, DataError::DegenerateScale));
    }

    #[test]
    fn centering_uncensored_symmetric_pair() {
        let fit = lognormal_intercept_mle(&[-1.0, 1.0], &[true, true]).unwrap();
        assert!(fit.info.mu_aft.abs() < 1e-10);
        assert!((fit.info.sigma_aft - 1.0).abs() < 1e-8, "{}", fit.info.sigma_aft);
    }

    #[test]
    fn centering_all_censored_errors() {
        let err = lognormal_intercept_mle(&[0.0, 1.0], &[false, false]).unwrap_err();
        assert!(matches!(err, DataError::AllCensored));
    }

    #[test]
    fn centering_uncensored_matches_mle_moments() {
        let logt = vec![0.3, -1.2, 2.0, 0.7, -0.4];
        let event = vec![true; 5];
        let fit = lognormal_intercept_mle(&logt, &event).unwrap();
        let m = logt.iter().sum::<f64>() / 5.0;
        let v = logt.iter().map(|u| (u - m).powi(2)).sum::<f64>() / 5.0;
        assert!((fit.info.mu_aft - m).abs() < 1e-8);
        assert!((fit.info.sigma_aft - v.sqrt()).abs() < 1e-8);
    }

    // Simulate-and-refit oracle: 200 draws from lognormal(2, 0.5) with fixed-point
    // censoring at the 70th percentile of the time distribution; the MLE must land
    // within 3 observed-information standard errors of the truth.
    #[test]
    fn centering_simulate_and_refit_oracle() {
        let mut rng = crate::rng::stream_rng(11, 0);
        let normal = Normal::new(2.0, 0.5).unwrap();
        let cens_point: f64 = 2.0 + 0.5 * 0.5244; // ~70th percentile on log scale
        let mut logt = Vec::new();
        let mut event = Vec::new();
        for _ in 0..200 {
            let u: f64 = normal.sample(&mut rng);
            if u < cens_point {
                logt.push(u);
                event.push(true);
            } else {
                logt.push(cens_point);
                event.push(false);
            }
        }
        assert!(event.iter().filter(|e| !**e).count() >= 40); // ~30% censored
        let fit = lognormal_intercept_mle(&logt, &event).unwrap();
        assert!(
            (fit.info.mu_aft - 2.0).abs() < 3.0 * fit.se_mu,
            "mu {} se {}",
            fit.info.mu_aft,
            fit.se_mu
        );
        assert!(
            (fit.info.sigma_aft - 0.5).abs() < 3.0 * fit.se_sigma,
            "sigma {} se {}",
            fit.info.sigma_aft,
            fit.se_sigma
        );
    }

    #[test]
    fn centering_scale_equivariance() {
        let mut rng = crate::rng::stream_rng(5, 0);
        let n = 120;
        let mut y = Vec::new();
        let mut event = Vec::new();
        for i in 0..n {
            y.push((0.4 * rng.gen::<f64>() + 0.1) * (1.0 + i as f64 / 50.0));
            event.push(i % 4 != 0);
        }
        let logt: Vec<f64> = y.iter().map(|t: &f64| t.ln()).collect();
        let fit1 = lognormal_intercept_mle(&logt, &event).unwrap();
        let m = 7.5;
        let logt2: Vec<f64> = y.iter().map(|t| (t * m).ln()).collect();
        let fit2 = lognormal_intercept_mle(&logt2, &event).unwrap();
        assert!((fit2.info.mu_aft - fit1.info.mu_aft - m.ln()).abs() < 1e-7);
        assert!((fit2.info.sigma_aft - fit1.info.sigma_aft).abs() < 1e-7);
    }

    #[test]
    fn center_responses_examples_and_inverse() {
        let csv = "time,event,cluster,trt\n7.389056098930650,1,a,1\n1,1,a,2\n";
        let ds = load_dataset_from_reader(csv.as_bytes(), &IngestSchema::default()).unwrap();
        let c = CenteringInfo {
            mu_aft: 2.0,
            sigma_aft: 1.0,
        };
        let z = center_responses(&ds, &c);
        assert!((z[0] - 0.0).abs() < 1e-12);
        let c0 = CenteringInfo {
            mu_aft: 0.0,
            sigma_aft: 1.0,
        };
        let z0 = center_responses(&ds, &c0);
        assert_eq!(z0[1], 0.0);
        // centered + mu == log y exactly (round-off only)
        for (i, zi) in z.iter().enumerate() {
            assert_eq!(zi + c.mu_aft, ds.times()[i].ln());
        }
    }

    #[test]
    fn norm_log_sf_deep_tail_is_finite_and_monotone() {
        let mut prev = norm_log_sf(1.0);
        for r in [2.0, 5.0, 10.0, 20.0, 35.0, 50.0, 100.0] {
            let v = norm_log_sf(r);
            assert!(v.is_finite());
            assert!(v < prev);
            prev = v;
        }
    }
}
