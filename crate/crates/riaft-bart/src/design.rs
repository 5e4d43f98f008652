//! Design matrices for the tree ensemble: covariate columns followed by
//! 0/1 treatment indicator columns, plus the per-column cutpoint sets used
//! by the structure moves.

use crate::data::SurvivalDataset;

/// How treatment enters the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TreatmentCoding {
    /// J-1 indicator columns; the last arm is the all-zeros reference.
    Reference,
    /// J indicator columns, one per arm.
    OneHot,
}

impl TreatmentCoding {
    pub fn arm_cols(&self, n_arms: usize) -> usize {
        match self {
            TreatmentCoding::Reference => n_arms - 1,
            TreatmentCoding::OneHot => n_arms,
        }
    }
}

/// Row-major design matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    n_covariates: usize,
    coding: TreatmentCoding,
    n_arms: usize,
}

impl DesignMatrix {
    /// Observed design: each row's covariates with its own treatment indicators.
    pub fn observed(ds: &SurvivalDataset, coding: TreatmentCoding) -> Self {
        let p = ds.n_covariates();
        let arm_cols = coding.arm_cols(ds.n_arms());
        let n_cols = p + arm_cols;
        let mut values = vec![0.0; ds.n_rows() * n_cols];
        for i in 0..ds.n_rows() {
            let row = &mut values[i * n_cols..(i + 1) * n_cols];
            row[..p].copy_from_slice(ds.covariate_row(i));
            fill_arm(&mut row[p..], ds.arms()[i], coding);
        }
        DesignMatrix {
            values,
            n_rows: ds.n_rows(),
            n_cols,
            n_covariates: p,
            coding,
            n_arms: ds.n_arms(),
        }
    }

    /// Counterfactual design: J blocks of N rows; block `a` is every row with
    /// its treatment indicators flipped to arm `a`. Row index `a * N + i`.
    pub fn counterfactual(ds: &SurvivalDataset, coding: TreatmentCoding) -> Self {
        let p = ds.n_covariates();
        let j = ds.n_arms();
        let arm_cols = coding.arm_cols(j);
        let n_cols = p + arm_cols;
        let n = ds.n_rows();
        let mut values = vec![0.0; n * j * n_cols];
        for a in 0..j {
            for i in 0..n {
                let r = a * n + i;
                let row = &mut values[r * n_cols..(r + 1) * n_cols];
                row[..p].copy_from_slice(ds.covariate_row(i));
                fill_arm(&mut row[p..], a, coding);
            }
        }
        DesignMatrix {
            values,
            n_rows: n * j,
            n_cols,
            n_covariates: p,
            coding,
            n_arms: j,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }
    pub fn coding(&self) -> TreatmentCoding {
        self.coding
    }
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }
}

fn fill_arm(slot: &mut [f64], arm: usize, coding: TreatmentCoding) {
    match coding {
        TreatmentCoding::Reference => {
            if arm < slot.len() {
                slot[arm] = 1.0;
            }
        }
        TreatmentCoding::OneHot => slot[arm] = 1.0,
    }
}

/// Split cutpoints per design column: 100 equally spaced quantiles for
/// continuous columns, the single cutpoint 0.5 for 0/1 columns. Cutpoints
/// equal to a column's minimum are dropped (they would create an empty
/// child at every leaf).
#[derive(Debug, Clone)]
pub struct Cutpoints {
    per_col: Vec<Vec<f64>>,
}

pub const N_QUANTILE_CUTPOINTS: usize = 100;

impl Cutpoints {
    pub fn from_design(design: &DesignMatrix) -> Self {
        let mut per_col = Vec::with_capacity(design.n_cols());
        for j in 0..design.n_cols() {
            let mut col: Vec<f64> = (0..design.n_rows()).map(|i| design.value(i, j)).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            per_col.push(column_cutpoints(&col));
        }
        Cutpoints { per_col }
    }

    pub fn for_col(&self, j: usize) -> &[f64] {
        &self.per_col[j]
    }
    pub fn n_cols(&self) -> usize {
        self.per_col.len()
    }
}

fn column_cutpoints(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let (min, max) = (sorted[0], sorted[n - 1]);
    if min == max {
        return Vec::new();
    }
    let is_binary = sorted.iter().all(|&v| v == 0.0 || v == 1.0);
    if is_binary {
        return vec![0.5];
    }
    let mut cuts = Vec::with_capacity(N_QUANTILE_CUTPOINTS);
    for q in 1..=N_QUANTILE_CUTPOINTS {
        let frac = q as f64 / (N_QUANTILE_CUTPOINTS as f64 + 1.0);
        let pos = frac * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        let v = sorted[lo] * (1.0 - w) + sorted[hi] * w;
        // splitting rule is `x < c`: c == min sends nothing left
        if v > min && (cuts.last() != Some(&v)) {
            cuts.push(v);
        }
    }
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset_from_reader, IngestSchema};

    fn ds3() -> crate::data::SurvivalDataset {
        let csv = "time,event,cluster,trt,x1\n1,1,a,1,0.1\n2,1,a,2,0.2\n3,1,b,3,0.3\n4,1,b,1,0.4\n";
        load_dataset_from_reader(csv.as_bytes(), &IngestSchema::default()).unwrap()
    }

    #[test]
    fn reference_coding_uses_j_minus_1_columns() {
        let d = DesignMatrix::observed(&ds3(), TreatmentCoding::Reference);
        assert_eq!(d.n_cols(), 1 + 2);
        assert_eq!(d.row(0), &[0.1, 1.0, 0.0]); // arm 1 -> first indicator
        assert_eq!(d.row(2), &[0.3, 0.0, 0.0]); // arm 3 -> reference
    }

    #[test]
    fn one_hot_coding_uses_j_columns() {
        let d = DesignMatrix::observed(&ds3(), TreatmentCoding::OneHot);
        assert_eq!(d.n_cols(), 1 + 3);
        assert_eq!(d.row(2), &[0.3, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn counterfactual_blocks_flip_only_indicators() {
        let ds = ds3();
        let d = DesignMatrix::counterfactual(&ds, TreatmentCoding::Reference);
        assert_eq!(d.n_rows(), 12);
        for a in 0..3 {
            for i in 0..4 {
                let row = d.row(a * 4 + i);
                assert_eq!(row[0], ds.covariate_row(i)[0]);
                let mut expect = [0.0, 0.0];
                if a < 2 {
                    expect[a] = 1.0;
                }
                assert_eq!(&row[1..], &expect);
            }
        }
    }

    #[test]
    fn binary_columns_get_half_cutpoint() {
        let d = DesignMatrix::observed(&ds3(), TreatmentCoding::Reference);
        let cuts = Cutpoints::from_design(&d);
        assert_eq!(cuts.for_col(1), &[0.5]);
        assert_eq!(cuts.for_col(2), &[0.5]);
        let c0 = cuts.for_col(0);
        assert!(!c0.is_empty());
        assert!(c0.windows(2).all(|w| w[0] < w[1]));
        assert!(c0.iter().all(|&c| c > 0.1 && c <= 0.4));
    }

    #[test]
    fn constant_column_has_no_cutpoints() {
        assert!(column_cutpoints(&[2.0, 2.0, 2.0]).is_empty());
    }
}
