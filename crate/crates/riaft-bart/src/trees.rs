//! The BART sum-of-trees mean function: tree structures, regularization
//! priors, Metropolis-Hastings structure moves (grow / prune / change /
//! swap) with leaf-marginalized acceptance ratios, and the conjugate leaf
//! and sigma^2 updates of Bayesian backfitting.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf};

use crate::design::{Cutpoints, DesignMatrix};

/// One node of a binary regression tree. Nodes live in an arena `Vec`;
/// the root is index 0. The split rule routes `row[var] < cut` left.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Node {
    Internal {
        var: usize,
        cut: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn stump(value: f64) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    #[inline]
    pub fn route(&self, row: &[f64]) -> u32 {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                Node::Leaf { .. } => return id as u32,
                Node::Internal {
                    var, cut, left, right,
                } => {
                    id = if row[var] < cut { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn leaf_value(&self, id: u32) -> f64 {
        match self.nodes[id as usize] {
            Node::Leaf { value } => value,
            _ => panic!("node {id} is not a leaf"),
        }
    }

    pub fn leaves(&self) -> Vec<u32> {
        self.reachable()
            .into_iter()
            .filter(|&id| matches!(self.nodes[id as usize], Node::Leaf { .. }))
            .collect()
    }

    pub fn internal_nodes(&self) -> Vec<u32> {
        self.reachable()
            .into_iter()
            .filter(|&id| matches!(self.nodes[id as usize], Node::Internal { .. }))
            .collect()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable(&self) -> Vec<u32> {
        self.internal_nodes()
            .into_iter()
            .filter(|&id| {
                if let Node::Internal { left, right, .. } = self.nodes[id as usize] {
                    matches!(self.nodes[left as usize], Node::Leaf { .. })
                        && matches!(self.nodes[right as usize], Node::Leaf { .. })
                } else {
                    false
                }
            })
            .collect()
    }

    /// (parent, child) pairs with both nodes internal.
    pub fn swappable_pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for id in self.internal_nodes() {
            if let Node::Internal { left, right, .. } = self.nodes[id as usize] {
                for child in [left, right] {
                    if matches!(self.nodes[child as usize], Node::Internal { .. }) {
                        out.push((id, child));
                    }
                }
            }
        }
        out
    }

    fn reachable(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Node::Internal { left, right, .. } = self.nodes[id as usize] {
                stack.push(left);
                stack.push(right);
            }
        }
        out
    }

    /// Depth of every node (unreachable slots keep 0).
    pub fn depths(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.nodes.len()];
        let mut stack = vec![(0u32, 0u32)];
        while let Some((id, depth)) = stack.pop() {
            d[id as usize] = depth;
            if let Node::Internal { left, right, .. } = self.nodes[id as usize] {
                stack.push((left, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        d
    }

    pub fn max_depth(&self) -> u32 {
        let depths = self.depths();
        self.reachable()
            .into_iter()
            .map(|id| depths[id as usize])
            .max()
            .unwrap_or(0)
    }

    /// Rebuild the arena without unreachable nodes (after a prune).
    pub fn compact(&self) -> DecisionTree {
        fn copy(src: &DecisionTree, id: u32, dst: &mut Vec<Node>) -> u32 {
            let slot = dst.len() as u32;
            dst.push(src.nodes[id as usize].clone());
            if let Node::Internal { left, right, .. } = src.nodes[id as usize] {
                let l = copy(src, left, dst);
                let r = copy(src, right, dst);
                if let Node::Internal {
                    left: ref mut nl,
                    right: ref mut nr,
                    ..
                } = dst[slot as usize]
                {
                    *nl = l;
                    *nr = r;
                }
            }
            slot
        }
        let mut nodes = Vec::new();
        copy(self, 0, &mut nodes);
        DecisionTree { nodes }
    }
}

/// Structure-move probabilities in the order grow, prune, change, swap.
pub const DEFAULT_MOVE_PROBS: [f64; 4] = [0.25, 0.25, 0.40, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TreeHyper {
    pub n_trees: usize,
    /// Terminal-node prior hyperparameter k.
    pub k: f64,
    /// Depth prior P(split at depth d) = base * (1 + d)^(-power).
    pub base: f64,
    pub power: f64,
    /// Minimum training rows per leaf.
    pub n_min: usize,
    pub move_probs: [f64; 4],
}

impl Default for TreeHyper {
    fn default() -> Self {
        TreeHyper {
            n_trees: 200,
            k: 2.0,
            base: 0.95,
            power: 2.0,
            n_min: 5,
            move_probs: DEFAULT_MOVE_PROBS,
        }
    }
}

impl TreeHyper {
    #[inline]
    pub fn p_split(&self, depth: u32) -> f64 {
        self.base * (1.0 + depth as f64).powf(-self.power)
    }

    /// Leaf prior sd sigma_mu = xi / (2 k sqrt(H)) with xi = 4 sigma_aft.
    pub fn leaf_sd(&self, sigma_aft: f64) -> f64 {
        let xi = 4.0 * sigma_aft;
        xi / (2.0 * self.k * (self.n_trees as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<DecisionTree>,
    pub leaf_sd: f64,
    pub hyper: TreeHyper,
}

impl TreeEnsemble {
    pub fn stumps(hyper: TreeHyper, leaf_sd: f64) -> Self {
        assert!(hyper.n_trees >= 1);
        assert!(leaf_sd > 0.0);
        TreeEnsemble {
            trees: (0..hyper.n_trees).map(|_| DecisionTree::stump(0.0)).collect(),
            leaf_sd,
            hyper,
        }
    }
}

/// Sum over trees of the leaf value each row routes to.
pub fn evaluate(ens: &TreeEnsemble, design: &DesignMatrix) -> Vec<f64> {
    let mut out = vec![0.0; design.n_rows()];
    evaluate_into(ens, design, &mut out);
    out
}

pub fn evaluate_into(ens: &TreeEnsemble, design: &DesignMatrix, out: &mut [f64]) {
    assert_eq!(out.len(), design.n_rows());
    out.fill(0.0);
    for tree in &ens.trees {
        for (i, o) in out.iter_mut().enumerate() {
            *o += tree.leaf_value(tree.route(design.row(i)));
        }
    }
}

/// Inverse-gamma prior IG(nu/2, nu*lambda/2) on sigma^2.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigmaPrior {
    pub nu: f64,
    pub lambda: f64,
}

impl SigmaPrior {
    pub fn new(nu: f64, lambda: f64) -> Self {
        assert!(nu > 0.0 && lambda > 0.0);
        SigmaPrior { nu, lambda }
    }
}

/// One draw from IG((N + nu)/2, (SSR + nu*lambda)/2).
pub fn draw_sigma2<R: Rng>(residuals: &[f64], prior: &SigmaPrior, rng: &mut R) -> f64 {
    assert!(!residuals.is_empty());
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let shape = (residuals.len() as f64 + prior.nu) / 2.0;
    let rate = (ssr + prior.nu * prior.lambda) / 2.0;
    draw_inverse_gamma(shape, rate, rng)
}

/// IG(shape, rate) draw via the reciprocal of a gamma variate.
pub fn draw_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = GammaDist::new(shape, 1.0 / rate).expect("gamma params");
    let x: f64 = g.sample(rng);
    1.0 / x.max(f64::MIN_POSITIVE)
}

/// Solve for lambda such that P(sigma < sigma0; nu, lambda) = 0.9 under
/// sigma^2 ~ IG(nu/2, nu*lambda/2), by bisection to relative tolerance 1e-10.
pub fn calibrate_lambda(sigma0: f64, nu: f64) -> f64 {
    assert!(sigma0 > 0.0 && nu > 0.0);
    let target = 0.9;
    let prob = |lambda: f64| -> f64 {
        // P(sigma^2 < s) = 1 - F_Gamma(1/s; nu/2, rate nu*lambda/2)
        let g = GammaCdf::new(nu / 2.0, nu * lambda / 2.0).expect("gamma cdf params");
        1.0 - g.cdf(1.0 / (sigma0 * sigma0))
    };
    // prob is decreasing in lambda
    let (mut lo, mut hi) = (1e-300_f64, 1.0_f64);
    while prob(hi) > target {
        hi *= 4.0;
        assert!(hi.is_finite());
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if prob(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / hi < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Conjugate leaf draw: N(sd_mu^2 * sum / (n * sd_mu^2 + sigma^2),
/// sigma^2 * sd_mu^2 / (n * sd_mu^2 + sigma^2)) with prior mean 0.
pub fn draw_leaf_posterior<R: Rng>(
    n: usize,
    sum: f64,
    sigma2: f64,
    leaf_sd: f64,
    rng: &mut R,
) -> f64 {
    let sd_mu2 = leaf_sd * leaf_sd;
    let denom = n as f64 * sd_mu2 + sigma2;
    let mean = sd_mu2 * sum / denom;
    let var = sigma2 * sd_mu2 / denom;
    mean + var.sqrt() * crate::rng::standard_normal(rng)
}

/// Counters for structure-move diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

/// Backfitting state: the ensemble plus per-tree row assignments and fit
/// caches on the training design.
#[derive(Debug, Clone)]
pub struct BackfitState {
    pub ensemble: TreeEnsemble,
    assign: Vec<Vec<u32>>,
    fits: Vec<Vec<f64>>,
    total_fit: Vec<f64>,
    valid_vars: Vec<usize>,
    pub stats: MoveStats,
}

impl BackfitState {
    pub fn new(ensemble: TreeEnsemble, design: &DesignMatrix, cuts: &Cutpoints) -> Self {
        let n = design.n_rows();
        let h = ensemble.trees.len();
        let mut assign = Vec::with_capacity(h);
        let mut fits = Vec::with_capacity(h);
        let mut total = vec![0.0; n];
        for tree in &ensemble.trees {
            let a: Vec<u32> = (0..n).map(|i| tree.route(design.row(i))).collect();
            let f: Vec<f64> = a.iter().map(|&id| tree.leaf_value(id)).collect();
            for (t, fi) in total.iter_mut().zip(&f) {
                *t += fi;
            }
            assign.push(a);
            fits.push(f);
        }
        let valid_vars: Vec<usize> = (0..cuts.n_cols())
            .filter(|&j| !cuts.for_col(j).is_empty())
            .collect();
        assert!(!valid_vars.is_empty(), "no splittable design columns");
        BackfitState {
            ensemble,
            assign,
            fits,
            total_fit: total,
            valid_vars,
            stats: MoveStats::default(),
        }
    }

    pub fn total_fit(&self) -> &[f64] {
        &self.total_fit
    }

    /// Recompute the ensemble fit as a fresh sum over the per-tree caches.
    /// Called once per sweep so that a chain rebuilt from a checkpoint and a
    /// continuously running chain see bit-identical totals (incremental
    /// updates drift in the last ulp).
    pub fn refresh_total_fit(&mut self) {
        self.total_fit.fill(0.0);
        for f in &self.fits {
            for (t, fi) in self.total_fit.iter_mut().zip(f) {
                *t += fi;
            }
        }
    }

    /// One full backfitting pass: for each tree, propose a structure move,
    /// accept by the leaf-marginalized MH ratio, then redraw every leaf from
    /// its conjugate posterior. `responses` are the centered complete-data
    /// log-times minus the cluster intercepts.
    pub fn backfit_step<R: Rng>(
        &mut self,
        design: &DesignMatrix,
        cuts: &Cutpoints,
        responses: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) {
        assert_eq!(responses.len(), design.n_rows());
        assert!(sigma2 > 0.0);
        let h = self.ensemble.trees.len();
        let mut partial = vec![0.0; design.n_rows()];
        for t in 0..h {
            for i in 0..design.n_rows() {
                partial[i] = responses[i] - self.total_fit[i] + self.fits[t][i];
            }
            self.move_one_tree(t, design, cuts, &partial, sigma2, rng);
            self.redraw_tree_leaves(t, &partial, sigma2, rng);
        }
    }

    /// Redraw every leaf of every tree with structures frozen (no moves).
    pub fn redraw_leaves_only<R: Rng>(
        &mut self,
        design: &DesignMatrix,
        responses: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) {
        let h = self.ensemble.trees.len();
        let mut partial = vec![0.0; design.n_rows()];
        for t in 0..h {
            for i in 0..design.n_rows() {
                partial[i] = responses[i] - self.total_fit[i] + self.fits[t][i];
            }
            self.redraw_tree_leaves(t, &partial, sigma2, rng);
        }
    }

    fn leaf_stats(&self, t: usize, partial: &[f64]) -> (Vec<u32>, Vec<f64>) {
        let tree = &self.ensemble.trees[t];
        let mut counts = vec![0u32; tree.nodes.len()];
        let mut sums = vec![0.0f64; tree.nodes.len()];
        for (i, &id) in self.assign[t].iter().enumerate() {
            counts[id as usize] += 1;
            sums[id as usize] += partial[i];
        }
        (counts, sums)
    }

    fn redraw_tree_leaves<R: Rng>(&mut self, t: usize, partial: &[f64], sigma2: f64, rng: &mut R) {
        let (counts, sums) = self.leaf_stats(t, partial);
        let leaf_sd = self.ensemble.leaf_sd;
        let tree = &mut self.ensemble.trees[t];
        for id in 0..tree.nodes.len() {
            if let Node::Leaf { ref mut value } = tree.nodes[id] {
                *value = draw_leaf_posterior(counts[id] as usize, sums[id], sigma2, leaf_sd, rng);
            }
        }
        let n = self.assign[t].len();
        for i in 0..n {
            let new = tree.leaf_value(self.assign[t][i]);
            self.total_fit[i] += new - self.fits[t][i];
            self.fits[t][i] = new;
        }
    }

    fn move_one_tree<R: Rng>(
        &mut self,
        t: usize,
        design: &DesignMatrix,
        cuts: &Cutpoints,
        partial: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) {
        let probs = self.ensemble.hyper.move_probs;
        let u: f64 = rng.gen();
        let kind = if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else if u < probs[0] + probs[1] + probs[2] {
            2
        } else {
            3
        };
        self.stats.proposed[kind] += 1;
        let accepted = match kind {
            0 => self.try_grow(t, design, cuts, partial, sigma2, rng),
            1 => self.try_prune(t, design, cuts, partial, sigma2, rng),
            2 => self.try_change(t, design, cuts, partial, sigma2, rng),
            _ => self.try_swap(t, design, partial, sigma2, rng),
        };
        if accepted {
            self.stats.accepted[kind] += 1;
        }
    }

    fn leaf_log_marginal(n: u32, sum: f64, sigma2: f64, sd_mu2: f64) -> f64 {
        let denom = sigma2 + n as f64 * sd_mu2;
        0.5 * (sigma2 / denom).ln() + sd_mu2 * sum * sum / (2.0 * sigma2 * denom)
    }

    fn tree_log_marginal(
        tree: &DecisionTree,
        counts: &[u32],
        sums: &[f64],
        sigma2: f64,
        sd_mu2: f64,
    ) -> f64 {
        tree.leaves()
            .into_iter()
            .map(|id| Self::leaf_log_marginal(counts[id as usize], sums[id as usize], sigma2, sd_mu2))
            .sum()
    }

    fn try_grow<R: Rng>(
        &mut self,
        t: usize,
        design: &DesignMatrix,
        cuts: &Cutpoints,
        partial: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> bool {
        let hyper = self.ensemble.hyper;
        let sd_mu2 = self.ensemble.leaf_sd * self.ensemble.leaf_sd;
        let tree = &self.ensemble.trees[t];
        let leaves = tree.leaves();
        let leaf = leaves[rng.gen_range(0..leaves.len())];
        let var = self.valid_vars[rng.gen_range(0..self.valid_vars.len())];
        let cutset = cuts.for_col(var);
        let cut = cutset[rng.gen_range(0..cutset.len())];

        let (mut nl, mut nr, mut sl, mut sr) = (0u32, 0u32, 0.0f64, 0.0f64);
        for (i, &id) in self.assign[t].iter().enumerate() {
            if id == leaf {
                if design.value(i, var) < cut {
                    nl += 1;
                    sl += partial[i];
                } else {
                    nr += 1;
                    sr += partial[i];
                }
            }
        }
        let n_min = hyper.n_min.max(1) as u32;
        if nl < n_min || nr < n_min {
            return false;
        }

        let depth = tree.depths()[leaf as usize];
        let p_d = hyper.p_split(depth);
        let p_d1 = hyper.p_split(depth + 1);

        let d_logm = Self::leaf_log_marginal(nl, sl, sigma2, sd_mu2)
            + Self::leaf_log_marginal(nr, sr, sigma2, sd_mu2)
            - Self::leaf_log_marginal(nl + nr, sl + sr, sigma2, sd_mu2);
        let d_logprior = p_d.ln() + 2.0 * (1.0 - p_d1).ln() - (1.0 - p_d).ln()
            - (self.valid_vars.len() as f64).ln()
            - (cutset.len() as f64).ln();

        let mut newtree = tree.clone();
        let ln = newtree.nodes.len() as u32;
        newtree.nodes.push(Node::Leaf { value: 0.0 });
        newtree.nodes.push(Node::Leaf { value: 0.0 });
        newtree.nodes[leaf as usize] = Node::Internal {
            var,
            cut,
            left: ln,
            right: ln + 1,
        };
        let n_prunable_new = newtree.prunable().len() as f64;
        let log_fwd = hyper.move_probs[0].ln()
            - (leaves.len() as f64).ln()
            - (self.valid_vars.len() as f64).ln()
            - (cutset.len() as f64).ln();
        let log_rev = hyper.move_probs[1].ln() - n_prunable_new.ln();

        let log_accept = d_logm + d_logprior + log_rev - log_fwd;
        if rng.gen::<f64>().ln() < log_accept {
            for (i, id) in self.assign[t].iter_mut().enumerate() {
                if *id == leaf {
                    *id = if design.value(i, var) < cut { ln } else { ln + 1 };
                }
            }
            self.ensemble.trees[t] = newtree;
            true
        } else {
            false
        }
    }

    fn try_prune<R: Rng>(
        &mut self,
        t: usize,
        design: &DesignMatrix,
        cuts: &Cutpoints,
        partial: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> bool {
        let hyper = self.ensemble.hyper;
        let sd_mu2 = self.ensemble.leaf_sd * self.ensemble.leaf_sd;
        let tree = &self.ensemble.trees[t];
        let prunable = tree.prunable();
        if prunable.is_empty() {
            return false;
        }
        let node = prunable[rng.gen_range(0..prunable.len())];
        let (var, left, right) = match tree.nodes[node as usize] {
            Node::Internal {
                var, left, right, ..
            } => (var, left, right),
            _ => unreachable!(),
        };
        let (counts, sums) = self.leaf_stats(t, partial);
        let (nl, nr) = (counts[left as usize], counts[right as usize]);
        let (sl, sr) = (sums[left as usize], sums[right as usize]);

        let depth = tree.depths()[node as usize];
        let p_d = hyper.p_split(depth);
        let p_d1 = hyper.p_split(depth + 1);
        let cutset_len = cuts.for_col(var).len() as f64;

        let d_logm = Self::leaf_log_marginal(nl + nr, sl + sr, sigma2, sd_mu2)
            - Self::leaf_log_marginal(nl, sl, sigma2, sd_mu2)
            - Self::leaf_log_marginal(nr, sr, sigma2, sd_mu2);
        let d_logprior = (1.0 - p_d).ln() - p_d.ln() - 2.0 * (1.0 - p_d1).ln()
            + (self.valid_vars.len() as f64).ln()
            + cutset_len.ln();

        let mut pruned = tree.clone();
        pruned.nodes[node as usize] = Node::Leaf { value: 0.0 };
        let pruned = pruned.compact();
        let n_leaves_new = pruned.leaves().len() as f64;

        let log_fwd = hyper.move_probs[1].ln() - (prunable.len() as f64).ln();
        let log_rev = hyper.move_probs[0].ln()
            - n_leaves_new.ln()
            - (self.valid_vars.len() as f64).ln()
            - cutset_len.ln();

        let log_accept = d_logm + d_logprior + log_rev - log_fwd;
        if rng.gen::<f64>().ln() < log_accept {
            self.accept_rebuilt(t, pruned, design);
            true
        } else {
            false
        }
    }

    fn try_change<R: Rng>(
        &mut self,
        t: usize,
        design: &DesignMatrix,
        cuts: &Cutpoints,
        partial: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> bool {
        let tree = &self.ensemble.trees[t];
        let internals = tree.internal_nodes();
        if internals.is_empty() {
            return false;
        }
        let node = internals[rng.gen_range(0..internals.len())];
        let var = self.valid_vars[rng.gen_range(0..self.valid_vars.len())];
        let cutset = cuts.for_col(var);
        let cut = cutset[rng.gen_range(0..cutset.len())];

        let mut newtree = tree.clone();
        if let Node::Internal {
            var: ref mut v,
            cut: ref mut c,
            ..
        } = newtree.nodes[node as usize]
        {
            *v = var;
            *c = cut;
        }
        self.try_replace_whole_tree(t, newtree, design, partial, sigma2, rng)
    }

    fn try_swap<R: Rng>(
        &mut self,
        t: usize,
        design: &DesignMatrix,
        partial: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> bool {
        let tree = &self.ensemble.trees[t];
        let pairs = tree.swappable_pairs();
        if pairs.is_empty() {
            return false;
        }
        let (parent, child) = pairs[rng.gen_range(0..pairs.len())];
        let mut newtree = tree.clone();
        let (pv, pc) = match newtree.nodes[parent as usize] {
            Node::Internal { var, cut, .. } => (var, cut),
            _ => unreachable!(),
        };
        let (cv, cc) = match newtree.nodes[child as usize] {
            Node::Internal { var, cut, .. } => (var, cut),
            _ => unreachable!(),
        };
        if let Node::Internal {
            var: ref mut v,
            cut: ref mut c,
            ..
        } = newtree.nodes[parent as usize]
        {
            *v = cv;
            *c = cc;
        }
        if let Node::Internal {
            var: ref mut v,
            cut: ref mut c,
            ..
        } = newtree.nodes[child as usize]
        {
            *v = pv;
            *c = pc;
        }
        self.try_replace_whole_tree(t, newtree, design, partial, sigma2, rng)
    }

    /// Shared accept path for change/swap: same topology, rules relocated, so
    /// prior and proposal terms cancel and the ratio is the marginal
    /// likelihood ratio alone.
    fn try_replace_whole_tree<R: Rng>(
        &mut self,
        t: usize,
        newtree: DecisionTree,
        design: &DesignMatrix,
        partial: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> bool {
        let sd_mu2 = self.ensemble.leaf_sd * self.ensemble.leaf_sd;
        let hyper = self.ensemble.hyper;
        let n = design.n_rows();
        let mut new_assign = vec![0u32; n];
        let mut new_counts = vec![0u32; newtree.nodes.len()];
        let mut new_sums = vec![0.0f64; newtree.nodes.len()];
        for i in 0..n {
            let id = newtree.route(design.row(i));
            new_assign[i] = id;
            new_counts[id as usize] += 1;
            new_sums[id as usize] += partial[i];
        }
        let n_min = hyper.n_min.max(1) as u32;
        for id in newtree.leaves() {
            if new_counts[id as usize] < n_min {
                return false;
            }
        }
        let (counts, sums) = self.leaf_stats(t, partial);
        let old = Self::tree_log_marginal(&self.ensemble.trees[t], &counts, &sums, sigma2, sd_mu2);
        let new = Self::tree_log_marginal(&newtree, &new_counts, &new_sums, sigma2, sd_mu2);
        if rng.gen::<f64>().ln() < new - old {
            self.assign[t] = new_assign;
            self.ensemble.trees[t] = newtree;
            true
        } else {
            false
        }
    }

    fn accept_rebuilt(&mut self, t: usize, newtree: DecisionTree, design: &DesignMatrix) {
        let n = design.n_rows();
        let mut new_assign = vec![0u32; n];
        for (i, a) in new_assign.iter_mut().enumerate() {
            *a = newtree.route(design.row(i));
        }
        self.assign[t] = new_assign;
        self.ensemble.trees[t] = newtree;
    }
}

/// Draw a tree from the regularization prior restricted to structures whose
/// leaves all hold at least `n_min` training rows, by rejection; leaves drawn
/// from N(0, leaf_sd^2). Used by the Geweke correctness harness and tests.
pub fn sample_tree_from_prior<R: Rng>(
    design: &DesignMatrix,
    cuts: &Cutpoints,
    hyper: &TreeHyper,
    leaf_sd: f64,
    rng: &mut R,
) -> DecisionTree {
    let valid_vars: Vec<usize> = (0..cuts.n_cols())
        .filter(|&j| !cuts.for_col(j).is_empty())
        .collect();
    assert!(!valid_vars.is_empty());
    'outer: for _ in 0..100_000 {
        let mut tree = DecisionTree::stump(0.0);
        let mut frontier = vec![(0u32, 0u32)];
        while let Some((id, depth)) = frontier.pop() {
            if tree.nodes.len() > 4096 {
                continue 'outer;
            }
            if rng.gen::<f64>() < hyper.p_split(depth) {
                let var = valid_vars[rng.gen_range(0..valid_vars.len())];
                let cutset = cuts.for_col(var);
                let cut = cutset[rng.gen_range(0..cutset.len())];
                let l = tree.nodes.len() as u32;
                tree.nodes.push(Node::Leaf { value: 0.0 });
                tree.nodes.push(Node::Leaf { value: 0.0 });
                tree.nodes[id as usize] = Node::Internal {
                    var,
                    cut,
                    left: l,
                    right: l + 1,
                };
                frontier.push((l, depth + 1));
                frontier.push((l + 1, depth + 1));
            }
        }
        let mut counts = vec![0u32; tree.nodes.len()];
        for i in 0..design.n_rows() {
            counts[tree.route(design.row(i)) as usize] += 1;
        }
        let n_min = hyper.n_min.max(1) as u32;
        if tree
            .leaves()
            .into_iter()
            .all(|id| counts[id as usize] >= n_min)
        {
            for node in &mut tree.nodes {
                if let Node::Leaf { ref mut value } = node {
                    *value = leaf_sd * crate::rng::standard_normal(rng);
                }
            }
            return tree;
        }
    }
    panic!("prior tree sampling failed to find a valid structure");
}
