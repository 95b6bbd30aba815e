//! Observed data, latent state and prior constants of the network mediation
//! model.
//!
//! Block ids are zero-based throughout. Unordered block pairs `(q, r)` with
//! `q <= r` are laid out row-major over the upper triangle, so for three
//! blocks the order is `(0,0) (0,1) (0,2) (1,1) (1,2) (2,2)`.

use serde::{Deserialize, Serialize};

use crate::error::{BnmmError, Result};

/// Largest absolute difference `|a(j,l) - a(l,j)|` that is repaired by
/// averaging instead of rejected.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-8;

/// A square connectivity matrix stored row-major. The diagonal is kept but
/// never read by any likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connectome {
    n: usize,
    data: Vec<f64>,
}

impl Connectome {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(BnmmError::Dimension(format!(
                "connectome of size {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(BnmmError::Dimension(format!(
                    "row {i} has {} columns, expected {n}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.data[j * self.n + l]
    }

    #[inline]
    pub fn set(&mut self, j: usize, l: usize, value: f64) {
        self.data[j * self.n + l] = value;
    }

    /// Sets both `(j, l)` and `(l, j)`.
    #[inline]
    pub fn set_sym(&mut self, j: usize, l: usize, value: f64) {
        self.data[j * self.n + l] = value;
        self.data[l * self.n + j] = value;
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub outcome: f64,
    pub exposure: f64,
    /// Covariate vector with the intercept as its first entry.
    pub covariates: Vec<f64>,
    pub connectomes: Vec<Connectome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    pub n_nodes: usize,
    /// Covariate count excluding the intercept.
    pub n_covariates: usize,
}

impl Dataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Total number of scans over all subjects.
    pub fn n_layers(&self) -> usize {
        self.subjects.iter().map(|s| s.connectomes.len()).sum()
    }

    /// Every scan as `(subject, scan, matrix)`, subject-major.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize, &Connectome)> {
        self.subjects.iter().enumerate().flat_map(|(i, s)| {
            s.connectomes
                .iter()
                .enumerate()
                .map(move |(k, a)| (i, k, a))
        })
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.outcome).collect()
    }

    pub fn exposures(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.exposure).collect()
    }

    /// True when every exposure is exactly 0 or 1.
    pub fn exposure_is_binary(&self) -> bool {
        self.subjects
            .iter()
            .all(|s| s.exposure == 0.0 || s.exposure == 1.0)
    }

    /// Number of unordered off-diagonal node pairs per scan.
    pub fn edges_per_layer(&self) -> usize {
        self.n_nodes * self.n_nodes.saturating_sub(1) / 2
    }
}

/// Checks the dataset invariants, repairs rounding-level asymmetry and adds
/// a missing intercept column.
pub fn validate_dataset(mut raw: Dataset) -> Result<Dataset> {
    let v = raw.n_nodes;
    let p = raw.n_covariates;
    if raw.subjects.is_empty() {
        return Err(BnmmError::Dimension("dataset has no subjects".into()));
    }
    if v == 0 {
        return Err(BnmmError::Dimension("node count must be positive".into()));
    }
    for (i, subject) in raw.subjects.iter_mut().enumerate() {
        if !subject.outcome.is_finite() {
            return Err(BnmmError::NonFinite(format!("outcome of subject {i}")));
        }
        if !subject.exposure.is_finite() {
            return Err(BnmmError::NonFinite(format!("exposure of subject {i}")));
        }
        if subject.covariates.len() == p {
            subject.covariates.insert(0, 1.0);
        } else if subject.covariates.len() != p + 1 {
            return Err(BnmmError::Covariates(format!(
                "subject {i} has {} covariates, expected {p} or {} with intercept",
                subject.covariates.len(),
                p + 1
            )));
        } else if subject.covariates[0] != 1.0 {
            return Err(BnmmError::Covariates(format!(
                "subject {i}: first covariate must be the intercept 1, got {}",
                subject.covariates[0]
            )));
        }
        if let Some(x) = subject.covariates.iter().find(|x| !x.is_finite()) {
            return Err(BnmmError::NonFinite(format!(
                "covariate {x} of subject {i}"
            )));
        }
        if subject.connectomes.is_empty() {
            return Err(BnmmError::NoConnectomes { subject: i });
        }
        for (k, a) in subject.connectomes.iter_mut().enumerate() {
            if a.size() != v {
                return Err(BnmmError::Dimension(format!(
                    "subject {i}, scan {k}: matrix is {0}x{0}, expected {v}x{v}",
                    a.size()
                )));
            }
            for j in 0..v {
                for l in (j + 1)..v {
                    let (x, y) = (a.get(j, l), a.get(l, j));
                    if !x.is_finite() || !y.is_finite() {
                        return Err(BnmmError::NonFinite(format!(
                            "subject {i}, scan {k}, entry ({j}, {l})"
                        )));
                    }
                    let diff = (x - y).abs();
                    if diff > ASYMMETRY_TOLERANCE {
                        return Err(BnmmError::Asymmetry {
                            subject: i,
                            scan: k,
                            row: j,
                            col: l,
                            diff,
                        });
                    }
                    if diff > 0.0 {
                        a.set_sym(j, l, 0.5 * (x + y));
                    }
                }
            }
        }
    }
    Ok(raw)
}

/// Centres and scales every non-intercept covariate column to unit sample
/// variance. Constant columns are only centred.
pub fn standardize_covariates(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    let n = dataset.n_subjects() as f64;
    for c in 1..=dataset.n_covariates {
        let mean = dataset.subjects.iter().map(|s| s.covariates[c]).sum::<f64>() / n;
        let var = dataset
            .subjects
            .iter()
            .map(|s| (s.covariates[c] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for s in out.subjects.iter_mut() {
            s.covariates[c] = (s.covariates[c] - mean) / sd;
        }
    }
    out
}

/// Number of unordered block pairs `(q, r)`, `q <= r`.
#[inline]
pub fn n_pairs(n_blocks: usize) -> usize {
    n_blocks * (n_blocks + 1) / 2
}

/// Flat index of the unordered pair `{q, r}`; symmetric in its arguments.
pub fn pair_index(q: usize, r: usize, n_blocks: usize) -> Result<usize> {
    if q >= n_blocks || r >= n_blocks {
        return Err(BnmmError::BlockOutOfRange { q, r, n_blocks });
    }
    Ok(pair_index_unchecked(q, r, n_blocks))
}

#[inline]
pub(crate) fn pair_index_unchecked(q: usize, r: usize, n_blocks: usize) -> usize {
    let (q, r) = if q <= r { (q, r) } else { (r, q) };
    // rows 0..q hold n_blocks, n_blocks - 1, ... entries
    q * n_blocks - q * q.saturating_sub(1) / 2 + (r - q)
}

/// Inverse of [`pair_index`]: returns `(q, r)` with `q <= r`.
pub fn pair_of(index: usize, n_blocks: usize) -> (usize, usize) {
    let mut start = 0;
    for q in 0..n_blocks {
        let row = n_blocks - q;
        if index < start + row {
            return (q, q + index - start);
        }
        start += row;
    }
    panic!("pair index {index} out of range for {n_blocks} blocks");
}

/// One value per unordered block pair, with symmetric access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPairTable<T> {
    n_blocks: usize,
    values: Vec<T>,
}

impl<T: Clone> BlockPairTable<T> {
    pub fn filled(n_blocks: usize, value: T) -> Self {
        Self {
            n_blocks,
            values: vec![value; n_pairs(n_blocks)],
        }
    }
}

impl<T> BlockPairTable<T> {
    pub fn from_values(n_blocks: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n_pairs(n_blocks) {
            return Err(BnmmError::Dimension(format!(
                "{n_blocks} blocks need {} pair values, got {}",
                n_pairs(n_blocks),
                values.len()
            )));
        }
        Ok(Self { n_blocks, values })
    }

    pub fn from_fn(n_blocks: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let values = (0..n_pairs(n_blocks))
            .map(|s| {
                let (q, r) = pair_of(s, n_blocks);
                f(q, r)
            })
            .collect();
        Self { n_blocks, values }
    }

    #[inline]
    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, q: usize, r: usize) -> &T {
        &self.values[pair_index_unchecked(q, r, self.n_blocks)]
    }

    #[inline]
    pub fn get_mut(&mut self, q: usize, r: usize) -> &mut T {
        let s = pair_index_unchecked(q, r, self.n_blocks);
        &mut self.values[s]
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> BlockPairTable<U> {
        BlockPairTable {
            n_blocks: self.n_blocks,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Iterates `((q, r), value)` in flat-index order.
    pub fn iter_pairs(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        let n = self.n_blocks;
        self.values
            .iter()
            .enumerate()
            .map(move |(s, v)| (pair_of(s, n), v))
    }
}

impl<T> std::ops::Index<usize> for BlockPairTable<T> {
    type Output = T;
    #[inline]
    fn index(&self, s: usize) -> &T {
        &self.values[s]
    }
}

impl<T> std::ops::IndexMut<usize> for BlockPairTable<T> {
    #[inline]
    fn index_mut(&mut self, s: usize) -> &mut T {
        &mut self.values[s]
    }
}

/// Block membership of every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    labels: Vec<usize>,
    n_blocks: usize,
}

impl Allocation {
    pub fn new(labels: Vec<usize>, n_blocks: usize) -> Result<Self> {
        if n_blocks == 0 {
            return Err(BnmmError::Config("block count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= n_blocks) {
            return Err(BnmmError::BlockOutOfRange {
                q: bad,
                r: bad,
                n_blocks,
            });
        }
        Ok(Self { labels, n_blocks })
    }

    #[inline]
    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    #[inline]
    pub fn set_label(&mut self, v: usize, q: usize) {
        debug_assert!(q < self.n_blocks);
        self.labels[v] = q;
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    /// Renames blocks: node label `g` becomes `perm[g]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            labels: self.labels.iter().map(|&g| perm[g]).collect(),
            n_blocks: self.n_blocks,
        }
    }

    /// Number of unordered node pairs falling in each block pair.
    pub fn pair_edge_counts(&self) -> BlockPairTable<usize> {
        let sizes = self.block_sizes();
        BlockPairTable::from_fn(self.n_blocks, |q, r| {
            if q == r {
                sizes[q] * sizes[q].saturating_sub(1) / 2
            } else {
                sizes[q] * sizes[r]
            }
        })
    }
}

/// Applies a block relabelling to a pair table: the value at `(q, r)` moves
/// to `(perm[q], perm[r])`.
pub fn permute_pairs<T: Clone>(table: &BlockPairTable<T>, perm: &[usize]) -> BlockPairTable<T> {
    let n = table.n_blocks();
    let mut out = table.clone();
    for s in 0..table.len() {
        let (q, r) = pair_of(s, n);
        *out.get_mut(perm[q], perm[r]) = table[s].clone();
    }
    out
}

/// Fixed prior constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub p_gamma: f64,
    pub p_tau: f64,
    /// Dirichlet concentration per block.
    pub dirichlet_concentration: Vec<f64>,
    /// Inverse-gamma shape/scale of the edge variances.
    pub a1: f64,
    pub b1: f64,
    /// Inverse-gamma shape/scale of the within-subject measurement variances.
    pub a2: f64,
    pub b2: f64,
    /// Shape/scale of the inverse-gamma priors on the outcome, mediator and
    /// selected-coefficient variances.
    pub ig_noninf_shape: f64,
    pub ig_noninf_scale: f64,
    pub sigma2_xy: f64,
    pub sigma2_zy: f64,
    pub sigma2_xm: f64,
}

impl Hyperparams {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            p_gamma: 0.5,
            p_tau: 0.5,
            dirichlet_concentration: vec![1.0; n_blocks],
            a1: 1.0,
            b1: 1.0,
            a2: 1.0,
            b2: 1.0,
            ig_noninf_shape: 0.1,
            ig_noninf_scale: 0.1,
            sigma2_xy: 10.0,
            sigma2_zy: 10.0,
            sigma2_xm: 10.0,
        }
    }

    pub fn validate(&self, n_blocks: usize) -> Result<()> {
        for (name, p) in [("p_gamma", self.p_gamma), ("p_tau", self.p_tau)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(BnmmError::Hyperparams(format!(
                    "{name} must lie in (0, 1), got {p}"
                )));
            }
        }
        if self.dirichlet_concentration.len() != n_blocks {
            return Err(BnmmError::Hyperparams(format!(
                "{} Dirichlet concentrations for {n_blocks} blocks",
                self.dirichlet_concentration.len()
            )));
        }
        let positives = [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
            ("ig_noninf_shape", self.ig_noninf_shape),
            ("ig_noninf_scale", self.ig_noninf_scale),
            ("sigma2_xy", self.sigma2_xy),
            ("sigma2_zy", self.sigma2_zy),
            ("sigma2_xm", self.sigma2_xm),
        ];
        for (name, x) in positives
            .into_iter()
            .chain(self.dirichlet_concentration.iter().map(|&c| ("dirichlet", c)))
        {
            if !(x > 0.0 && x.is_finite()) {
                return Err(BnmmError::Hyperparams(format!(
                    "{name} must be positive and finite, got {x}"
                )));
            }
        }
        Ok(())
    }
}

/// One complete draw of every latent quantity and parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub allocation: Allocation,
    pub pi: Vec<f64>,
    /// Subject-level latent mediators `m_i`, one table per subject.
    pub mediators: Vec<BlockPairTable<f64>>,
    /// Scan-level block means `m_ik`, indexed `[subject][scan]`.
    pub measurement_means: Vec<Vec<BlockPairTable<f64>>>,
    /// Edge variance per block pair.
    pub edge_variance: BlockPairTable<f64>,
    /// Between-scan variance per block pair.
    pub measurement_variance: BlockPairTable<f64>,
    pub beta_x: Vec<f64>,
    pub beta_m: BlockPairTable<f64>,
    pub beta_z: f64,
    pub alpha_x: BlockPairTable<Vec<f64>>,
    pub alpha_z: BlockPairTable<f64>,
    pub tau: BlockPairTable<bool>,
    pub gamma: BlockPairTable<bool>,
    /// Outcome regression noise variance.
    pub sigma2_outcome: f64,
    /// Mediator regression noise variance.
    pub sigma2_mediator: f64,
    /// Prior variance of the exposure-to-mediator coefficients.
    pub sigma2_alpha_z: f64,
    /// Prior variance of the mediator-to-outcome coefficients.
    pub sigma2_beta_m: f64,
}

impl ModelState {
    pub fn n_blocks(&self) -> usize {
        self.allocation.n_blocks()
    }

    /// Checks simplex, positivity and shape invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let q = self.n_blocks();
        let sum: f64 = self.pi.iter().sum();
        if self.pi.len() != q || (sum - 1.0).abs() > 1e-9 || self.pi.iter().any(|&p| p < 0.0) {
            return Err(BnmmError::Config(format!("pi is not a simplex (sum {sum})")));
        }
        let scalars = [
            self.sigma2_outcome,
            self.sigma2_mediator,
            self.sigma2_alpha_z,
            self.sigma2_beta_m,
        ];
        for v in scalars
            .iter()
            .chain(self.edge_variance.values())
            .chain(self.measurement_variance.values())
        {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(BnmmError::NonPositiveVariance(*v));
            }
        }
        let s = n_pairs(q);
        let tables_ok = self.beta_m.len() == s
            && self.alpha_z.len() == s
            && self.tau.len() == s
            && self.gamma.len() == s
            && self.alpha_x.len() == s
            && self.mediators.iter().all(|m| m.len() == s)
            && self
                .measurement_means
                .iter()
                .all(|mk| mk.iter().all(|m| m.len() == s));
        if !tables_ok {
            return Err(BnmmError::Dimension("pair table length mismatch".into()));
        }
        Ok(())
    }

    /// Renames blocks jointly in every block-indexed component.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut pi = vec![0.0; self.pi.len()];
        for (q, &p) in self.pi.iter().enumerate() {
            pi[perm[q]] = p;
        }
        Self {
            allocation: self.allocation.permuted(perm),
            pi,
            mediators: self.mediators.iter().map(|m| permute_pairs(m, perm)).collect(),
            measurement_means: self
                .measurement_means
                .iter()
                .map(|mk| mk.iter().map(|m| permute_pairs(m, perm)).collect())
                .collect(),
            edge_variance: permute_pairs(&self.edge_variance, perm),
            measurement_variance: permute_pairs(&self.measurement_variance, perm),
            beta_x: self.beta_x.clone(),
            beta_m: permute_pairs(&self.beta_m, perm),
            beta_z: self.beta_z,
            alpha_x: permute_pairs(&self.alpha_x, perm),
            alpha_z: permute_pairs(&self.alpha_z, perm),
            tau: permute_pairs(&self.tau, perm),
            gamma: permute_pairs(&self.gamma, perm),
            sigma2_outcome: self.sigma2_outcome,
            sigma2_mediator: self.sigma2_mediator,
            sigma2_alpha_z: self.sigma2_alpha_z,
            sigma2_beta_m: self.sigma2_beta_m,
        }
    }
}

/// The stored part of one sweep's state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub beta_z: f64,
    pub beta_x: Vec<f64>,
    pub beta_m: BlockPairTable<f64>,
    pub alpha_z: BlockPairTable<f64>,
    pub tau: BlockPairTable<bool>,
    pub gamma: BlockPairTable<bool>,
    pub labels: Vec<usize>,
    pub pi: Vec<f64>,
    pub edge_variance: BlockPairTable<f64>,
    pub measurement_variance: BlockPairTable<f64>,
    pub sigma2_outcome: f64,
    pub sigma2_mediator: f64,
    pub sigma2_alpha_z: f64,
    pub sigma2_beta_m: f64,
}

impl Draw {
    pub fn from_state(iteration: usize, state: &ModelState) -> Self {
        Self {
            iteration,
            beta_z: state.beta_z,
            beta_x: state.beta_x.clone(),
            beta_m: state.beta_m.clone(),
            alpha_z: state.alpha_z.clone(),
            tau: state.tau.clone(),
            gamma: state.gamma.clone(),
            labels: state.allocation.labels().to_vec(),
            pi: state.pi.clone(),
            edge_variance: state.edge_variance.clone(),
            measurement_variance: state.measurement_variance.clone(),
            sigma2_outcome: state.sigma2_outcome,
            sigma2_mediator: state.sigma2_mediator,
            sigma2_alpha_z: state.sigma2_alpha_z,
            sigma2_beta_m: state.sigma2_beta_m,
        }
    }

    pub fn allocation(&self) -> Allocation {
        Allocation {
            labels: self.labels.clone(),
            n_blocks: self.pi.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub seed: u64,
    pub draws: Vec<Draw>,
}

/// Stored post-burn-in draws of one or more chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub n_blocks: usize,
    pub n_nodes: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// All draws, chain-major.
    pub fn iter(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }
}
