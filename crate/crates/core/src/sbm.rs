//! Weighted stochastic block model: edge likelihood, block sufficient
//! statistics, block averages and block-count selection by ICL.
//!
//! Every likelihood counts each unordered node pair `j < l` once per scan.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::derive_seed;
use crate::error::{BnmmError, Result};
use crate::par;
use crate::types::{n_pairs, pair_index_unchecked, Allocation, BlockPairTable, Connectome, Dataset};

/// Restarts of the greedy label search per candidate block count.
pub const GREEDY_RESTARTS: usize = 10;
const MAX_GREEDY_PASSES: usize = 100;

/// `log N(a; m, sigma2)`.
pub fn edge_loglik(a: f64, m: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(BnmmError::NonPositiveVariance(sigma2));
    }
    let r = a - m;
    Ok(-0.5 * (2.0 * PI * sigma2).ln() - r * r / (2.0 * sigma2))
}

/// Log-likelihood of every scan given the allocation, the scan-level block
/// means (`[subject][scan]`) and the edge variances. Direct edge-by-edge sum.
pub fn complete_loglik(
    dataset: &Dataset,
    alloc: &Allocation,
    measurement_means: &[Vec<BlockPairTable<f64>>],
    edge_variance: &BlockPairTable<f64>,
) -> Result<f64> {
    let v = dataset.n_nodes;
    if alloc.n_nodes() != v || measurement_means.len() != dataset.n_subjects() {
        return Err(BnmmError::Dimension(
            "allocation or block means do not match the dataset".into(),
        ));
    }
    let mut total = 0.0;
    for (i, k, a) in dataset.layers() {
        let means = measurement_means[i]
            .get(k)
            .ok_or_else(|| BnmmError::Dimension(format!("no block means for subject {i}, scan {k}")))?;
        for j in 0..v {
            for l in (j + 1)..v {
                let (q, r) = (alloc.label(j), alloc.label(l));
                total += edge_loglik(a.get(j, l), *means.get(q, r), *edge_variance.get(q, r))?;
            }
        }
    }
    Ok(total)
}

/// Per-scan block-pair edge sums for a fixed allocation.
#[derive(Debug, Clone)]
pub struct BlockStats {
    pub n_blocks: usize,
    pub n_layers: usize,
    /// Node pairs per block pair (identical in every scan).
    pub counts: Vec<usize>,
    /// Edge sums, `[layer * n_pairs + pair]`.
    pub sums: Vec<f64>,
    /// Edge sums of squares, same layout.
    pub sq_sums: Vec<f64>,
}

impl BlockStats {
    pub fn compute(layers: &[&Connectome], alloc: &Allocation) -> Self {
        let q = alloc.n_blocks();
        let s = n_pairs(q);
        let v = alloc.n_nodes();
        let labels = alloc.labels();
        let per_layer = par::map_slice(layers, |a| {
            let mut sums = vec![0.0; s];
            let mut sq = vec![0.0; s];
            for j in 0..v {
                let row = a.row(j);
                let gj = labels[j];
                for l in (j + 1)..v {
                    let p = pair_index_unchecked(gj, labels[l], q);
                    let x = row[l];
                    sums[p] += x;
                    sq[p] += x * x;
                }
            }
            (sums, sq)
        });
        let mut sums = Vec::with_capacity(s * layers.len());
        let mut sq_sums = Vec::with_capacity(s * layers.len());
        for (a, b) in per_layer {
            sums.extend(a);
            sq_sums.extend(b);
        }
        Self {
            n_blocks: q,
            n_layers: layers.len(),
            counts: alloc.pair_edge_counts().into_values(),
            sums,
            sq_sums,
        }
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn sum(&self, layer: usize, pair: usize) -> f64 {
        self.sums[layer * self.counts.len() + pair]
    }

    #[inline]
    pub fn sq_sum(&self, layer: usize, pair: usize) -> f64 {
        self.sq_sums[layer * self.counts.len() + pair]
    }
}

/// All scans of a dataset in subject-major order.
pub fn layer_refs(dataset: &Dataset) -> Vec<&Connectome> {
    dataset.layers().map(|(_, _, a)| a).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAverages {
    /// Empirical block means, `[subject][scan]`.
    pub means: Vec<Vec<BlockPairTable<f64>>>,
    /// Within-scan edge variance per pair, pooled over scans.
    pub pooled_variance: BlockPairTable<f64>,
    /// Pairs with no node pairs; their means fall back to the scan mean and
    /// their variance to the global variance.
    pub empty_pairs: Vec<usize>,
}

/// Empirical block-pair means per scan plus pooled per-pair variances.
pub fn block_averages(dataset: &Dataset, alloc: &Allocation) -> BlockAverages {
    let layers = layer_refs(dataset);
    let stats = BlockStats::compute(&layers, alloc);
    let q = alloc.n_blocks();
    let s = n_pairs(q);
    let n_layers = layers.len();
    let edges = dataset.edges_per_layer() as f64;

    let mut layer_means = Vec::with_capacity(n_layers);
    let mut global_ssr = 0.0;
    for l in 0..n_layers {
        let total: f64 = (0..s).map(|p| stats.sum(l, p)).sum();
        let total_sq: f64 = (0..s).map(|p| stats.sq_sum(l, p)).sum();
        let mean = if edges > 0.0 { total / edges } else { 0.0 };
        global_ssr += (total_sq - edges * mean * mean).max(0.0);
        layer_means.push(mean);
    }
    let global_var = if edges > 0.0 {
        global_ssr / (edges * n_layers as f64)
    } else {
        0.0
    };
    let floor = (global_var * 1e-8).max(1e-12);

    let mut means = Vec::with_capacity(dataset.n_subjects());
    let mut l = 0;
    for subject in &dataset.subjects {
        let mut per_scan = Vec::with_capacity(subject.connectomes.len());
        for _ in &subject.connectomes {
            let table = BlockPairTable::from_values(
                q,
                (0..s)
                    .map(|p| {
                        let n = stats.counts[p];
                        if n == 0 {
                            layer_means[l]
                        } else {
                            stats.sum(l, p) / n as f64
                        }
                    })
                    .collect(),
            )
            .expect("pair count matches");
            per_scan.push(table);
            l += 1;
        }
        means.push(per_scan);
    }

    let mut empty_pairs = Vec::new();
    let pooled = (0..s)
        .map(|p| {
            let n = stats.counts[p];
            if n == 0 {
                empty_pairs.push(p);
                return global_var.max(floor);
            }
            let nf = n as f64;
            let ssr: f64 = (0..n_layers)
                .map(|l| {
                    let s1 = stats.sum(l, p);
                    (stats.sq_sum(l, p) - s1 * s1 / nf).max(0.0)
                })
                .sum();
            (ssr / (nf * n_layers as f64)).max(floor)
        })
        .collect();
    BlockAverages {
        means,
        pooled_variance: BlockPairTable::from_values(q, pooled).expect("pair count matches"),
        empty_pairs,
    }
}

/// Which data the ICL search scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IclMode {
    /// One matrix: the average over every subject and scan.
    Pooled,
    /// Every scan keeps its own block means; variances are shared.
    Layered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclResult {
    pub n_blocks: usize,
    pub icl_score: f64,
    pub log_likelihood: f64,
    pub penalty: f64,
    pub allocation: Allocation,
    /// False when the best restart hit the pass limit while still moving.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSelection {
    pub results: Vec<IclResult>,
    pub best_q: usize,
}

impl QSelection {
    pub fn best(&self) -> &IclResult {
        self.results
            .iter()
            .find(|r| r.n_blocks == self.best_q)
            .expect("best_q is one of the results")
    }
}

/// Scores every block count in `q_min..=q_max` and returns the ICL maximiser.
pub fn select_q(
    dataset: &Dataset,
    q_min: usize,
    q_max: usize,
    seed: u64,
    mode: IclMode,
) -> Result<QSelection> {
    let v = dataset.n_nodes;
    if q_min == 0 || q_min > q_max {
        return Err(BnmmError::Config(format!(
            "invalid block-count range {q_min}..={q_max}"
        )));
    }
    if q_max > v {
        return Err(BnmmError::Config(format!(
            "q_max = {q_max} exceeds the node count {v}"
        )));
    }
    if v < 2 {
        return Err(BnmmError::Config("need at least two nodes".into()));
    }
    let data = ProfileData::new(dataset, mode);
    let jobs: Vec<(usize, usize)> = (q_min..=q_max)
        .flat_map(|q| (0..GREEDY_RESTARTS).map(move |r| (q, r)))
        .collect();
    let fits = par::map_slice(&jobs, |&(q, restart)| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[q as u64, restart as u64]));
        data.greedy(q, &mut rng)
    });
    let mut results = Vec::new();
    for q in q_min..=q_max {
        let best = jobs
            .iter()
            .zip(&fits)
            .filter(|((jq, _), _)| *jq == q)
            .map(|(_, f)| f)
            .fold(None::<&GreedyFit>, |acc, f| match acc {
                Some(a) if a.objective >= f.objective => Some(a),
                _ => Some(f),
            })
            .expect("at least one restart");
        let penalty = data.penalty(q);
        results.push(IclResult {
            n_blocks: q,
            icl_score: best.objective - penalty,
            log_likelihood: best.objective,
            penalty,
            allocation: Allocation::new(best.labels.clone(), q)?,
            converged: best.converged,
        });
    }
    let best_q = results
        .iter()
        .fold(None::<&IclResult>, |acc, r| match acc {
            Some(a) if a.icl_score >= r.icl_score => Some(a),
            _ => Some(r),
        })
        .map(|r| r.n_blocks)
        .expect("non-empty range");
    Ok(QSelection { results, best_q })
}

/// ICL of a given allocation under the same objective and penalty used by
/// [`select_q`].
pub fn icl_score(dataset: &Dataset, alloc: &Allocation, mode: IclMode) -> f64 {
    let data = ProfileData::new(dataset, mode);
    let state = GreedyState::new(&data, alloc.labels().to_vec(), alloc.n_blocks());
    state.objective(&data) - data.penalty(alloc.n_blocks())
}

/// BIC-style ICL penalty: every block pair carries one mean per scored
/// matrix plus a variance, each charged `ln(E)/2`, and the allocation
/// charges `(Q-1) ln(V) / 2`.
pub fn icl_penalty(n_blocks: usize, n_matrices: usize, n_nodes: usize) -> f64 {
    let edges = (n_matrices * n_nodes * (n_nodes - 1) / 2) as f64;
    0.5 * (n_pairs(n_blocks) * (n_matrices + 1)) as f64 * edges.ln()
        + 0.5 * (n_blocks as f64 - 1.0) * (n_nodes as f64).ln()
}

struct ProfileData<'a> {
    layers: Vec<std::borrow::Cow<'a, Connectome>>,
    n_nodes: usize,
    /// Variance of the single-block fit; one pseudo-observation of it keeps
    /// tiny block pairs from reaching zero variance.
    base_var: f64,
}

struct GreedyFit {
    labels: Vec<usize>,
    objective: f64,
    converged: bool,
}

impl<'a> ProfileData<'a> {
    fn new(dataset: &'a Dataset, mode: IclMode) -> Self {
        use std::borrow::Cow;
        let v = dataset.n_nodes;
        let layers: Vec<Cow<'a, Connectome>> = match mode {
            IclMode::Layered => dataset.layers().map(|(_, _, a)| Cow::Borrowed(a)).collect(),
            IclMode::Pooled => {
                let mut avg = Connectome::zeros(v);
                let n = dataset.n_layers() as f64;
                for (_, _, a) in dataset.layers() {
                    for j in 0..v {
                        for l in (j + 1)..v {
                            let x = avg.get(j, l) + a.get(j, l) / n;
                            avg.set_sym(j, l, x);
                        }
                    }
                }
                vec![Cow::Owned(avg)]
            }
        };
        let edges = (v * (v - 1) / 2) as f64;
        let mut ssr = 0.0;
        for a in &layers {
            let (mut s1, mut s2) = (0.0, 0.0);
            for j in 0..v {
                for &x in &a.row(j)[j + 1..] {
                    s1 += x;
                    s2 += x * x;
                }
            }
            ssr += (s2 - s1 * s1 / edges).max(0.0);
        }
        let base_var = (ssr / (edges * layers.len() as f64)).max(1e-300);
        Self {
            layers,
            n_nodes: v,
            base_var,
        }
    }

    fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn penalty(&self, n_blocks: usize) -> f64 {
        icl_penalty(n_blocks, self.n_layers(), self.n_nodes)
    }

    /// Profile log-likelihood of one block pair.
    fn pair_term(&self, n: usize, sum_sq_means: f64, sq_total: f64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n_tot = (n * self.n_layers()) as f64;
        let ssr = (sq_total - sum_sq_means / n as f64).max(0.0);
        let var = (ssr + self.base_var) / (n_tot + 1.0);
        -0.5 * n_tot * (2.0 * PI * var).ln() - ssr / (2.0 * var)
    }

    fn greedy(&self, n_blocks: usize, rng: &mut ChaCha8Rng) -> GreedyFit {
        let v = self.n_nodes;
        let labels: Vec<usize> = (0..v).map(|_| rng.random_range(0..n_blocks)).collect();
        let mut state = GreedyState::new(self, labels, n_blocks);
        let mut order: Vec<usize> = (0..v).collect();
        let mut converged = false;
        for _ in 0..MAX_GREEDY_PASSES {
            order.shuffle(rng);
            let mut moved = false;
            for &node in &order {
                moved |= state.relocate(self, node);
            }
            if !moved {
                converged = true;
                break;
            }
        }
        GreedyFit {
            objective: state.objective(self),
            labels: state.labels,
            converged,
        }
    }
}

/// Sufficient statistics for the greedy search, kept in sync with `labels`.
struct GreedyState {
    labels: Vec<usize>,
    n_blocks: usize,
    sizes: Vec<usize>,
    counts: Vec<usize>,
    /// `[layer * n_pairs + pair]`
    sums: Vec<f64>,
    sq: Vec<f64>,
    // scratch: per-layer row sums by block, `[layer * n_blocks + block]`
    row: Vec<f64>,
    row_sq: Vec<f64>,
    row_n: Vec<usize>,
}

impl GreedyState {
    fn new(data: &ProfileData<'_>, labels: Vec<usize>, n_blocks: usize) -> Self {
        let s = n_pairs(n_blocks);
        let n_layers = data.n_layers();
        let alloc = Allocation::new(labels.clone(), n_blocks).expect("labels in range");
        let refs: Vec<&Connectome> = data.layers.iter().map(|c| c.as_ref()).collect();
        let stats = BlockStats::compute(&refs, &alloc);
        let mut sq = vec![0.0; s];
        for l in 0..n_layers {
            for (p, x) in sq.iter_mut().enumerate() {
                *x += stats.sq_sum(l, p);
            }
        }
        Self {
            sizes: alloc.block_sizes(),
            labels,
            n_blocks,
            counts: stats.counts,
            sums: stats.sums,
            sq,
            row: vec![0.0; n_layers * n_blocks],
            row_sq: vec![0.0; n_blocks],
            row_n: vec![0; n_blocks],
        }
    }

    fn objective(&self, data: &ProfileData<'_>) -> f64 {
        let s = self.counts.len();
        let v = self.labels.len() as f64;
        let mut total = 0.0;
        for p in 0..s {
            let ss: f64 = (0..data.n_layers())
                .map(|l| self.sums[l * s + p].powi(2))
                .sum();
            total += data.pair_term(self.counts[p], ss, self.sq[p]);
        }
        for &n in &self.sizes {
            if n > 0 {
                total += n as f64 * (n as f64 / v).ln();
            }
        }
        total
    }

    fn load_row(&mut self, data: &ProfileData<'_>, node: usize) {
        let q = self.n_blocks;
        self.row.iter_mut().for_each(|x| *x = 0.0);
        self.row_sq.iter_mut().for_each(|x| *x = 0.0);
        self.row_n.iter_mut().for_each(|x| *x = 0);
        for (l, a) in data.layers.iter().enumerate() {
            let r = a.row(node);
            let acc = &mut self.row[l * q..(l + 1) * q];
            for (other, &x) in r.iter().enumerate() {
                if other != node {
                    let g = self.labels[other];
                    acc[g] += x;
                    self.row_sq[g] += x * x;
                }
            }
        }
        for (other, &g) in self.labels.iter().enumerate() {
            if other != node {
                self.row_n[g] += 1;
            }
        }
    }

    /// Adds (`sign = 1.0`) or removes (`-1.0`) the loaded row under block `b`.
    fn apply(&mut self, b: usize, sign: f64) {
        let q = self.n_blocks;
        let s = self.counts.len();
        let n_layers = self.row.len() / q;
        for r in 0..q {
            let p = pair_index_unchecked(b, r, q);
            if sign > 0.0 {
                self.counts[p] += self.row_n[r];
            } else {
                self.counts[p] -= self.row_n[r];
            }
            self.sq[p] += sign * self.row_sq[r];
            for l in 0..n_layers {
                self.sums[l * s + p] += sign * self.row[l * q + r];
            }
        }
        if sign > 0.0 {
            self.sizes[b] += 1;
        } else {
            self.sizes[b] -= 1;
        }
    }

    /// Pair terms touching block `b`, with or without the loaded row added.
    fn block_terms(&self, data: &ProfileData<'_>, b: usize, with_row: bool) -> f64 {
        let q = self.n_blocks;
        let s = self.counts.len();
        let n_layers = data.n_layers();
        let mut total = 0.0;
        for r in 0..q {
            let p = pair_index_unchecked(b, r, q);
            let (mut n, mut sq) = (self.counts[p], self.sq[p]);
            let mut ss = 0.0;
            if with_row {
                n += self.row_n[r];
                sq += self.row_sq[r];
                for l in 0..n_layers {
                    let x = self.sums[l * s + p] + self.row[l * q + r];
                    ss += x * x;
                }
            } else {
                for l in 0..n_layers {
                    ss += self.sums[l * s + p].powi(2);
                }
            }
            total += data.pair_term(n, ss, sq);
        }
        total
    }

    /// Moves `node` to its best block; returns whether it moved.
    fn relocate(&mut self, data: &ProfileData<'_>, node: usize) -> bool {
        let old = self.labels[node];
        self.load_row(data, node);
        self.apply(old, -1.0);
        let v = self.labels.len() as f64;
        let size_term = |n: usize| if n == 0 { 0.0 } else { n as f64 * (n as f64 / v).ln() };
        let gains: Vec<f64> = (0..self.n_blocks)
            .map(|b| {
                self.block_terms(data, b, true) - self.block_terms(data, b, false)
                    + size_term(self.sizes[b] + 1)
                    - size_term(self.sizes[b])
            })
            .collect();
        let mut best = old;
        for (b, &g) in gains.iter().enumerate() {
            if g > gains[best] + 1e-9 * (1.0 + gains[best].abs()) {
                best = b;
            }
        }
        self.labels[node] = best;
        self.apply(best, 1.0);
        best != old
    }
}
