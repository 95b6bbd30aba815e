//! Causal effects, posterior median model, allocation summaries and edge
//! masks.

use serde::{Deserialize, Serialize};

use crate::error::{BnmmError, Result};
use crate::par;
use crate::types::{pair_of, Allocation, BlockPairTable, Dataset, Draw, ModelState, PosteriorDraws};

/// Exposure contrast `(z, z_star)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub z: f64,
    pub z_star: f64,
}

impl Contrast {
    pub fn new(z: f64, z_star: f64) -> Self {
        Self { z, z_star }
    }

    pub fn delta(&self) -> f64 {
        self.z - self.z_star
    }

    /// `(1, 0)` for a binary exposure, `(mean + sd, mean)` otherwise.
    pub fn default_for(dataset: &Dataset) -> Self {
        if dataset.exposure_is_binary() {
            return Self::new(1.0, 0.0);
        }
        let z = dataset.exposures();
        let n = z.len().max(1) as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self::new(mean + var.sqrt(), mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectDraw {
    pub nde: f64,
    pub nie: f64,
    pub te: f64,
    pub nie_pos: f64,
    pub nie_neg: f64,
    pub contrast: Contrast,
}

/// Effects from the raw coefficient tables.
pub fn effects_from_parts(
    beta_z: f64,
    alpha_z: &BlockPairTable<f64>,
    gamma: &BlockPairTable<bool>,
    beta_m: &BlockPairTable<f64>,
    tau: &BlockPairTable<bool>,
    contrast: Contrast,
) -> EffectDraw {
    let dz = contrast.delta();
    let mut nie_pos = 0.0;
    let mut nie_neg = 0.0;
    for s in 0..alpha_z.len() {
        if !(gamma[s] && tau[s]) {
            continue;
        }
        let term = alpha_z[s] * beta_m[s] * dz;
        if term > 0.0 {
            nie_pos += term;
        } else {
            nie_neg += term;
        }
    }
    let nde = beta_z * dz;
    let nie = nie_pos + nie_neg;
    EffectDraw {
        nde,
        nie,
        te: nde + nie,
        nie_pos,
        nie_neg,
        contrast,
    }
}

pub fn effects_from_state(state: &ModelState, contrast: Contrast) -> EffectDraw {
    effects_from_parts(
        state.beta_z,
        &state.alpha_z,
        &state.gamma,
        &state.beta_m,
        &state.tau,
        contrast,
    )
}

pub fn effects_from_draw(draw: &Draw, contrast: Contrast) -> EffectDraw {
    effects_from_parts(
        draw.beta_z,
        &draw.alpha_z,
        &draw.gamma,
        &draw.beta_m,
        &draw.tau,
        contrast,
    )
}

/// Per-chain effect sequences.
pub fn effect_draws(draws: &PosteriorDraws, contrast: Contrast) -> Vec<Vec<EffectDraw>> {
    par::map_slice(&draws.chains, |c| {
        c.draws.iter().map(|d| effects_from_draw(d, contrast)).collect()
    })
}

/// Inclusive threshold of the posterior median model.
pub const MEDIAN_MODEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianModel {
    pub inclusion_tau: BlockPairTable<f64>,
    pub inclusion_gamma: BlockPairTable<f64>,
    /// Pairs whose two inclusion probabilities both reach the threshold,
    /// as `(q, r)` with `q <= r`.
    pub active_pairs: Vec<(usize, usize)>,
}

impl MedianModel {
    pub fn is_active(&self, q: usize, r: usize) -> bool {
        let (a, b) = if q <= r { (q, r) } else { (r, q) };
        self.active_pairs.contains(&(a, b))
    }
}

/// Inclusion frequencies pooled over every chain and the jointly selected
/// pairs.
pub fn posterior_median_model(draws: &PosteriorDraws) -> Result<MedianModel> {
    let n = draws.n_draws();
    if n == 0 {
        return Err(BnmmError::EmptyDraws);
    }
    let q = draws.n_blocks;
    let mut tau = BlockPairTable::filled(q, 0usize);
    let mut gamma = BlockPairTable::filled(q, 0usize);
    for d in draws.iter() {
        for s in 0..tau.len() {
            tau[s] += d.tau[s] as usize;
            gamma[s] += d.gamma[s] as usize;
        }
    }
    let inclusion_tau = tau.map(|&c| c as f64 / n as f64);
    let inclusion_gamma = gamma.map(|&c| c as f64 / n as f64);
    let active_pairs = (0..inclusion_tau.len())
        .filter(|&s| {
            inclusion_tau[s] >= MEDIAN_MODEL_THRESHOLD && inclusion_gamma[s] >= MEDIAN_MODEL_THRESHOLD
        })
        .map(|s| pair_of(s, q))
        .collect();
    Ok(MedianModel {
        inclusion_tau,
        inclusion_gamma,
        active_pairs,
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(BnmmError::EmptyDraws);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub contrast: Contrast,
    pub n_draws: usize,
    pub nde: Interval,
    pub nie: Interval,
    pub te: Interval,
    pub nie_pos: Interval,
    pub nie_neg: Interval,
    pub median_model: MedianModel,
}

pub fn summarize_effects(draws: &PosteriorDraws, contrast: Contrast) -> Result<EffectSummary> {
    let n = draws.n_draws();
    if n < 2 {
        return Err(BnmmError::EmptyDraws);
    }
    let all: Vec<EffectDraw> = effect_draws(draws, contrast).into_iter().flatten().collect();
    let col = |f: fn(&EffectDraw) -> f64| Interval::from_values(&all.iter().map(f).collect::<Vec<_>>());
    Ok(EffectSummary {
        contrast,
        n_draws: n,
        nde: col(|e| e.nde)?,
        nie: col(|e| e.nie)?,
        te: col(|e| e.te)?,
        nie_pos: col(|e| e.nie_pos)?,
        nie_neg: col(|e| e.nie_neg)?,
        median_model: posterior_median_model(draws)?,
    })
}

/// Maps labels of `labels` onto `reference` names: repeatedly matches the
/// largest remaining cell of the confusion table. Returns `perm` with
/// `perm[old] = new`.
pub fn align_labels(labels: &[usize], reference: &[usize], n_blocks: usize) -> Vec<usize> {
    let q = n_blocks;
    let mut confusion = vec![0usize; q * q];
    for (&a, &b) in labels.iter().zip(reference) {
        confusion[a * q + b] += 1;
    }
    let mut perm = vec![usize::MAX; q];
    let mut used = vec![false; q];
    for _ in 0..q {
        let mut best: Option<(usize, usize, usize)> = None;
        for a in (0..q).filter(|&a| perm[a] == usize::MAX) {
            for b in (0..q).filter(|&b| !used[b]) {
                let c = confusion[a * q + b];
                if best.is_none_or(|(_, _, bc)| c > bc) {
                    best = Some((a, b, c));
                }
            }
        }
        let (a, b, _) = best.expect("unmatched labels remain");
        perm[a] = b;
        used[b] = true;
    }
    perm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    pub consensus: Allocation,
    /// `frequencies[v][q]`: share of aligned draws placing node `v` in `q`.
    pub frequencies: Vec<Vec<f64>>,
}

/// Modal aligned label per node. Every draw is aligned to the first stored
/// draw of the first chain.
pub fn allocation_summary(draws: &PosteriorDraws) -> Result<AllocationSummary> {
    let reference = draws.iter().next().ok_or(BnmmError::EmptyDraws)?;
    let q = draws.n_blocks;
    let v = reference.labels.len();
    let mut counts = vec![vec![0usize; q]; v];
    for d in draws.iter() {
        let perm = align_labels(&d.labels, &reference.labels, q);
        for (node, &g) in d.labels.iter().enumerate() {
            counts[node][perm[g]] += 1;
        }
    }
    let n = draws.n_draws() as f64;
    let labels = counts
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .fold((0, 0), |(bq, bc), (q, &x)| if x > bc { (q, x) } else { (bq, bc) })
                .0
        })
        .collect();
    Ok(AllocationSummary {
        consensus: Allocation::new(labels, q)?,
        frequencies: counts
            .iter()
            .map(|c| c.iter().map(|&x| x as f64 / n).collect())
            .collect(),
    })
}

/// Adjusted Rand index between two partitions of the same nodes.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let rows: Vec<u64> = (0..ka).map(|x| (0..kb).map(|y| table[x * kb + y]).sum()).collect();
    let cols: Vec<u64> = (0..kb).map(|y| (0..ka).map(|x| table[x * kb + y]).sum()).collect();
    let index: f64 = table.iter().map(|&n| c2(n)).sum();
    let sa: f64 = rows.iter().map(|&n| c2(n)).sum();
    let sb: f64 = cols.iter().map(|&n| c2(n)).sum();
    let total = c2(a.len() as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Symmetric node-by-node indicator of active block pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeMask {
    n: usize,
    data: Vec<bool>,
}

impl EdgeMask {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, l: usize) -> bool {
        self.data[j * self.n + l]
    }

    pub fn set_sym(&mut self, j: usize, l: usize, value: bool) {
        self.data[j * self.n + l] = value;
        self.data[l * self.n + j] = value;
    }

    /// Active unordered node pairs.
    pub fn count_active(&self) -> usize {
        (0..self.n)
            .map(|j| (j + 1..self.n).filter(|&l| self.get(j, l)).count())
            .sum()
    }
}

pub fn edge_mask(active_pairs: &[(usize, usize)], alloc: &Allocation) -> EdgeMask {
    let q = alloc.n_blocks();
    let mut active = vec![false; q * q];
    for &(a, b) in active_pairs {
        active[a * q + b] = true;
        active[b * q + a] = true;
    }
    let labels = alloc.labels();
    let n = labels.len();
    let mut mask = EdgeMask::zeros(n);
    for j in 0..n {
        for l in j + 1..n {
            if active[labels[j] * q + labels[l]] {
                mask.set_sym(j, l, true);
            }
        }
    }
    mask
}
