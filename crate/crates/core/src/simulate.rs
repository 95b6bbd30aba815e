//! Synthetic network-mediation designs and the evaluation metrics used to
//! score fits against the generating truth.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{categorical_from_logs, derive_seed, dirichlet, normal, std_normal};
use crate::effects::{
    allocation_summary, edge_mask, effects_from_state, summarize_effects, Contrast, EdgeMask,
    EffectDraw, EffectSummary,
};
use crate::error::{BnmmError, Result};
use crate::sampler::{run_chains, ChainConfig, InitMode, ModelData};
use crate::diagnostics::gr_report;
use crate::types::{
    n_pairs, pair_of, Allocation, BlockPairTable, Connectome, Dataset, Hyperparams, ModelState,
    SubjectRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// `tau` and `gamma` coincide.
    Shared,
    /// `tau` and `gamma` overlap partially.
    Overlapping,
}

impl Scenario {
    pub fn number(&self) -> u8 {
        match self {
            Scenario::Shared => 1,
            Scenario::Overlapping => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Scenario::Shared),
            2 => Ok(Scenario::Overlapping),
            _ => Err(BnmmError::Config(format!("unknown scenario {n}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Noise {
    Low,
    High,
}

impl Noise {
    pub fn name(&self) -> &'static str {
        match self {
            Noise::Low => "low",
            Noise::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExposureType {
    Continuous,
    Binary,
}

/// Standard deviations of every noise source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub outcome: f64,
    pub mediator: f64,
    pub edge: f64,
    pub measurement: f64,
}

impl NoiseLevels {
    pub fn for_level(noise: Noise) -> Self {
        match noise {
            Noise::Low => Self {
                outcome: 0.1,
                mediator: 0.1,
                edge: 0.1,
                measurement: 0.1,
            },
            Noise::High => Self {
                outcome: 1.0,
                mediator: 0.5,
                edge: 0.5,
                measurement: 0.1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub n_scans: usize,
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub scenario: Scenario,
    pub noise: Noise,
    pub exposure_type: ExposureType,
    pub seed: u64,
    /// Replaces the levels implied by `noise`.
    pub noise_override: Option<NoiseLevels>,
    /// Per-pair activation probability in the shared scenario.
    pub active_prob: f64,
    /// Sizes of the `tau` and `gamma` active sets and their overlap in the
    /// overlapping scenario.
    pub n_active_tau: usize,
    pub n_active_gamma: usize,
    pub n_overlap: usize,
    pub dirichlet_concentration: f64,
    pub contrast: Contrast,
}

impl SimConfig {
    /// Full-size design: 50 subjects, 6 scans, 100 nodes, 10 blocks.
    pub fn full(scenario: Scenario, noise: Noise, seed: u64) -> Self {
        Self {
            n_subjects: 50,
            n_scans: 6,
            n_nodes: 100,
            n_blocks: 10,
            scenario,
            noise,
            exposure_type: ExposureType::Continuous,
            seed,
            noise_override: None,
            active_prob: 0.15,
            n_active_tau: 8,
            n_active_gamma: 8,
            n_overlap: 6,
            dirichlet_concentration: 3.0,
            contrast: Contrast::new(1.0, 0.0),
        }
    }

    /// Desk-scale design: 60 nodes, 6 blocks, 4 scans.
    pub fn desk(scenario: Scenario, noise: Noise, seed: u64) -> Self {
        Self {
            n_nodes: 60,
            n_blocks: 6,
            n_scans: 4,
            ..Self::full(scenario, noise, seed)
        }
    }

    pub fn noise_levels(&self) -> NoiseLevels {
        self.noise_override.unwrap_or(NoiseLevels::for_level(self.noise))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_scans == 0 || self.n_nodes < 2 || self.n_blocks == 0 {
            return Err(BnmmError::Config("all simulation counts must be positive".into()));
        }
        if self.n_blocks > self.n_nodes {
            return Err(BnmmError::Config(format!(
                "{} blocks exceed {} nodes",
                self.n_blocks, self.n_nodes
            )));
        }
        if self.scenario == Scenario::Overlapping {
            let need = self.n_active_tau + self.n_active_gamma - self.n_overlap.min(self.n_active_tau);
            if self.n_overlap > self.n_active_tau.min(self.n_active_gamma) {
                return Err(BnmmError::Config("overlap exceeds an active-set size".into()));
            }
            if need > n_pairs(self.n_blocks) {
                return Err(BnmmError::Config(format!(
                    "{need} distinct active pairs requested but only {} block pairs exist",
                    n_pairs(self.n_blocks)
                )));
            }
        }
        if !(self.active_prob > 0.0 && self.active_prob <= 1.0) {
            return Err(BnmmError::Config("active_prob must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

pub const BETA_Z: f64 = 1.5;
pub const BETA_M: f64 = 2.0;
pub const BETA_X: f64 = 1.0;
pub const ALPHA_X: f64 = 0.3;
pub const ALPHA_Z_RANGE: (f64, f64) = (1.5, 2.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimConfig,
    /// Every generating value, including the latent mediators.
    pub state: ModelState,
    pub effects: EffectDraw,
    /// Jointly active pairs.
    pub active_pairs: Vec<(usize, usize)>,
    pub edge_mask: EdgeMask,
    /// Log density of all generated quantities given the generating values.
    pub log_likelihood: f64,
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    if var == 0.0 {
        return if x == mean { 0.0 } else { f64::NEG_INFINITY };
    }
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// Log density of the outcome, latent mediators, scan means and edges given
/// every other component of `state`.
pub fn model_log_likelihood(dataset: &Dataset, state: &ModelState) -> f64 {
    let data = ModelData::new(dataset);
    let s = state.beta_m.len();
    let resid = crate::sampler::updates::outcome_residuals(state, &data);
    let mut total: f64 = resid
        .iter()
        .map(|e| normal_logpdf(*e, 0.0, state.sigma2_outcome))
        .sum();
    let labels = state.allocation.labels();
    let q = state.n_blocks();
    for i in 0..data.n_subjects() {
        for p in 0..s {
            let mean = crate::sampler::updates::mediator_mean(state, &data, i, p);
            total += normal_logpdf(state.mediators[i][p], mean, state.sigma2_mediator);
        }
        for (k, layer) in data.subject_layers[i].clone().enumerate() {
            let mk = &state.measurement_means[i][k];
            for p in 0..s {
                total += normal_logpdf(mk[p], state.mediators[i][p], state.measurement_variance[p]);
            }
            let a = data.layers[layer];
            for j in 0..data.n_nodes() {
                for l in j + 1..data.n_nodes() {
                    let p = crate::types::pair_index_unchecked(labels[j], labels[l], q);
                    total += normal_logpdf(a.get(j, l), mk[p], state.edge_variance[p]);
                }
            }
        }
    }
    total
}

fn active_sets<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> (Vec<bool>, Vec<bool>) {
    let s = n_pairs(config.n_blocks);
    match config.scenario {
        Scenario::Shared => loop {
            let act: Vec<bool> = (0..s).map(|_| rng.random::<f64>() < config.active_prob).collect();
            if act.iter().any(|&a| a) {
                return (act.clone(), act);
            }
        },
        Scenario::Overlapping => {
            let only_tau = config.n_active_tau - config.n_overlap;
            let only_gamma = config.n_active_gamma - config.n_overlap;
            let picks = sample_indices(rng, s, config.n_overlap + only_tau + only_gamma).into_vec();
            let mut tau = vec![false; s];
            let mut gamma = vec![false; s];
            for (rank, &p) in picks.iter().enumerate() {
                if rank < config.n_overlap {
                    tau[p] = true;
                    gamma[p] = true;
                } else if rank < config.n_overlap + only_tau {
                    tau[p] = true;
                } else {
                    gamma[p] = true;
                }
            }
            (tau, gamma)
        }
    }
}

/// Draws a dataset and its generating truth.
pub fn generate(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let q = config.n_blocks;
    let s = n_pairs(q);
    let noise = config.noise_levels();

    let pi = dirichlet(&vec![config.dirichlet_concentration; q], &mut rng);
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let labels = (0..config.n_nodes)
        .map(|_| categorical_from_logs(&log_pi, &mut rng))
        .collect();
    let allocation = Allocation::new(labels, q)?;

    let (tau, gamma) = active_sets(config, &mut rng);
    let n_gamma = gamma.iter().filter(|&&g| g).count();
    let (lo, hi) = ALPHA_Z_RANGE;
    let mut rank = 0;
    let alpha_z: Vec<f64> = gamma
        .iter()
        .map(|&g| {
            if !g {
                return 0.0;
            }
            let v = if n_gamma > 1 {
                lo + (hi - lo) * rank as f64 / (n_gamma - 1) as f64
            } else {
                0.5 * (lo + hi)
            };
            rank += 1;
            v
        })
        .collect();

    let mut subjects = Vec::with_capacity(config.n_subjects);
    for _ in 0..config.n_subjects {
        let exposure = match config.exposure_type {
            ExposureType::Continuous => std_normal(&mut rng),
            ExposureType::Binary => f64::from(u8::from(rng.random::<bool>())),
        };
        subjects.push(SubjectRecord {
            outcome: 0.0,
            exposure,
            covariates: vec![1.0, std_normal(&mut rng)],
            connectomes: Vec::new(),
        });
    }
    let template = Dataset {
        subjects,
        n_nodes: config.n_nodes,
        n_covariates: 1,
    };
    let state = ModelState {
        allocation,
        pi,
        mediators: Vec::new(),
        measurement_means: Vec::new(),
        edge_variance: BlockPairTable::filled(q, noise.edge.powi(2)),
        measurement_variance: BlockPairTable::filled(q, noise.measurement.powi(2)),
        beta_x: vec![BETA_X; 2],
        beta_m: BlockPairTable::filled(q, BETA_M),
        beta_z: BETA_Z,
        alpha_x: BlockPairTable::filled(q, vec![ALPHA_X; 2]),
        alpha_z: BlockPairTable::from_values(q, alpha_z)?,
        tau: BlockPairTable::from_values(q, tau)?,
        gamma: BlockPairTable::from_values(q, gamma)?,
        sigma2_outcome: noise.outcome.powi(2),
        sigma2_mediator: noise.mediator.powi(2),
        sigma2_alpha_z: 1.0,
        sigma2_beta_m: 1.0,
    };
    let scans = vec![config.n_scans; config.n_subjects];
    let (dataset, state) = simulate_from(&template, &scans, state, &mut rng);
    debug_assert_eq!(state.beta_m.len(), s);

    let effects = effects_from_state(&state, config.contrast);
    let active_pairs: Vec<(usize, usize)> = (0..s)
        .filter(|&p| state.tau[p] && state.gamma[p])
        .map(|p| pair_of(p, q))
        .collect();
    let mask = edge_mask(&active_pairs, &state.allocation);
    let log_likelihood = model_log_likelihood(&dataset, &state);
    Ok((
        dataset,
        GroundTruth {
            config: config.clone(),
            state,
            effects,
            active_pairs,
            edge_mask: mask,
            log_likelihood,
        },
    ))
}

/// Draws latent mediators, scan means, connectomes and outcomes given the
/// parameters in `state`, keeping the exposures and covariates of
/// `template`. `scans[i]` fixes the scan count of subject `i`.
pub fn simulate_from<R: Rng + ?Sized>(
    template: &Dataset,
    scans: &[usize],
    mut state: ModelState,
    rng: &mut R,
) -> (Dataset, ModelState) {
    let q = state.n_blocks();
    let s = n_pairs(q);
    let v = template.n_nodes;
    let labels = state.allocation.labels().to_vec();
    let mut subjects = Vec::with_capacity(template.n_subjects());
    let mut mediators = Vec::with_capacity(template.n_subjects());
    let mut measurement_means = Vec::with_capacity(template.n_subjects());
    for (i, subj) in template.subjects.iter().enumerate() {
        let x = &subj.covariates;
        let z = subj.exposure;
        let m: Vec<f64> = (0..s)
            .map(|p| {
                let az = if state.gamma[p] { state.alpha_z[p] } else { 0.0 };
                let mean: f64 = x.iter().zip(&state.alpha_x[p]).map(|(a, b)| a * b).sum::<f64>() + z * az;
                normal(mean, state.sigma2_mediator, rng)
            })
            .collect();
        let mut per_scan = Vec::with_capacity(scans[i]);
        let mut connectomes = Vec::with_capacity(scans[i]);
        for _ in 0..scans[i] {
            let mk: Vec<f64> = (0..s)
                .map(|p| normal(m[p], state.measurement_variance[p], rng))
                .collect();
            let mut a = Connectome::zeros(v);
            for j in 0..v {
                for l in j + 1..v {
                    let p = crate::types::pair_index_unchecked(labels[j], labels[l], q);
                    a.set_sym(j, l, normal(mk[p], state.edge_variance[p], rng));
                }
            }
            connectomes.push(a);
            per_scan.push(BlockPairTable::from_values(q, mk).expect("pair count matches"));
        }
        let outcome_mean: f64 = x.iter().zip(&state.beta_x).map(|(a, b)| a * b).sum::<f64>()
            + (0..s)
                .filter(|&p| state.tau[p])
                .map(|p| m[p] * state.beta_m[p])
                .sum::<f64>()
            + z * state.beta_z;
        subjects.push(SubjectRecord {
            outcome: normal(outcome_mean, state.sigma2_outcome, rng),
            exposure: z,
            covariates: x.clone(),
            connectomes,
        });
        mediators.push(BlockPairTable::from_values(q, m).expect("pair count matches"));
        measurement_means.push(per_scan);
    }
    state.mediators = mediators;
    state.measurement_means = measurement_means;
    (
        Dataset {
            subjects,
            n_nodes: v,
            n_covariates: template.n_covariates,
        },
        state,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// `None` when the truth has no active node pairs.
    pub sensitivity: Option<f64>,
    /// `None` when the truth has no inactive node pairs.
    pub specificity: Option<f64>,
}

/// Rates over unordered off-diagonal node pairs.
pub fn selection_metrics(truth: &EdgeMask, estimate: &EdgeMask) -> Result<SelectionMetrics> {
    if truth.size() != estimate.size() {
        return Err(BnmmError::Dimension(format!(
            "masks of size {} and {}",
            truth.size(),
            estimate.size()
        )));
    }
    let n = truth.size();
    let (mut tp, mut fn_, mut tn, mut fp) = (0u64, 0u64, 0u64, 0u64);
    for j in 0..n {
        for l in j + 1..n {
            match (truth.get(j, l), estimate.get(j, l)) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
            }
        }
    }
    let rate = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(SelectionMetrics {
        sensitivity: rate(tp, fn_),
        specificity: rate(tn, fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bias {
    pub value: f64,
    /// True when `value` is a percentage, false when the truth is zero and
    /// `value` is the absolute bias.
    pub relative: bool,
}

impl Bias {
    fn of(estimate: f64, truth: f64) -> Self {
        if truth == 0.0 {
            Self {
                value: estimate,
                relative: false,
            }
        } else {
            Self {
                value: 100.0 * (estimate - truth) / truth,
                relative: true,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectBias {
    pub nde: Bias,
    pub nie: Bias,
    pub te: Bias,
}

/// Percent bias of the posterior means.
pub fn effect_bias(estimate: &EffectSummary, truth: &EffectDraw) -> EffectBias {
    EffectBias {
        nde: Bias::of(estimate.nde.mean, truth.nde),
        nie: Bias::of(estimate.nie.mean, truth.nie),
        te: Bias::of(estimate.te.mean, truth.te),
    }
}

/// Fit settings of the replicate harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            burn_in: 1000,
            thin: 1,
            n_chains: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub selection: SelectionMetrics,
    pub bias: EffectBias,
    pub summary: EffectSummary,
    pub truth: EffectDraw,
    pub te_covered: bool,
    /// PSRF of `beta_z`, `sigma2_outcome` and `te`; absent with one chain.
    pub psrf: Option<[f64; 3]>,
    pub seconds: f64,
}

/// Generates one replicate and fits it at the true block count.
pub fn run_replicate(
    base: &SimConfig,
    fit: &FitSettings,
    replicate: usize,
) -> Result<ReplicateResult> {
    let seed = derive_seed(base.seed, &[replicate as u64]);
    let config = SimConfig {
        seed,
        ..base.clone()
    };
    let start = std::time::Instant::now();
    let (dataset, truth) = generate(&config)?;
    let chain = ChainConfig {
        n_iter: fit.n_iter,
        burn_in: fit.burn_in,
        thin: fit.thin,
        n_chains: fit.n_chains,
        seed: derive_seed(seed, &[0xF17]),
        n_blocks: config.n_blocks,
        init_mode: InitMode::BlockAverage,
        joint_outcome: true,
    };
    let hyper = Hyperparams::new(config.n_blocks);
    let draws = run_chains(&dataset, &chain, &hyper)?;
    let summary = summarize_effects(&draws, config.contrast)?;
    let consensus = allocation_summary(&draws)?.consensus;
    let estimate = edge_mask(&summary.median_model.active_pairs, &consensus);
    let selection = selection_metrics(&truth.edge_mask, &estimate)?;
    let bias = effect_bias(&summary, &truth.effects);
    let psrf = if fit.n_chains >= 2 {
        let gr = gr_report(&draws, config.contrast, false)?;
        Some([
            gr.psrf("beta_z").unwrap_or(f64::NAN),
            gr.psrf("sigma2_outcome").unwrap_or(f64::NAN),
            gr.psrf("te").unwrap_or(f64::NAN),
        ])
    } else {
        None
    };
    Ok(ReplicateResult {
        replicate,
        seed,
        selection,
        bias,
        te_covered: summary.te.contains(truth.effects.te),
        truth: truth.effects,
        summary,
        psrf,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean and Monte Carlo standard deviation over the defined values.
pub fn mean_sd(values: impl IntoIterator<Item = Option<f64>>) -> Option<(f64, f64)> {
    let xs: Vec<f64> = values.into_iter().flatten().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((m, sd))
}

pub const METRICS_HEADER: [&str; 9] = [
    "method",
    "scenario",
    "noise",
    "replicate",
    "sensitivity",
    "specificity",
    "bias_nde",
    "bias_nie",
    "bias_te",
];

/// One row per replicate; undefined values are left empty.
pub fn write_metrics_csv<W: Write>(config: &SimConfig, results: &[ReplicateResult], out: W) -> Result<()> {
    let io = |e: csv::Error| BnmmError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(io)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in results {
        w.write_record([
            "BNMM".to_string(),
            config.scenario.number().to_string(),
            config.noise.name().to_string(),
            r.replicate.to_string(),
            opt(r.selection.sensitivity),
            opt(r.selection.specificity),
            format!("{:?}", r.bias.nde.value),
            format!("{:?}", r.bias.nie.value),
            format!("{:?}", r.bias.te.value),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| BnmmError::Io(e.to_string()))
}
