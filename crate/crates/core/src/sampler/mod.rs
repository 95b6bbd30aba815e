//! Gibbs sampler for the network mediation model.
//!
//! One sweep visits eight update steps in a fixed order; each draws its
//! block of unknowns from the closed-form full conditional given the rest.

mod data;
pub mod updates;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::ModelData;

use crate::dist::{categorical_from_logs, derive_seed, dirichlet, inverse_gamma, normal};
use crate::error::{BnmmError, Result};
use crate::par;
use crate::sbm::{block_averages, select_q, IclMode};
use crate::types::{
    n_pairs, Allocation, BlockPairTable, ChainDraws, Dataset, Draw, Hyperparams, ModelState,
    PosteriorDraws,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    /// Every unknown drawn from its prior.
    Random,
    /// Allocation from a greedy block-model fit, block means from the data.
    BlockAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub n_blocks: usize,
    pub init_mode: InitMode,
    /// Draw `beta_x`, the selected `beta_m` and `beta_z` as one block in the
    /// mediator-coefficient step.
    #[serde(default = "default_true")]
    pub joint_outcome: bool,
}

fn default_true() -> bool {
    true
}

impl ChainConfig {
    /// 5,000 iterations with 2,000 burn-in, one chain.
    pub fn new(n_blocks: usize) -> Self {
        Self {
            n_iter: 5000,
            burn_in: 2000,
            thin: 1,
            n_chains: 1,
            seed: 0,
            n_blocks,
            init_mode: InitMode::BlockAverage,
            joint_outcome: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(BnmmError::Config("thin must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(BnmmError::Config("n_chains must be at least 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(BnmmError::Config(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.n_blocks == 0 {
            return Err(BnmmError::Config("need at least one block".into()));
        }
        Ok(())
    }

    /// Number of draws each chain stores.
    pub fn stored_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateStep {
    /// Mediator-to-outcome coefficients.
    BetaM,
    /// Exposure-to-mediator coefficients.
    AlphaZ,
    /// Selection indicators, `tau` then `gamma`.
    Indicators,
    /// Covariate coefficients of both regressions.
    Nuisance,
    /// Direct exposure effect.
    BetaZ,
    /// Subject-level mediators, then scan-level block means.
    Latent,
    /// Node labels, then block probabilities.
    Allocation,
    Variances,
}

impl UpdateStep {
    pub const ALL: [UpdateStep; 8] = [
        UpdateStep::BetaM,
        UpdateStep::AlphaZ,
        UpdateStep::Indicators,
        UpdateStep::Nuisance,
        UpdateStep::BetaZ,
        UpdateStep::Latent,
        UpdateStep::Allocation,
        UpdateStep::Variances,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    steps: Vec<UpdateStep>,
    /// The `BetaM` step also redraws `beta_x` and `beta_z` jointly with
    /// the selected mediator coefficients.
    pub joint_outcome: bool,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            steps: UpdateStep::ALL.to_vec(),
            joint_outcome: true,
        }
    }
}

impl SweepPlan {
    /// A custom order; each step must appear exactly once.
    pub fn new(steps: Vec<UpdateStep>) -> Result<Self> {
        for s in UpdateStep::ALL {
            let count = steps.iter().filter(|&&x| x == s).count();
            if count != 1 {
                return Err(BnmmError::Config(format!(
                    "sweep plan lists {s:?} {count} times"
                )));
            }
        }
        if steps.len() != UpdateStep::ALL.len() {
            return Err(BnmmError::Config("sweep plan has extra steps".into()));
        }
        Ok(Self {
            steps,
            joint_outcome: true,
        })
    }

    pub fn steps(&self) -> &[UpdateStep] {
        &self.steps
    }
}

/// Applies one update step.
pub fn apply_step<R: Rng + ?Sized>(
    step: UpdateStep,
    joint_outcome: bool,
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    match step {
        UpdateStep::BetaM if joint_outcome => updates::update_outcome_joint(state, data, hyper, rng),
        UpdateStep::BetaM => updates::update_beta_m(state, data, hyper, rng),
        UpdateStep::AlphaZ => updates::update_alpha_z(state, data, hyper, rng),
        UpdateStep::Indicators => {
            updates::update_tau(state, data, hyper, rng)?;
            updates::update_gamma(state, data, hyper, rng)
        }
        UpdateStep::Nuisance => updates::update_nuisance(state, data, hyper, rng),
        UpdateStep::BetaZ => updates::update_beta_z(state, data, hyper, rng),
        UpdateStep::Latent => {
            updates::update_latent_mediators(state, data, hyper, rng)?;
            updates::update_measurement_means(state, data, hyper, rng)
        }
        UpdateStep::Allocation => {
            updates::update_allocation(state, data, hyper, rng)?;
            updates::update_pi(state, hyper, rng)
        }
        UpdateStep::Variances => updates::update_variances(state, data, hyper, rng),
    }
}

/// One full sweep.
pub fn sweep<R: Rng + ?Sized>(
    plan: &SweepPlan,
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    for &step in plan.steps() {
        apply_step(step, plan.joint_outcome, state, data, hyper, rng)?;
    }
    Ok(())
}

/// Name of the first non-finite component, if any.
fn first_non_finite(state: &ModelState) -> Option<&'static str> {
    let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
    if !state.beta_z.is_finite() || !finite(&state.beta_x) {
        return Some("beta");
    }
    if !finite(state.beta_m.values()) || !finite(state.alpha_z.values()) {
        return Some("selection coefficients");
    }
    if !(state.sigma2_outcome.is_finite() && state.sigma2_outcome > 0.0)
        || !(state.sigma2_mediator.is_finite() && state.sigma2_mediator > 0.0)
        || !(state.sigma2_alpha_z.is_finite() && state.sigma2_alpha_z > 0.0)
        || !(state.sigma2_beta_m.is_finite() && state.sigma2_beta_m > 0.0)
    {
        return Some("regression variances");
    }
    let positive = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x > 0.0);
    if !positive(state.edge_variance.values()) || !positive(state.measurement_variance.values()) {
        return Some("block variances");
    }
    if !state.mediators.iter().all(|m| finite(m.values())) {
        return Some("latent mediators");
    }
    if !state
        .measurement_means
        .iter()
        .all(|mk| mk.iter().all(|m| finite(m.values())))
    {
        return Some("scan block means");
    }
    if !finite(&state.pi) {
        return Some("block probabilities");
    }
    None
}

/// Draws every unknown from the prior, holding the dataset's exposure and
/// covariates fixed. Block probabilities and labels come first, then
/// coefficients, then the latent mediators given the regressions.
pub fn draw_from_prior<R: Rng + ?Sized>(
    data: &ModelData<'_>,
    n_blocks: usize,
    hyper: &Hyperparams,
    rng: &mut R,
) -> ModelState {
    let q = n_blocks;
    let s = n_pairs(q);
    let p1 = data.n_coef();
    let (a0, b0) = (hyper.ig_noninf_shape, hyper.ig_noninf_scale);
    let pi = dirichlet(&hyper.dirichlet_concentration, rng);
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let labels = (0..data.n_nodes())
        .map(|_| categorical_from_logs(&log_pi, rng))
        .collect();
    let allocation = Allocation::new(labels, q).expect("labels drawn below n_blocks");

    let sigma2_outcome = inverse_gamma(a0, b0, rng);
    let sigma2_mediator = inverse_gamma(a0, b0, rng);
    let sigma2_alpha_z = inverse_gamma(a0, b0, rng);
    let sigma2_beta_m = inverse_gamma(a0, b0, rng);
    let edge_variance = BlockPairTable::from_fn(q, |_, _| inverse_gamma(hyper.a1, hyper.b1, rng));
    let measurement_variance =
        BlockPairTable::from_fn(q, |_, _| inverse_gamma(hyper.a2, hyper.b2, rng));

    let beta_x = (0..p1).map(|_| normal(0.0, hyper.sigma2_xy, rng)).collect();
    let beta_z = normal(0.0, hyper.sigma2_zy, rng);
    let beta_m = BlockPairTable::from_fn(q, |_, _| normal(0.0, sigma2_beta_m, rng));
    let alpha_z = BlockPairTable::from_fn(q, |_, _| normal(0.0, sigma2_alpha_z, rng));
    let alpha_x = BlockPairTable::from_fn(q, |_, _| {
        (0..p1).map(|_| normal(0.0, hyper.sigma2_xm, rng)).collect()
    });
    let tau = BlockPairTable::from_fn(q, |_, _| rng.random::<f64>() < hyper.p_tau);
    let gamma = BlockPairTable::from_fn(q, |_, _| rng.random::<f64>() < hyper.p_gamma);

    let mut state = ModelState {
        allocation,
        pi,
        mediators: Vec::new(),
        measurement_means: Vec::new(),
        edge_variance,
        measurement_variance,
        beta_x,
        beta_m,
        beta_z,
        alpha_x,
        alpha_z,
        tau,
        gamma,
        sigma2_outcome,
        sigma2_mediator,
        sigma2_alpha_z,
        sigma2_beta_m,
    };
    for i in 0..data.n_subjects() {
        let m: Vec<f64> = (0..s)
            .map(|p| normal(updates::mediator_mean(&state, data, i, p), sigma2_mediator, rng))
            .collect();
        let scans = data.subject_layers[i]
            .clone()
            .map(|_| {
                let v = (0..s)
                    .map(|p| normal(m[p], state.measurement_variance[p], rng))
                    .collect();
                BlockPairTable::from_values(q, v).expect("pair count matches")
            })
            .collect();
        state
            .mediators
            .push(BlockPairTable::from_values(q, m).expect("pair count matches"));
        state.measurement_means.push(scans);
    }
    state
}

const INIT_FLOOR: f64 = 1e-8;

/// Data-driven starting state around a given allocation.
pub fn block_average_state(
    data: &ModelData<'_>,
    allocation: Allocation,
    hyper: &Hyperparams,
) -> ModelState {
    let q = allocation.n_blocks();
    let s = n_pairs(q);
    let n = data.n_subjects();
    let avg = block_averages(data.dataset, &allocation);

    let mediators: Vec<BlockPairTable<f64>> = avg
        .means
        .iter()
        .map(|scans| {
            let k = scans.len().max(1) as f64;
            BlockPairTable::from_fn(q, |a, b| scans.iter().map(|m| *m.get(a, b)).sum::<f64>() / k)
        })
        .collect();

    let mut omega = vec![0.0; s];
    for (scans, m) in avg.means.iter().zip(&mediators) {
        for scan in scans {
            for p in 0..s {
                let d = scan[p] - m[p];
                omega[p] += d * d;
            }
        }
    }
    let n_layers = data.n_layers().max(1) as f64;
    let omega: Vec<f64> = omega.iter().map(|x| (x / n_layers).max(INIT_FLOOR)).collect();

    let mut sigma2_mediator = 0.0;
    for p in 0..s {
        let mean = mediators.iter().map(|m| m[p]).sum::<f64>() / n.max(1) as f64;
        sigma2_mediator += mediators.iter().map(|m| (m[p] - mean).powi(2)).sum::<f64>();
    }
    let sigma2_mediator = (sigma2_mediator / (n * s).max(1) as f64).max(INIT_FLOOR);
    let y_mean = data.y.iter().sum::<f64>() / n.max(1) as f64;
    let sigma2_outcome =
        (data.y.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n.max(1) as f64).max(INIT_FLOOR);

    let sizes = allocation.block_sizes();
    let total_conc: f64 = hyper.dirichlet_concentration.iter().sum();
    let pi = sizes
        .iter()
        .zip(&hyper.dirichlet_concentration)
        .map(|(&n_q, &c)| (n_q as f64 + c) / (allocation.n_nodes() as f64 + total_conc))
        .collect();
    let p1 = data.n_coef();
    ModelState {
        allocation,
        pi,
        mediators,
        measurement_means: avg.means,
        edge_variance: avg.pooled_variance,
        measurement_variance: BlockPairTable::from_values(q, omega).expect("pair count matches"),
        beta_x: vec![0.0; p1],
        beta_m: BlockPairTable::filled(q, 0.0),
        beta_z: 0.0,
        alpha_x: BlockPairTable::filled(q, vec![0.0; p1]),
        alpha_z: BlockPairTable::filled(q, 0.0),
        tau: BlockPairTable::filled(q, true),
        gamma: BlockPairTable::filled(q, true),
        sigma2_outcome,
        sigma2_mediator,
        sigma2_alpha_z: 1.0,
        sigma2_beta_m: 1.0,
    }
}

/// Allocation used by block-average initialisation: the greedy ICL fit at
/// the configured block count.
pub fn initial_allocation(dataset: &Dataset, n_blocks: usize, seed: u64) -> Result<Allocation> {
    let fit = select_q(dataset, n_blocks, n_blocks, seed, IclMode::Layered)?;
    Ok(fit.best().allocation.clone())
}

fn check_inputs(dataset: &Dataset, config: &ChainConfig, hyper: &Hyperparams) -> Result<()> {
    config.validate()?;
    hyper.validate(config.n_blocks)?;
    if dataset.n_subjects() == 0 {
        return Err(BnmmError::Dimension("dataset has no subjects".into()));
    }
    if config.n_blocks > dataset.n_nodes {
        return Err(BnmmError::Config(format!(
            "{} blocks for {} nodes",
            config.n_blocks, dataset.n_nodes
        )));
    }
    Ok(())
}

/// Runs one chain from `init` with the given seed.
pub fn run_chain_from(
    data: &ModelData<'_>,
    mut state: ModelState,
    config: &ChainConfig,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<ChainDraws> {
    let plan = SweepPlan {
        joint_outcome: config.joint_outcome,
        ..SweepPlan::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(config.stored_per_chain());
    for t in 1..=config.n_iter {
        sweep(&plan, &mut state, data, hyper, &mut rng).map_err(|e| match e {
            BnmmError::SingularPrecision(what) => BnmmError::NumericOverflow {
                iteration: t,
                what: what.to_string(),
            },
            other => other,
        })?;
        if let Some(what) = first_non_finite(&state) {
            return Err(BnmmError::NumericOverflow {
                iteration: t,
                what: what.to_string(),
            });
        }
        if t > config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            draws.push(Draw::from_state(t, &state));
        }
    }
    Ok(ChainDraws { seed, draws })
}

fn initial_state(
    data: &ModelData<'_>,
    config: &ChainConfig,
    hyper: &Hyperparams,
    shared: Option<&Allocation>,
    seed: u64,
) -> ModelState {
    match config.init_mode {
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1417]));
            draw_from_prior(data, config.n_blocks, hyper, &mut rng)
        }
        InitMode::BlockAverage => block_average_state(
            data,
            shared.expect("allocation computed for block-average init").clone(),
            hyper,
        ),
    }
}

/// A single chain seeded with `config.seed`, whatever `n_chains` says.
pub fn run_chain(dataset: &Dataset, config: &ChainConfig, hyper: &Hyperparams) -> Result<PosteriorDraws> {
    let single = ChainConfig {
        n_chains: 1,
        ..config.clone()
    };
    run_chains(dataset, &single, hyper)
}

/// `n_chains` independent chains; chain `c` uses seed `config.seed + c`.
pub fn run_chains(dataset: &Dataset, config: &ChainConfig, hyper: &Hyperparams) -> Result<PosteriorDraws> {
    check_inputs(dataset, config, hyper)?;
    let data = ModelData::new(dataset);
    let shared = match config.init_mode {
        InitMode::BlockAverage => Some(initial_allocation(dataset, config.n_blocks, config.seed)?),
        InitMode::Random => None,
    };
    let chains = par::map_range(config.n_chains, |c| {
        let seed = config.seed.wrapping_add(c as u64);
        let init = initial_state(&data, config, hyper, shared.as_ref(), seed);
        run_chain_from(&data, init, config, hyper, seed)
    });
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        n_blocks: config.n_blocks,
        n_nodes: dataset.n_nodes,
        n_iter: config.n_iter,
        burn_in: config.burn_in,
        thin: config.thin,
        chains,
    })
}

/// Multiple chains started from a given state, e.g. the generating truth.
pub fn run_chains_from_state(
    dataset: &Dataset,
    init: &ModelState,
    config: &ChainConfig,
    hyper: &Hyperparams,
) -> Result<PosteriorDraws> {
    check_inputs(dataset, config, hyper)?;
    init.check_invariants()?;
    let data = ModelData::new(dataset);
    let chains = par::map_range(config.n_chains, |c| {
        let seed = config.seed.wrapping_add(c as u64);
        run_chain_from(&data, init.clone(), config, hyper, seed)
    });
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        n_blocks: config.n_blocks,
        n_nodes: dataset.n_nodes,
        n_iter: config.n_iter,
        burn_in: config.burn_in,
        thin: config.thin,
        chains,
    })
}
