//! Closed-form full conditionals. Each `*_conditional` returns the analytic
//! posterior; the matching `update_*` draws from it and writes the state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::data::ModelData;
use crate::dist::{
    self, bernoulli, categorical_from_logs, inverse_gamma, logistic, normal, DiagRankOneGaussian,
    GaussianPosterior,
};
use crate::error::Result;
use crate::sbm::BlockStats;
use crate::types::{pair_index_unchecked, Hyperparams, ModelState};

/// Inverse-gamma parameters `(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        inverse_gamma(self.shape, self.scale, rng)
    }

    /// Finite only for `shape > 1`.
    pub fn mean(&self) -> f64 {
        self.scale / (self.shape - 1.0)
    }
}

/// A univariate normal conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub var: f64,
}

impl Normal1 {
    fn from_information(precision: f64, linear: f64) -> Self {
        Self {
            mean: linear / precision,
            var: 1.0 / precision,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        normal(self.mean, self.var, rng)
    }
}

/// Effective outcome coefficients `beta_m * tau`.
pub fn effective_beta_m(state: &ModelState) -> Vec<f64> {
    state
        .beta_m
        .values()
        .iter()
        .zip(state.tau.values())
        .map(|(&b, &t)| if t { b } else { 0.0 })
        .collect()
}

#[inline]
fn mediator_term(state: &ModelState, i: usize, beta: &[f64]) -> f64 {
    state.mediators[i]
        .values()
        .iter()
        .zip(beta)
        .map(|(m, b)| m * b)
        .sum()
}

/// Outcome residuals `y - X beta_x - M (beta_m * tau) - z beta_z`.
pub fn outcome_residuals(state: &ModelState, data: &ModelData<'_>) -> Vec<f64> {
    let beta = effective_beta_m(state);
    (0..data.n_subjects())
        .map(|i| {
            data.y[i]
                - data.x_dot(i, &state.beta_x)
                - mediator_term(state, i, &beta)
                - data.z[i] * state.beta_z
        })
        .collect()
}

/// Mediator-regression mean `x_i^T alpha_x + z_i alpha_z gamma` for one pair.
#[inline]
pub fn mediator_mean(state: &ModelState, data: &ModelData<'_>, i: usize, pair: usize) -> f64 {
    let az = if state.gamma[pair] { state.alpha_z[pair] } else { 0.0 };
    data.x_dot(i, &state.alpha_x[pair]) + data.z[i] * az
}

// ---------------------------------------------------------------- beta_m

#[derive(Debug, Clone)]
pub struct BetaMConditional {
    /// Pair indices with `tau = 1`, in flat order.
    pub selected: Vec<usize>,
    /// Joint posterior of the selected coefficients, if any are selected.
    pub posterior: Option<GaussianPosterior>,
    /// Prior variance used for the unselected coefficients.
    pub prior_var: f64,
}

pub fn beta_m_conditional(state: &ModelState, data: &ModelData<'_>) -> Result<BetaMConditional> {
    let selected: Vec<usize> = (0..state.tau.len()).filter(|&s| state.tau[s]).collect();
    let prior_var = state.sigma2_beta_m;
    if selected.is_empty() {
        return Ok(BetaMConditional {
            selected,
            posterior: None,
            prior_var,
        });
    }
    let n = data.n_subjects();
    let m1 = DMatrix::from_fn(n, selected.len(), |i, c| state.mediators[i][selected[c]]);
    let r = DVector::from_iterator(
        n,
        (0..n).map(|i| data.y[i] - data.x_dot(i, &state.beta_x) - data.z[i] * state.beta_z),
    );
    let s1 = state.sigma2_outcome;
    let mut precision = m1.tr_mul(&m1) / s1;
    for c in 0..selected.len() {
        precision[(c, c)] += 1.0 / prior_var;
    }
    let linear = m1.tr_mul(&r) / s1;
    let posterior = GaussianPosterior::from_information(precision, linear, "beta_m")?;
    Ok(BetaMConditional {
        selected,
        posterior: Some(posterior),
        prior_var,
    })
}

pub fn update_beta_m<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    _hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let cond = beta_m_conditional(state, data)?;
    for s in 0..state.beta_m.len() {
        if !state.tau[s] {
            state.beta_m[s] = normal(0.0, cond.prior_var, rng);
        }
    }
    if let Some(post) = &cond.posterior {
        let draw = post.sample(rng);
        for (c, &s) in cond.selected.iter().enumerate() {
            state.beta_m[s] = draw[c];
        }
    }
    Ok(())
}

/// Joint conditional of the whole outcome regression: covariate
/// coefficients, selected mediator coefficients and the direct effect.
#[derive(Debug, Clone)]
pub struct OutcomeConditional {
    pub selected: Vec<usize>,
    /// Coefficients ordered `[beta_x, beta_m[selected], beta_z]`.
    pub posterior: GaussianPosterior,
    pub prior_var_beta_m: f64,
}

pub fn outcome_conditional(
    state: &ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
) -> Result<OutcomeConditional> {
    let selected: Vec<usize> = (0..state.tau.len()).filter(|&s| state.tau[s]).collect();
    let n = data.n_subjects();
    let p1 = data.n_coef();
    let dim = p1 + selected.len() + 1;
    let design = DMatrix::from_fn(n, dim, |i, c| {
        if c < p1 {
            data.design[(i, c)]
        } else if c < dim - 1 {
            state.mediators[i][selected[c - p1]]
        } else {
            data.z[i]
        }
    });
    let s1 = state.sigma2_outcome;
    let mut precision = design.tr_mul(&design) / s1;
    for c in 0..dim {
        let prior_var = if c < p1 {
            hyper.sigma2_xy
        } else if c < dim - 1 {
            state.sigma2_beta_m
        } else {
            hyper.sigma2_zy
        };
        precision[(c, c)] += 1.0 / prior_var;
    }
    let y = DVector::from_column_slice(&data.y);
    let linear = design.tr_mul(&y) / s1;
    Ok(OutcomeConditional {
        selected,
        posterior: GaussianPosterior::from_information(precision, linear, "outcome regression")?,
        prior_var_beta_m: state.sigma2_beta_m,
    })
}

/// Draws the outcome regression as one block; unselected mediator
/// coefficients come from their prior.
pub fn update_outcome_joint<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let cond = outcome_conditional(state, data, hyper)?;
    for s in 0..state.beta_m.len() {
        if !state.tau[s] {
            state.beta_m[s] = normal(0.0, cond.prior_var_beta_m, rng);
        }
    }
    let draw = cond.posterior.sample(rng);
    let p1 = data.n_coef();
    state.beta_x = draw.rows(0, p1).iter().copied().collect();
    for (c, &s) in cond.selected.iter().enumerate() {
        state.beta_m[s] = draw[p1 + c];
    }
    state.beta_z = draw[draw.len() - 1];
    Ok(())
}

// ---------------------------------------------------------------- alpha_z

/// Conditional of `alpha_z` for one pair: the prior when `gamma = 0`.
pub fn alpha_z_conditional(state: &ModelState, data: &ModelData<'_>, pair: usize) -> Normal1 {
    if !state.gamma[pair] {
        return Normal1 {
            mean: 0.0,
            var: state.sigma2_alpha_z,
        };
    }
    let s2 = state.sigma2_mediator;
    let linear: f64 = (0..data.n_subjects())
        .map(|i| {
            let resid = state.mediators[i][pair] - data.x_dot(i, &state.alpha_x[pair]);
            data.z[i] * resid
        })
        .sum::<f64>()
        / s2;
    Normal1::from_information(data.zz / s2 + 1.0 / state.sigma2_alpha_z, linear)
}

pub fn update_alpha_z<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    _hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    for s in 0..state.alpha_z.len() {
        let c = alpha_z_conditional(state, data, s);
        state.alpha_z[s] = c.sample(rng);
    }
    Ok(())
}

// ---------------------------------------------------------------- tau / gamma

/// `ln P(tau=1 | rest) - ln P(tau=0 | rest)` for one pair, all other
/// indicators at their current values.
pub fn tau_log_odds(state: &ModelState, data: &ModelData<'_>, hyper: &Hyperparams, pair: usize) -> f64 {
    let resid = outcome_residuals(state, data);
    tau_log_odds_from(state, hyper, pair, &resid)
}

fn tau_log_odds_from(state: &ModelState, hyper: &Hyperparams, pair: usize, resid: &[f64]) -> f64 {
    let b = state.beta_m[pair];
    let current = if state.tau[pair] { b } else { 0.0 };
    let (mut cross, mut sq) = (0.0, 0.0);
    for (i, &e) in resid.iter().enumerate() {
        let m = state.mediators[i][pair];
        let r0 = e + m * current;
        cross += r0 * m;
        sq += m * m;
    }
    let log_lr = (2.0 * b * cross - b * b * sq) / (2.0 * state.sigma2_outcome);
    (hyper.p_tau / (1.0 - hyper.p_tau)).ln() + log_lr
}

pub fn update_tau<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let mut resid = outcome_residuals(state, data);
    for s in 0..state.tau.len() {
        let log_odds = tau_log_odds_from(state, hyper, s, &resid);
        let new = bernoulli(logistic(log_odds), rng);
        if new != state.tau[s] {
            let b = state.beta_m[s];
            let delta = if new { -b } else { b };
            for (i, e) in resid.iter_mut().enumerate() {
                *e += delta * state.mediators[i][s];
            }
            state.tau[s] = new;
        }
    }
    Ok(())
}

/// `ln P(gamma=1 | rest) - ln P(gamma=0 | rest)` for one pair.
pub fn gamma_log_odds(state: &ModelState, data: &ModelData<'_>, hyper: &Hyperparams, pair: usize) -> f64 {
    let a = state.alpha_z[pair];
    let mut cross = 0.0;
    for i in 0..data.n_subjects() {
        let e = state.mediators[i][pair] - data.x_dot(i, &state.alpha_x[pair]);
        cross += e * data.z[i];
    }
    let log_lr = (2.0 * a * cross - a * a * data.zz) / (2.0 * state.sigma2_mediator);
    (hyper.p_gamma / (1.0 - hyper.p_gamma)).ln() + log_lr
}

pub fn update_gamma<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    for s in 0..state.gamma.len() {
        let p = logistic(gamma_log_odds(state, data, hyper, s));
        state.gamma[s] = bernoulli(p, rng);
    }
    Ok(())
}

// ---------------------------------------------------------------- nuisance

pub fn beta_x_conditional(
    state: &ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
) -> Result<GaussianPosterior> {
    let beta = effective_beta_m(state);
    let n = data.n_subjects();
    let r = DVector::from_iterator(
        n,
        (0..n).map(|i| data.y[i] - mediator_term(state, i, &beta) - data.z[i] * state.beta_z),
    );
    let s1 = state.sigma2_outcome;
    let mut precision = &data.xtx / s1;
    for c in 0..data.n_coef() {
        precision[(c, c)] += 1.0 / hyper.sigma2_xy;
    }
    let linear = data.design.tr_mul(&r) / s1;
    GaussianPosterior::from_information(precision, linear, "beta_x")
}

pub fn alpha_x_conditional(
    state: &ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    pair: usize,
) -> Result<GaussianPosterior> {
    let n = data.n_subjects();
    let az = if state.gamma[pair] { state.alpha_z[pair] } else { 0.0 };
    let r = DVector::from_iterator(
        n,
        (0..n).map(|i| state.mediators[i][pair] - data.z[i] * az),
    );
    let s2 = state.sigma2_mediator;
    let mut precision = &data.xtx / s2;
    for c in 0..data.n_coef() {
        precision[(c, c)] += 1.0 / hyper.sigma2_xm;
    }
    let linear = data.design.tr_mul(&r) / s2;
    GaussianPosterior::from_information(precision, linear, "alpha_x")
}

pub fn update_nuisance<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let bx = beta_x_conditional(state, data, hyper)?.sample(rng);
    state.beta_x = bx.iter().copied().collect();
    for s in 0..state.alpha_x.len() {
        let ax = alpha_x_conditional(state, data, hyper, s)?.sample(rng);
        state.alpha_x[s] = ax.iter().copied().collect();
    }
    Ok(())
}

// ---------------------------------------------------------------- beta_z

pub fn beta_z_conditional(state: &ModelState, data: &ModelData<'_>, hyper: &Hyperparams) -> Normal1 {
    let beta = effective_beta_m(state);
    let s1 = state.sigma2_outcome;
    let linear: f64 = (0..data.n_subjects())
        .map(|i| {
            let r = data.y[i] - data.x_dot(i, &state.beta_x) - mediator_term(state, i, &beta);
            data.z[i] * r
        })
        .sum::<f64>()
        / s1;
    Normal1::from_information(data.zz / s1 + 1.0 / hyper.sigma2_zy, linear)
}

pub fn update_beta_z<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    state.beta_z = beta_z_conditional(state, data, hyper).sample(rng);
    Ok(())
}

// ---------------------------------------------------------------- latent mediators

/// Conditional of the latent mediators of one subject. Three Gaussian
/// sources combine: the outcome regression (rank one), the subject's scan
/// means and the mediator regression (both diagonal).
pub fn mediator_conditional(
    state: &ModelState,
    data: &ModelData<'_>,
    subject: usize,
) -> Result<DiagRankOneGaussian> {
    let i = subject;
    let s = state.beta_m.len();
    let beta = effective_beta_m(state);
    let scans = &state.measurement_means[i];
    let k = scans.len() as f64;
    let s1 = state.sigma2_outcome;
    let s2 = state.sigma2_mediator;
    let r = data.y[i] - data.x_dot(i, &state.beta_x) - data.z[i] * state.beta_z;
    let mut d = Vec::with_capacity(s);
    let mut linear = Vec::with_capacity(s);
    for p in 0..s {
        let w = state.measurement_variance[p];
        let scan_sum: f64 = scans.iter().map(|m| m[p]).sum();
        d.push(k / w + 1.0 / s2);
        linear.push(scan_sum / w + mediator_mean(state, data, i, p) / s2 + beta[p] * r / s1);
    }
    let sd1 = s1.sqrt();
    let u: Vec<f64> = beta.iter().map(|b| b / sd1).collect();
    DiagRankOneGaussian::new(&d, &u, &linear)
}

pub fn update_latent_mediators<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    _hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let mut buf = vec![0.0; state.beta_m.len()];
    for i in 0..data.n_subjects() {
        let cond = mediator_conditional(state, data, i)?;
        cond.sample_into(rng, &mut buf);
        state.mediators[i].values_mut().copy_from_slice(&buf);
    }
    Ok(())
}

/// Conditional of one scan-level block mean given the block edge sums.
pub fn measurement_mean_conditional(
    state: &ModelState,
    stats: &BlockStats,
    layer: usize,
    subject: usize,
    pair: usize,
) -> Normal1 {
    let n = stats.counts[pair] as f64;
    let sig = state.edge_variance[pair];
    let w = state.measurement_variance[pair];
    let prior_mean = state.mediators[subject][pair];
    if n == 0.0 {
        return Normal1 {
            mean: prior_mean,
            var: w,
        };
    }
    Normal1::from_information(n / sig + 1.0 / w, stats.sum(layer, pair) / sig + prior_mean / w)
}

pub fn update_measurement_means<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    _hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let stats = BlockStats::compute(&data.layers, &state.allocation);
    update_measurement_means_with(state, data, &stats, rng);
    Ok(())
}

pub(crate) fn update_measurement_means_with<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    stats: &BlockStats,
    rng: &mut R,
) {
    let s = state.beta_m.len();
    for (layer, &i) in data.layer_subject.iter().enumerate() {
        let k = layer - data.subject_layers[i].start;
        for p in 0..s {
            let c = measurement_mean_conditional(state, stats, layer, i, p);
            state.measurement_means[i][k][p] = c.sample(rng);
        }
    }
}

// ---------------------------------------------------------------- allocation

/// Scan-level means flattened to `[layer * n_pairs + pair]` and their
/// per-pair sums of squares over layers.
struct LayerMeans {
    means: Vec<f64>,
    sq: Vec<f64>,
}

impl LayerMeans {
    fn new(state: &ModelState, data: &ModelData<'_>) -> Self {
        let s = state.beta_m.len();
        let mut means = Vec::with_capacity(s * data.n_layers());
        let mut sq = vec![0.0; s];
        for (layer, &i) in data.layer_subject.iter().enumerate() {
            let k = layer - data.subject_layers[i].start;
            let m = state.measurement_means[i][k].values();
            for p in 0..s {
                sq[p] += m[p] * m[p];
            }
            means.extend_from_slice(m);
        }
        Self { means, sq }
    }
}

/// Unnormalised log conditional of each block label for one node, all other
/// labels fixed.
pub fn allocation_log_weights(state: &ModelState, data: &ModelData<'_>, node: usize) -> Vec<f64> {
    let lm = LayerMeans::new(state, data);
    let mut scratch = AllocScratch::new(state.n_blocks(), data.n_layers());
    allocation_log_weights_with(state, data, node, &lm, &mut scratch)
}

struct AllocScratch {
    row: Vec<f64>,
    row_sq: Vec<f64>,
    row_n: Vec<usize>,
}

impl AllocScratch {
    fn new(n_blocks: usize, n_layers: usize) -> Self {
        Self {
            row: vec![0.0; n_layers * n_blocks],
            row_sq: vec![0.0; n_blocks],
            row_n: vec![0; n_blocks],
        }
    }
}

fn allocation_log_weights_with(
    state: &ModelState,
    data: &ModelData<'_>,
    node: usize,
    lm: &LayerMeans,
    scratch: &mut AllocScratch,
) -> Vec<f64> {
    let q = state.n_blocks();
    let s = state.beta_m.len();
    let labels = state.allocation.labels();
    let n_layers = data.n_layers();
    scratch.row.iter_mut().for_each(|x| *x = 0.0);
    scratch.row_sq.iter_mut().for_each(|x| *x = 0.0);
    scratch.row_n.iter_mut().for_each(|x| *x = 0);
    for (l, a) in data.layers.iter().enumerate() {
        let row = a.row(node);
        let acc = &mut scratch.row[l * q..(l + 1) * q];
        for (other, &x) in row.iter().enumerate() {
            if other != node {
                let g = labels[other];
                acc[g] += x;
                scratch.row_sq[g] += x * x;
            }
        }
    }
    for (other, &g) in labels.iter().enumerate() {
        if other != node {
            scratch.row_n[g] += 1;
        }
    }
    let layers_f = n_layers as f64;
    (0..q)
        .map(|cand| {
            let mut total = state.pi[cand].ln();
            for r in 0..q {
                let c = scratch.row_n[r];
                if c == 0 {
                    continue;
                }
                let p = pair_index_unchecked(cand, r, q);
                let var = state.edge_variance[p];
                let mut cross = 0.0;
                for l in 0..n_layers {
                    cross += lm.means[l * s + p] * scratch.row[l * q + r];
                }
                let cf = c as f64;
                let quad = scratch.row_sq[r] - 2.0 * cross + cf * lm.sq[p];
                total += -0.5 * cf * layers_f * (2.0 * PI * var).ln() - quad / (2.0 * var);
            }
            total
        })
        .collect()
}

pub fn update_allocation<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    _hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let lm = LayerMeans::new(state, data);
    let mut scratch = AllocScratch::new(state.n_blocks(), data.n_layers());
    for v in 0..data.n_nodes() {
        let logw = allocation_log_weights_with(state, data, v, &lm, &mut scratch);
        let g = categorical_from_logs(&logw, rng);
        state.allocation.set_label(v, g);
    }
    Ok(())
}

/// Dirichlet parameters of the block-probability conditional.
pub fn pi_conditional(state: &ModelState, hyper: &Hyperparams) -> Vec<f64> {
    state
        .allocation
        .block_sizes()
        .iter()
        .zip(&hyper.dirichlet_concentration)
        .map(|(&n, &c)| c + n as f64)
        .collect()
}

pub fn update_pi<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparams, rng: &mut R) -> Result<()> {
    state.pi = dist::dirichlet(&pi_conditional(state, hyper), rng);
    Ok(())
}

// ---------------------------------------------------------------- variances

#[derive(Debug, Clone)]
pub struct VarianceConditionals {
    pub outcome: InvGamma,
    pub mediator: InvGamma,
    pub alpha_z: InvGamma,
    pub beta_m: InvGamma,
    pub edge: Vec<InvGamma>,
    pub measurement: Vec<InvGamma>,
}

pub fn variance_conditionals(
    state: &ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
) -> VarianceConditionals {
    let stats = BlockStats::compute(&data.layers, &state.allocation);
    variance_conditionals_with(state, data, hyper, &stats)
}

fn variance_conditionals_with(
    state: &ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    stats: &BlockStats,
) -> VarianceConditionals {
    let (a0, b0) = (hyper.ig_noninf_shape, hyper.ig_noninf_scale);
    let n = data.n_subjects() as f64;
    let s = state.beta_m.len();
    let n_layers = data.n_layers();

    let ssr_y: f64 = outcome_residuals(state, data).iter().map(|e| e * e).sum();
    let mut ssr_m = 0.0;
    for i in 0..data.n_subjects() {
        for p in 0..s {
            let e = state.mediators[i][p] - mediator_mean(state, data, i, p);
            ssr_m += e * e;
        }
    }
    let ss_az: f64 = state.alpha_z.values().iter().map(|a| a * a).sum();
    let ss_bm: f64 = state.beta_m.values().iter().map(|b| b * b).sum();

    let mut edge = Vec::with_capacity(s);
    let mut measurement = Vec::with_capacity(s);
    for p in 0..s {
        let c = stats.counts[p] as f64;
        let mut ssr_a = 0.0;
        let mut ssr_w = 0.0;
        for (layer, &i) in data.layer_subject.iter().enumerate() {
            let k = layer - data.subject_layers[i].start;
            let m = state.measurement_means[i][k][p];
            if c > 0.0 {
                ssr_a += (stats.sq_sum(layer, p) - 2.0 * m * stats.sum(layer, p) + c * m * m).max(0.0);
            }
            let d = m - state.mediators[i][p];
            ssr_w += d * d;
        }
        edge.push(InvGamma {
            shape: hyper.a1 + 0.5 * c * n_layers as f64,
            scale: hyper.b1 + 0.5 * ssr_a,
        });
        measurement.push(InvGamma {
            shape: hyper.a2 + 0.5 * n_layers as f64,
            scale: hyper.b2 + 0.5 * ssr_w,
        });
    }
    VarianceConditionals {
        outcome: InvGamma {
            shape: a0 + 0.5 * n,
            scale: b0 + 0.5 * ssr_y,
        },
        mediator: InvGamma {
            shape: a0 + 0.5 * n * s as f64,
            scale: b0 + 0.5 * ssr_m,
        },
        alpha_z: InvGamma {
            shape: a0 + 0.5 * s as f64,
            scale: b0 + 0.5 * ss_az,
        },
        beta_m: InvGamma {
            shape: a0 + 0.5 * s as f64,
            scale: b0 + 0.5 * ss_bm,
        },
        edge,
        measurement,
    }
}

pub fn update_variances<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ModelData<'_>,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let c = variance_conditionals(state, data, hyper);
    state.sigma2_outcome = c.outcome.sample(rng);
    state.sigma2_mediator = c.mediator.sample(rng);
    state.sigma2_alpha_z = c.alpha_z.sample(rng);
    state.sigma2_beta_m = c.beta_m.sample(rng);
    for (p, ig) in c.edge.iter().enumerate() {
        state.edge_variance[p] = ig.sample(rng);
    }
    for (p, ig) in c.measurement.iter().enumerate() {
        state.measurement_variance[p] = ig.sample(rng);
    }
    Ok(())
}
