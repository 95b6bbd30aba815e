//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the sampler's conditional formulas; every
//! reference value comes from the literal model density, dense Gaussian
//! conditioning or enumeration.

#![allow(dead_code)]

use std::f64::consts::PI;

use bnmm_core::dist::{derive_seed, std_normal};
use bnmm_core::sampler::updates::{self, InvGamma};
use bnmm_core::sampler::{draw_from_prior, sweep, ModelData, SweepPlan};
use bnmm_core::simulate::simulate_from;
use bnmm_core::{
    n_pairs, pair_index, Connectome, Dataset, Hyperparams, ModelState,
    SubjectRecord,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn ig_logpdf_kernel(v: f64, shape: f64, scale: f64) -> f64 {
    -(shape + 1.0) * v.ln() - scale / v
}

/// Log joint density of data and unknowns, up to a constant that depends
/// on neither. Written directly from the generative model.
pub fn log_joint(dataset: &Dataset, s: &ModelState, h: &Hyperparams) -> f64 {
    let q = s.allocation.n_blocks();
    let np = n_pairs(q);
    let labels = s.allocation.labels();
    let mut lp = 0.0;
    for (c, p) in h.dirichlet_concentration.iter().zip(&s.pi) {
        lp += (c - 1.0) * p.ln();
    }
    for &g in labels {
        lp += s.pi[g].ln();
    }
    for v in [s.sigma2_outcome, s.sigma2_mediator, s.sigma2_alpha_z, s.sigma2_beta_m] {
        lp += ig_logpdf_kernel(v, h.ig_noninf_shape, h.ig_noninf_scale);
    }
    for p in 0..np {
        lp += ig_logpdf_kernel(s.edge_variance[p], h.a1, h.b1);
        lp += ig_logpdf_kernel(s.measurement_variance[p], h.a2, h.b2);
        lp += normal_logpdf(s.beta_m[p], 0.0, s.sigma2_beta_m);
        lp += normal_logpdf(s.alpha_z[p], 0.0, s.sigma2_alpha_z);
        for a in &s.alpha_x[p] {
            lp += normal_logpdf(*a, 0.0, h.sigma2_xm);
        }
        lp += if s.tau[p] { h.p_tau.ln() } else { (1.0 - h.p_tau).ln() };
        lp += if s.gamma[p] { h.p_gamma.ln() } else { (1.0 - h.p_gamma).ln() };
    }
    for b in &s.beta_x {
        lp += normal_logpdf(*b, 0.0, h.sigma2_xy);
    }
    lp += normal_logpdf(s.beta_z, 0.0, h.sigma2_zy);

    for (i, subj) in dataset.subjects.iter().enumerate() {
        let x = &subj.covariates;
        let z = subj.exposure;
        let dot = |b: &[f64]| x.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let mut y_mean = dot(&s.beta_x) + z * s.beta_z;
        for p in 0..np {
            let az = if s.gamma[p] { s.alpha_z[p] } else { 0.0 };
            lp += normal_logpdf(s.mediators[i][p], dot(&s.alpha_x[p]) + z * az, s.sigma2_mediator);
            if s.tau[p] {
                y_mean += s.beta_m[p] * s.mediators[i][p];
            }
        }
        lp += normal_logpdf(subj.outcome, y_mean, s.sigma2_outcome);
        for (k, a) in subj.connectomes.iter().enumerate() {
            let mk = &s.measurement_means[i][k];
            for p in 0..np {
                lp += normal_logpdf(mk[p], s.mediators[i][p], s.measurement_variance[p]);
            }
            for j in 0..dataset.n_nodes {
                for l in j + 1..dataset.n_nodes {
                    let p = pair_index(labels[j], labels[l], q).unwrap();
                    lp += normal_logpdf(a.get(j, l), mk[p], s.edge_variance[p]);
                }
            }
        }
    }
    lp
}

/// Mean and variance of the density proportional to `exp(logf(x))` on the
/// real line, by a coarse scan for the mode and a trapezoid rule over
/// +-25 standard deviations.
pub fn quad_moments(logf: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let scan = |lo: f64, hi: f64| {
        let n = 2001;
        let step = (hi - lo) / (n - 1) as f64;
        let mut best = (lo, f64::NEG_INFINITY);
        for t in 0..n {
            let x = lo + step * t as f64;
            let v = logf(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        (best, step)
    };
    let ((x0, _), step) = scan(lo, hi);
    let ((best_x, best), step) = scan(x0 - step, x0 + step);
    let hd = step.max(1e-6);
    let curv = (logf(best_x + hd) - 2.0 * best + logf(best_x - hd)) / (hd * hd);
    let sd = (-1.0 / curv).sqrt().max(hd);
    let (a, b) = (best_x - 25.0 * sd, best_x + 25.0 * sd);
    let m = 40_001;
    let dx = (b - a) / (m - 1) as f64;
    let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
    for t in 0..m {
        let x = a + dx * t as f64;
        let edge = if t == 0 || t == m - 1 { 0.5 } else { 1.0 };
        let w = edge * (logf(x) - best).exp();
        w0 += w;
        w1 += w * x;
        w2 += w * x * x;
    }
    let mean = w1 / w0;
    (mean, w2 / w0 - mean * mean)
}

/// `E[1/v]` and `E[1/v^2]` of the density proportional to `exp(logf(v))`
/// on `v > 0`, integrated over `u = ln v`.
pub fn quad_inverse_moments(logf: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = |u: f64| logf(u.exp()) + u;
    let (lo, hi) = (-40.0, 40.0);
    let n = 40_001;
    let du = (hi - lo) / (n - 1) as f64;
    let best = (0..n)
        .map(|t| g(lo + du * t as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
    for t in 0..n {
        let u = lo + du * t as f64;
        let w = (g(u) - best).exp();
        w0 += w;
        w1 += w * (-u).exp();
        w2 += w * (-2.0 * u).exp();
    }
    (w1 / w0, w2 / w0)
}

pub fn ig_inverse_moments(ig: &InvGamma) -> (f64, f64) {
    (
        ig.shape / ig.scale,
        ig.shape * (ig.shape + 1.0) / (ig.scale * ig.scale),
    )
}

/// Posterior of `theta ~ N(prior_mean, prior_cov)` given
/// `obs = H theta + noise`, `noise ~ N(0, noise_cov)`, in covariance form.
pub fn condition_gaussian(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * prior_cov * h.transpose() + noise_cov;
    let s_inv = s.try_inverse().expect("innovation covariance invertible");
    let gain = prior_cov * h.transpose() * s_inv;
    let mean = prior_mean + &gain * (obs - h * prior_mean);
    let cov = prior_cov - &gain * h * prior_cov;
    (mean, cov)
}

/// Ridge posterior through QR of the whitened augmented system.
pub fn ridge_qr(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    noise_var: f64,
    prior_var: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = design.shape();
    let mut a = DMatrix::zeros(n + p, p);
    let mut b = DVector::zeros(n + p);
    let sn = noise_var.sqrt();
    let sp = prior_var.sqrt();
    for i in 0..n {
        for c in 0..p {
            a[(i, c)] = design[(i, c)] / sn;
        }
        b[i] = target[i] / sn;
    }
    for c in 0..p {
        a[(n + c, c)] = 1.0 / sp;
    }
    let qr = a.qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * b;
    let mean = r.solve_upper_triangular(&qtb).expect("full rank");
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("full rank");
    (mean, &r_inv * r_inv.transpose())
}

/// Hyperparameters with proper, moment-bearing inverse-gamma priors.
pub fn proper_hyper(n_blocks: usize) -> Hyperparams {
    Hyperparams {
        ig_noninf_shape: 6.0,
        ig_noninf_scale: 5.0,
        a1: 6.0,
        b1: 5.0,
        a2: 6.0,
        b2: 1.0,
        sigma2_xy: 1.0,
        sigma2_zy: 1.0,
        sigma2_xm: 1.0,
        ..Hyperparams::new(n_blocks)
    }
}

/// Exposure/covariate template with placeholder scans.
pub fn template(n: usize, v: usize, scans: &[usize], seed: u64, binary: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| SubjectRecord {
            outcome: 0.0,
            exposure: if binary {
                f64::from(u8::from(rng.random::<bool>()))
            } else {
                std_normal(&mut rng)
            },
            covariates: vec![1.0, std_normal(&mut rng)],
            connectomes: vec![Connectome::zeros(v); scans[i % scans.len()]],
        })
        .collect();
    Dataset {
        subjects,
        n_nodes: v,
        n_covariates: 1,
    }
}

/// A small dataset with a state drawn from the prior and data drawn given
/// that state; indicators are forced to a mixed pattern.
pub fn toy(seed: u64, n: usize, v: usize, q: usize) -> (Dataset, ModelState, Hyperparams) {
    let hyper = proper_hyper(q);
    let scans = [2usize, 1, 3];
    let tpl = template(n, v, &scans, seed, false);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut state = {
        let data = ModelData::new(&tpl);
        draw_from_prior(&data, q, &hyper, &mut rng)
    };
    for p in 0..state.tau.len() {
        state.tau[p] = p % 3 != 1;
        state.gamma[p] = p % 2 == 0;
    }
    let ks: Vec<usize> = tpl.subjects.iter().map(|s| s.connectomes.len()).collect();
    let (dataset, state) = simulate_from(&tpl, &ks, state, &mut rng);
    (dataset, state, hyper)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One oracle comparison.
pub struct Check {
    pub name: &'static str,
    pub error: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Compares every conditional against its oracle on a few toy instances and
/// returns the worst error per update.
pub fn conditional_checks() -> Vec<Check> {
    let mut worst: Vec<Check> = Vec::new();
    let mut record = |name: &'static str, e: f64| {
        if let Some(c) = worst.iter_mut().find(|c| c.name == name) {
            c.error = c.error.max(e);
        } else {
            worst.push(Check { name, error: e });
        }
    };
    for seed in 0..3u64 {
        let (dataset, state, hyper) = toy(seed, 5, 6, 2);
        let data = ModelData::new(&dataset);
        let np = state.beta_m.len();
        let lj = |s: &ModelState| log_joint(&dataset, s, &hyper);

        // mediator-to-outcome coefficients given the rest
        let cond = updates::beta_m_conditional(&state, &data).unwrap();
        if let Some(post) = &cond.posterior {
            let sel = &cond.selected;
            let n = data.n_subjects();
            let h = DMatrix::from_fn(n, sel.len(), |i, c| state.mediators[i][sel[c]]);
            let r = DVector::from_iterator(
                n,
                (0..n).map(|i| data.y[i] - data.x_dot(i, &state.beta_x) - data.z[i] * state.beta_z),
            );
            let (m, c) = condition_gaussian(
                &DVector::zeros(sel.len()),
                &(DMatrix::identity(sel.len(), sel.len()) * state.sigma2_beta_m),
                &h,
                &(DMatrix::identity(n, n) * state.sigma2_outcome),
                &r,
            );
            record("beta_m", max_abs_diff(post.mean().as_slice(), m.as_slice()));
            record("beta_m", (post.covariance() - c).abs().max());
            // one coordinate by quadrature, others held fixed
            let s0 = sel[0];
            let (qm, qv) = quad_moments(
                |b| {
                    let mut t = state.clone();
                    t.beta_m[s0] = b;
                    lj(&t)
                },
                -60.0,
                60.0,
            );
            let shift: Vec<f64> = (0..data.n_subjects())
                .map(|i| sel[1..].iter().map(|&s| state.beta_m[s] * state.mediators[i][s]).sum())
                .collect();
            let n = data.n_subjects();
            let hcol = DMatrix::from_fn(n, 1, |i, _| state.mediators[i][s0]);
            let r1 = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    data.y[i] - data.x_dot(i, &state.beta_x) - data.z[i] * state.beta_z - shift[i]
                }),
            );
            let (m1, c1) = condition_gaussian(
                &DVector::zeros(1),
                &(DMatrix::identity(1, 1) * state.sigma2_beta_m),
                &hcol,
                &(DMatrix::identity(n, n) * state.sigma2_outcome),
                &r1,
            );
            record("beta_m", (qm - m1[0]).abs());
            record("beta_m", rel(qv, c1[(0, 0)]));
        }

        // whole outcome regression as one block
        let oc = updates::outcome_conditional(&state, &data, &hyper).unwrap();
        {
            let sel = &oc.selected;
            let n = data.n_subjects();
            let p1 = data.n_coef();
            let dim = p1 + sel.len() + 1;
            let h = DMatrix::from_fn(n, dim, |i, c| {
                if c < p1 {
                    data.design[(i, c)]
                } else if c < dim - 1 {
                    state.mediators[i][sel[c - p1]]
                } else {
                    data.z[i]
                }
            });
            let prior = DMatrix::from_fn(dim, dim, |a, b| {
                if a != b {
                    0.0
                } else if a < p1 {
                    hyper.sigma2_xy
                } else if a < dim - 1 {
                    state.sigma2_beta_m
                } else {
                    hyper.sigma2_zy
                }
            });
            let (m, c) = condition_gaussian(
                &DVector::zeros(dim),
                &prior,
                &h,
                &(DMatrix::identity(n, n) * state.sigma2_outcome),
                &DVector::from_column_slice(&data.y),
            );
            record("outcome_block", max_abs_diff(oc.posterior.mean().as_slice(), m.as_slice()));
            record("outcome_block", (oc.posterior.covariance() - c).abs().max());
        }

        // exposure-to-mediator coefficient per pair
        for p in 0..np {
            let c = updates::alpha_z_conditional(&state, &data, p);
            let (qm, qv) = quad_moments(
                |a| {
                    let mut t = state.clone();
                    t.alpha_z[p] = a;
                    lj(&t)
                },
                -80.0,
                80.0,
            );
            record("alpha_z", (qm - c.mean).abs());
            record("alpha_z", rel(qv, c.var));
        }

        // indicators: log odds against the joint density difference
        for p in 0..np {
            let mut on = state.clone();
            on.tau[p] = true;
            let mut off = state.clone();
            off.tau[p] = false;
            record("tau", (updates::tau_log_odds(&state, &data, &hyper, p) - (lj(&on) - lj(&off))).abs());
            let mut on = state.clone();
            on.gamma[p] = true;
            let mut off = state.clone();
            off.gamma[p] = false;
            record(
                "gamma",
                (updates::gamma_log_odds(&state, &data, &hyper, p) - (lj(&on) - lj(&off))).abs(),
            );
        }

        // nuisance coefficients: ridge through QR
        {
            let bx = updates::beta_x_conditional(&state, &data, &hyper).unwrap();
            let beta = updates::effective_beta_m(&state);
            let n = data.n_subjects();
            let r = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    data.y[i]
                        - (0..np).map(|p| beta[p] * state.mediators[i][p]).sum::<f64>()
                        - data.z[i] * state.beta_z
                }),
            );
            let (m, c) = ridge_qr(&data.design, &r, state.sigma2_outcome, hyper.sigma2_xy);
            record("nuisance", max_abs_diff(bx.mean().as_slice(), m.as_slice()));
            record("nuisance", (bx.covariance() - c).abs().max());
            for p in 0..np {
                let ax = updates::alpha_x_conditional(&state, &data, &hyper, p).unwrap();
                let az = if state.gamma[p] { state.alpha_z[p] } else { 0.0 };
                let r = DVector::from_iterator(
                    n,
                    (0..n).map(|i| state.mediators[i][p] - data.z[i] * az),
                );
                let (m, c) = ridge_qr(&data.design, &r, state.sigma2_mediator, hyper.sigma2_xm);
                record("nuisance", max_abs_diff(ax.mean().as_slice(), m.as_slice()));
                record("nuisance", (ax.covariance() - c).abs().max());
            }
        }

        // direct effect: quadrature
        {
            let c = updates::beta_z_conditional(&state, &data, &hyper);
            let (qm, qv) = quad_moments(
                |b| {
                    let mut t = state.clone();
                    t.beta_z = b;
                    lj(&t)
                },
                -60.0,
                60.0,
            );
            record("beta_z", (qm - c.mean).abs());
            record("beta_z", rel(qv, c.var));
        }

        // latent mediators: dense joint-Gaussian conditioning
        for i in 0..data.n_subjects() {
            let c = updates::mediator_conditional(&state, &data, i).unwrap();
            let k = state.measurement_means[i].len();
            let beta = updates::effective_beta_m(&state);
            let mu = DVector::from_iterator(np, (0..np).map(|p| updates::mediator_mean(&state, &data, i, p)));
            let prior = DMatrix::identity(np, np) * state.sigma2_mediator;
            let rows = 1 + k * np;
            let h = DMatrix::from_fn(rows, np, |r, c| {
                if r == 0 {
                    beta[c]
                } else if (r - 1) % np == c {
                    1.0
                } else {
                    0.0
                }
            });
            let noise = DMatrix::from_fn(rows, rows, |a, b| {
                if a != b {
                    0.0
                } else if a == 0 {
                    state.sigma2_outcome
                } else {
                    state.measurement_variance[(a - 1) % np]
                }
            });
            let offset = data.x_dot(i, &state.beta_x) + data.z[i] * state.beta_z;
            let obs = DVector::from_fn(rows, |r, _| {
                if r == 0 {
                    data.y[i] - offset
                } else {
                    state.measurement_means[i][(r - 1) / np][(r - 1) % np]
                }
            });
            let (m, cov) = condition_gaussian(&mu, &prior, &h, &noise, &obs);
            record("latent_mediators", max_abs_diff(c.mean(), m.as_slice()));
            record("latent_mediators", (c.covariance() - cov).abs().max());
        }

        // scan-level block means: quadrature
        let stats = bnmm_core::sbm::BlockStats::compute(&data.layers, &state.allocation);
        for (layer, &i) in data.layer_subject.iter().enumerate() {
            let k = layer - data.subject_layers[i].start;
            for p in 0..np {
                let c = updates::measurement_mean_conditional(&state, &stats, layer, i, p);
                let (qm, qv) = quad_moments(
                    |m| {
                        let mut t = state.clone();
                        t.measurement_means[i][k][p] = m;
                        lj(&t)
                    },
                    -60.0,
                    60.0,
                );
                record("scan_means", (qm - c.mean).abs());
                record("scan_means", rel(qv, c.var));
            }
        }

        // allocation: enumeration of one node's label
        for v in 0..dataset.n_nodes {
            let logw = updates::allocation_log_weights(&state, &data, v);
            let direct: Vec<f64> = (0..state.n_blocks())
                .map(|g| {
                    let mut t = state.clone();
                    t.allocation.set_label(v, g);
                    lj(&t)
                })
                .collect();
            for g in 1..direct.len() {
                let a = logw[g] - logw[0];
                let b = direct[g] - direct[0];
                record("allocation", rel(a, b));
            }
        }

        // block probabilities: the joint density in pi is the Dirichlet kernel
        {
            let alpha = updates::pi_conditional(&state, &hyper);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..5 {
                let other = bnmm_core::dist::dirichlet(&[2.0, 3.0], &mut rng);
                let mut t = state.clone();
                t.pi = other.clone();
                let kernel: f64 = alpha
                    .iter()
                    .zip(other.iter().zip(&state.pi))
                    .map(|(a, (x, y))| (a - 1.0) * (x.ln() - y.ln()))
                    .sum();
                record("pi", (lj(&t) - lj(&state) - kernel).abs());
            }
        }

        // variances: inverse moments by quadrature
        let vc = updates::variance_conditionals(&state, &data, &hyper);
        let mut check_ig = |ig: &InvGamma, set: &dyn Fn(&mut ModelState, f64)| {
            let (m1, m2) = quad_inverse_moments(|x| {
                let mut t = state.clone();
                set(&mut t, x);
                lj(&t)
            });
            let (e1, e2) = ig_inverse_moments(ig);
            record("variances", rel(m1, e1).max(rel(m2, e2)));
        };
        check_ig(&vc.outcome, &|t, x| t.sigma2_outcome = x);
        check_ig(&vc.mediator, &|t, x| t.sigma2_mediator = x);
        check_ig(&vc.alpha_z, &|t, x| t.sigma2_alpha_z = x);
        check_ig(&vc.beta_m, &|t, x| t.sigma2_beta_m = x);
        for p in 0..np {
            check_ig(&vc.edge[p], &|t, x| t.edge_variance[p] = x);
            check_ig(&vc.measurement[p], &|t, x| t.measurement_variance[p] = x);
        }
    }
    worst
}

/// Proper priors with weakly separated block pairs. With strongly separated
/// pairs the labels are pinned by each regenerated dataset and the
/// successive-conditional chain barely moves in the block counts.
pub fn geweke_hyper() -> Hyperparams {
    Hyperparams {
        b1: 50.0,
        sigma2_xm: 0.01,
        ..proper_hyper(2)
    }
}

/// Summary statistics monitored by the joint-distribution test.
pub const GEWEKE_STATS: [&str; 12] = [
    "beta_z",
    "beta_z^2",
    "sigma2_outcome",
    "sigma2_mediator",
    "tau_mean",
    "gamma_mean",
    "edge_var_mean",
    "meas_var_mean",
    "sigma2_beta_m",
    "sigma2_alpha_z",
    "beta_x0",
    "pi_sq_sum",
];

pub fn geweke_stats(s: &ModelState) -> [f64; 12] {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let frac = |xs: &[bool]| xs.iter().filter(|&&b| b).count() as f64 / xs.len() as f64;
    [
        s.beta_z,
        s.beta_z * s.beta_z,
        s.sigma2_outcome,
        s.sigma2_mediator,
        frac(s.tau.values()),
        frac(s.gamma.values()),
        mean(s.edge_variance.values()),
        mean(s.measurement_variance.values()),
        s.sigma2_beta_m,
        s.sigma2_alpha_z,
        s.beta_x[0],
        s.pi.iter().map(|p| p * p).sum(),
    ]
}

/// Integrated autocorrelation time with Geyer's initial positive sequence.
pub fn integrated_act(xs: &[f64]) -> f64 {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    let acf = |k: usize| {
        (0..n - k).map(|t| (xs[t] - m) * (xs[t + k] - m)).sum::<f64>() / n as f64 / c0
    };
    let mut tau = 1.0;
    let mut k = 1;
    while k + 1 < n / 2 {
        let pair = acf(k) + acf(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau
}

fn mean_and_se_iid(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Mean and standard error of a correlated sequence, scaled by its
/// integrated autocorrelation time.
fn mean_and_se_correlated(xs: &[f64]) -> (f64, f64) {
    let (m, se) = mean_and_se_iid(xs);
    (m, se * integrated_act(xs).sqrt())
}

/// Joint-distribution ("getting it right") test: z-scores of every
/// monitored statistic between the marginal-conditional simulator (prior
/// then data) and the successive-conditional simulator (Gibbs sweep then
/// fresh data).
pub fn geweke(samples: usize, seed: u64, joint_outcome: bool) -> Vec<(&'static str, f64)> {
    geweke_with(samples, seed, joint_outcome, &geweke_hyper())
}

pub fn geweke_with(
    samples: usize,
    seed: u64,
    joint_outcome: bool,
    hyper: &Hyperparams,
) -> Vec<(&'static str, f64)> {
    geweke_mismatched(samples, seed, joint_outcome, hyper, hyper)
}

/// As [`geweke_with`], with the Gibbs sweeps run under `sweep_hyper`.
/// A mismatch is a planted bug the test must detect.
pub fn geweke_mismatched(
    samples: usize,
    seed: u64,
    joint_outcome: bool,
    hyper: &Hyperparams,
    sweep_hyper: &Hyperparams,
) -> Vec<(&'static str, f64)> {
    let hyper = hyper.clone();
    let (n, v, q) = (8, 12, 2);
    let tpl = template(n, v, &[2], seed, false);
    let scans = vec![2usize; n];
    let data_tpl = ModelData::new(&tpl);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[10]));
    let marginal: Vec<[f64; 12]> = (0..samples)
        .map(|_| geweke_stats(&draw_from_prior(&data_tpl, q, &hyper, &mut rng)))
        .collect();

    let mut plan = SweepPlan::default();
    plan.joint_outcome = joint_outcome;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[20]));
    let init = draw_from_prior(&data_tpl, q, &hyper, &mut rng);
    let (mut dataset, mut state) = simulate_from(&tpl, &scans, init, &mut rng);
    let mut successive = Vec::with_capacity(samples);
    for _ in 0..samples {
        {
            let data = ModelData::new(&dataset);
            sweep(&plan, &mut state, &data, sweep_hyper, &mut rng).expect("sweep succeeds");
        }
        successive.push(geweke_stats(&state));
        let (d, s) = simulate_from(&tpl, &scans, state, &mut rng);
        dataset = d;
        state = s;
    }

    (0..GEWEKE_STATS.len())
        .map(|j| {
            let a: Vec<f64> = marginal.iter().map(|r| r[j]).collect();
            let b: Vec<f64> = successive.iter().map(|r| r[j]).collect();
            let (ma, sa) = mean_and_se_iid(&a);
            let (mb, sb) = mean_and_se_correlated(&b);
            (GEWEKE_STATS[j], (ma - mb) / (sa * sa + sb * sb).sqrt())
        })
        .collect()
}

// ---------------------------------------------------------------- properties

use bnmm_core::diagnostics::gelman_rubin;
use bnmm_core::effects::{
    edge_mask, effects_from_state, summarize_effects, Contrast, EffectDraw,
};
use bnmm_core::sampler::{run_chains, ChainConfig, InitMode};
use bnmm_core::{ChainDraws, Draw, PosteriorDraws};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

/// A random state on a tiny template: 1 to 6 blocks, mixed indicator
/// patterns and coefficients spanning many magnitudes and both signs.
pub fn random_state(seed: u64) -> ModelState {
    let q = ChaCha8Rng::seed_from_u64(seed).random_range(1..=6usize);
    random_state_q(seed, q)
}

pub fn random_state_q(seed: u64, q: usize) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[q as u64]));
    let v = q + rng.random_range(0..4usize);
    let tpl = template(2, v, &[1], seed, false);
    let data = ModelData::new(&tpl);
    let hyper = Hyperparams {
        p_tau: rng.random_range(0.05..0.95),
        p_gamma: rng.random_range(0.05..0.95),
        ..proper_hyper(q)
    };
    let mut s = draw_from_prior(&data, q, &hyper, &mut rng);
    let scale = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(-8.0..8.0));
    s.beta_z *= scale(&mut rng);
    for x in s.beta_m.values_mut() {
        *x *= scale(&mut rng);
    }
    for x in s.alpha_z.values_mut() {
        *x *= scale(&mut rng);
    }
    s
}

pub fn random_perm(q: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..q).collect();
    p.shuffle(rng);
    p
}

pub fn random_contrast(rng: &mut ChaCha8Rng) -> Contrast {
    Contrast::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run(cases: u32, test: impl Fn(u64) -> std::result::Result<(), TestCaseError>) -> std::result::Result<(), String> {
    runner(cases)
        .run(&any::<u64>(), test)
        .map_err(|e| e.to_string())
}

/// `te = nde + nie` and `nie = nie_pos + nie_neg` bit for bit.
pub fn exactness(cases: u32) -> std::result::Result<(), String> {
    run(cases, |seed| {
        let s = random_state(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let e = effects_from_state(&s, random_contrast(&mut rng));
        prop_assert_eq!(e.te.to_bits(), (e.nde + e.nie).to_bits());
        prop_assert_eq!(e.nie.to_bits(), (e.nie_pos + e.nie_neg).to_bits());
        prop_assert!(e.nie_pos >= 0.0 && e.nie_neg <= 0.0);
        Ok(())
    })
}

fn close_effects(a: &EffectDraw, b: &EffectDraw) -> bool {
    let c = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300);
    c(a.nde, b.nde) && c(a.nie, b.nie) && c(a.te, b.te) && c(a.nie_pos, b.nie_pos) && c(a.nie_neg, b.nie_neg)
}

pub fn effects_relabeling(cases: u32) -> std::result::Result<(), String> {
    run(cases, |seed| {
        let s = random_state(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let perm = random_perm(s.n_blocks(), &mut rng);
        let contrast = random_contrast(&mut rng);
        let a = effects_from_state(&s, contrast);
        let b = effects_from_state(&s.permuted(&perm), contrast);
        prop_assert!(close_effects(&a, &b), "{a:?} vs {b:?}");
        Ok(())
    })
}

pub fn edge_mask_relabeling(cases: u32) -> std::result::Result<(), String> {
    run(cases, |seed| {
        let s = random_state(seed);
        let q = s.n_blocks();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let perm = random_perm(q, &mut rng);
        let active: Vec<(usize, usize)> = (0..n_pairs(q))
            .filter(|&p| s.tau[p] && s.gamma[p])
            .map(|p| bnmm_core::pair_of(p, q))
            .collect();
        let moved: Vec<(usize, usize)> = active.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let a = edge_mask(&active, &s.allocation);
        let b = edge_mask(&moved, &s.allocation.permuted(&perm));
        prop_assert_eq!(a, b);
        Ok(())
    })
}

/// Summaries of a draw set are unchanged when every draw is relabeled by
/// its own permutation.
pub fn summary_relabeling(cases: u32) -> std::result::Result<(), String> {
    run(cases, |seed| {
        let q = 1 + (seed % 5) as usize;
        let states: Vec<Vec<ModelState>> = (0..2u64)
            .map(|c| (0..6u64).map(|t| random_state_q(derive_seed(seed, &[c, t]), q)).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let pack = |relabel: &mut dyn FnMut(&ModelState) -> ModelState| PosteriorDraws {
            n_blocks: q,
            n_nodes: 0,
            n_iter: 6,
            burn_in: 0,
            thin: 1,
            chains: states
                .iter()
                .enumerate()
                .map(|(c, chain)| ChainDraws {
                    seed: c as u64,
                    draws: chain
                        .iter()
                        .enumerate()
                        .map(|(t, s)| Draw::from_state(t + 1, &relabel(s)))
                        .collect(),
                })
                .collect(),
        };
        let contrast = Contrast::new(1.0, 0.0);
        let plain = summarize_effects(&pack(&mut |s| s.clone()), contrast).unwrap();
        let moved = summarize_effects(&pack(&mut |s| s.permuted(&random_perm(q, &mut rng))), contrast).unwrap();
        for (a, b) in [(plain.te, moved.te), (plain.nde, moved.nde), (plain.nie, moved.nie)] {
            for (x, y) in [(a.mean, b.mean), (a.median, b.median), (a.lower, b.lower), (a.upper, b.upper)] {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300), "{x} vs {y}");
            }
        }
        Ok(())
    })
}

pub fn log_joint_relabeling(cases: u32) -> std::result::Result<(), String> {
    run(cases, |seed| {
        let (ds, s, hyper) = toy(seed, 3, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let perm = random_perm(3, &mut rng);
        let a = log_joint(&ds, &s, &hyper);
        let b = log_joint(&ds, &s.permuted(&perm), &hyper);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        Ok(())
    })
}

/// PSRF is unchanged by `x -> a x + b` with `a != 0`.
pub fn psrf_affine(cases: u32) -> std::result::Result<(), String> {
    let strat = (
        any::<u64>(),
        2usize..5,
        2usize..60,
        prop_oneof![-1e6..-1e-6f64, 1e-6..1e6f64],
        -1e3..1e3f64,
        0usize..3,
    );
    runner(cases)
        .run(&strat, |(seed, m, n, a, shift, kind)| {
            let b = a * shift;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chains: Vec<Vec<f64>> = (0..m)
                .map(|c| {
                    (0..n)
                        .map(|_| match kind {
                            0 => std_normal(&mut rng) + c as f64 * 0.3,
                            1 => c as f64,
                            _ => 2.5,
                        })
                        .collect()
                })
                .collect();
            let moved: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.iter().map(|x| a * x + b).collect())
                .collect();
            let r0 = gelman_rubin(&chains).unwrap();
            let r1 = gelman_rubin(&moved).unwrap();
            if r0.is_finite() {
                prop_assert!((r0 - r1).abs() < 1e-9, "{r0} vs {r1}");
            } else {
                prop_assert_eq!(r0, r1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Same seed, same draws; applies to both initialisations.
pub fn determinism(cases: u32) -> std::result::Result<(), String> {
    run(cases, |seed| {
        let (ds, _, _) = toy(seed, 6, 8, 2);
        let hyper = Hyperparams::new(2);
        let config = ChainConfig {
            n_iter: 15,
            burn_in: 5,
            n_chains: 2,
            seed,
            init_mode: if seed % 2 == 0 { InitMode::Random } else { InitMode::BlockAverage },
            ..ChainConfig::new(2)
        };
        let a = run_chains(&ds, &config, &hyper).unwrap();
        let b = run_chains(&ds, &config, &hyper).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

/// Named invariance properties with their case counts.
pub fn invariance_suite() -> Vec<(&'static str, std::result::Result<(), String>)> {
    vec![
        ("effects relabeling", effects_relabeling(2000)),
        ("edge mask relabeling", edge_mask_relabeling(2000)),
        ("summary relabeling", summary_relabeling(200)),
        ("log joint relabeling", log_joint_relabeling(200)),
        ("psrf affine", psrf_affine(2000)),
        ("determinism", determinism(24)),
    ]
}

// ---------------------------------------------------------------- planted partitions

/// Connectomes with a planted partition: every block pair has its own mean,
/// consecutive means 5 within-block SDs apart, in shuffled order.
pub fn planted(seed: u64, q: usize, v: usize, n_subjects: usize, scans: usize) -> (Dataset, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = 0.2;
    let mut means: Vec<f64> = (0..n_pairs(q)).map(|k| 5.0 * sd * k as f64).collect();
    means.shuffle(&mut rng);
    // balanced labels in random order
    let mut labels: Vec<usize> = (0..v).map(|j| j % q).collect();
    labels.shuffle(&mut rng);
    let subjects = (0..n_subjects)
        .map(|_| SubjectRecord {
            outcome: std_normal(&mut rng),
            exposure: std_normal(&mut rng),
            covariates: vec![1.0],
            connectomes: (0..scans)
                .map(|_| {
                    let mut a = Connectome::zeros(v);
                    for j in 0..v {
                        for l in j + 1..v {
                            let p = pair_index(labels[j], labels[l], q).unwrap();
                            a.set_sym(j, l, means[p] + sd * std_normal(&mut rng));
                        }
                    }
                    a
                })
                .collect(),
        })
        .collect();
    (
        Dataset {
            subjects,
            n_nodes: v,
            n_covariates: 0,
        },
        labels,
    )
}

/// Number of replicates (of 10) in which the ICL picks the planted block
/// count among `q_true - 2 ..= q_true + 2`.
pub fn icl_recovery(q_true: usize, seed: u64) -> (usize, Vec<usize>) {
    use bnmm_core::sbm::{select_q, IclMode};
    let picks: Vec<usize> = (0..10u64)
        .map(|r| {
            let (ds, _) = planted(derive_seed(seed, &[r]), q_true, 40, 4, 2);
            select_q(&ds, q_true.saturating_sub(2).max(1), q_true + 2, r, IclMode::Layered)
                .unwrap()
                .best_q
        })
        .collect();
    (picks.iter().filter(|&&q| q == q_true).count(), picks)
}
