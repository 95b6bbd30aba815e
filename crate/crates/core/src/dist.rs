//! Random variate helpers and Gaussian conditionals shared by the sampler,
//! the simulator and the tests.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{BnmmError, Result};

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `N(mean, var)`; `var == 0` returns `mean` exactly.
#[inline]
pub fn normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    mean + var.sqrt() * std_normal(rng)
}

pub fn gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, scale)
        .expect("gamma parameters are validated by callers")
        .sample(rng)
}

/// Inverse-gamma draw with density proportional to `x^{-shape-1} exp(-scale/x)`.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    1.0 / gamma(shape, 1.0 / scale, rng)
}

/// Dirichlet draw computed through log-gamma variates so that small
/// concentrations do not underflow to an all-zero vector.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            // Gamma(a) = Gamma(a + 1) * U^{1/a}
            let g = gamma(a + 1.0, 1.0, rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        })
        .collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|&l| (l - lse).exp()).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalised probabilities from unnormalised log weights.
pub fn softmax(logw: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logw);
    logw.iter().map(|&l| (l - lse).exp()).collect()
}

/// Samples an index with probability proportional to `exp(logw)`.
pub fn categorical_from_logs<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> usize {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|&l| (l - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (q, &l) in logw.iter().enumerate() {
        u -= (l - m).exp();
        if u < 0.0 {
            return q;
        }
    }
    // rounding: fall back to the last index with positive weight
    logw.iter().rposition(|&l| l > f64::NEG_INFINITY).unwrap_or(0)
}

/// Logistic function, stable for large |x|.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// A Gaussian in information form, `N(precision^{-1} linear, precision^{-1})`,
/// factorised once.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    chol: Cholesky<f64, Dyn>,
    mean: DVector<f64>,
}

impl GaussianPosterior {
    pub fn from_information(
        precision: DMatrix<f64>,
        linear: DVector<f64>,
        context: &'static str,
    ) -> Result<Self> {
        let chol = precision
            .cholesky()
            .ok_or(BnmmError::SingularPrecision(context))?;
        let mean = chol.solve(&linear);
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(BnmmError::SingularPrecision(context));
        }
        Ok(Self { chol, mean })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + L^{-T} w` with `precision = L L^T` and `w ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let w = DVector::from_fn(n, |_, _| std_normal(rng));
        let x = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&w)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + x
    }
}

/// Gaussian whose precision is `diag(d) + u u^T`, solved in O(n).
#[derive(Debug, Clone)]
pub struct DiagRankOneGaussian {
    inv_sqrt_d: Vec<f64>,
    v: Vec<f64>,
    shrink: f64,
    mean: Vec<f64>,
}

impl DiagRankOneGaussian {
    pub fn new(d: &[f64], u: &[f64], linear: &[f64]) -> Result<Self> {
        let n = d.len();
        if u.len() != n || linear.len() != n {
            return Err(BnmmError::Dimension("diag-plus-rank-one sizes differ".into()));
        }
        if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(BnmmError::SingularPrecision("latent mediators"));
        }
        let inv_sqrt_d: Vec<f64> = d.iter().map(|&x| 1.0 / x.sqrt()).collect();
        let v: Vec<f64> = u.iter().zip(&inv_sqrt_d).map(|(a, b)| a * b).collect();
        let s: f64 = v.iter().map(|x| x * x).sum();
        // (I + v v^T)^{-1/2} = I - c v v^T
        let shrink = if s > 0.0 {
            (1.0 - 1.0 / (1.0 + s).sqrt()) / s
        } else {
            0.0
        };
        // Sherman-Morrison: (D + u u^T)^{-1} h
        let dinv_h: Vec<f64> = linear.iter().zip(d).map(|(h, x)| h / x).collect();
        let ut_dinv_h: f64 = u.iter().zip(&dinv_h).map(|(a, b)| a * b).sum();
        let factor = ut_dinv_h / (1.0 + s);
        let mean: Vec<f64> = dinv_h
            .iter()
            .zip(u.iter().zip(d))
            .map(|(dh, (ui, di))| dh - ui / di * factor)
            .collect();
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(BnmmError::SingularPrecision("latent mediators"));
        }
        Ok(Self {
            inv_sqrt_d,
            v,
            shrink,
            mean,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Dense covariance; used by tests.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.mean.len();
        let s: f64 = self.v.iter().map(|x| x * x).sum();
        DMatrix::from_fn(n, n, |a, b| {
            let inner = if a == b { 1.0 } else { 0.0 } - self.v[a] * self.v[b] / (1.0 + s);
            self.inv_sqrt_d[a] * inner * self.inv_sqrt_d[b]
        })
    }

    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let n = self.mean.len();
        let mut dot = 0.0;
        for (o, vi) in out.iter_mut().zip(&self.v).take(n) {
            let w = std_normal(rng);
            *o = w;
            dot += vi * w;
        }
        let c = self.shrink * dot;
        for a in 0..n {
            out[a] = self.mean[a] + self.inv_sqrt_d[a] * (out[a] - c * self.v[a]);
        }
    }
}

/// Seed for an independent sub-stream, mixed with SplitMix64.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut x = master;
    for &p in path {
        x = splitmix(x ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
