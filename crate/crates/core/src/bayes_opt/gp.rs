//! Gaussian-process surrogate with an ARD Matern 5/2 kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::nelder_mead::{self, NmOptions};
use crate::error::{invalid, Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Kernel hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

/// ARD Matern 5/2 covariance of `a` and `b`.
pub fn matern52_ard(a: &[f64], b: &[f64], lengthscales: &[f64], signal_variance: f64) -> Result<f64> {
    if a.len() != b.len() || a.len() != lengthscales.len() {
        return Err(invalid("kernel arguments and lengthscales differ in length"));
    }
    if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0)) {
        return Err(invalid(format!("lengthscale must be positive, got {l}")));
    }
    Ok(matern52(a, b, lengthscales, signal_variance))
}

fn matern52(a: &[f64], b: &[f64], lengthscales: &[f64], signal_variance: f64) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    let r = r2.sqrt();
    signal_variance * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * (-SQRT5 * r).exp()
}

/// Jitter added on factorization failure grows by 10x from this fraction of
/// the signal variance ...
const JITTER_START: f64 = 1e-10;
/// ... up to this fraction, after which the factorization is an error.
const JITTER_MAX: f64 = 1e-4;

/// A GP conditioned on centered observations.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    inputs: Vec<Vec<f64>>,
    values: Vec<f64>,
    offset: f64,
    hyper: Hyper,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    /// `K^-1 (y - offset)`.
    weights: DVector<f64>,
}

fn gram(inputs: &[Vec<f64>], hyper: &Hyper) -> DMatrix<f64> {
    let t = inputs.len();
    let mut k = DMatrix::zeros(t, t);
    for i in 0..t {
        k[(i, i)] = hyper.signal_variance;
        for j in 0..i {
            let v = matern52(&inputs[i], &inputs[j], &hyper.lengthscales, hyper.signal_variance);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `K + (noise + jitter) I`, escalating the jitter on failure.
fn factor(k: &DMatrix<f64>, hyper: &Hyper) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let base = |extra: f64| {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += hyper.noise_variance + extra;
        }
        m.cholesky()
    };
    if let Some(c) = base(0.0) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START * hyper.signal_variance;
    while jitter <= JITTER_MAX * hyper.signal_variance * (1.0 + 1e-9) {
        if let Some(c) = base(jitter) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "kernel matrix is not positive definite even with jitter {:.1e}",
        JITTER_MAX * hyper.signal_variance
    )))
}

impl GpSurrogate {
    /// Conditions the GP with fixed hyperparameters.
    pub fn new(inputs: Vec<Vec<f64>>, values: Vec<f64>, hyper: Hyper) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != values.len() {
            return Err(invalid("surrogate needs at least one observation and matching values"));
        }
        let m = hyper.lengthscales.len();
        if inputs.iter().any(|x| x.len() != m) {
            return Err(invalid("observation dimension does not match the lengthscales"));
        }
        if hyper.lengthscales.iter().any(|l| !(*l > 0.0)) || !(hyper.signal_variance > 0.0) {
            return Err(invalid("lengthscales and signal variance must be positive"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observed values must be finite"));
        }
        let offset = values.iter().sum::<f64>() / values.len() as f64;
        let centered = DVector::from_iterator(values.len(), values.iter().map(|v| v - offset));
        let k = gram(&inputs, &hyper);
        let (chol, jitter) = factor(&k, &hyper)?;
        let weights = chol.solve(&centered);
        Ok(Self {
            inputs,
            values,
            offset,
            hyper,
            jitter,
            chol,
            weights,
        })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Noise variance plus any jitter added during factorization.
    pub fn diagonal_addition(&self) -> f64 {
        self.hyper.noise_variance + self.jitter
    }

    fn cross(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|x| matern52(x, q, &self.hyper.lengthscales, self.hyper.signal_variance)),
        )
    }

    /// Posterior mean and variance of the latent function at `q`.
    pub fn posterior(&self, q: &[f64]) -> (f64, f64) {
        let k = self.cross(q);
        let mean = k.dot(&self.weights) + self.offset;
        let v = self.chol.l().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Log marginal likelihood of the centered observations.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let centered = DVector::from_iterator(self.values.len(), self.values.iter().map(|v| v - self.offset));
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let t = self.values.len() as f64;
        -0.5 * centered.dot(&self.weights) - 0.5 * log_det - 0.5 * t * (2.0 * std::f64::consts::PI).ln()
    }

    /// Conditions the GP with hyperparameters maximizing the marginal
    /// likelihood. `widths` are the box widths per input dimension; `warm`
    /// (if any) is one of the search starts.
    pub fn fit<R: Rng>(
        inputs: Vec<Vec<f64>>,
        values: Vec<f64>,
        widths: &[f64],
        warm: Option<&Hyper>,
        rng: &mut R,
    ) -> Result<Self> {
        let m = widths.len();
        if values.is_empty() {
            return Err(invalid("surrogate needs at least one observation"));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).max(1e-12);
        let mut bounds: Vec<(f64, f64)> = widths.iter().map(|w| ((1e-3 * w).ln(), (10.0 * w).ln())).collect();
        bounds.push(((1e-3 * var).ln(), (1e3 * var).ln()));
        bounds.push((NOISE_FLOOR.ln(), (0.1 * var).max(NOISE_FLOOR).ln()));
        let unpack = |p: &[f64]| Hyper {
            lengthscales: p[..m].iter().map(|v| v.exp()).collect(),
            signal_variance: p[m].exp(),
            noise_variance: p[m + 1].exp(),
        };
        let pack = |h: &Hyper| {
            let mut p: Vec<f64> = h.lengthscales.iter().map(|v| v.ln()).collect();
            p.push(h.signal_variance.ln());
            p.push(h.noise_variance.ln());
            p.iter()
                .zip(&bounds)
                .map(|(v, &(lo, hi))| v.clamp(lo, hi))
                .collect::<Vec<_>>()
        };
        let mut starts = vec![pack(&Hyper {
            lengthscales: widths.iter().map(|w| 0.3 * w).collect(),
            signal_variance: var,
            noise_variance: 1e-6 * var,
        })];
        if let Some(h) = warm {
            starts.push(pack(h));
        }
        for _ in 0..HYPER_RANDOM_STARTS {
            starts.push(bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect());
        }
        let neg_lml = |p: &[f64]| match GpSurrogate::new(inputs.clone(), values.clone(), unpack(p)) {
            Ok(s) => -s.log_marginal_likelihood(),
            Err(_) => f64::INFINITY,
        };
        let opts = NmOptions {
            max_evals: 60 * (m + 2),
            f_tol: 1e-8,
            initial_step: 0.1,
        };
        let best = starts
            .iter()
            .map(|s| nelder_mead::minimize(&neg_lml, s, &bounds, &opts))
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let hyper = match best {
            Some((p, _)) => unpack(&p),
            None => unpack(&starts[0]),
        };
        GpSurrogate::new(inputs, values, hyper)
    }
}

const NOISE_FLOOR: f64 = 1e-10;
const HYPER_RANDOM_STARTS: usize = 3;

pub fn gp_posterior(s: &GpSurrogate, query: &[f64]) -> (f64, f64) {
    s.posterior(query)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a Gaussian with `mean`, `variance`.
pub fn expected_improvement_gaussian(mean: f64, variance: f64, best: f64) -> f64 {
    let delta = best - mean;
    let sigma = variance.max(0.0).sqrt();
    if sigma <= 0.0 {
        return delta.max(0.0);
    }
    let z = delta / sigma;
    (delta * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

pub fn expected_improvement(s: &GpSurrogate, query: &[f64], incumbent_best: f64) -> f64 {
    let (mean, var) = s.posterior(query);
    expected_improvement_gaussian(mean, var, incumbent_best)
}
