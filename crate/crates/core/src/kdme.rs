//! Kernel-density maximum-entropy (KDME) estimation of univariate PDFs.
//!
//! The sample is mapped onto the unit interval and a discrete
//! maximum-entropy distribution `p_i ∝ exp(-Σ λ_k z_i^γ_k)` is placed on a
//! uniform grid of `N` points. Its Lagrange multipliers follow from a linear
//! system in the sample fractional moments, so no inner optimization is
//! needed. The PDF is the Gaussian-kernel mixture of the grid points
//! weighted by `p`. The powers `γ` and their number `M` are chosen by
//! Bayesian optimization of a penalized negative log-likelihood.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes_opt::{bayes_minimize, BoConfig, BoResult, PENALTY};
use crate::error::{degenerate, invalid, Error, Result};
use crate::seed::derive_seed;

/// Largest condition number accepted for the multiplier system.
pub const MAX_CONDITION: f64 = 1e12;
/// Densities at or below this make a candidate infeasible.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Smallest sample accepted by [`fit_kdme`].
pub const MIN_SAMPLE: usize = 30;
/// Kernel sums stop this many bandwidths from the query; beyond it the
/// Gaussian factor is below the smallest positive double.
const KERNEL_REACH: f64 = 38.6;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `(x - min) / (max - min)` for every sample value.
pub fn to_unit(x: &[f64], window: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid(format!("invalid window [{lo}, {hi}]")));
    }
    let width = hi - lo;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if !(lo..=hi).contains(&v) {
                Err(invalid(format!("sample value {v} at index {i} lies outside the window [{lo}, {hi}]")))
            } else {
                Ok(((v - lo) / width).clamp(0.0, 1.0))
            }
        })
        .collect()
}

pub fn from_unit(z: &[f64], window: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = window;
    z.iter().map(|v| lo + v * (hi - lo)).collect()
}

/// `(1/n) Σ z_i^γ`, with `0^0 = 1`.
pub fn sample_fractional_moment(z: &[f64], gamma: f64) -> Result<f64> {
    if z.is_empty() {
        return Err(invalid("fractional moment of an empty sample"));
    }
    if !(gamma >= 0.0) {
        return Err(invalid(format!("fractional power must be non-negative, got {gamma}")));
    }
    Ok(z.iter().map(|v| v.powf(gamma)).sum::<f64>() / z.len() as f64)
}

/// Multipliers and the condition number of the system that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub lambda: Vec<f64>,
    pub condition: f64,
}

/// Solves `P(γ) λ = ρ(γ)` where `P_jk = γ_k E[Z^(γ_k + γ_j)]` and
/// `ρ_j = (γ_j + 1) E[Z^γ_j]`, rows using `γ_0 = 0, γ_1, ..., γ_(M-1)`.
/// `moment(a)` supplies `E[Z^a]`.
pub fn solve_lambda<F: Fn(f64) -> f64>(gamma: &[f64], moment: F) -> Result<LambdaSolution> {
    let m = gamma.len();
    if m == 0 {
        return Err(invalid("at least one fractional power is required"));
    }
    if gamma.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(invalid(format!("fractional powers must be finite and non-negative: {gamma:?}")));
    }
    let row_power = |j: usize| if j == 0 { 0.0 } else { gamma[j - 1] };
    let p = DMatrix::from_fn(m, m, |j, k| gamma[k] * moment(gamma[k] + row_power(j)));
    let rho = DVector::from_fn(m, |j, _| (row_power(j) + 1.0) * moment(row_power(j)));
    let sv = p.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            gamma: gamma.to_vec(),
            condition,
        });
    }
    let lambda = p.lu().solve(&rho).ok_or_else(|| Error::IllConditioned {
        gamma: gamma.to_vec(),
        condition,
    })?;
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned {
            gamma: gamma.to_vec(),
            condition,
        });
    }
    Ok(LambdaSolution {
        lambda: lambda.iter().copied().collect(),
        condition,
    })
}

/// Discrete maximum-entropy probabilities on `z_eval` and `ln m0`, where
/// `m0 = Σ_i exp(-Σ_k λ_k z_i^γ_k)`.
pub fn me_probabilities(gamma: &[f64], lambda: &[f64], z_eval: &[f64]) -> Result<(Vec<f64>, f64)> {
    if gamma.len() != lambda.len() {
        return Err(invalid(format!(
            "{} powers but {} multipliers",
            gamma.len(),
            lambda.len()
        )));
    }
    if z_eval.is_empty() {
        return Err(invalid("evaluation grid is empty"));
    }
    if gamma.iter().chain(lambda).chain(z_eval).any(|v| v.is_nan()) {
        return Err(invalid("NaN in fractional powers, multipliers or grid"));
    }
    let exponent: Vec<f64> = z_eval
        .iter()
        .map(|&z| -gamma.iter().zip(lambda).map(|(g, l)| l * z.powf(*g)).sum::<f64>())
        .collect();
    let top = exponent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(invalid("maximum-entropy exponent is not finite"));
    }
    let weights: Vec<f64> = exponent.iter().map(|e| (e - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok((weights.iter().map(|w| w / total).collect(), top + total.ln()))
}

/// `N` equally spaced points from 0 to 1.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Σ p_i φ((t - t_i)/h)/h over a uniform grid `t_i = start + i * step`.
fn mixture(p: &[f64], start: f64, step: f64, h: f64, t: f64) -> f64 {
    let (lo, hi) = kernel_range(p.len(), start, step, h, t);
    (lo..hi)
        .map(|i| {
            let u = (t - (start + i as f64 * step)) / h;
            p[i] * (-0.5 * u * u).exp()
        })
        .sum::<f64>()
        * INV_SQRT_2PI
        / h
}

fn mixture_derivative(p: &[f64], start: f64, step: f64, h: f64, t: f64) -> f64 {
    let (lo, hi) = kernel_range(p.len(), start, step, h, t);
    -(lo..hi)
        .map(|i| {
            let u = (t - (start + i as f64 * step)) / h;
            p[i] * u * (-0.5 * u * u).exp()
        })
        .sum::<f64>()
        * INV_SQRT_2PI
        / (h * h)
}

/// Grid indices within `KERNEL_REACH` bandwidths of `t`, as a half-open range.
fn kernel_range(n: usize, start: f64, step: f64, h: f64, t: f64) -> (usize, usize) {
    if n == 1 || step <= 0.0 {
        return if ((t - start) / h).abs() <= KERNEL_REACH { (0, n) } else { (0, 0) };
    }
    let reach = KERNEL_REACH * h / step;
    let centre = (t - start) / step;
    let lo = (centre - reach).ceil();
    let hi = (centre + reach).floor();
    if !(hi >= 0.0) || !(lo <= (n - 1) as f64) {
        return (0, 0);
    }
    (lo.max(0.0) as usize, (hi.min((n - 1) as f64) as usize) + 1)
}

/// Penalized negative log-likelihood `-(1/n) Σ ln f_j + M/n`; any density at
/// or below [`DENSITY_FLOOR`] gives [`PENALTY`].
pub fn penalized_nll(densities: &[f64], m: usize) -> f64 {
    let n = densities.len() as f64;
    if densities.is_empty() || densities.iter().any(|f| !(*f > DENSITY_FLOOR)) {
        return PENALTY;
    }
    -densities.iter().map(|f| f.ln()).sum::<f64>() / n + m as f64 / n
}

/// The objective of the `γ` search for one unit-interval sample.
///
/// Kernel weights between sample points and grid points are precomputed,
/// so each evaluation costs one moment solve and one sparse product.
pub struct KdmeObjective {
    ln_z: Vec<f64>,
    grid: Vec<f64>,
    /// Per sample: first grid index and kernel values `φ(u)/h`.
    kernels: Vec<(usize, Vec<f64>)>,
}

impl KdmeObjective {
    /// `bandwidth_factor` is `h / Δz`.
    pub fn new(z_sample: &[f64], n_eval: usize, bandwidth_factor: f64) -> Result<Self> {
        if z_sample.is_empty() {
            return Err(invalid("empty sample"));
        }
        if let Some(z) = z_sample.iter().find(|z| !(0.0..=1.0).contains(*z)) {
            return Err(invalid(format!("unit-interval sample contains {z}")));
        }
        if n_eval < 2 {
            return Err(invalid(format!("need at least 2 evaluation points, got {n_eval}")));
        }
        if !(bandwidth_factor > 0.0 && bandwidth_factor <= 1.0) {
            return Err(invalid(format!("bandwidth factor must be in (0, 1], got {bandwidth_factor}")));
        }
        let grid = unit_grid(n_eval);
        let step = 1.0 / (n_eval - 1) as f64;
        let h = bandwidth_factor * step;
        let kernels = z_sample
            .iter()
            .map(|&z| {
                let (lo, hi) = kernel_range(n_eval, 0.0, step, h, z);
                let w = (lo..hi)
                    .map(|i| {
                        let u = (z - grid[i]) / h;
                        (-0.5 * u * u).exp() * INV_SQRT_2PI / h
                    })
                    .collect();
                (lo, w)
            })
            .collect();
        Ok(Self {
            ln_z: z_sample.iter().map(|z| z.ln()).collect(),
            grid,
            kernels,
        })
    }

    pub fn sample_len(&self) -> usize {
        self.ln_z.len()
    }

    fn moment(&self, a: f64) -> f64 {
        let n = self.ln_z.len() as f64;
        if a == 0.0 {
            return 1.0;
        }
        self.ln_z.iter().map(|l| (a * l).exp()).sum::<f64>() / n
    }

    /// Densities at the sample points for ME weights `p`.
    pub fn densities(&self, p: &[f64]) -> Vec<f64> {
        self.kernels
            .iter()
            .map(|(lo, w)| w.iter().zip(&p[*lo..]).map(|(k, p)| k * p).sum())
            .collect()
    }

    /// Multipliers, ME probabilities and `ln m0` for `γ`.
    pub fn solve(&self, gamma: &[f64]) -> Result<(LambdaSolution, Vec<f64>, f64)> {
        let sol = solve_lambda(gamma, |a| self.moment(a))?;
        let (p, ln_m0) = me_probabilities(gamma, &sol.lambda, &self.grid)?;
        Ok((sol, p, ln_m0))
    }

    /// `θ(γ)`; failures map to [`PENALTY`].
    pub fn evaluate(&self, gamma: &[f64]) -> f64 {
        match self.solve(gamma) {
            Ok((_, p, _)) => penalized_nll(&self.densities(&p), gamma.len()),
            Err(e) => {
                log::trace!("objective penalty at {gamma:?}: {e}");
                PENALTY
            }
        }
    }

    /// `θ` of the uniform distribution (`λ = 0`, `M = 0`).
    pub fn uniform_baseline(&self) -> f64 {
        let p = vec![1.0 / self.grid.len() as f64; self.grid.len()];
        penalized_nll(&self.densities(&p), 0)
    }
}

/// `θ(γ)` for a unit-interval sample with `N = n_eval` and `h = Δz`.
pub fn kdme_objective(gamma: &[f64], z_sample: &[f64], n_eval: usize) -> Result<f64> {
    Ok(KdmeObjective::new(z_sample, n_eval, 1.0)?.evaluate(gamma))
}

/// A fitted KDME density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdmeModel {
    pub window: (f64, f64),
    pub n_eval: usize,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `ln m0`; `m0` itself can overflow for large multipliers.
    pub ln_m0: f64,
    /// Kernel bandwidth in sample units.
    pub bandwidth: f64,
    /// Penalized negative log-likelihood on the unit interval.
    pub theta: f64,
    /// Upper bound of the `γ` search that produced this model.
    pub gamma_max: f64,
    /// Window padding in inter-quartile ranges.
    pub padding: f64,
}

impl KdmeModel {
    /// Number of fractional moments `M`.
    pub fn moments(&self) -> usize {
        self.gamma.len()
    }

    pub fn width(&self) -> f64 {
        self.window.1 - self.window.0
    }

    /// Grid spacing `Δx`.
    pub fn step(&self) -> f64 {
        self.width() / (self.n_eval - 1) as f64
    }

    pub fn eval_points(&self) -> Vec<f64> {
        from_unit(&unit_grid(self.n_eval), self.window)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        mixture(&self.probabilities, self.window.0, self.step(), self.bandwidth, x)
    }

    pub fn pdf_batch(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.pdf(v)).collect()
    }

    pub fn pdf_derivative(&self, x: f64) -> f64 {
        mixture_derivative(&self.probabilities, self.window.0, self.step(), self.bandwidth, x)
    }

    /// Checks the structural invariants (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Format(m));
        if !(self.window.0 < self.window.1) || !self.window.0.is_finite() || !self.window.1.is_finite() {
            return fail(format!("invalid density window {:?}", self.window));
        }
        if self.n_eval < 2 || self.probabilities.len() != self.n_eval {
            return fail(format!(
                "density has {} probabilities for {} evaluation points",
                self.probabilities.len(),
                self.n_eval
            ));
        }
        if self.gamma.len() != self.lambda.len() {
            return fail("fractional powers and multipliers differ in length".into());
        }
        if self.probabilities.iter().any(|p| !(*p >= 0.0)) {
            return fail("negative or NaN probability".into());
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return fail(format!("probabilities sum to {total}"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth <= self.step() * (1.0 + 1e-12)) {
            return fail(format!("bandwidth {} outside (0, {}]", self.bandwidth, self.step()));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0 && *g <= self.gamma_max * (1.0 + 1e-12))) {
            return fail(format!("fractional powers {:?} outside [0, {}]", self.gamma, self.gamma_max));
        }
        Ok(())
    }
}

pub fn kdme_pdf(model: &KdmeModel, x: &[f64]) -> Vec<f64> {
    model.pdf_batch(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdmeConfig {
    pub n_eval: usize,
    pub m_range: Vec<usize>,
    pub gamma_max_init: f64,
    pub escalation_factor: f64,
    pub max_escalations: usize,
    /// `γ` entries at or above `(1 - tol) γ_max` count as close to the bound.
    pub escalation_tolerance: f64,
    /// `h / Δx`, in (0, 1].
    pub bandwidth_factor: f64,
    /// Candidate window paddings, in inter-quartile ranges of the sample.
    pub window_padding: Vec<f64>,
    pub bo_budget: usize,
    pub acquisition_starts: usize,
    pub seed: u64,
}

impl Default for KdmeConfig {
    fn default() -> Self {
        Self {
            n_eval: 1000,
            m_range: vec![1, 2, 3],
            gamma_max_init: 3.0,
            escalation_factor: 2.0,
            max_escalations: 3,
            escalation_tolerance: 0.05,
            bandwidth_factor: 1.0,
            window_padding: vec![0.0, 0.5],
            bo_budget: 50,
            acquisition_starts: 64,
            seed: 0,
        }
    }
}

impl KdmeConfig {
    fn validate(&self) -> Result<()> {
        if self.n_eval < 2 {
            return Err(invalid(format!("n_eval must be at least 2, got {}", self.n_eval)));
        }
        if self.m_range.is_empty() || self.m_range.contains(&0) {
            return Err(invalid(format!("m_range must list positive moment counts, got {:?}", self.m_range)));
        }
        if !(self.gamma_max_init > 0.0) || !(self.escalation_factor > 1.0) {
            return Err(invalid("gamma_max_init must be positive and escalation_factor above 1"));
        }
        if !(0.0..1.0).contains(&self.escalation_tolerance) {
            return Err(invalid("escalation_tolerance must be in [0, 1)"));
        }
        if !(self.bandwidth_factor > 0.0 && self.bandwidth_factor <= 1.0) {
            return Err(invalid(format!("bandwidth_factor must be in (0, 1], got {}", self.bandwidth_factor)));
        }
        if self.window_padding.is_empty() || self.window_padding.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid(format!("window paddings must be non-negative, got {:?}", self.window_padding)));
        }
        Ok(())
    }
}

/// One Bayesian-optimization run of the `γ` search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub padding: f64,
    pub moments: usize,
    pub gamma_max: f64,
    pub result: BoResult,
}

/// A fitted model and the searches behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct KdmeFit {
    pub model: KdmeModel,
    pub runs: Vec<SearchRun>,
}

/// Linear-interpolation sample quantile (`q` in [0, 1]) of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

struct Candidate {
    theta: f64,
    gamma: Vec<f64>,
    gamma_max: f64,
}

pub fn fit_kdme(x: &[f64], config: &KdmeConfig) -> Result<KdmeModel> {
    fit_kdme_traced(x, config).map(|f| f.model)
}

/// Fits a KDME density to `x`.
///
/// For each window padding and moment count `M`, `γ ∈ [0, γ_max]^M` is
/// searched by Bayesian optimization; `γ_max` grows while at least two
/// entries of the best `γ` sit near it. The uniform density (`M = 0`) is
/// always a candidate. Within a window the smallest `θ` wins; across windows
/// the comparison is made in sample units, `θ + ln(width)`.
pub fn fit_kdme_traced(x: &[f64], config: &KdmeConfig) -> Result<KdmeFit> {
    config.validate()?;
    if x.len() < MIN_SAMPLE {
        return Err(invalid(format!("KDME needs at least {MIN_SAMPLE} samples, got {}", x.len())));
    }
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(invalid(format!("sample value {v} at index {i} is not finite")));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if !(max > min) {
        return Err(degenerate(format!("all {} sample values equal {min}", x.len())));
    }
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let tasks: Vec<(usize, usize)> = (0..config.window_padding.len())
        .flat_map(|pi| config.m_range.iter().map(move |&m| (pi, m)))
        .collect();
    let windows: Vec<(f64, f64)> = config
        .window_padding
        .iter()
        .map(|pad| (min - pad * iqr, max + pad * iqr))
        .collect();
    let objectives = windows
        .iter()
        .map(|&w| KdmeObjective::new(&to_unit(x, w)?, config.n_eval, config.bandwidth_factor))
        .collect::<Result<Vec<_>>>()?;

    let searched: Vec<(usize, Candidate, Vec<SearchRun>)> = tasks
        .par_iter()
        .map(|&(pi, m)| {
            let (best, runs) = search_moments(&objectives[pi], config.window_padding[pi], m, pi, config)?;
            Ok((pi, best, runs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut runs = Vec::new();
    let mut best: Option<(f64, usize, Candidate)> = None;
    for (pi, obj) in objectives.iter().enumerate() {
        let width = windows[pi].1 - windows[pi].0;
        let mut local = Candidate {
            theta: obj.uniform_baseline(),
            gamma: Vec::new(),
            gamma_max: config.gamma_max_init,
        };
        for (_, cand, task_runs) in searched.iter().filter(|s| s.0 == pi) {
            runs.extend(task_runs.iter().cloned());
            if cand.theta < local.theta {
                local = Candidate {
                    theta: cand.theta,
                    gamma: cand.gamma.clone(),
                    gamma_max: cand.gamma_max,
                };
            }
        }
        let score = local.theta + width.ln();
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, pi, local));
        }
    }
    let (_, pi, chosen) = best.expect("at least one window");
    let obj = &objectives[pi];
    let (lambda, probabilities, ln_m0) = if chosen.gamma.is_empty() {
        (Vec::new(), vec![1.0 / config.n_eval as f64; config.n_eval], (config.n_eval as f64).ln())
    } else {
        let (sol, p, ln_m0) = obj.solve(&chosen.gamma)?;
        (sol.lambda, p, ln_m0)
    };
    let window = windows[pi];
    let step = (window.1 - window.0) / (config.n_eval - 1) as f64;
    let model = KdmeModel {
        window,
        n_eval: config.n_eval,
        gamma: chosen.gamma,
        lambda,
        probabilities,
        ln_m0,
        bandwidth: config.bandwidth_factor * step,
        theta: chosen.theta,
        gamma_max: chosen.gamma_max,
        padding: config.window_padding[pi],
    };
    log::debug!(
        "KDME fit: window {:?}, M = {}, gamma = {:?}, theta = {:.6}",
        model.window,
        model.moments(),
        model.gamma,
        model.theta
    );
    Ok(KdmeFit { model, runs })
}

/// Bayesian search over `[0, γ_max]^m` with `γ_max` escalation.
fn search_moments(
    obj: &KdmeObjective,
    padding: f64,
    m: usize,
    padding_index: usize,
    config: &KdmeConfig,
) -> Result<(Candidate, Vec<SearchRun>)> {
    let mut gamma_max = config.gamma_max_init;
    let mut runs = Vec::new();
    let mut best: Option<Candidate> = None;
    for round in 0..=config.max_escalations {
        let seed = derive_seed(config.seed, ((padding_index as u64) << 32) | ((m as u64) << 8) | round as u64);
        let bo = BoConfig {
            budget: config.bo_budget,
            initial_design: None,
            acquisition_starts: config.acquisition_starts,
            seed,
        };
        let result = bayes_minimize(|g| obj.evaluate(g), &vec![(0.0, gamma_max); m], &bo)?;
        if best.as_ref().is_none_or(|b| result.f_best <= b.theta) {
            best = Some(Candidate {
                theta: result.f_best,
                gamma: result.x_best.clone(),
                gamma_max,
            });
        }
        let near = result
            .x_best
            .iter()
            .filter(|g| **g >= (1.0 - config.escalation_tolerance) * gamma_max)
            .count();
        runs.push(SearchRun {
            padding,
            moments: m,
            gamma_max,
            result,
        });
        if near < 2 {
            break;
        }
        gamma_max *= config.escalation_factor;
    }
    Ok((best.expect("at least one round"), runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_transform_examples() {
        assert_eq!(to_unit(&[2.0, 5.0], (2.0, 5.0)).unwrap(), vec![0.0, 1.0]);
        assert_eq!(to_unit(&[0.0], (-1.0, 1.0)).unwrap(), vec![0.5]);
        let err = to_unit(&[0.0, 1.5], (-1.0, 1.0)).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");
        assert!(to_unit(&[0.0], (1.0, 1.0)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..7.0)).collect();
        let back = from_unit(&to_unit(&x, (-3.0, 7.0)).unwrap(), (-3.0, 7.0));
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn fractional_moment_examples() {
        assert_eq!(sample_fractional_moment(&[0.0, 0.3, 1.0], 0.0).unwrap(), 1.0);
        assert_eq!(sample_fractional_moment(&[0.25, 0.5, 0.75, 1.0], 1.0).unwrap(), 0.625);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        assert!((sample_fractional_moment(&z, 2.5).unwrap() - 1.0 / 3.5).abs() < 0.002);
        assert!(sample_fractional_moment(&[], 1.0).is_err());
    }

    #[test]
    fn single_moment_with_uniform_moments() {
        for &g in &[0.3, 1.0, 2.7] {
            let sol = solve_lambda(&[g], |a| 1.0 / (a + 1.0)).unwrap();
            assert!((sol.lambda[0] - (g + 1.0) / g).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_powers_are_ill_conditioned() {
        let uniform = |a: f64| 1.0 / (a + 1.0);
        match solve_lambda(&[1.2, 1.2], uniform) {
            Err(Error::IllConditioned { gamma, .. }) => assert_eq!(gamma, vec![1.2, 1.2]),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
        assert!(matches!(solve_lambda(&[0.0], uniform), Err(Error::IllConditioned { .. })));
    }

    /// Discrete moments `Σ z_i^a p_i` of a grid distribution.
    fn grid_moments(z: &[f64], p: &[f64]) -> impl Fn(f64) -> f64 {
        let z = z.to_vec();
        let p = p.to_vec();
        move |a| z.iter().zip(&p).map(|(z, p)| z.powf(a) * p).sum()
    }

    #[test]
    fn multipliers_round_trip() {
        // Both densities vanish at the ends of the interval.
        let z = unit_grid(1000);
        let cases: [(&[f64], &[f64]); 2] = [(&[1.0, 2.0], &[-200.0, 200.0]), (&[0.5, 1.5], &[-162.0, 150.0])];
        for (gamma, lambda) in cases {
            let (p, _) = me_probabilities(gamma, lambda, &z).unwrap();
            assert!(p[0] < 1e-15 && p[999] < 1e-15);
            let sol = solve_lambda(gamma, grid_moments(&z, &p)).unwrap();
            for (got, want) in sol.lambda.iter().zip(lambda) {
                assert!((got - want).abs() < 1e-6, "{:?} vs {lambda:?}", sol.lambda);
            }
        }
    }

    #[test]
    fn probability_examples() {
        let z = unit_grid(50);
        let (p, ln_m0) = me_probabilities(&[1.3, 2.0], &[0.0, 0.0], &z).unwrap();
        assert!(p.iter().all(|v| (v - 0.02).abs() < 1e-15));
        assert!((ln_m0 - 50f64.ln()).abs() < 1e-12);
        let (p, _) = me_probabilities(&[1.0], &[40.0], &z).unwrap();
        assert!(p.windows(2).all(|w| w[1] < w[0]));
        assert!(p[0] > 0.5 * p.iter().copied().fold(0.0, f64::max));
        assert!(me_probabilities(&[1.0], &[f64::NAN], &z).is_err());
        assert!(me_probabilities(&[1.0], &[1.0, 2.0], &z).is_err());
        // Huge multipliers do not overflow.
        let (p, ln_m0) = me_probabilities(&[1.0], &[-5000.0], &z).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((ln_m0 - 5000.0).abs() < 1.0);
    }

    fn single_kernel_model(h: f64) -> KdmeModel {
        KdmeModel {
            window: (0.0, 1.0),
            n_eval: 2,
            gamma: vec![],
            lambda: vec![],
            probabilities: vec![1.0, 0.0],
            ln_m0: 0.0,
            bandwidth: h,
            theta: 0.0,
            gamma_max: 3.0,
            padding: 0.0,
        }
    }

    #[test]
    fn pdf_examples() {
        let m = single_kernel_model(0.2);
        assert!((m.pdf(0.0) - 1.0 / (0.2 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-14);
        assert_eq!(m.pdf(41.0 * 0.2), 0.0);
        assert_eq!(m.pdf(-41.0 * 0.2), 0.0);
        m.validate().unwrap();
    }

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
    }

    fn random_model(seed: u64) -> KdmeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = vec![rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        let lambda = vec![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let n = 200;
        let (p, ln_m0) = me_probabilities(&gamma, &lambda, &unit_grid(n)).unwrap();
        let window = (rng.random_range(-5.0..0.0), rng.random_range(1.0..4.0));
        KdmeModel {
            window,
            n_eval: n,
            gamma,
            lambda,
            probabilities: p,
            ln_m0,
            bandwidth: (window.1 - window.0) / (n - 1) as f64,
            theta: 0.0,
            gamma_max: 3.0,
            padding: 0.0,
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for seed in 0..5 {
            let m = random_model(seed);
            let h = m.bandwidth;
            let total = trapezoid(|x| m.pdf(x), m.window.0 - 5.0 * h, m.window.1 + 5.0 * h, 20_000);
            assert!((total - 1.0).abs() < 1e-3, "{total}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let m = random_model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x = rng.random_range(m.window.0..m.window.1);
            let eps = 1e-5 * m.bandwidth;
            let fd = (m.pdf(x + eps) - m.pdf(x - eps)) / (2.0 * eps);
            let an = m.pdf_derivative(x);
            let scale = an.abs().max(m.pdf(x) / m.bandwidth);
            assert!((fd - an).abs() <= 1e-5 * scale, "{fd} vs {an}");
        }
    }

    #[test]
    fn uniform_objective() {
        let n = 20_000;
        let z: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let obj = KdmeObjective::new(&z, 1000, 1.0).unwrap();
        let base = obj.uniform_baseline();
        assert!(base.abs() < 0.01, "{base}");
        // The objective's penalty term is exactly M/n.
        let f = obj.densities(&vec![1e-3; 1000]);
        let one = penalized_nll(&f, 1);
        let two = penalized_nll(&f, 2);
        assert!((two - one - 1.0 / n as f64).abs() < 1e-15);
        assert_eq!(obj.evaluate(&[1.0, 1.0]), PENALTY);
        assert_eq!(penalized_nll(&[0.5, 0.0], 1), PENALTY);
    }

    #[test]
    fn objective_agrees_with_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..300).map(|_| rng.random::<f64>().powi(2)).collect();
        let gamma = [0.7, 1.9];
        let theta = kdme_objective(&gamma, &z, 200).unwrap();
        let moment = |a: f64| sample_fractional_moment(&z, a).unwrap();
        let sol = solve_lambda(&gamma, moment).unwrap();
        let (p, _) = me_probabilities(&gamma, &sol.lambda, &unit_grid(200)).unwrap();
        let h = 1.0 / 199.0;
        let nll: f64 = z
            .iter()
            .map(|&zj| {
                let f: f64 = unit_grid(200)
                    .iter()
                    .zip(&p)
                    .map(|(zi, pi)| pi * (-0.5 * ((zj - zi) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()))
                    .sum();
                -f.ln()
            })
            .sum::<f64>()
            / 300.0;
        assert!((theta - (nll + 2.0 / 300.0)).abs() < 1e-10, "{theta} vs {nll}");
    }

    #[test]
    fn fit_validation() {
        let cfg = KdmeConfig::default();
        assert!(fit_kdme(&[1.0; 10], &cfg).is_err());
        assert!(matches!(fit_kdme(&[2.0; 50], &cfg), Err(Error::Degenerate(_))));
        let mut bad = vec![0.0; 40];
        bad[3] = f64::NAN;
        assert!(fit_kdme(&bad, &cfg).is_err());
    }

    fn quick_config(seed: u64) -> KdmeConfig {
        KdmeConfig {
            n_eval: 400,
            bo_budget: 20,
            acquisition_starts: 16,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn fit_is_deterministic_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..200).map(|_| rng.random::<f64>() + rng.random::<f64>()).collect();
        let a = fit_kdme_traced(&x, &quick_config(5)).unwrap();
        let b = fit_kdme(&x, &quick_config(5)).unwrap();
        assert_eq!(a.model, b);
        a.model.validate().unwrap();
        for run in &a.runs {
            let h = &run.result.history;
            assert!(h.windows(2).all(|w| w[1].incumbent <= w[0].incumbent));
            assert!(run.result.x_best.iter().all(|g| *g >= 0.0 && *g <= run.gamma_max));
        }
        // The uniform density is always a candidate.
        let window = a.model.window;
        let obj = KdmeObjective::new(&to_unit(&x, window).unwrap(), 400, 1.0).unwrap();
        assert!(a.model.theta <= obj.uniform_baseline() + 1e-12);
    }

    #[test]
    fn scaling_the_sample_scales_the_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..150).map(|_| rng.random::<f64>().powf(1.5)).collect();
        let c = 7.5;
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let f = fit_kdme(&x, &quick_config(1)).unwrap();
        let g = fit_kdme(&xs, &quick_config(1)).unwrap();
        for i in 0..50 {
            let t = f.window.0 + (i as f64 + 0.5) / 50.0 * f.width();
            let (a, b) = (f.pdf(t), g.pdf(c * t) * c);
            assert!((a - b).abs() <= 1e-6 * a.max(1e-12), "{a} vs {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn probabilities_form_a_distribution(
            gamma in prop::collection::vec(0.0f64..6.0, 1..4),
            scale in 0.0f64..500.0,
            signs in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let lambda: Vec<f64> = gamma.iter().zip(&signs).map(|(_, s)| s * scale).collect();
            let (p, ln_m0) = me_probabilities(&gamma, &lambda, &unit_grid(300)).unwrap();
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(ln_m0.is_finite());
        }

        #[test]
        fn round_trip_for_vanishing_densities(
            g1 in 0.3f64..1.2, dg in 0.4f64..1.5, centre in 0.35f64..0.65,
        ) {
            // Fit λ to a narrow Gaussian exponent by least squares, then
            // require the solver to recover it from the discrete moments.
            let gamma = [g1, g1 + dg];
            let z = unit_grid(1000);
            let target: Vec<f64> = z.iter().map(|v| (v - centre).powi(2) / (2.0 * 0.05f64.powi(2))).collect();
            let a = DMatrix::from_fn(z.len(), 3, |i, k| if k == 2 { 1.0 } else { z[i].powf(gamma[k]) });
            let coef = a.clone().svd(true, true).solve(&DVector::from_vec(target), 1e-14).unwrap();
            let lambda = [coef[0], coef[1]];
            let (p, _) = me_probabilities(&gamma, &lambda, &z).unwrap();
            prop_assume!(p[0] < 1e-14 && p[999] < 1e-14);
            let sol = solve_lambda(&gamma, grid_moments(&z, &p)).unwrap();
            for (got, want) in sol.lambda.iter().zip(&lambda) {
                prop_assert!((got - want).abs() < 1e-6, "{:?} vs {:?}", sol.lambda, lambda);
            }
        }

        #[test]
        fn pdf_is_non_negative(seed in 0u64..200, t in -1.0f64..2.0) {
            let m = random_model(seed);
            let x = m.window.0 + t * m.width();
            prop_assert!(m.pdf(x) >= 0.0);
        }
    }
}
