//! Bayesian optimization of expensive black-box objectives over a box.
//!
//! A Gaussian-process surrogate (ARD Matern 5/2) is refitted after every
//! evaluation and the next point maximizes Expected Improvement. The loop
//! runs for a fixed evaluation budget.

mod gp;
pub mod nelder_mead;

pub use gp::{
    expected_improvement, expected_improvement_gaussian, gp_posterior, matern52_ard, GpSurrogate, Hyper,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{invalid, Result};
use nelder_mead::NmOptions;

/// Value substituted for failed or non-finite objective evaluations.
pub const PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    /// Total objective evaluations, including the initial design.
    pub budget: usize,
    /// Initial design size; `max(5, 2M)` when unset.
    pub initial_design: Option<usize>,
    /// Random starts for the acquisition search.
    pub acquisition_starts: usize,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            initial_design: None,
            acquisition_starts: 64,
            seed: 0,
        }
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub value: f64,
    /// Best value seen up to and including this evaluation.
    pub incumbent: f64,
    /// The objective returned a non-finite value and `PENALTY` was used.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub history: Vec<Evaluation>,
}

impl BoResult {
    pub fn flagged_count(&self) -> usize {
        self.history.iter().filter(|e| e.flagged).count()
    }

    /// Writes `iteration,x_1..x_M,value,incumbent` rows.
    pub fn write_trace<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let m = self.x_best.len();
        let names: Vec<String> = (1..=m).map(|k| format!("x{k}")).collect();
        writeln!(w, "iteration,{},value,incumbent", names.join(","))?;
        for e in &self.history {
            let xs: Vec<String> = e.x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{},{:e},{:e}", e.iteration, xs.join(","), e.value, e.incumbent)?;
        }
        Ok(())
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// `count` Halton points in the unit cube with a random (Cranley-Patterson)
/// shift, so different seeds give different but equally uniform designs.
pub fn halton_design<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > PRIMES.len() {
        return Err(invalid(format!("design dimension must be in 1..={}, got {dim}", PRIMES.len())));
    }
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    Ok((1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|k| (radical_inverse(i, PRIMES[k]) + shift[k]).fract())
                .collect()
        })
        .collect())
}

/// Minimizes `f` over `bounds` with at most `config.budget` evaluations.
/// Deterministic for a given seed.
pub fn bayes_minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bounds: &[(f64, f64)],
    config: &BoConfig,
) -> Result<BoResult> {
    let m = bounds.len();
    if m == 0 {
        return Err(invalid("search box has no dimensions"));
    }
    if let Some(&(lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
        return Err(invalid(format!("invalid search interval [{lo}, {hi}]")));
    }
    let initial = config.initial_design.unwrap_or((2 * m).max(5));
    if config.budget < initial || initial == 0 {
        return Err(invalid(format!(
            "budget {} is smaller than the initial design size {initial}",
            config.budget
        )));
    }
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history: Vec<Evaluation> = Vec::with_capacity(config.budget);

    let record = |x: Vec<f64>, history: &mut Vec<Evaluation>, f: &mut F| {
        let raw = f(&x);
        let flagged = !raw.is_finite();
        if flagged {
            log::warn!("objective returned {raw} at {x:?}; using penalty {PENALTY:e}");
        }
        let value = if flagged { PENALTY } else { raw };
        let incumbent = history.last().map_or(value, |e: &Evaluation| e.incumbent.min(value));
        history.push(Evaluation {
            iteration: history.len(),
            x,
            value,
            incumbent,
            flagged,
        });
    };

    for u in halton_design(initial, m, &mut rng)? {
        let x = u.iter().zip(bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
        record(x, &mut history, &mut f);
    }

    let mut warm: Option<Hyper> = None;
    while history.len() < config.budget {
        let inputs: Vec<Vec<f64>> = history.iter().map(|e| e.x.clone()).collect();
        let values = surrogate_values(&history);
        let incumbent = values.iter().copied().fold(f64::INFINITY, f64::min);
        let surrogate = GpSurrogate::fit(inputs, values, &widths, warm.as_ref(), &mut rng)?;
        warm = Some(surrogate.hyper().clone());
        let next = maximize_ei(&surrogate, incumbent, bounds, config.acquisition_starts, &mut rng);
        record(next, &mut history, &mut f);
    }

    let f_best = history.last().map(|e| e.incumbent).unwrap_or(f64::INFINITY);
    let x_best = history
        .iter()
        .find(|e| e.value == f_best)
        .map(|e| e.x.clone())
        .unwrap_or_default();
    Ok(BoResult {
        x_best,
        f_best,
        history,
    })
}

/// Observed values with penalties capped just above the worst regular value,
/// so a handful of failures does not swamp the surrogate's scale.
fn surrogate_values(history: &[Evaluation]) -> Vec<f64> {
    let regular: Vec<f64> = history.iter().map(|e| e.value).filter(|v| *v < PENALTY).collect();
    if regular.is_empty() {
        return history.iter().map(|e| e.value).collect();
    }
    let lo = regular.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = regular.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cap = hi + (hi - lo).max(1e-6 * (1.0 + hi.abs()));
    history.iter().map(|e| e.value.min(cap)).collect()
}

fn maximize_ei<R: Rng>(
    s: &GpSurrogate,
    incumbent: f64,
    bounds: &[(f64, f64)],
    starts: usize,
    rng: &mut R,
) -> Vec<f64> {
    let starts: Vec<Vec<f64>> = (0..starts.max(1))
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect();
    let opts = NmOptions {
        max_evals: 40 * (bounds.len() + 1),
        f_tol: 1e-12,
        initial_step: 0.05,
    };
    let neg_ei = |x: &[f64]| -expected_improvement(s, x, incumbent);
    starts
        .par_iter()
        .map(|x0| nelder_mead::minimize(neg_ei, x0, bounds, &opts))
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x)
        .expect("at least one start")
}
