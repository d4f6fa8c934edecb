//! Kurtosis-contrast ICA with an algebraic optimal step size.
//!
//! Sources are extracted one at a time (deflation) from whitened data. Each
//! update moves the weight vector along the kurtosis gradient by the step
//! that globally maximizes the absolute kurtosis on that line. Along
//! `y(α) = a + α b` the fourth and second moments are polynomials in α, so
//! the stationary points of `kurt(α) = m4(α) / m2(α)^2 - 3` are the roots of
//! `m4'(α) m2(α) - 2 m4(α) m2'(α)`, a quartic (the quintic terms cancel).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::poly;
use crate::error::{degenerate, invalid, Result};
use crate::linalg::{covariance, row_major, sorted_symmetric_eigen};

/// Smallest admissible covariance eigenvalue for whitening.
pub const MIN_WHITENING_EIGENVALUE: f64 = 1e-12;

/// Symmetric (`C^{-1/2}`) whitening of centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    pub means: Vec<f64>,
    #[serde(with = "row_major")]
    pub matrix: DMatrix<f64>,
}

impl Whitening {
    pub fn apply(&self, y: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(y.len(), y.iter().zip(&self.means).map(|(v, m)| v - m));
        &self.matrix * centered
    }
}

/// Whitens the rows of `y` (`n x q`). Returns the whitened rows and the map.
pub fn whiten(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, Whitening)> {
    if y.nrows() < 2 || y.ncols() == 0 {
        return Err(invalid(format!(
            "whitening needs at least 2 rows and 1 column, got {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    let (means, cov) = covariance(y);
    let (values, vectors) = sorted_symmetric_eigen(&cov);
    if let Some(&bad) = values.iter().find(|&&v| !(v > MIN_WHITENING_EIGENVALUE)) {
        return Err(degenerate(format!(
            "covariance eigenvalue {bad:.3e} is not above {MIN_WHITENING_EIGENVALUE:e}; data cannot be whitened"
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|v| 1.0 / v.sqrt()),
    ));
    let matrix = &vectors * inv_sqrt * vectors.transpose();
    let mut centered = y.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let white = centered * matrix.transpose();
    Ok((white, Whitening { means, matrix }))
}

/// Excess kurtosis `E[s^4] / E[s^2]^2 - 3` of a series (centered moments).
pub fn kurtosis(s: &[f64]) -> Result<f64> {
    if s.len() < 4 {
        return Err(invalid(format!("kurtosis needs at least 4 values, got {}", s.len())));
    }
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let (m2, m4) = s.iter().fold((0.0, 0.0), |(m2, m4), &v| {
        let d = (v - mean) * (v - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= f64::EPSILON * f64::EPSILON * mean * mean || m2 == 0.0 {
        return Err(degenerate("kurtosis of a zero-variance series"));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Outcome of one exact line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub alpha: f64,
    /// `|kurt(w + alpha g)|`.
    pub contrast: f64,
    /// No usable real root; `alpha` came from the grid fallback.
    pub used_fallback: bool,
}

/// Moments of `a + αb` as polynomials in α.
struct LineMoments {
    m2: [f64; 3],
    m4: [f64; 5],
}

impl LineMoments {
    fn new(a: &DVector<f64>, b: &DVector<f64>) -> Self {
        let n = a.len() as f64;
        let mut s = [0.0; 5]; // E[a^(4-k) b^k]
        let mut t = [0.0; 3]; // E[a^(2-k) b^k]
        for (&x, &y) in a.iter().zip(b.iter()) {
            let (x2, y2) = (x * x, y * y);
            s[0] += x2 * x2;
            s[1] += x2 * x * y;
            s[2] += x2 * y2;
            s[3] += x * y2 * y;
            s[4] += y2 * y2;
            t[0] += x2;
            t[1] += x * y;
            t[2] += y2;
        }
        let binom4 = [1.0, 4.0, 6.0, 4.0, 1.0];
        let binom2 = [1.0, 2.0, 1.0];
        Self {
            m4: std::array::from_fn(|k| binom4[k] * s[k] / n),
            m2: std::array::from_fn(|k| binom2[k] * t[k] / n),
        }
    }

    fn contrast(&self, alpha: f64) -> f64 {
        let m2 = poly::eval(&self.m2, alpha);
        let m4 = poly::eval(&self.m4, alpha);
        if !(m2 > 0.0) {
            return 0.0;
        }
        (m4 / (m2 * m2) - 3.0).abs()
    }

    /// Numerator of d/dα kurt, with a magnitude bound per coefficient.
    fn stationarity_polynomial(&self) -> (Vec<f64>, Vec<f64>) {
        let d4 = poly::derivative(&self.m4);
        let d2 = poly::derivative(&self.m2);
        let lhs = poly::mul(&d4, &self.m2);
        let rhs = poly::mul(&self.m4, &d2);
        let abs = |p: &[f64]| p.iter().map(|v| v.abs()).collect::<Vec<_>>();
        let lhs_b = poly::mul(&abs(&d4), &abs(&self.m2));
        let rhs_b = poly::mul(&abs(&self.m4), &abs(&d2));
        let len = lhs.len().max(rhs.len());
        let get = |p: &[f64], k: usize| p.get(k).copied().unwrap_or(0.0);
        let coeffs = (0..len).map(|k| get(&lhs, k) - 2.0 * get(&rhs, k)).collect();
        let bounds = (0..len).map(|k| get(&lhs_b, k) + 2.0 * get(&rhs_b, k)).collect();
        (coeffs, bounds)
    }
}

/// Grid used when the stationarity quartic has no real root.
const FALLBACK_RANGE: f64 = 10.0;
const FALLBACK_STEP: f64 = 1e-3;

/// Step size maximizing `|kurt(w + alpha g)|` over the whitened rows of `x`.
///
/// Candidates are `alpha = 0` and the real roots of the stationarity
/// quartic. If the contrast is flat along the line the step is 0.
pub fn optimal_step(w: &[f64], g: &[f64], x: &DMatrix<f64>) -> Result<Step> {
    if w.len() != x.ncols() || g.len() != x.ncols() {
        return Err(invalid("weight, direction and data dimensions differ"));
    }
    if g.iter().all(|v| *v == 0.0) {
        return Err(invalid("search direction is zero"));
    }
    let a = x * DVector::from_column_slice(w);
    let b = x * DVector::from_column_slice(g);
    let lm = LineMoments::new(&a, &b);
    Ok(step_from_moments(&lm))
}

fn step_from_moments(lm: &LineMoments) -> Step {
    let (mut coeffs, bounds) = lm.stationarity_polynomial();
    for (c, b) in coeffs.iter_mut().zip(&bounds) {
        if c.abs() <= 1e-12 * b {
            *c = 0.0;
        }
    }
    let zero = Step {
        alpha: 0.0,
        contrast: lm.contrast(0.0),
        used_fallback: false,
    };
    if coeffs.iter().all(|&c| c == 0.0) {
        return zero;
    }
    let roots = poly::real_roots(&coeffs);
    if roots.is_empty() {
        log::debug!("optimal step: no real root of the stationarity quartic, using grid search");
        let count = (2.0 * FALLBACK_RANGE / FALLBACK_STEP).round() as usize;
        let best = (0..=count)
            .map(|i| -FALLBACK_RANGE + i as f64 * FALLBACK_STEP)
            .map(|alpha| (alpha, lm.contrast(alpha)))
            .fold((0.0, zero.contrast), |acc, c| if c.1 > acc.1 { c } else { acc });
        return Step {
            alpha: best.0,
            contrast: best.1,
            used_fallback: true,
        };
    }
    roots
        .into_iter()
        .map(|alpha| Step {
            alpha,
            contrast: lm.contrast(alpha),
            used_fallback: false,
        })
        .fold(zero, |best, s| if s.contrast > best.contrast { s } else { best })
}

/// Gradient of `kurt(w)` for whitened rows `x` (zero-mean).
pub fn kurtosis_gradient(w: &[f64], x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    let y = x * DVector::from_column_slice(w);
    let m2 = y.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = y.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let y3 = y.map(|v| v * v * v);
    let e_y3x = x.tr_mul(&y3) / n;
    let e_yx = x.tr_mul(&y) / n;
    (e_y3x - e_yx * (m4 / m2)) * (4.0 / (m2 * m2))
}

/// Kurtosis contrast of `w` on whitened rows `x`.
pub fn contrast(w: &[f64], x: &DMatrix<f64>) -> f64 {
    let y = x * DVector::from_column_slice(w);
    let n = x.nrows() as f64;
    let m2 = y.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = y.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    (m4 / (m2 * m2) - 3.0).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Whitening followed by an unmixing rotation; rows of `unmixing` are the
/// extracted weight vectors in extraction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    pub whitening: Whitening,
    #[serde(with = "row_major")]
    pub unmixing: DMatrix<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl IcaModel {
    pub fn components(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// `W * whitening * (y - means)`.
    pub fn transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.whitening.means.len() {
            return Err(invalid(format!(
                "input has dimension {}, expected {}",
                y.len(),
                self.whitening.means.len()
            )));
        }
        Ok((&self.unmixing * self.whitening.apply(y)).iter().copied().collect())
    }
}

/// Per-component contrast values recorded after every update.
pub type ContrastTrace = Vec<Vec<f64>>;

pub fn robust_ica_fit(y: &DMatrix<f64>, config: &IcaConfig) -> Result<IcaModel> {
    robust_ica_fit_traced(y, config).map(|(m, _)| m)
}

pub fn robust_ica_fit_traced(y: &DMatrix<f64>, config: &IcaConfig) -> Result<(IcaModel, ContrastTrace)> {
    let (white, whitening) = whiten(y)?;
    let q = white.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(q);
    let mut converged = Vec::with_capacity(q);
    let mut iterations = Vec::with_capacity(q);
    let mut trace = Vec::with_capacity(q);

    let deflate = |v: &mut DVector<f64>, previous: &[DVector<f64>]| {
        for p in previous {
            let c = p.dot(v);
            v.axpy(-c, p, 1.0);
        }
    };

    for _ in 0..q {
        let mut w = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
        deflate(&mut w, &rows);
        w.normalize_mut();
        let mut history = vec![contrast(w.as_slice(), &white)];
        let mut done = false;
        let mut iters = 0;
        while iters < config.max_iter {
            iters += 1;
            let mut g = kurtosis_gradient(w.as_slice(), &white);
            deflate(&mut g, &rows);
            if g.norm() <= 1e-14 {
                done = true;
                break;
            }
            let step = optimal_step(w.as_slice(), g.as_slice(), &white)?;
            let mut next = &w + &g * step.alpha;
            deflate(&mut next, &rows);
            next.normalize_mut();
            let sign = if next.dot(&w) < 0.0 { -1.0 } else { 1.0 };
            let change = (&next - &w * sign).norm();
            w = next;
            history.push(contrast(w.as_slice(), &white));
            if change < config.tol {
                done = true;
                break;
            }
        }
        if !done {
            log::debug!("ICA component {} did not converge in {} iterations", rows.len(), config.max_iter);
        }
        converged.push(done);
        iterations.push(iters);
        trace.push(history);
        rows.push(w);
    }

    let unmixing = DMatrix::from_fn(q, q, |i, j| rows[i][j]);
    Ok((
        IcaModel {
            whitening,
            unmixing,
            converged,
            iterations,
        },
        trace,
    ))
}

pub fn ica_transform(m: &IcaModel, y: &[f64]) -> Result<Vec<f64>> {
    m.transform(y)
}
