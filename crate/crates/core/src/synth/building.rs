//! Linear shear-building model integrated with Newmark's average-acceleration
//! method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::material::stiffness_scale;
use crate::error::{invalid, Error, Result};

/// Standard gravity, m/s².
pub const G: f64 = 9.80665;
/// Peak inter-story drift ratio above which a story counts as damaged.
pub const DRIFT_LIMIT: f64 = 0.005;

const BETA: f64 = 0.25;
const GAMMA: f64 = 0.5;

/// A multi-story shear building with independent principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingSpec {
    /// Floor masses from the first floor up, kg.
    pub masses: Vec<f64>,
    /// Story stiffnesses at 20 °C for directions 1 and 2, N/m.
    pub stiffness: [Vec<f64>; 2],
    pub damping_ratio: f64,
    /// Story height, m.
    pub story_height: f64,
    /// Concrete compressive strength at 20 °C, MPa.
    pub fc: f64,
    /// Per-story stiffness multipliers in (0, 1].
    pub damage: Vec<f64>,
}

impl Default for BuildingSpec {
    fn default() -> Self {
        Self {
            masses: vec![3.0e4, 3.0e4, 2.5e4],
            stiffness: [vec![6.0e7, 5.0e7, 4.0e7], vec![5.1e7, 4.25e7, 3.4e7]],
            damping_ratio: 0.05,
            story_height: 3.66,
            fc: 28.0,
            damage: vec![1.0; 3],
        }
    }
}

impl BuildingSpec {
    pub fn stories(&self) -> usize {
        self.masses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(invalid("building has no stories"));
        }
        if self.stiffness.iter().any(|k| k.len() != n) || self.damage.len() != n {
            return Err(invalid(format!(
                "masses, stiffnesses and damage factors must all have {n} entries"
            )));
        }
        if self.masses.iter().chain(self.stiffness.iter().flatten()).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("masses and stiffnesses must be positive"));
        }
        if let Some(d) = self.damage.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return Err(invalid(format!("damage factor {d} is outside (0, 1]")));
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 1.0) {
            return Err(invalid(format!("damping ratio {} is outside (0, 1)", self.damping_ratio)));
        }
        if !(self.story_height > 0.0) || !(self.fc > 0.0) {
            return Err(invalid("story height and concrete strength must be positive"));
        }
        Ok(())
    }

    /// Effective story stiffnesses in `direction` (0 or 1) at `tau` °C.
    pub fn story_stiffness(&self, direction: usize, tau: f64) -> Result<Vec<f64>> {
        let scale = stiffness_scale(self.fc, tau)?;
        Ok(self.stiffness[direction]
            .iter()
            .zip(&self.damage)
            .map(|(k, d)| k * scale * d)
            .collect())
    }

    /// The integrator for one direction at `tau` °C and time step `dt`.
    pub fn direction_model(&self, direction: usize, tau: f64, dt: f64) -> Result<ShearModel> {
        self.validate()?;
        ShearModel::new(&self.masses, &self.story_stiffness(direction, tau)?, self.damping_ratio, dt)
    }
}

/// Tridiagonal shear-building stiffness matrix.
pub fn stiffness_matrix(story_k: &[f64]) -> DMatrix<f64> {
    let n = story_k.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] += story_k[i];
        if i + 1 < n {
            k[(i, i)] += story_k[i + 1];
            k[(i, i + 1)] -= story_k[i + 1];
            k[(i + 1, i)] -= story_k[i + 1];
        }
    }
    k
}

/// Undamped natural circular frequencies (rad/s), ascending.
pub fn natural_frequencies(masses: &[f64], story_k: &[f64]) -> Result<Vec<f64>> {
    let k = stiffness_matrix(story_k);
    let inv_sqrt_m = DVector::from_iterator(masses.len(), masses.iter().map(|m| 1.0 / m.sqrt()));
    let a = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| inv_sqrt_m[i] * k[(i, j)] * inv_sqrt_m[j]);
    let mut w2: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
    w2.sort_by(f64::total_cmp);
    if w2.first().is_none_or(|v| !(*v > 0.0)) {
        return Err(invalid("stiffness matrix is not positive definite"));
    }
    Ok(w2.iter().map(|v| v.sqrt()).collect())
}

/// Displacement, velocity and acceleration relative to the ground.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl State {
    pub fn at_rest(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
            a: vec![0.0; n],
        }
    }
}

/// `M ü + C u̇ + K u = -M 1 a_g` for one direction, with Rayleigh damping
/// matched at the first two modes.
#[derive(Debug, Clone)]
pub struct ShearModel {
    n: usize,
    dt: f64,
    masses: Vec<f64>,
    k: DMatrix<f64>,
    c: DMatrix<f64>,
    khat_inv: DMatrix<f64>,
}

impl ShearModel {
    /// `damping_ratio` may be 0 here (undamped analyses).
    pub fn new(masses: &[f64], story_k: &[f64], damping_ratio: f64, dt: f64) -> Result<Self> {
        let n = masses.len();
        if n == 0 || story_k.len() != n {
            return Err(invalid("masses and story stiffnesses must be non-empty and equally long"));
        }
        if !(dt > 0.0) || !(0.0..1.0).contains(&damping_ratio) {
            return Err(invalid("time step must be positive and damping ratio in [0, 1)"));
        }
        if masses.iter().chain(story_k).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("masses and story stiffnesses must be positive"));
        }
        let w = natural_frequencies(masses, story_k)?;
        let (w1, w2) = (w[0], *w.get(1).unwrap_or(&w[0]));
        let a0 = 2.0 * damping_ratio * w1 * w2 / (w1 + w2);
        let a1 = 2.0 * damping_ratio / (w1 + w2);
        let k = stiffness_matrix(story_k);
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(masses));
        let c = &m * a0 + &k * a1;
        let khat = &k + &c * (GAMMA / (BETA * dt)) + &m * (1.0 / (BETA * dt * dt));
        let khat_inv = khat
            .cholesky()
            .ok_or_else(|| Error::Numerical("effective stiffness is not positive definite".into()))?
            .inverse();
        Ok(Self {
            n,
            dt,
            masses: masses.to_vec(),
            k,
            c,
            khat_inv,
        })
    }

    pub fn dofs(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Sets `state.a` from equilibrium at ground acceleration `ag` (m/s²).
    pub fn equilibrate(&self, state: &mut State, ag: f64) {
        for i in 0..self.n {
            let mut f = -self.masses[i] * ag;
            for j in 0..self.n {
                f -= self.c[(i, j)] * state.v[j] + self.k[(i, j)] * state.u[j];
            }
            state.a[i] = f / self.masses[i];
        }
    }

    /// Advances one step to ground acceleration `ag_next` (m/s²).
    pub fn step(&self, state: &mut State, ag_next: f64) {
        let n = self.n;
        let dt = self.dt;
        let (a1, a2, a3) = (1.0 / (BETA * dt * dt), 1.0 / (BETA * dt), 1.0 / (2.0 * BETA) - 1.0);
        let (c1, c2, c3) = (GAMMA / (BETA * dt), GAMMA / BETA - 1.0, dt * (GAMMA / (2.0 * BETA) - 1.0));
        let mut phat = [0.0f64; 16];
        let mut tmp = [0.0f64; 16];
        let phat = if n <= 16 { &mut phat[..n] } else { unreachable_large() };
        let tmp = &mut tmp[..n];
        for i in 0..n {
            tmp[i] = c1 * state.u[i] + c2 * state.v[i] + c3 * state.a[i];
        }
        for i in 0..n {
            let mut p = -self.masses[i] * ag_next
                + self.masses[i] * (a1 * state.u[i] + a2 * state.v[i] + a3 * state.a[i]);
            for j in 0..n {
                p += self.c[(i, j)] * tmp[j];
            }
            phat[i] = p;
        }
        for i in 0..n {
            let mut u_new = 0.0;
            for j in 0..n {
                u_new += self.khat_inv[(i, j)] * phat[j];
            }
            let du = u_new - state.u[i];
            let v_new = c1 * du - c2 * state.v[i] - c3 * state.a[i];
            let a_new = a1 * du - a2 * state.v[i] - a3 * state.a[i];
            state.u[i] = u_new;
            state.v[i] = v_new;
            state.a[i] = a_new;
        }
    }

    /// Kinetic plus strain energy of the relative motion.
    pub fn energy(&self, state: &State) -> f64 {
        let u = DVector::from_column_slice(&state.u);
        let kinetic: f64 = self.masses.iter().zip(&state.v).map(|(m, v)| 0.5 * m * v * v).sum();
        kinetic + 0.5 * u.dot(&(&self.k * &u))
    }
}

#[cold]
fn unreachable_large() -> ! {
    panic!("shear models are limited to 16 stories")
}

/// Response of one direction to a ground-acceleration history.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResponse {
    /// Absolute roof acceleration, g.
    pub roof_g: Vec<f64>,
    /// Peak inter-story drift ratio per story.
    pub peak_drift: Vec<f64>,
}

/// Integrates from `state` through `ag_g` (g, one value per sample; the
/// first sample is the current instant). Returns absolute roof acceleration
/// at every sample.
pub fn integrate(model: &ShearModel, state: &mut State, ag_g: &[f64], story_height: f64) -> DirectionResponse {
    let n = model.dofs();
    let mut roof_g = Vec::with_capacity(ag_g.len());
    let mut peak = vec![0.0f64; n];
    let track = |s: &State, peak: &mut [f64]| {
        for i in 0..n {
            let below = if i == 0 { 0.0 } else { s.u[i - 1] };
            peak[i] = peak[i].max((s.u[i] - below).abs() / story_height);
        }
    };
    if let Some(&first) = ag_g.first() {
        model.equilibrate(state, first * G);
        roof_g.push(state.a[n - 1] / G + first);
        track(state, &mut peak);
    }
    for &ag in ag_g.iter().skip(1) {
        model.step(state, ag * G);
        roof_g.push(state.a[n - 1] / G + ag);
        track(state, &mut peak);
    }
    DirectionResponse {
        roof_g,
        peak_drift: peak,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiffness_matrix_layout() {
        let k = stiffness_matrix(&[3.0, 2.0, 1.0]);
        let want = DMatrix::from_row_slice(3, 3, &[5.0, -2.0, 0.0, -2.0, 3.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(k, want);
    }

    #[test]
    fn default_building_is_valid() {
        let b = BuildingSpec::default();
        b.validate().unwrap();
        let w = natural_frequencies(&b.masses, &b.stiffness[0]).unwrap();
        assert!((w[0] / (2.0 * std::f64::consts::PI) - 3.14).abs() < 0.05);
        let mut bad = b.clone();
        bad.damage[1] = 0.0;
        assert!(bad.validate().is_err());
        bad.damage[1] = 1.2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reference_temperature_is_bit_identical() {
        let b = BuildingSpec::default();
        assert_eq!(b.story_stiffness(0, 20.0).unwrap(), b.stiffness[0]);
        assert_eq!(b.story_stiffness(1, 20.0).unwrap(), b.stiffness[1]);
    }

    #[test]
    fn rayleigh_damping_matches_the_first_two_modes() {
        // Modal damping ratio φᵀCφ / (2 ω φᵀMφ) for each of the first two modes.
        let b = BuildingSpec::default();
        let model = b.direction_model(0, 20.0, 0.01).unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&b.masses));
        let inv_sqrt_m = DMatrix::from_diagonal(&DVector::from_iterator(3, b.masses.iter().map(|v| 1.0 / v.sqrt())));
        let eig = (&inv_sqrt_m * &model.k * &inv_sqrt_m).symmetric_eigen();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        for &idx in &order[..2] {
            let phi = &inv_sqrt_m * eig.eigenvectors.column(idx);
            let w = eig.eigenvalues[idx].sqrt();
            let zeta = phi.dot(&(&model.c * &phi)) / (2.0 * w * phi.dot(&(&m * &phi)));
            assert!((zeta - 0.05).abs() < 1e-12, "{zeta}");
        }
    }

    #[test]
    fn zero_ground_motion_gives_zero_response() {
        let b = BuildingSpec::default();
        let model = b.direction_model(0, 20.0, 0.01).unwrap();
        let mut s = State::at_rest(3);
        let r = integrate(&model, &mut s, &vec![0.0; 500], b.story_height);
        assert!(r.roof_g.iter().all(|v| *v == 0.0));
        assert!(r.peak_drift.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_story_period() {
        // T = 1 s: m = 1000 kg, k = 4π² m.
        let m = 1000.0;
        let k = 4.0 * std::f64::consts::PI.powi(2) * m;
        let model = ShearModel::new(&[m], &[k], 0.0, 0.01).unwrap();
        let mut s = State::at_rest(1);
        s.u[0] = 1.0;
        model.equilibrate(&mut s, 0.0);
        let mut u = vec![s.u[0]];
        for _ in 0..2000 {
            model.step(&mut s, 0.0);
            u.push(s.u[0]);
        }
        // Downward zero crossings, linearly interpolated.
        let crossings: Vec<f64> = u
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] > 0.0 && w[1] <= 0.0)
            .map(|(i, w)| (i as f64 + w[0] / (w[0] - w[1])) * 0.01)
            .collect();
        let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
        assert!((period - 1.0).abs() < 1e-3, "{period}");
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let b = BuildingSpec::default();
        let model = ShearModel::new(&b.masses, &b.stiffness[0], 0.0, 0.01).unwrap();
        let mut s = State::at_rest(3);
        s.u = vec![0.01, 0.02, 0.03];
        model.equilibrate(&mut s, 0.0);
        let e0 = model.energy(&s);
        let mut worst: f64 = 0.0;
        for _ in 0..6000 {
            model.step(&mut s, 0.0);
            worst = worst.max((model.energy(&s) - e0).abs() / e0);
        }
        assert!(worst < 1e-3, "{worst}");
    }
}
