//! Ground-acceleration histories: ambient white noise and broadband events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExcitationKind {
    /// Zero-mean white Gaussian noise with standard deviation `std_g` (g).
    Ambient { std_g: f64 },
    /// A train of `pulses` Ricker wavelets per direction, scaled to peak
    /// ground accelerations `pga_g` (g) and followed by `tail_seconds` of
    /// rest so the free response is captured.
    Event {
        pga_g: [f64; 2],
        pulses: usize,
        tail_seconds: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    /// Covered time span, s; the history has `duration * sample_rate + 1` samples.
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl ExcitationSpec {
    pub fn ambient(duration: f64, seed: u64) -> Self {
        Self {
            kind: ExcitationKind::Ambient { std_g: 1e-4 },
            duration,
            sample_rate: 100.0,
            seed,
        }
    }

    pub fn event(pga_g: [f64; 2], seed: u64) -> Self {
        Self {
            kind: ExcitationKind::Event {
                pga_g,
                pulses: 8,
                tail_seconds: 10.0,
            },
            duration: 30.0,
            sample_rate: 100.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid(format!("duration must be positive, got {}", self.duration)));
        }
        match self.kind {
            ExcitationKind::Ambient { std_g } if !(std_g > 0.0 && std_g.is_finite()) => {
                Err(invalid(format!("ambient standard deviation must be positive, got {std_g}")))
            }
            ExcitationKind::Event {
                pga_g,
                pulses,
                tail_seconds,
            } => {
                if pga_g.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(invalid("peak ground accelerations must be non-negative"));
                }
                if pulses == 0 || !(0.0..self.duration).contains(&tail_seconds) {
                    return Err(invalid("an event needs at least one pulse and a tail shorter than its duration"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize + 1
    }

    /// Ground acceleration in g for directions 1 and 2.
    pub fn ground_motion(&self) -> Result<[Vec<f64>; 2]> {
        self.validate()?;
        let n = self.samples();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(match self.kind {
            ExcitationKind::Ambient { std_g } => {
                let normal = Normal::new(0.0, std_g).map_err(|e| invalid(e.to_string()))?;
                std::array::from_fn(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
            }
            ExcitationKind::Event {
                pga_g,
                pulses,
                tail_seconds,
            } => {
                let active = self.duration - tail_seconds;
                std::array::from_fn(|d| {
                    let mut a = pulse_train(&mut rng, n, self.sample_rate, active, pulses);
                    let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let scale = if peak > 0.0 { pga_g[d] / peak } else { 0.0 };
                    a.iter_mut().for_each(|v| *v *= scale);
                    a
                })
            }
        })
    }
}

/// Ricker wavelet with peak frequency `f` Hz centred at 0.
pub fn ricker(t: f64, f: f64) -> f64 {
    let x = (std::f64::consts::PI * f * t).powi(2);
    (1.0 - 2.0 * x) * (-x).exp()
}

/// Sum of Ricker pulses with random centres in `[0, active]`, peak
/// frequencies log-uniform in 1 to 10 Hz and random signed amplitudes.
fn pulse_train(rng: &mut ChaCha8Rng, n: usize, fs: f64, active: f64, pulses: usize) -> Vec<f64> {
    let params: Vec<(f64, f64, f64)> = (0..pulses)
        .map(|_| {
            let f = 10f64.powf(rng.random_range(0.0..1.0));
            // Keep the wavelet inside the active window.
            let half = 1.5 / f;
            let centre = if active > 2.0 * half {
                rng.random_range(half..active - half)
            } else {
                active / 2.0
            };
            let amp = rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (centre, f, amp)
        })
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            params.iter().map(|&(c, f, a)| a * ricker(t - c, f)).sum()
        })
        .collect()
}
