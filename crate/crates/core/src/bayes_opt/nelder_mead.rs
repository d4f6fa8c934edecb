//! Box-constrained Nelder-Mead used for the inner searches of the optimizer.
//!
//! Trial points are projected onto the box, which keeps the simplex feasible
//! without penalty terms. Good enough for the low-dimensional, smooth inner
//! problems (acquisition and hyperparameter fitting).

#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Stop when the simplex value spread falls below this.
    pub f_tol: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            max_evals: 200,
            f_tol: 1e-10,
            initial_step: 0.1,
        }
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` from `start` inside `bounds`. Returns `(x, f(x))`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    bounds: &[(f64, f64)],
    opts: &NmOptions,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut x0 = start.to_vec();
    project(&mut x0, bounds);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..d {
        let (lo, hi) = bounds[i];
        let step = opts.initial_step * (hi - lo);
        let mut x = x0.clone();
        // Step inward if the start sits on the upper bound.
        x[i] = if x[i] + step <= hi { x[i] + step } else { x[i] - step };
        project(&mut x, bounds);
        let v = eval(&x);
        simplex.push((x, v));
    }
    let mut evals = d + 1;

    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        if (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|p| p.0[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (w - c))
                .collect();
            project(&mut x, bounds);
            x
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            evals += 1;
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> = x_best.iter().zip(&p.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    project(&mut x, bounds);
                    p.1 = eval(&x);
                    p.0 = x;
                }
                evals += d;
            }
        }
    }
    simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex is never empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum_inside_the_box() {
        let (x, v) = minimize(
            |x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.2).powi(2),
            &[0.9, 0.9],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &NmOptions {
                max_evals: 500,
                ..Default::default()
            },
        );
        assert!((x[0] - 0.3).abs() < 1e-4 && (x[1] + 0.2).abs() < 1e-4, "{x:?}");
        assert!(v < 1e-8);
    }

    #[test]
    fn minimum_on_the_boundary() {
        let (x, _) = minimize(|x| x[0], &[0.5], &[(0.0, 1.0)], &NmOptions::default());
        assert!(x[0].abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let (x, _) = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[(-2.0, 2.0), (-2.0, 2.0)],
            &NmOptions {
                max_evals: 2000,
                f_tol: 1e-14,
                ..Default::default()
            },
        );
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 1.0).abs() < 1e-3, "{x:?}");
    }
}
