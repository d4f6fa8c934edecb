//! Real polynomials with ascending coefficients and companion-matrix roots.

use nalgebra::{Complex, DMatrix};

/// Product of two ascending-coefficient polynomials.
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn derivative(a: &[f64]) -> Vec<f64> {
    a.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

pub fn eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// All complex roots of `coeffs` (ascending). Leading coefficients that are
/// exactly zero are dropped first; a constant polynomial has no roots.
pub fn roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let Some(top) = coeffs.iter().rposition(|&c| c != 0.0) else {
        return Vec::new();
    };
    let c = &coeffs[..=top];
    let degree = top;
    if degree == 0 {
        return Vec::new();
    }
    // Companion matrix of the monic polynomial.
    let lead = c[degree];
    let mut comp = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        comp[(i, degree - 1)] = -c[i] / lead;
    }
    comp.complex_eigenvalues().iter().copied().collect()
}

/// Real roots of `coeffs`: eigenvalues whose imaginary part is below
/// `1e-8 * max(1, |re|)`, refined by a few Newton steps.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let d = derivative(coeffs);
    roots(coeffs)
        .into_iter()
        .filter(|z| z.im.abs() < 1e-8 * z.re.abs().max(1.0))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..3 {
                let fx = eval(coeffs, x);
                let dx = eval(&d, x);
                if dx == 0.0 {
                    break;
                }
                let next = x - fx / dx;
                if !next.is_finite() || eval(coeffs, next).abs() >= fx.abs() {
                    break;
                }
                x = next;
            }
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_roots(mut got: Vec<f64>, mut want: Vec<f64>) {
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got.len(), want.len(), "{got:?} vs {want:?}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn quartic_with_four_real_roots() {
        // (x-1)(x+2)(x-3)(x+0.5)
        let p = mul(&mul(&[-1.0, 1.0], &[2.0, 1.0]), &mul(&[-3.0, 1.0], &[0.5, 1.0]));
        assert_roots(real_roots(&p), vec![1.0, -2.0, 3.0, -0.5]);
    }

    #[test]
    fn complex_pairs_are_filtered() {
        // (x^2 + 1)(x - 2)(x + 4)
        let p = mul(&[1.0, 0.0, 1.0], &mul(&[-2.0, 1.0], &[4.0, 1.0]));
        assert_roots(real_roots(&p), vec![2.0, -4.0]);
        assert!(real_roots(&mul(&[1.0, 0.0, 1.0], &[4.0, 0.0, 1.0])).is_empty());
    }

    #[test]
    fn degree_drops_on_zero_leading_coefficients() {
        assert_roots(real_roots(&[-6.0, 1.0, 1.0, 0.0, 0.0]), vec![2.0, -3.0]);
        assert!(real_roots(&[5.0, 0.0]).is_empty());
        assert!(real_roots(&[0.0, 0.0]).is_empty());
    }

    #[test]
    fn derivative_and_eval() {
        let p = [1.0, -2.0, 0.0, 3.0];
        assert_eq!(derivative(&p), vec![-2.0, 0.0, 9.0]);
        assert_eq!(eval(&p, 2.0), 1.0 - 4.0 + 24.0);
    }
}
