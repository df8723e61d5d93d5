//! Unconstrained minimizers used by the likelihood fits.
//!
//! Callers handle bounds by reparameterizing (log / logit), so everything here
//! works on free real vectors.

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient.
pub(crate) fn numerical_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian.
pub(crate) fn numerical_hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    let steps: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    let mut p = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        for j in i..n {
            let (hi, hj) = (steps[i], steps[j]);
            let value = if i == j {
                p[i] = x[i] + hi;
                let up = f(&p);
                p[i] = x[i] - hi;
                let down = f(&p);
                p[i] = x[i];
                (up - 2.0 * f0 + down) / (hi * hi)
            } else {
                let mut eval = |di: f64, dj: f64| {
                    p[i] = x[i] + di;
                    p[j] = x[j] + dj;
                    let v = f(&p);
                    p[i] = x[i];
                    p[j] = x[j];
                    v
                };
                (eval(hi, hj) - eval(hi, -hj) - eval(-hi, hj) + eval(-hi, -hj)) / (4.0 * hi * hj)
            };
            hess[i][j] = value;
            hess[j][i] = value;
        }
    }
    hess
}

/// BFGS with a backtracking Armijo line search and numerical gradients.
///
/// Stops when an accepted step improves the objective by less than `tol`.
pub(crate) fn bfgs(f: impl Fn(&[f64]) -> f64, x0: &[f64], tol: f64, max_iter: usize) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = numerical_gradient(&f, &x);
    let mut h_inv = identity(n);
    let mut restarted = false;

    for iter in 1..=max_iter {
        let mut dir: Vec<f64> = mat_vec(&h_inv, &g).iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            h_inv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            // Line search failed: retry once from steepest descent, otherwise
            // we are at the resolution limit of the numerical gradient.
            if !restarted {
                restarted = true;
                h_inv = identity(n);
                continue;
            }
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        };
        restarted = false;

        let improvement = fx - f_new;
        let g_new = numerical_gradient(&f, &x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            // H+ = (I - rho s y') H (I - rho y s') + rho s s'
            let rho = 1.0 / sy;
            let hy = mat_vec(&h_inv, &y);
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;

        if improvement < tol {
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: max_iter,
        converged: false,
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = bfgs(rosen, &[-1.2, 1.0], 1e-14, 2000);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn golden_section_quadratic() {
        let x = golden_section(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn hessian_of_quadratic_form() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + x[1] * x[1];
        let h = numerical_hessian(&f, &[0.5, -0.25]);
        assert!((h[0][0] - 6.0).abs() < 1e-5);
        assert!((h[0][1] - 2.0).abs() < 1e-5);
        assert!((h[1][1] - 2.0).abs() < 1e-5);
    }
}
