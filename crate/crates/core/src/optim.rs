//! Quasi-Newton minimization with finite-difference gradients.

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Stop when the sup-norm of the gradient falls below this.
    pub gtol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Longest step allowed in any coordinate.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-8,
            max_iter: 1000,
            fd_step: 1e-6,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking. Never accepts a step that increases `f`,
/// so the returned value is at most `f(x0)`.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 {
        return Minimum {
            x,
            value: fx,
            converged: true,
        };
    }
    let mut g = gradient(&f, &x, opts.fd_step);
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut first = true;

    for _ in 0..opts.max_iter {
        if !fx.is_finite() {
            break;
        }
        if sup(&g) < opts.gtol {
            return Minimum {
                x,
                value: fx,
                converged: true,
            };
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        if dot(&d, &g) >= 0.0 {
            reset(&mut h, 1.0);
            d = g.iter().map(|v| -v).collect();
        }
        let longest = sup(&d);
        if longest > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / longest);
        }
        let slope = dot(&d, &g);
        let mut alpha = 1.0;
        let mut next = None;
        while alpha > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                next = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = next else {
            // no descent possible at working precision
            return Minimum {
                converged: sup(&g) < opts.gtol * 1e3,
                x,
                value: fx,
            };
        };
        let g_new = gradient(&f, &x_new, opts.fd_step);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 {
            if first {
                reset(&mut h, sy / dot(&y, &y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    Minimum {
        converged: sup(&g) < opts.gtol,
        x,
        value: fx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = bfgs(f, &[-1.2, 1.0], &BfgsOptions { gtol: 1e-6, ..Default::default() });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn quadratic_and_monotone() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + x[0] * x[1];
        let x0 = [10.0, 10.0];
        let m = bfgs(f, &x0, &BfgsOptions::default());
        assert!(m.value <= f(&x0));
        // stationary point of the quadratic
        let (a, b) = (4.0, -2.0);
        assert!((m.x[0] - a).abs() < 1e-6 && (m.x[1] - b).abs() < 1e-6);
    }
}
