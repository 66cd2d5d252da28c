//! Derivative-free simplex minimizer (Nelder & Mead, 1965).

#[derive(Debug, Clone)]
pub(crate) struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop once `f(worst) - f(best)` across the simplex falls to this.
    pub f_tolerance: f64,
    pub initial_step: f64,
    /// Fresh simplexes built around the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            f_tolerance: 1e-8,
            initial_step: 0.5,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` from `x0`. Non-finite objective values are treated as +∞.
pub(crate) fn minimize<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best = run(&eval, x0, opts, opts.max_iterations);
    let mut restarts = 0;
    while best.converged && restarts < opts.restarts {
        let budget = opts.max_iterations.saturating_sub(best.iterations);
        if budget == 0 {
            break;
        }
        let next = run(&eval, &best.x, opts, budget);
        let improved = best.f - next.f > opts.f_tolerance;
        let iterations = best.iterations + next.iterations;
        if next.f < best.f {
            best = Minimum { iterations, ..next };
        } else {
            best.iterations = iterations;
            best.converged = next.converged;
        }
        if !improved {
            break;
        }
        restarts += 1;
    }
    best
}

fn run<F>(eval: &F, x0: &[f64], opts: &NelderMeadOptions, max_iterations: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        // Stable ordering keeps the search path deterministic under ties.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if (values[n] - values[0]).abs() <= opts.f_tolerance {
            converged = true;
            break;
        }
        if iterations >= max_iterations {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(REFLECT);
        let f_r = eval(&reflected);
        if f_r < values[0] {
            let expanded = along(EXPAND);
            let f_e = eval(&expanded);
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
            continue;
        }
        if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
            continue;
        }

        let (contracted, f_c) = if f_r < values[n] {
            let c = along(CONTRACT);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-CONTRACT);
            let fc = eval(&c);
            (c, fc)
        };
        if f_c < values[n].min(f_r) {
            simplex[n] = contracted;
            values[n] = f_c;
            continue;
        }

        let best = simplex[0].clone();
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = best[j] + SHRINK * (simplex[i][j] - best[j]);
            }
            values[i] = eval(&simplex[i]);
        }
    }

    Minimum {
        x: simplex[0].clone(),
        f: values[0],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let m = minimize(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-3);
        assert!((m.x[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let opts = NelderMeadOptions {
            f_tolerance: 1e-14,
            ..Default::default()
        };
        let m = minimize(f, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let f = |x: &[f64]| x[0] * x[0] + x[1] * x[1];
        let opts = NelderMeadOptions {
            max_iterations: 3,
            f_tolerance: 0.0,
            ..Default::default()
        };
        let m = minimize(f, &[5.0, 5.0], &opts);
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }

    #[test]
    fn nan_is_treated_as_infinite() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.3).powi(2)
            }
        };
        let m = minimize(f, &[1.0], &NelderMeadOptions::default());
        assert!((m.x[0] - 0.3).abs() < 1e-3);
    }
}
