//! Derivative-free minimization (Nelder–Mead simplex with restarts).

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Edge length of the first simplex.
    pub initial_step: f64,
    /// Stop a pass when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Stop a pass when the spread of function values falls below this.
    pub f_tol: f64,
    pub max_evals: usize,
    /// Restarts from the incumbent with a fresh simplex, each with a step
    /// one decade smaller, while they keep improving.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            x_tol: 1e-13,
            f_tol: 1e-16,
            max_evals: 20_000,
            restarts: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` starting from `x0`.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: NelderMeadOptions) -> Minimum {
    let mut best = Minimum {
        x: x0.to_vec(),
        value: f(x0),
        evals: 1,
    };
    let mut step = opts.initial_step;
    for pass in 0..=opts.restarts {
        let budget = opts.max_evals.saturating_sub(best.evals);
        if budget == 0 {
            break;
        }
        let (x, value, evals) = single_pass(&f, &best.x, step, opts, budget);
        best.evals += evals;
        let improved = value < best.value;
        if improved {
            best.x = x;
            best.value = value;
        }
        if pass > 0 && !improved {
            break;
        }
        step *= 0.1;
    }
    best
}

fn single_pass(
    f: &impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    opts: NelderMeadOptions,
    budget: usize,
) -> (Vec<f64>, f64, usize) {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;

    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
    };

    while evals < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter <= opts.x_tol || (values[n] - values[0]).abs() <= opts.f_tol {
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }

        let reflected = combine(&centroid, &simplex[n], -REFLECT);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = combine(&centroid, &simplex[n], -EXPAND);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = combine(&centroid, &reflected, CONTRACT);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = combine(&centroid, &simplex[n], CONTRACT);
            let fc = f(&c);
            (c, fc)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            simplex[i] = combine(&simplex[0], &simplex[i], SHRINK);
            values[i] = f(&simplex[i]);
        }
        evals += n;
    }

    let (idx, &value) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .expect("simplex is nonempty");
    (simplex[idx].clone(), value, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let m = nelder_mead(f, &[5.0, 5.0], NelderMeadOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-6);
        assert!((m.x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn nonsmooth_max_of_planes() {
        let f = |x: &[f64]| (x[0] + x[1]).abs().max((x[0] - x[1] - 1.0).abs());
        let m = nelder_mead(f, &[3.0, -4.0], NelderMeadOptions::default());
        assert!(m.value < 1e-8, "value {}", m.value);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], NelderMeadOptions::default());
        assert!(m.value < 1e-12, "value {}", m.value);
    }
}
