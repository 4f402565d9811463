//! Derivative-free simplex minimization (Nelder-Mead with the adaptive
//! coefficients of Gao & Han). The equipartition residual is continuous
//! but only piecewise smooth across cell-combinatorics changes, which is
//! exactly the regime where a simplex method stays serviceable.

/// Options for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex radius around the starting point.
    pub initial_step: f64,
    /// Total objective-evaluation budget (across restarts).
    pub max_evals: usize,
    /// Stop as soon as the objective falls to this value or below.
    pub target: f64,
    /// Converged when the simplex function spread falls below this.
    pub f_tol: f64,
    /// Converged when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Restarts with a shrunken simplex around the incumbent best.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            max_evals: 20_000,
            target: 0.0,
            f_tol: 1e-18,
            x_tol: 1e-12,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
}

pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let mut best_x = x0.to_vec();
    let mut best_f = f(x0);
    let mut evals = 1usize;
    let mut step = opts.initial_step;

    for _ in 0..=opts.restarts {
        let run = minimize_once(f, &best_x, best_f, step, opts, &mut evals);
        let improved = run.1 < best_f * (1.0 - 1e-12) - f64::MIN_POSITIVE;
        if run.1 < best_f {
            best_x = run.0;
            best_f = run.1;
        }
        if best_f <= opts.target || evals >= opts.max_evals {
            break;
        }
        // adaptive restart radius: zoom in after progress, zoom back out
        // after a stall — piecewise-constant objectives (e.g. rasterized
        // masses) exit early on plateaus wider than the collapsed simplex,
        // and only a larger simplex can step across them
        if improved {
            step *= 0.25;
        } else {
            step = (step * 4.0).min(opts.initial_step);
        }
    }
    NelderMeadResult {
        x: best_x,
        fx: best_f,
        evals,
    }
}

fn minimize_once(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    f0: f64,
    step: f64,
    opts: &NelderMeadOptions,
    evals: &mut usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    // adaptive coefficients (Gao & Han)
    let n = dim as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / n;
    let gamma = 0.75 - 1.0 / (2.0 * n);
    let delta = 1.0 - 1.0 / n;

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        *evals += 1;
        simplex.push((x, fx));
    }

    while *evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let (best_f, worst_f) = (simplex[0].1, simplex[dim].1);
        if best_f <= opts.target || (worst_f - best_f).abs() <= opts.f_tol {
            break;
        }
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter <= opts.x_tol {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|(x, _)| x[k]).sum::<f64>() / n)
            .collect();
        let worst = simplex[dim].clone();

        let at = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = at(alpha);
        let fr = f(&xr);
        *evals += 1;

        if fr < simplex[0].1 {
            // try expanding
            let xe = at(alpha * beta);
            let fe = f(&xe);
            *evals += 1;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            // contraction, outside or inside of the reflection
            let (xc, fc) = if fr < worst.1 {
                let xc = at(alpha * gamma);
                let fc = f(&xc);
                *evals += 1;
                (xc, fc)
            } else {
                let xc = at(-gamma);
                let fc = f(&xc);
                *evals += 1;
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for (xi, bi) in v.0.iter_mut().zip(&best) {
                        *xi = bi + delta * (*xi - bi);
                    }
                    v.1 = f(&v.0);
                    *evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex.swap_remove(0).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let mut f = |x: &[f64]| x.iter().map(|v| (v - 1.5) * (v - 1.5)).sum::<f64>();
        let r = nelder_mead(&mut f, &[0.0; 4], &NelderMeadOptions::default());
        assert!(r.fx < 1e-12, "fx = {}", r.fx);
        for v in r.x {
            assert!((v - 1.5).abs() < 1e-6);
        }
    }

    #[test]
    fn minimizes_rosenbrock_2d() {
        let mut f = |x: &[f64]| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let opts = NelderMeadOptions {
            max_evals: 50_000,
            restarts: 6,
            ..Default::default()
        };
        let r = nelder_mead(&mut f, &[-1.2, 1.0], &opts);
        assert!(r.fx < 1e-10, "fx = {}", r.fx);
    }

    #[test]
    fn respects_target_early_exit() {
        let mut count = 0usize;
        let mut f = |x: &[f64]| {
            count += 1;
            x[0] * x[0] + x[1] * x[1]
        };
        let opts = NelderMeadOptions {
            target: 1e-2,
            ..Default::default()
        };
        let r = nelder_mead(&mut f, &[1.0, 1.0], &opts);
        assert!(r.fx <= 1e-2);
        assert!(r.evals < 2_000);
    }
}
