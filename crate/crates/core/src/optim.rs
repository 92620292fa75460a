//! Bounded Nelder–Mead simplex search with seeded multistart.
//!
//! Points are projected onto the box after every move, so the search never
//! evaluates the objective outside the bounds. Objectives signal failure by
//! returning a non-finite value, which is treated as `+inf`.

use rand::Rng as _;
use rayon::prelude::*;

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Bound { lo, hi }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values across the simplex falls below this.
    pub f_tol: f64,
    /// Stop when every simplex edge from the best vertex is shorter than this.
    pub x_tol: f64,
    /// Initial simplex step as a fraction of each bound's width.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 2000, f_tol: 1e-10, x_tol: 1e-6, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `f` over the box `bounds` starting from `x0`.
pub fn nelder_mead<F>(f: F, x0: &[f64], bounds: &[Bound], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(n, bounds.len(), "one bound per dimension");
    let project = |x: &mut Vec<f64>| {
        for (v, b) in x.iter_mut().zip(bounds) {
            *v = b.clamp(*v);
        }
    };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(f(x))
    };

    let mut start = x0.to_vec();
    project(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut p = start.clone();
        let step = opts.initial_step * bounds[i].width().max(1e-12);
        // step toward the interior when the start sits on the upper bound
        p[i] = if p[i] + step <= bounds[i].hi { p[i] + step } else { p[i] - step };
        project(&mut p);
        let fp = eval(&p);
        simplex.push((p, fp));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals.get() < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = if best.is_finite() && worst.is_finite() { (worst - best).abs() } else { f64::INFINITY };
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol) || size <= 1e-3 * opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut x: Vec<f64> =
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + coef * (c - w)).collect();
            project(&mut x);
            x
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best_x.iter().zip(&item.0).map(|(b, v)| b + sigma * (v - b)).collect();
            project(&mut x);
            let fx = eval(&x);
            *item = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fbest) = simplex.swap_remove(0);
    Minimum { x, f: fbest, evals: evals.get(), converged }
}

/// Start points for a seeded multistart: uniform inside the central 80% of each bound.
/// The sequence for `k` restarts is a prefix of the sequence for any `k' > k`.
pub fn multistart_points(bounds: &[Bound], restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::rng(seed);
    (0..restarts)
        .map(|_| {
            bounds
                .iter()
                .map(|b| {
                    let u: f64 = r.random();
                    b.lo + b.width() * (0.1 + 0.8 * u)
                })
                .collect()
        })
        .collect()
}

/// Runs `nelder_mead` from every start (in parallel) and returns the best result,
/// ties resolved toward the earliest start.
pub fn multistart<F>(f: F, starts: &[Vec<f64>], bounds: &[Bound], opts: &NelderMeadOptions) -> Option<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let results: Vec<Minimum> = starts.par_iter().map(|s| nelder_mead(&f, s, bounds, opts)).collect();
    let mut best: Option<Minimum> = None;
    for m in results {
        if !m.f.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let b = vec![Bound::new(-3.0, 3.0); 2];
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &b, &NelderMeadOptions { max_evals: 5000, ..Default::default() });
        assert!(m.f < 1e-8, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn respects_bounds() {
        let b = vec![Bound::new(2.0, 5.0), Bound::new(-1.0, 1.0)];
        let m = nelder_mead(|x| x[0] * x[0] + (x[1] - 3.0).powi(2), &[4.0, 0.0], &b, &Default::default());
        assert!((m.x[0] - 2.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn non_finite_objective_treated_as_infinite() {
        let b = vec![Bound::new(-2.0, 2.0); 2];
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) + x[1] * x[1] };
        let m = nelder_mead(f, &[0.5, 0.5], &b, &Default::default());
        assert!(m.f < 1e-8);
    }

    #[test]
    fn multistart_prefix_property() {
        let b = vec![Bound::new(-5.0, 5.0); 2];
        let s1 = multistart_points(&b, 1, 9);
        let s8 = multistart_points(&b, 8, 9);
        assert_eq!(s1[0], s8[0]);
        let f = |x: &[f64]| (x[0].sin() * 3.0 + x[1] * x[1] * 0.1 + x[0] * 0.05).abs();
        let m1 = multistart(f, &s1, &b, &Default::default()).unwrap();
        let m8 = multistart(f, &s8, &b, &Default::default()).unwrap();
        assert!(m8.f <= m1.f + 1e-12);
    }
}
