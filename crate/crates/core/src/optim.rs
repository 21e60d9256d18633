//! Derivative-free maximizers used by the likelihood fits.

/// Result of a maximization; `evaluations` holds every point visited.
#[derive(Debug, Clone)]
pub struct Maximum<X> {
    pub x: X,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: Vec<(X, f64)>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
/// Stops when the bracket is narrower than `tol · max(1, |x|)` or after
/// `max_iter` iterations. Non-finite values count as `-∞`.
pub fn golden_section_max<F>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> Maximum<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut evals = Vec::new();
    let mut eval = |x: f64, evals: &mut Vec<(f64, f64)>| {
        let v = f(x);
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        evals.push((x, v));
        v
    };
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1, &mut evals);
    let mut f2 = eval(x2, &mut evals);
    let mut iterations = 0;
    while iterations < max_iter && (hi - lo) > tol * x1.abs().max(1.0) {
        iterations += 1;
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1, &mut evals);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2, &mut evals);
        }
    }
    let (x, value) = best(&evals);
    Maximum {
        x,
        value,
        iterations,
        evaluations: evals,
    }
}

fn best<X: Clone>(evals: &[(X, f64)]) -> (X, f64) {
    let (x, v) = evals
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one evaluation");
    (x.clone(), *v)
}

/// Nelder–Mead maximization starting from `x0` with initial simplex steps
/// `step`. Converges when the simplex spread in every coordinate falls
/// below `tol · max(1, |x|)`.
pub fn nelder_mead_max<F>(mut f: F, x0: &[f64], step: &[f64], tol: f64, max_iter: usize) -> Maximum<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evals: Vec<(Vec<f64>, f64)> = Vec::new();
    // minimize -f
    let mut eval = |x: &[f64], evals: &mut Vec<(Vec<f64>, f64)>| {
        let v = f(x);
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        evals.push((x.to_vec(), v));
        -v
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut iterations = 0;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread_ok = (0..d).all(|k| {
            let (lo, hi) = simplex
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0[k]), hi.max(p.0[k])));
            hi - lo <= tol * simplex[0].0[k].abs().max(1.0)
        });
        if spread_ok {
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|p| p.0[k]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let xs: Vec<f64> = x_best.iter().zip(&p.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let fs = eval(&xs, &mut evals);
                    *p = (xs, fs);
                }
            }
        }
    }
    let (x, value) = best(&evals);
    Maximum {
        x,
        value,
        iterations,
        evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let m = golden_section_max(|x| -(x - 1.3).powi(2), -5.0, 5.0, 1e-10, 200);
        assert!((m.x - 1.3).abs() < 1e-8);
        assert!(m.evaluations.iter().all(|e| e.1 <= m.value));
    }

    #[test]
    fn golden_respects_iteration_cap() {
        let m = golden_section_max(|x| -x * x, -1.0, 2.0, 0.0, 5);
        assert_eq!(m.iterations, 5);
        assert_eq!(m.evaluations.len(), 7);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let m = nelder_mead_max(f, &[-1.2, 1.0], &[0.5, 0.5], 1e-10, 2000);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_treats_nan_as_worst() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { -(x[0] - 2.0).powi(2) };
        let m = nelder_mead_max(f, &[1.0], &[0.5], 1e-9, 500);
        assert!((m.x[0] - 2.0).abs() < 1e-6);
    }
}
