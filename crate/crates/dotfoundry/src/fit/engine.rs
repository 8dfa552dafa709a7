//! Damped Gauss-Newton iteration and the small dense linear algebra it
//! needs. Problems here have at most four parameters, so plain
//! partial-pivot elimination is plenty.

use super::{FitError, FitResult, ModelSpec};

/// Hard iteration cap (one iteration = one Jacobian evaluation).
pub const MAX_ITERATIONS: usize = 200;
/// Convergence threshold on the relative objective decrease and on the
/// relative step norm.
pub const RELATIVE_TOLERANCE: f64 = 1e-10;
/// Initial multiplicative damping.
pub const INITIAL_DAMPING: f64 = 1e-3;
/// Forward-difference step: `max(STEP_REL·|p|, STEP_ABS)`.
const STEP_REL: f64 = 1e-7;
const STEP_ABS: f64 = 1e-9;
/// Damping bumps tried per iteration before declaring a stall.
const MAX_REJECTS: usize = 25;

/// Least-squares fit of `spec` to `(x, y)` starting from `init`.
///
/// `weights` are per-point inverse-variance weights (unity when `None`).
/// Damping is multiplied by 10 on a rejected step and by 0.1 on an
/// accepted one. The fit stops when the relative objective decrease or
/// relative step norm falls below 1e-10, or after 200 iterations; running
/// out of iterations yields `converged = false` rather than an error.
/// A singular normal matrix at the solution is a [`FitError::DegenerateFit`].
pub fn fit(
    spec: &ModelSpec,
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    init: &[f64],
) -> Result<FitResult, FitError> {
    fit_with_max_iterations(spec, x, y, weights, init, MAX_ITERATIONS)
}

pub(crate) fn fit_with_max_iterations(
    spec: &ModelSpec,
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    init: &[f64],
    max_iterations: usize,
) -> Result<FitResult, FitError> {
    let n = x.len();
    let np = spec.parameter_count();
    if y.len() != n {
        return Err(FitError::LengthMismatch { x_len: n, y_len: y.len() });
    }
    if n < np + 1 {
        return Err(FitError::TooFewPoints { needed: np + 1, params: np, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("x"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("y"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(FitError::LengthMismatch { x_len: n, y_len: w.len() });
        }
        for (i, &v) in w.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(FitError::InvalidWeight { index: i, value: v });
            }
        }
    }
    spec.check_parameters(init)?;

    let sqrt_w: Vec<f64> = match weights {
        Some(w) => w.iter().map(|v| v.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let objective = |p: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let r = sqrt_w[i] * (y[i] - spec.value(p, x[i]));
            s += r * r;
        }
        s
    };

    let mut p = init.to_vec();
    let mut s_cur = objective(&p);
    let mut damping = INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;

    let mut jac = vec![0.0; n * np];
    while iterations < max_iterations {
        iterations += 1;
        // Weighted residuals and forward-difference Jacobian at p.
        let mut resid = vec![0.0; n];
        let f0: Vec<f64> = x.iter().map(|&xi| spec.value(&p, xi)).collect();
        for i in 0..n {
            resid[i] = sqrt_w[i] * (y[i] - f0[i]);
        }
        for j in 0..np {
            let step = (STEP_REL * p[j].abs()).max(STEP_ABS);
            let mut pj = p.clone();
            pj[j] += step;
            for i in 0..n {
                jac[i * np + j] = sqrt_w[i] * (spec.value(&pj, x[i]) - f0[i]) / step;
            }
        }
        let (a, g) = normal_equations(&jac, &resid, n, np);

        let mut accepted = false;
        let mut rel_decrease = f64::INFINITY;
        let mut rel_step = f64::INFINITY;
        for _ in 0..MAX_REJECTS {
            let mut damped = a.clone();
            for j in 0..np {
                damped[j * np + j] += damping * a[j * np + j].max(f64::MIN_POSITIVE);
            }
            let delta = match solve(&mut damped, &g, np) {
                Some(d) => d,
                None => {
                    damping *= 10.0;
                    continue;
                }
            };
            let mut p_new: Vec<f64> = p.iter().zip(&delta).map(|(a, b)| a + b).collect();
            spec.clamp(&mut p_new);
            let s_new = objective(&p_new);
            if s_new.is_finite() && s_new <= s_cur {
                rel_decrease = (s_cur - s_new) / s_cur.max(f64::MIN_POSITIVE);
                let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                rel_step = step_norm / p_norm.max(f64::MIN_POSITIVE);
                p = p_new;
                s_cur = s_new;
                damping *= 0.1;
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // Damping exhausted without progress: stalled.
            break;
        }
        if rel_decrease < RELATIVE_TOLERANCE || rel_step < RELATIVE_TOLERANCE {
            converged = true;
            break;
        }
    }

    // Covariance from the undamped normal matrix at the final point.
    let f0: Vec<f64> = x.iter().map(|&xi| spec.value(&p, xi)).collect();
    for j in 0..np {
        let step = (STEP_REL * p[j].abs()).max(STEP_ABS);
        let mut pj = p.clone();
        pj[j] += step;
        for i in 0..n {
            jac[i * np + j] = sqrt_w[i] * (spec.value(&pj, x[i]) - f0[i]) / step;
        }
    }
    let resid: Vec<f64> = (0..n).map(|i| sqrt_w[i] * (y[i] - f0[i])).collect();
    let (a, _) = normal_equations(&jac, &resid, n, np);
    let mut cov = invert(&a, np).ok_or(FitError::DegenerateFit)?;
    let s2 = s_cur / (n - np) as f64;
    for v in cov.iter_mut() {
        *v *= s2;
    }
    // Symmetrize away inversion round-off.
    for i in 0..np {
        for j in (i + 1)..np {
            let m = 0.5 * (cov[i * np + j] + cov[j * np + i]);
            cov[i * np + j] = m;
            cov[j * np + i] = m;
        }
    }
    let uncertainties = (0..np).map(|j| cov[j * np + j].max(0.0).sqrt()).collect();

    Ok(FitResult {
        parameters: p,
        uncertainties,
        covariance: cov,
        residual_sum_squares: s_cur,
        converged,
        iterations,
    })
}

/// Builds `A = JᵀJ` and `g = Jᵀr` from a row-major n×p Jacobian.
fn normal_equations(jac: &[f64], resid: &[f64], n: usize, np: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; np * np];
    let mut g = vec![0.0; np];
    for i in 0..n {
        let row = &jac[i * np..(i + 1) * np];
        for j in 0..np {
            g[j] += row[j] * resid[i];
            for k in j..np {
                a[j * np + k] += row[j] * row[k];
            }
        }
    }
    for j in 0..np {
        for k in 0..j {
            a[j * np + k] = a[k * np + j];
        }
    }
    (a, g)
}

/// Solves `m·x = b` in place by partial-pivot elimination; `None` when a
/// pivot collapses.
fn solve(m: &mut [f64], b: &[f64], np: usize) -> Option<Vec<f64>> {
    let mut x = b.to_vec();
    for col in 0..np {
        let mut pivot = col;
        for row in (col + 1)..np {
            if m[row * np + col].abs() > m[pivot * np + col].abs() {
                pivot = row;
            }
        }
        if m[pivot * np + col].abs() < 1e-300 || !m[pivot * np + col].is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..np {
                m.swap(col * np + k, pivot * np + k);
            }
            x.swap(col, pivot);
        }
        let inv = 1.0 / m[col * np + col];
        for row in (col + 1)..np {
            let factor = m[row * np + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..np {
                m[row * np + k] -= factor * m[col * np + k];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..np).rev() {
        let mut acc = x[col];
        for k in (col + 1)..np {
            acc -= m[col * np + k] * x[k];
        }
        x[col] = acc / m[col * np + col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

/// Inverse by Gauss-Jordan with partial pivoting; `None` when singular.
fn invert(a: &[f64], np: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; np * np];
    for j in 0..np {
        inv[j * np + j] = 1.0;
    }
    let scale = a
        .iter()
        .map(|v| v.abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for col in 0..np {
        let mut pivot = col;
        for row in (col + 1)..np {
            if m[row * np + col].abs() > m[pivot * np + col].abs() {
                pivot = row;
            }
        }
        let pv = m[pivot * np + col];
        if !pv.is_finite() || pv.abs() < scale * 1e-14 {
            return None;
        }
        if pivot != col {
            for k in 0..np {
                m.swap(col * np + k, pivot * np + k);
                inv.swap(col * np + k, pivot * np + k);
            }
        }
        let d = 1.0 / m[col * np + col];
        for k in 0..np {
            m[col * np + k] *= d;
            inv[col * np + k] *= d;
        }
        for row in 0..np {
            if row == col {
                continue;
            }
            let factor = m[row * np + col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..np {
                m[row * np + k] -= factor * m[col * np + k];
                inv[row * np + k] -= factor * inv[col * np + k];
            }
        }
    }
    Some(inv)
}
