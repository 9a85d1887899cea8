//! Damped (Levenberg-Marquardt) weighted least squares with
//! finite-difference jacobians, for the few-parameter fits in this crate.

use nalgebra::DVector;

use crate::error::{QndError, Result};
use crate::linalg::RMat;

const RANK_RATIO_TOL: f64 = 1e-7;
/// At the starting point only exact degeneracies count: symmetric initial
/// guesses give some parameters vanishing first-order sensitivity, which
/// shows up as finite-difference-sized singular values around 1e-8.
const RANK_RATIO_TOL_START: f64 = 1e-9;

#[derive(Debug)]
pub(crate) struct FitOutcome {
    pub params: Vec<f64>,
    /// Gauss-approximation covariance (J^T J)^-1 at the optimum.
    pub covariance: RMat,
    pub std_errors: Vec<f64>,
    pub iterations: usize,
}

fn jacobian<F>(residual: &F, x: &[f64], r0: &DVector<f64>) -> Result<RMat>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let mut j = RMat::zeros(r0.len(), x.len());
    let mut xs = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-4 * x[k].abs().max(1.0);
        xs[k] = x[k] + h;
        let r = residual(&xs)?;
        xs[k] = x[k];
        for i in 0..r0.len() {
            j[(i, k)] = (r[i] - r0[i]) / h;
        }
    }
    Ok(j)
}

fn check_rank(j: &RMat, tol: f64) -> Result<()> {
    let svd = j.clone().svd(false, true);
    let max_sv = svd.singular_values.max();
    let (min_idx, min_sv) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty singular values");
    let ratio = min_sv / max_sv.max(f64::MIN_POSITIVE);
    if ratio < tol {
        let v_t = svd.v_t.expect("requested V^T");
        let direction: Vec<f64> = v_t.row(min_idx).iter().copied().collect();
        return Err(QndError::RankDeficient { ratio, direction });
    }
    Ok(())
}

/// Minimize ||residual(x)||^2 starting from `initial`.
///
/// Converges when the relative cost change drops below 1e-10 or the step
/// norm below 1e-8; fails on a rank-deficient jacobian at the optimum or
/// after `max_iter` iterations without convergence. The rank test runs at
/// the optimum rather than the starting point: symmetric initial guesses
/// (the zero tensor) can zero out first-order sensitivities that reappear
/// as soon as the parameters move.
pub(crate) fn levenberg_marquardt<F>(
    residual: F,
    initial: &[f64],
    max_iter: usize,
) -> Result<FitOutcome>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let n_par = initial.len();
    let mut x = initial.to_vec();
    let mut r = residual(&x)?;
    if r.len() < n_par {
        return Err(QndError::InvalidConfig(format!(
            "{} residuals cannot determine {} parameters",
            r.len(),
            n_par
        )));
    }
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let j = jacobian(&residual, &x, &r)?;
        if iter == 0 {
            check_rank(&j, RANK_RATIO_TOL_START)?;
        }
        let jtj = j.transpose() * &j;
        let gradient = j.transpose() * &r;

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for k in 0..n_par {
                let d = jtj[(k, k)].max(1e-14 * jtj.trace().max(f64::MIN_POSITIVE));
                damped[(k, k)] = jtj[(k, k)] + lambda * d;
            }
            let step = match damped.lu().solve(&(-&gradient)) {
                Some(s) => s,
                None => {
                    lambda *= 8.0;
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            // an overshooting trial can leave the model's valid region
            // (classification or level tracking fails); treat it as an
            // uphill step and damp harder
            let r_trial = match residual(&trial) {
                Ok(r) => r,
                Err(_) => {
                    lambda *= 8.0;
                    if lambda > 1e14 {
                        break;
                    }
                    continue;
                }
            };
            let cost_trial = r_trial.norm_squared();
            if cost_trial <= cost {
                let rel_drop = (cost - cost_trial) / cost.max(f64::MIN_POSITIVE);
                let step_norm = step.norm();
                x = trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < 1e-10 || step_norm < 1e-8 {
                    converged = true;
                }
                break;
            }
            lambda *= 8.0;
            if lambda > 1e14 {
                break;
            }
        }

        if !accepted {
            // no downhill step found; the current point is the minimum
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(QndError::FitNonConvergence(max_iter));
    }

    let j = jacobian(&residual, &x, &r)?;
    check_rank(&j, RANK_RATIO_TOL)?;
    let jtj = j.transpose() * &j;
    let covariance = jtj.clone().try_inverse().ok_or(QndError::RankDeficient {
        ratio: 0.0,
        direction: vec![0.0; n_par],
    })?;
    let std_errors: Vec<f64> = (0..n_par)
        .map(|k| covariance[(k, k)].max(0.0).sqrt())
        .collect();

    Ok(FitOutcome {
        params: x,
        covariance,
        std_errors,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_linear_model_exactly() {
        // y = 2 a + 3 b with residuals over a few sample points
        let data = [
            (1.0, 0.0, 2.0),
            (0.0, 1.0, 3.0),
            (1.0, 1.0, 5.0),
            (2.0, -1.0, 1.0),
        ];
        let res = |p: &[f64]| {
            Ok(DVector::from_iterator(
                data.len(),
                data.iter().map(|(ca, cb, y)| ca * p[0] + cb * p[1] - y),
            ))
        };
        let fit = levenberg_marquardt(res, &[0.0, 0.0], 50).unwrap();
        assert!((fit.params[0] - 2.0).abs() < 1e-10);
        assert!((fit.params[1] - 3.0).abs() < 1e-10);
        let r_final: DVector<f64> = res(&fit.params).unwrap();
        assert!(r_final.norm_squared() < 1e-18);
    }

    #[test]
    fn recovers_nonlinear_exponential() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let truth = [1.7, 0.8];
        let obs: Vec<f64> = xs
            .iter()
            .map(|x| truth[0] * (-truth[1] * x).exp())
            .collect();
        let res = move |p: &[f64]| {
            Ok(DVector::from_iterator(
                xs.len(),
                xs.iter()
                    .zip(&obs)
                    .map(|(x, y)| p[0] * (-p[1] * x).exp() - y),
            ))
        };
        let fit = levenberg_marquardt(res, &[1.0, 0.1], 200).unwrap();
        assert!((fit.params[0] - truth[0]).abs() < 1e-7);
        assert!((fit.params[1] - truth[1]).abs() < 1e-7);
    }

    #[test]
    fn detects_rank_deficiency_with_direction() {
        // second parameter never enters the model
        let res = |p: &[f64]| {
            Ok(DVector::from_iterator(
                3,
                [1.0, 2.0, 3.0].iter().map(|c| c * p[0] - 1.0 + 0.0 * p[1]),
            ))
        };
        match levenberg_marquardt(res, &[0.5, 0.5], 50) {
            Err(QndError::RankDeficient { direction, .. }) => {
                assert!(direction[1].abs() > 0.9);
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn rejects_underdetermined_problems() {
        let res = |p: &[f64]| Ok(DVector::from_iterator(1, [p[0] - 1.0]));
        assert!(levenberg_marquardt(res, &[0.0, 0.0], 50).is_err());
    }
}
