//! Empirical-likelihood model calibration.
//!
//! Given normalized design weights `d̃` and constraint rows `u_i` (reduced-model
//! scores at a benchmark), find weights maximizing `Σ d̃_i log w_i` subject to
//! `Σ w_i = 1` and `Σ w_i u_i = 0`. The solution is `w_i = d̃_i / (1 - λ'u_i)`,
//! where `λ` minimizes the convex dual `F(λ) = -Σ d̃_i log(1 - λ'u_i)`.

use nalgebra::{DMatrix, DVector};

use crate::domain::{self, EstimatingSpec, SurveySample, Which};
use crate::error::{Error, Result};
use crate::linalg;

const DUAL_TOL: f64 = 1e-10;
const DUAL_MAX_ITER: usize = 200;
const DUAL_MAX_HALVINGS: usize = 60;
const FEASIBILITY_MARGIN: f64 = 1e-8;
const NORMALIZATION_TOL: f64 = 1e-11;
/// `‖λ‖·max‖u_i‖` beyond this means the multiplier is running off to infinity,
/// which only happens when zero is outside the hull of the constraint rows.
const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    dtilde: DVector<f64>,
    constraints: DMatrix<f64>,
}

impl CalibrationProblem {
    pub fn new(dtilde: DVector<f64>, constraint_matrix: DMatrix<f64>) -> Result<Self> {
        Self::stacked(dtilde, constraint_matrix, &[])
    }

    /// Constraint blocks placed side by side; each block has one row per unit.
    pub fn stacked(
        dtilde: DVector<f64>,
        constraint_matrix: DMatrix<f64>,
        extra_constraints: &[DMatrix<f64>],
    ) -> Result<Self> {
        let n = dtilde.len();
        if n == 0 {
            return Err(Error::InvalidSample("no units to calibrate".into()));
        }
        for block in std::iter::once(&constraint_matrix).chain(extra_constraints) {
            if block.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "constraint block has {} rows for {n} weights",
                    block.nrows()
                )));
            }
        }
        if dtilde.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidSample("normalized weights must be positive".into()));
        }
        let total = linalg::compensated_sum(dtilde.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSample(format!(
                "normalized weights sum to {total}, not 1"
            )));
        }
        let q: usize = constraint_matrix.ncols() + extra_constraints.iter().map(|b| b.ncols()).sum::<usize>();
        let mut u = DMatrix::zeros(n, q);
        let mut col = 0;
        for block in std::iter::once(&constraint_matrix).chain(extra_constraints) {
            u.columns_mut(col, block.ncols()).copy_from(block);
            col += block.ncols();
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("constraint matrix".into()));
        }
        if q == 0 {
            return Err(Error::RankDeficientConstraints("no constraints".into()));
        }
        if n < q {
            return Err(Error::RankDeficientConstraints(format!(
                "{q} constraints but only {n} units"
            )));
        }
        let gram = weighted_gram(&dtilde, &u, None);
        let rc = linalg::rcond(&gram);
        if rc < linalg::RCOND_MIN {
            return Err(Error::RankDeficientConstraints(format!(
                "weighted constraint gram has reciprocal condition {rc:e}"
            )));
        }
        Ok(Self {
            dtilde,
            constraints: u,
        })
    }

    pub fn dtilde(&self) -> &DVector<f64> {
        &self.dtilde
    }

    /// Stacked `n x q` constraint matrix.
    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.ncols()
    }

    fn slack(&self, lambda: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(self.dtilde.len(), 1.0) - &self.constraints * lambda
    }

    /// Dual gradient `Σ d̃ u / s`.
    fn gradient(&self, s: &DVector<f64>) -> DVector<f64> {
        let q = self.n_constraints();
        DVector::from_iterator(
            q,
            (0..q).map(|k| {
                linalg::compensated_sum(
                    (0..s.len()).map(|i| self.dtilde[i] * self.constraints[(i, k)] / s[i]),
                )
            }),
        )
    }

    fn objective(&self, s: &DVector<f64>) -> f64 {
        -linalg::compensated_sum(self.dtilde.iter().zip(s.iter()).map(|(d, s)| d * s.ln()))
    }
}

/// `Σ d_i u_i u_i' / s_i²` (`s ≡ 1` when absent).
fn weighted_gram(d: &DVector<f64>, u: &DMatrix<f64>, s: Option<&DVector<f64>>) -> DMatrix<f64> {
    let scaled = DVector::from_iterator(
        d.len(),
        d.iter()
            .enumerate()
            .map(|(i, &di)| s.map_or(di, |s| di / (s[i] * s[i]))),
    );
    let mut wu = u.clone();
    for (i, mut row) in wu.row_iter_mut().enumerate() {
        row *= scaled[i];
    }
    linalg::symmetrize(&(u.transpose() * wu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub weights: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub max_constraint_residual: f64,
    pub converged: bool,
}

impl CalibrationResult {
    /// Weights on the population-total scale, `Σ w = N̂`.
    pub fn population_scale(&self, n_hat: f64) -> DVector<f64> {
        &self.weights * n_hat
    }

    /// `Σ d̃ log(ŵ/d̃)`, which is never positive.
    pub fn kl_gain(&self, dtilde: &DVector<f64>) -> f64 {
        linalg::compensated_sum(
            dtilde
                .iter()
                .zip(self.weights.iter())
                .map(|(d, w)| d * (w / d).ln()),
        )
    }
}

/// Damped Newton on the dual multiplier, started at `λ = 0`.
pub fn solve_dual_lambda(problem: &CalibrationProblem) -> Result<CalibrationResult> {
    let q = problem.n_constraints();
    let umax = problem
        .constraints
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0_f64, f64::max);
    let mut lambda = DVector::zeros(q);
    let mut s = problem.slack(&lambda);
    let mut grad = problem.gradient(&s);
    let mut resid = linalg::max_abs(&grad);
    let mut obj = problem.objective(&s);
    let mut iterations = 0;

    // Σŵ = 1 + λ'grad, so a small gradient alone can also mean the weights
    // are collapsing toward zero along an unbounded direction.
    while resid > DUAL_TOL || lambda.dot(&grad).abs() > NORMALIZATION_TOL {
        if iterations == DUAL_MAX_ITER {
            return Err(Error::NoConvergence {
                iterations,
                residual: resid,
            });
        }
        iterations += 1;
        let hess = weighted_gram(&problem.dtilde, &problem.constraints, Some(&s));
        let step = linalg::solve(&hess, &(-&grad)).ok_or_else(|| {
            Error::RankDeficientConstraints("dual hessian is singular".into())
        })?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=DUAL_MAX_HALVINGS {
            let cand = &lambda + &step * t;
            let cs = problem.slack(&cand);
            if cs.min() >= FEASIBILITY_MARGIN {
                let cobj = problem.objective(&cs);
                let cgrad = problem.gradient(&cs);
                let cres = linalg::max_abs(&cgrad);
                if cobj <= obj + 1e-4 * t * slope || cres < resid {
                    accepted = Some((cand, cs, cgrad, cres, cobj));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, cs, cgrad, cres, cobj)) = accepted else {
            return Err(Error::NoConvergence {
                iterations,
                residual: resid,
            });
        };
        lambda = cand;
        s = cs;
        grad = cgrad;
        resid = cres;
        obj = cobj;
        if lambda.norm() * umax > DIVERGENCE_BOUND {
            return Err(Error::InfeasibleConstraints(
                "benchmark lies outside the convex hull of the constraint rows".into(),
            ));
        }
    }

    let weights = problem.dtilde.component_div(&s);
    Ok(CalibrationResult {
        weights,
        lambda,
        iterations,
        max_constraint_residual: resid,
        converged: true,
    })
}

/// Reduced-model scores at `alpha` as an `n x q2` matrix.
pub fn reduced_score_matrix(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    alpha: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    domain::score_matrix(sample, spec, Which::Reduced, alpha)
}

/// Calibrate the design weights to the benchmark `alpha_star`, then solve the
/// full model with the calibrated weights starting from `beta0`.
pub fn calibrated_estimate(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    alpha_star: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<(DVector<f64>, CalibrationResult)> {
    if alpha_star.len() != spec.dim(Which::Reduced) {
        return Err(Error::DimensionMismatch(format!(
            "benchmark has length {}, reduced model has {} parameters",
            alpha_star.len(),
            spec.dim(Which::Reduced)
        )));
    }
    let u2 = reduced_score_matrix(sample, spec, alpha_star)?;
    let problem = CalibrationProblem::new(domain::normalized_weights(sample), u2)?;
    let result = solve_dual_lambda(&problem)?;
    let beta = domain::solve_weighted_z(sample, spec, Which::Full, &result.weights, beta0)?;
    Ok((beta, result))
}

/// Design-weighted fit of the full model without calibration.
pub fn uncalibrated_estimate(sample: &SurveySample, spec: &EstimatingSpec) -> Result<DVector<f64>> {
    domain::solve_weighted_z(
        sample,
        spec,
        Which::Full,
        &domain::normalized_weights(sample),
        &DVector::zeros(spec.dim(Which::Full)),
    )
}

/// Calibrate to several external benchmarks at once.
///
/// Each entry pairs a spec, whose reduced model describes one source's working
/// regression in terms of sample A's covariates, with that source's estimate.
pub fn multi_source_calibrate(
    sample_a: &SurveySample,
    specs: &[(EstimatingSpec, DVector<f64>)],
    spec_full: &EstimatingSpec,
) -> Result<(DVector<f64>, CalibrationResult)> {
    let (first, rest) = specs
        .split_first()
        .ok_or_else(|| Error::InvalidSpec("no benchmark sources supplied".into()))?;
    let block = |(spec, alpha): &(EstimatingSpec, DVector<f64>)| -> Result<DMatrix<f64>> {
        if alpha.len() != spec.dim(Which::Reduced) {
            return Err(Error::DimensionMismatch(format!(
                "benchmark has length {}, source model has {} parameters",
                alpha.len(),
                spec.dim(Which::Reduced)
            )));
        }
        reduced_score_matrix(sample_a, spec, alpha)
    };
    let u = block(first)?;
    let extra = rest.iter().map(block).collect::<Result<Vec<_>>>()?;
    let problem = CalibrationProblem::stacked(domain::normalized_weights(sample_a), u, &extra)?;
    let result = solve_dual_lambda(&problem)?;
    let beta0 = uncalibrated_estimate(sample_a, spec_full)?;
    let beta = domain::solve_weighted_z(sample_a, spec_full, Which::Full, &result.weights, &beta0)?;
    Ok((beta, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn problem(d: &[f64], u: &[f64], q: usize) -> Result<CalibrationProblem> {
        CalibrationProblem::new(
            DVector::from_column_slice(d),
            DMatrix::from_row_slice(d.len(), q, u),
        )
    }

    #[test]
    fn scalar_dual_closed_form() {
        let r = solve_dual_lambda(&problem(&[0.5, 0.5], &[1.0, -3.0], 1).unwrap()).unwrap();
        assert!((r.lambda[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.weights[0] - 0.75).abs() < 1e-12);
        assert!((r.weights[1] - 0.25).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn balanced_constraints_leave_weights_untouched() {
        let r = solve_dual_lambda(&problem(&[0.25; 4], &[1.0, -1.0, 2.0, -2.0], 1).unwrap()).unwrap();
        assert_eq!(r.lambda, dvector![0.0]);
        assert_eq!(r.weights, DVector::from_element(4, 0.25));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn zero_outside_hull_is_infeasible() {
        let err = solve_dual_lambda(&problem(&[0.5, 0.5], &[1.0, 2.0], 1).unwrap());
        assert!(matches!(err, Err(Error::InfeasibleConstraints(_))));
    }

    #[test]
    fn collinear_constraints_rejected() {
        let err = problem(&[0.5, 0.5], &[1.0, 2.0, -1.0, -2.0], 2);
        assert!(matches!(err, Err(Error::RankDeficientConstraints(_))));
    }

    #[test]
    fn weights_must_be_normalized() {
        assert!(matches!(problem(&[0.5, 0.6], &[1.0, -1.0], 1), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn two_dimensional_residual_and_kl() {
        let d = [0.1, 0.2, 0.3, 0.15, 0.25];
        let u = [1.0, 0.5, -2.0, 1.0, 0.5, -1.5, 0.3, 0.2, -0.4, 0.1];
        let p = problem(&d, &u, 2).unwrap();
        let r = solve_dual_lambda(&p).unwrap();
        assert!(r.max_constraint_residual <= 1e-10);
        assert!((r.weights.sum() - 1.0).abs() < 1e-10);
        assert!(r.weights.iter().all(|&w| w > 0.0));
        assert!(r.kl_gain(p.dtilde()) < 0.0);
        let s = p.slack(&r.lambda);
        for i in 0..5 {
            assert!((r.weights[i] - d[i] / s[i]).abs() < 1e-12);
        }
    }
}
