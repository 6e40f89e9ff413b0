//! Constrained maximum likelihood baseline.
//!
//! A parametric full model `f(y | x; θ_f)` is fitted by maximizing the profile
//! likelihood `Σ log f(y_i | x_i; θ_f) - Σ log{1 - λ'u(x_i; θ_f)}`, where
//! `u(x; θ_f)` is the expected reduced-model score under the full model at the
//! published reduced parameters. The stationarity system in `η = (λ, θ_f)` is
//! solved by Newton-Raphson with step halving on infeasible iterates.
//!
//! The likelihood is unweighted: the sampling design plays no role here, which
//! is exactly why the estimator breaks down under informative sampling.

use nalgebra::{DMatrix, DVector};

use crate::domain::{expit, EstimatingSpec, Family, SurveySample, Which};
use crate::error::{Error, Result};
use crate::linalg;

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const SCORE_TOL: f64 = 1e-8;

/// Published reduced-model parameters. `sigma2` is the residual variance of
/// the linear reduced model and is ignored for logistic models.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedParams {
    pub alpha: DVector<f64>,
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmlState {
    /// Multiplier: the reduced-score block, plus a variance component for
    /// linear models.
    pub lambda: DVector<f64>,
    /// Full-model parameters: `β`, followed by `σ²_f` for linear models.
    pub theta: DVector<f64>,
    pub step_count: usize,
    pub feasible: bool,
}

impl CmlState {
    pub fn eta(&self) -> DVector<f64> {
        let mut eta = DVector::zeros(self.lambda.len() + self.theta.len());
        eta.rows_mut(0, self.lambda.len()).copy_from(&self.lambda);
        eta.rows_mut(self.lambda.len(), self.theta.len()).copy_from(&self.theta);
        eta
    }

    pub fn from_eta(eta: &DVector<f64>, k: usize, step_count: usize) -> Self {
        Self {
            lambda: eta.rows(0, k).into_owned(),
            theta: eta.rows(k, eta.len() - k).into_owned(),
            step_count,
            feasible: false,
        }
    }

    pub fn beta(&self, q1: usize) -> DVector<f64> {
        self.theta.rows(0, q1).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CmlOutcome {
    Converged {
        beta: DVector<f64>,
        sigma2: Option<f64>,
        lambda: DVector<f64>,
        iterations: usize,
    },
    /// The algorithm gave up: an iterate stayed infeasible after all halvings,
    /// the information matrix was singular, or the iteration cap was reached.
    NotAvailable { reason: String },
}

impl CmlOutcome {
    pub fn beta(&self) -> Option<&DVector<f64>> {
        match self {
            CmlOutcome::Converged { beta, .. } => Some(beta),
            CmlOutcome::NotAvailable { .. } => None,
        }
    }
}

/// Per-unit building blocks of the profile likelihood derivatives.
struct UnitTerms {
    /// Full-model score `s_β`.
    score: DVector<f64>,
    /// `-∂s_β/∂θ'`.
    info: DMatrix<f64>,
    /// Constraint function `u`.
    u: DVector<f64>,
    /// `c = ∂u'/∂θ`, rows indexed by `θ`, columns by `λ`.
    c: DMatrix<f64>,
    /// `∂(cλ)/∂θ'`.
    d: DMatrix<f64>,
}

struct Problem<'a> {
    sample: &'a SurveySample,
    spec: &'a EstimatingSpec,
    reduced: &'a ReducedParams,
    q1: usize,
    q2: usize,
}

impl<'a> Problem<'a> {
    fn new(
        sample: &'a SurveySample,
        spec: &'a EstimatingSpec,
        reduced: &'a ReducedParams,
    ) -> Result<Self> {
        let q1 = spec.dim(Which::Full);
        let q2 = spec.dim(Which::Reduced);
        if reduced.alpha.len() != q2 {
            return Err(Error::DimensionMismatch(format!(
                "reduced alpha has length {}, model has {q2} parameters",
                reduced.alpha.len()
            )));
        }
        if sample.n_covariates() != spec.n_covariates() {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} covariates, spec expects {}",
                sample.n_covariates(),
                spec.n_covariates()
            )));
        }
        if spec.family() == Family::Linear && !reduced.sigma2.is_some_and(|s| s > 0.0) {
            return Err(Error::InvalidSpec(
                "linear CML needs a positive reduced residual variance".into(),
            ));
        }
        Ok(Self {
            sample,
            spec,
            reduced,
            q1,
            q2,
        })
    }

    fn dim_lambda(&self) -> usize {
        match self.spec.family() {
            Family::Linear => self.q2 + 1,
            Family::Logistic => self.q2,
        }
    }

    fn dim_theta(&self) -> usize {
        match self.spec.family() {
            Family::Linear => self.q1 + 1,
            Family::Logistic => self.q1,
        }
    }

    fn terms(&self, i: usize, lambda: &DVector<f64>, theta: &DVector<f64>) -> UnitTerms {
        let unit = &self.sample.units()[i];
        let x = self.spec.regressors(Which::Full, unit.covariates());
        let z = self.spec.regressors(Which::Reduced, unit.covariates());
        let (q1, q2) = (self.q1, self.q2);
        let beta = theta.rows(0, q1);
        let xb = x.dot(&beta);
        let y = unit.response();
        match self.spec.family() {
            Family::Linear => {
                let sf = theta[q1];
                let sr = self.reduced.sigma2.unwrap_or(1.0);
                let m = xb - z.dot(&self.reduced.alpha);
                let r = y - xb;
                let mut score = DVector::zeros(q1 + 1);
                score.rows_mut(0, q1).copy_from(&(&x * (r / sf)));
                score[q1] = -0.5 / sf + r * r / (2.0 * sf * sf);

                let mut info = DMatrix::zeros(q1 + 1, q1 + 1);
                info.view_mut((0, 0), (q1, q1)).copy_from(&(&x * x.transpose() / sf));
                let cross = &x * (r / (sf * sf));
                info.view_mut((0, q1), (q1, 1)).copy_from(&cross);
                info.view_mut((q1, 0), (1, q1)).copy_from(&cross.transpose());
                info[(q1, q1)] = r * r / (sf * sf * sf) - 0.5 / (sf * sf);

                let mut u = DVector::zeros(q2 + 1);
                u.rows_mut(0, q2).copy_from(&(&z * (m / sr)));
                u[q2] = -0.5 / sr + (sf + m * m) / (2.0 * sr * sr);

                let mut c = DMatrix::zeros(q1 + 1, q2 + 1);
                c.view_mut((0, 0), (q1, q2)).copy_from(&(&x * z.transpose() / sr));
                c.view_mut((0, q2), (q1, 1)).copy_from(&(&x * (m / (sr * sr))));
                c[(q1, q2)] = 0.5 / (sr * sr);

                let mut d = DMatrix::zeros(q1 + 1, q1 + 1);
                d.view_mut((0, 0), (q1, q1))
                    .copy_from(&(&x * x.transpose() * (lambda[q2] / (sr * sr))));
                UnitTerms { score, info, u, c, d }
            }
            Family::Logistic => {
                let p = expit(xb);
                let p1 = expit(z.dot(&self.reduced.alpha));
                let v = p * (1.0 - p);
                let xx = &x * x.transpose();
                UnitTerms {
                    score: &x * (y - p),
                    info: &xx * v,
                    u: &z * (p - p1),
                    c: &x * z.transpose() * v,
                    d: xx * (lambda.dot(&z) * v * (1.0 - 2.0 * p)),
                }
            }
        }
    }

    fn min_slack(&self, lambda: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        (0..self.sample.len())
            .map(|i| 1.0 - lambda.dot(&self.terms(i, lambda, theta).u))
            .fold(f64::INFINITY, f64::min)
    }

    fn theta_valid(&self, theta: &DVector<f64>) -> bool {
        theta.iter().all(|v| v.is_finite())
            && (self.spec.family() == Family::Logistic || theta[self.q1] > 0.0)
    }

    /// Score `g*` and information `I* = -∂g*/∂η'`, both ordered `(λ, θ)`.
    fn score_and_information(
        &self,
        lambda: &DVector<f64>,
        theta: &DVector<f64>,
        with_information: bool,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (k, t) = (self.dim_lambda(), self.dim_theta());
        let mut g = DVector::zeros(k + t);
        let mut info = DMatrix::zeros(k + t, k + t);
        for i in 0..self.sample.len() {
            let UnitTerms { score, info: ib, u, c, d } = self.terms(i, lambda, theta);
            let s = 1.0 - lambda.dot(&u);
            if !(s > 0.0) {
                return Err(Error::InfeasibleState(format!(
                    "1 - λ'u = {s:e} at unit {i}"
                )));
            }
            let cl = &c * lambda;
            g.rows_mut(0, k).axpy(1.0 / s, &u, 1.0);
            g.rows_mut(k, t).axpy(1.0, &(score + &cl / s), 1.0);
            if with_information {
                let s2 = s * s;
                let mut ll = info.view_mut((0, 0), (k, k));
                ll -= &u * u.transpose() / s2;
                let cross = &c / s + &cl * u.transpose() / s2;
                let mut tl = info.view_mut((k, 0), (t, k));
                tl -= &cross;
                let mut lt = info.view_mut((0, k), (k, t));
                lt -= cross.transpose();
                let mut tt = info.view_mut((k, k), (t, t));
                tt += ib - &d / s - &cl * cl.transpose() / s2;
            }
        }
        Ok((g, info))
    }
}

/// Stacked profile-likelihood score `(Σ u/s, Σ s_β + cλ/s)` at `state`.
pub fn cml_score(
    state: &CmlState,
    sample: &SurveySample,
    spec: &EstimatingSpec,
    reduced: &ReducedParams,
) -> Result<DVector<f64>> {
    let p = Problem::new(sample, spec, reduced)?;
    check_state(&p, state)?;
    Ok(p.score_and_information(&state.lambda, &state.theta, false)?.0)
}

/// Analytic `I*(η) = -∂g*/∂η'` at `state`.
pub fn cml_information(
    state: &CmlState,
    sample: &SurveySample,
    spec: &EstimatingSpec,
    reduced: &ReducedParams,
) -> Result<DMatrix<f64>> {
    let p = Problem::new(sample, spec, reduced)?;
    check_state(&p, state)?;
    Ok(p.score_and_information(&state.lambda, &state.theta, true)?.1)
}

fn check_state(p: &Problem, state: &CmlState) -> Result<()> {
    if state.lambda.len() != p.dim_lambda() || state.theta.len() != p.dim_theta() {
        return Err(Error::DimensionMismatch(format!(
            "state has λ of length {} and θ of length {}, expected {} and {}",
            state.lambda.len(),
            state.theta.len(),
            p.dim_lambda(),
            p.dim_theta()
        )));
    }
    if !p.theta_valid(&state.theta) {
        return Err(Error::InfeasibleState("full-model parameters are invalid".into()));
    }
    Ok(())
}

/// Starting point: the design-weighted full-model fit, plus its weighted
/// residual variance for linear models, and `λ = 0`.
pub fn initial_state(sample: &SurveySample, spec: &EstimatingSpec) -> Result<CmlState> {
    let beta = crate::calibration::uncalibrated_estimate(sample, spec)?;
    let q1 = beta.len();
    let theta = match spec.family() {
        Family::Logistic => beta,
        Family::Linear => {
            let dt = crate::domain::normalized_weights(sample);
            let s2 = linalg::compensated_sum(sample.units().iter().zip(dt.iter()).map(|(u, w)| {
                let r = u.response() - spec.regressors(Which::Full, u.covariates()).dot(&beta);
                w * r * r
            }));
            let mut t = DVector::zeros(q1 + 1);
            t.rows_mut(0, q1).copy_from(&beta);
            t[q1] = s2;
            t
        }
    };
    let k = match spec.family() {
        Family::Linear => spec.dim(Which::Reduced) + 1,
        Family::Logistic => spec.dim(Which::Reduced),
    };
    Ok(CmlState {
        lambda: DVector::zeros(k),
        theta,
        step_count: 0,
        feasible: true,
    })
}

/// Fit from the default starting point.
pub fn cml_fit(sample: &SurveySample, spec: &EstimatingSpec, reduced: &ReducedParams) -> CmlOutcome {
    match initial_state(sample, spec) {
        Ok(state) => cml_fit_from(sample, spec, reduced, state),
        Err(e) => CmlOutcome::NotAvailable {
            reason: format!("initial fit failed: {e}"),
        },
    }
}

/// Modified Newton-Raphson: `η ← η + I*⁻¹ g*`, halving the step while some
/// `1 - λ'u_i` is not positive.
pub fn cml_fit_from(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    reduced: &ReducedParams,
    start: CmlState,
) -> CmlOutcome {
    fit_inner(sample, spec, reduced, start, None)
}

/// [`cml_fit_from`] that also returns every accepted iterate.
pub fn cml_fit_traced(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    reduced: &ReducedParams,
    start: CmlState,
) -> (CmlOutcome, Vec<CmlState>) {
    let mut trace = Vec::new();
    let out = fit_inner(sample, spec, reduced, start, Some(&mut trace));
    (out, trace)
}

/// `min_i (1 - λ'u_i)` at `state`.
pub fn cml_min_slack(
    state: &CmlState,
    sample: &SurveySample,
    spec: &EstimatingSpec,
    reduced: &ReducedParams,
) -> Result<f64> {
    let p = Problem::new(sample, spec, reduced)?;
    check_state(&p, state)?;
    Ok(p.min_slack(&state.lambda, &state.theta))
}

fn fit_inner(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    reduced: &ReducedParams,
    start: CmlState,
    mut trace: Option<&mut Vec<CmlState>>,
) -> CmlOutcome {
    let na = |reason: String| CmlOutcome::NotAvailable { reason };
    let p = match Problem::new(sample, spec, reduced) {
        Ok(p) => p,
        Err(e) => return na(e.to_string()),
    };
    if let Err(e) = check_state(&p, &start) {
        return na(e.to_string());
    }
    let k = p.dim_lambda();
    let mut state = start;
    for iter in 0..MAX_ITER {
        let (g, info) = match p.score_and_information(&state.lambda, &state.theta, true) {
            Ok(v) => v,
            Err(e) => return na(e.to_string()),
        };
        if linalg::max_abs(&g) <= SCORE_TOL {
            return converged(&p, state, iter);
        }
        let Some(delta) = linalg::solve(&info, &g) else {
            return na("information matrix is singular".into());
        };
        let eta = state.eta();
        let mut step = delta;
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = CmlState::from_eta(&(&eta + &step), k, state.step_count + 1);
            if p.theta_valid(&cand.theta) && p.min_slack(&cand.lambda, &cand.theta) > 0.0 {
                next = Some(cand);
                break;
            }
            step /= 2.0;
        }
        let Some(mut cand) = next else {
            return na(format!("iterate {iter} stayed infeasible after {MAX_HALVINGS} halvings"));
        };
        cand.feasible = true;
        if let Some(t) = trace.as_deref_mut() {
            t.push(cand.clone());
        }
        let tiny = linalg::max_abs(&step) <= 1e-14 * eta.amax().max(1.0);
        state = cand;
        if tiny {
            let resid = match p.score_and_information(&state.lambda, &state.theta, false) {
                Ok((g, _)) => linalg::max_abs(&g),
                Err(e) => return na(e.to_string()),
            };
            if resid <= SCORE_TOL * 1e2 {
                return converged(&p, state, iter + 1);
            }
        }
    }
    na(format!("no convergence within {MAX_ITER} iterations"))
}

fn converged(p: &Problem, state: CmlState, iterations: usize) -> CmlOutcome {
    let beta = state.beta(p.q1);
    let sigma2 = (p.spec.family() == Family::Linear).then(|| state.theta[p.q1]);
    CmlOutcome::Converged {
        beta,
        sigma2,
        lambda: state.lambda,
        iterations,
    }
}
