//! Survey records, estimating functions and the design-weighted Z-estimator.
//!
//! Both the full model and the working reduced model use estimating functions
//! of the form `{y - m(h'θ)} h` with `h = (1, x_masked)`, where `m` is the
//! identity (linear) or the logistic function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance for `d_i == 1/pi_i`.
const INCLUSION_TOL: f64 = 1e-9;

const Z_MAX_ITER: usize = 100;
const Z_MAX_HALVINGS: usize = 30;
const Z_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Logistic,
}

/// Selects the full model (U1) or the working reduced model (U2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Design {
    SrsWithoutReplacement { population_size: f64 },
    Poisson,
    Unknown,
}

/// Numerically stable logistic function.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    covariates: Vec<f64>,
    response: f64,
    design_weight: f64,
    inclusion_prob: Option<f64>,
}

impl UnitRecord {
    pub fn new(
        covariates: Vec<f64>,
        response: f64,
        design_weight: f64,
        inclusion_prob: Option<f64>,
    ) -> Result<Self> {
        if covariates.iter().any(|v| !v.is_finite()) || !response.is_finite() {
            return Err(Error::NonFiniteInput("unit covariates or response".into()));
        }
        if !(design_weight > 0.0) || !design_weight.is_finite() {
            return Err(Error::InvalidSample(format!(
                "design weight must be positive, got {design_weight}"
            )));
        }
        if let Some(pi) = inclusion_prob {
            if !(pi > 0.0 && pi <= 1.0) {
                return Err(Error::InvalidSample(format!(
                    "inclusion probability must lie in (0, 1], got {pi}"
                )));
            }
            if (design_weight - 1.0 / pi).abs() > INCLUSION_TOL * design_weight {
                return Err(Error::InvalidSample(format!(
                    "design weight {design_weight} does not match 1/pi = {}",
                    1.0 / pi
                )));
            }
        }
        Ok(Self {
            covariates,
            response,
            design_weight,
            inclusion_prob,
        })
    }

    /// Unit with inclusion probability `pi` and weight `1/pi`.
    pub fn from_inclusion(covariates: Vec<f64>, response: f64, pi: f64) -> Result<Self> {
        Self::new(covariates, response, 1.0 / pi, Some(pi))
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn response(&self) -> f64 {
        self.response
    }

    pub fn design_weight(&self) -> f64 {
        self.design_weight
    }

    pub fn inclusion_prob(&self) -> Option<f64> {
        self.inclusion_prob
    }

    /// Same record with a different weight and no inclusion probability.
    pub fn reweighted(&self, weight: f64) -> Result<Self> {
        Self::new(self.covariates.clone(), self.response, weight, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveySample {
    units: Vec<UnitRecord>,
    design: Design,
    label: String,
    covariate_names: Vec<String>,
}

impl SurveySample {
    pub fn new(units: Vec<UnitRecord>, design: Design, label: impl Into<String>) -> Result<Self> {
        let p = units
            .first()
            .map(|u| u.covariates.len())
            .ok_or_else(|| Error::InvalidSample("sample is empty".into()))?;
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(units, design, label, names)
    }

    pub fn with_names(
        units: Vec<UnitRecord>,
        design: Design,
        label: impl Into<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let first = units
            .first()
            .ok_or_else(|| Error::InvalidSample("sample is empty".into()))?;
        let p = first.covariates.len();
        if let Some((i, _)) = units
            .iter()
            .enumerate()
            .find(|(_, u)| u.covariates.len() != p)
        {
            return Err(Error::DimensionMismatch(format!(
                "unit {i} has {} covariates, expected {p}",
                units[i].covariates.len()
            )));
        }
        if covariate_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate names for {p} covariates",
                covariate_names.len()
            )));
        }
        match design {
            Design::SrsWithoutReplacement { population_size } => {
                let n = units.len() as f64;
                if !(population_size >= n) {
                    return Err(Error::InvalidSample(format!(
                        "SRS population size {population_size} below sample size {n}"
                    )));
                }
                let expected = population_size / n;
                if units
                    .iter()
                    .any(|u| (u.design_weight - expected).abs() > INCLUSION_TOL * expected)
                {
                    return Err(Error::InvalidSample(format!(
                        "SRS design requires all weights equal to N/n = {expected}"
                    )));
                }
            }
            Design::Poisson | Design::Unknown => {}
        }
        Ok(Self {
            units,
            design,
            label: label.into(),
            covariate_names,
        })
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.units[0].covariates.len()
    }

    pub fn design_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.units.iter().map(|u| u.design_weight))
    }

    /// Horvitz-Thompson estimate of the population size.
    pub fn population_size_hat(&self) -> f64 {
        linalg::compensated_sum(self.units.iter().map(|u| u.design_weight))
    }
}

/// Regression family plus the covariate masks of the full and reduced models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatingSpec {
    family: Family,
    full_mask: Vec<bool>,
    reduced_mask: Vec<bool>,
    intercept: bool,
}

impl EstimatingSpec {
    pub fn new(
        family: Family,
        full_mask: Vec<bool>,
        reduced_mask: Vec<bool>,
        intercept: bool,
    ) -> Result<Self> {
        if full_mask.len() != reduced_mask.len() {
            return Err(Error::InvalidSpec(format!(
                "mask lengths differ: {} vs {}",
                full_mask.len(),
                reduced_mask.len()
            )));
        }
        if reduced_mask.iter().zip(&full_mask).any(|(&r, &f)| r && !f) {
            return Err(Error::InvalidSpec(
                "reduced model uses a covariate outside the full model".into(),
            ));
        }
        let spec = Self {
            family,
            full_mask,
            reduced_mask,
            intercept,
        };
        if spec.dim(Which::Reduced) == 0 {
            return Err(Error::InvalidSpec("reduced model has no parameters".into()));
        }
        Ok(spec)
    }

    /// Intercept plus all `p` covariates in the full model, intercept plus the
    /// first covariate in the reduced model.
    pub fn standard(family: Family, p: usize) -> Result<Self> {
        let full = vec![true; p];
        let mut reduced = vec![false; p];
        if p > 0 {
            reduced[0] = true;
        }
        Self::new(family, full, reduced, true)
    }

    /// Build masks from covariate names.
    pub fn from_names(
        family: Family,
        names: &[String],
        full: &[&str],
        reduced: &[&str],
    ) -> Result<Self> {
        let mask = |sel: &[&str]| -> Result<Vec<bool>> {
            for s in sel {
                if !names.iter().any(|n| n == s) {
                    return Err(Error::InvalidSpec(format!("unknown covariate {s}")));
                }
            }
            Ok(names.iter().map(|n| sel.contains(&n.as_str())).collect())
        };
        Self::new(family, mask(full)?, mask(reduced)?, true)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn mask(&self, which: Which) -> &[bool] {
        match which {
            Which::Full => &self.full_mask,
            Which::Reduced => &self.reduced_mask,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.full_mask.len()
    }

    /// Parameter dimension: q1 for the full model, q2 for the reduced one.
    pub fn dim(&self, which: Which) -> usize {
        usize::from(self.intercept) + self.mask(which).iter().filter(|&&b| b).count()
    }

    /// Copy of this spec whose reduced model is replaced by `reduced_mask`.
    pub fn with_reduced(&self, reduced_mask: Vec<bool>) -> Result<Self> {
        Self::new(self.family, self.full_mask.clone(), reduced_mask, self.intercept)
    }

    /// Spec whose "full" model is this spec's reduced model. Useful for
    /// fitting the working model as a standalone regression.
    pub fn reduced_as_full(&self) -> Self {
        Self {
            family: self.family,
            full_mask: self.reduced_mask.clone(),
            reduced_mask: self.reduced_mask.clone(),
            intercept: self.intercept,
        }
    }

    /// Model gradient vector `h = (1, x_masked)`.
    pub fn regressors(&self, which: Which, covariates: &[f64]) -> DVector<f64> {
        let mask = self.mask(which);
        let mut h = Vec::with_capacity(self.dim(which));
        if self.intercept {
            h.push(1.0);
        }
        h.extend(
            covariates
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x),
        );
        DVector::from_vec(h)
    }

    fn check(&self, which: Which, theta: &DVector<f64>, unit: &UnitRecord) -> Result<()> {
        if unit.covariates.len() != self.n_covariates() {
            return Err(Error::DimensionMismatch(format!(
                "unit has {} covariates, spec expects {}",
                unit.covariates.len(),
                self.n_covariates()
            )));
        }
        if theta.len() != self.dim(which) {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, model dimension is {}",
                theta.len(),
                self.dim(which)
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("theta".into()));
        }
        Ok(())
    }

    /// Mean function and its derivative at linear predictor `eta`.
    pub fn mean_and_slope(&self, eta: f64) -> (f64, f64) {
        match self.family {
            Family::Linear => (eta, 1.0),
            Family::Logistic => {
                let p = expit(eta);
                (p, p * (1.0 - p))
            }
        }
    }

    /// Score and jacobian for one unit without dimension checks.
    pub(crate) fn score_parts(
        &self,
        which: Which,
        theta: &DVector<f64>,
        unit: &UnitRecord,
    ) -> (DVector<f64>, f64, f64) {
        let h = self.regressors(which, &unit.covariates);
        let (m, slope) = self.mean_and_slope(h.dot(theta));
        (h, unit.response - m, slope)
    }
}

/// Estimating function `U(θ; x, y) = {y - m(h'θ)} h`.
pub fn eval_score(
    spec: &EstimatingSpec,
    which: Which,
    theta: &DVector<f64>,
    unit: &UnitRecord,
) -> Result<DVector<f64>> {
    spec.check(which, theta, unit)?;
    let (h, resid, _) = spec.score_parts(which, theta, unit);
    let u = h * resid;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("score evaluated to a non-finite value".into()));
    }
    Ok(u)
}

/// Analytic `∂U/∂θ'`: `-h h'` for linear, `-p(1-p) h h'` for logistic.
pub fn eval_score_jacobian(
    spec: &EstimatingSpec,
    which: Which,
    theta: &DVector<f64>,
    unit: &UnitRecord,
) -> Result<DMatrix<f64>> {
    spec.check(which, theta, unit)?;
    let (h, _, slope) = spec.score_parts(which, theta, unit);
    Ok(&h * h.transpose() * (-slope))
}

/// Design weights scaled to sum to one.
pub fn normalized_weights(sample: &SurveySample) -> DVector<f64> {
    let total = sample.population_size_hat();
    DVector::from_iterator(
        sample.len(),
        sample.units.iter().map(|u| u.design_weight / total),
    )
}

/// `Σ d_i v_i`.
pub fn ht_total(sample: &SurveySample, values: &[f64]) -> Result<f64> {
    if values.len() != sample.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} units",
            values.len(),
            sample.len()
        )));
    }
    Ok(linalg::compensated_sum(
        sample
            .units
            .iter()
            .zip(values)
            .map(|(u, v)| u.design_weight * v),
    ))
}

/// Per-unit scores as rows of an `n x q` matrix.
pub fn score_matrix(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    which: Which,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let q = spec.dim(which);
    let mut out = DMatrix::zeros(sample.len(), q);
    for (i, unit) in sample.units.iter().enumerate() {
        let u = eval_score(spec, which, theta, unit)?;
        out.row_mut(i).copy_from(&u.transpose());
    }
    Ok(out)
}

/// `Σ w_i ∂U_i/∂θ'`.
pub fn weighted_jacobian(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    which: Which,
    weights: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let q = spec.dim(which);
    let mut jac = DMatrix::zeros(q, q);
    for (unit, &w) in sample.units.iter().zip(weights.iter()) {
        spec.check(which, theta, unit)?;
        let (h, _, slope) = spec.score_parts(which, theta, unit);
        jac.ger(-w * slope, &h, &h, 1.0);
    }
    Ok(jac)
}

fn weighted_score_and_jacobian(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    which: Which,
    weights: &DVector<f64>,
    theta: &DVector<f64>,
    with_jacobian: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = spec.dim(which);
    let mut score = DVector::zeros(q);
    let mut jac = DMatrix::zeros(if with_jacobian { q } else { 0 }, q);
    for (unit, &w) in sample.units.iter().zip(weights.iter()) {
        let (h, resid, slope) = spec.score_parts(which, theta, unit);
        score.axpy(w * resid, &h, 1.0);
        if with_jacobian {
            jac.ger(-w * slope, &h, &h, 1.0);
        }
    }
    (score, jac)
}

/// Solve `Σ w_i U(θ; x_i, y_i) = 0` by damped Newton.
///
/// Weights are rescaled to sum to one before solving, so the root and the
/// stopping rule do not depend on the weight scale.
pub fn solve_weighted_z(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    which: Which,
    weights: &DVector<f64>,
    theta0: &DVector<f64>,
) -> Result<DVector<f64>> {
    if weights.len() != sample.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} units",
            weights.len(),
            sample.len()
        )));
    }
    if let Some(unit) = sample.units.first() {
        spec.check(which, theta0, unit)?;
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::NonFiniteInput("weights must be finite and non-negative".into()));
    }
    let total = linalg::compensated_sum(weights.iter().copied());
    if !(total > 0.0) {
        return Err(Error::InvalidSample("weights sum to zero".into()));
    }
    let w = weights / total;

    let mut theta = theta0.clone();
    let (mut score, mut jac) = weighted_score_and_jacobian(sample, spec, which, &w, &theta, true);
    let mut norm = linalg::max_abs(&score);
    for _ in 0..Z_MAX_ITER {
        if norm <= Z_TOL * theta.norm().max(1.0) {
            return Ok(theta);
        }
        let step = linalg::solve(&jac, &(-&score)).ok_or_else(|| {
            Error::SingularJacobian("weighted score jacobian is singular".into())
        })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=Z_MAX_HALVINGS {
            let cand = &theta + &step * t;
            let (s, _) = weighted_score_and_jacobian(sample, spec, which, &w, &cand, false);
            let n = linalg::max_abs(&s);
            if n.is_finite() && n < norm {
                theta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // At the rounding floor no step can lower the residual further.
            if linalg::max_abs(&step) <= 1e-12 * theta.norm().max(1.0) {
                return Ok(theta);
            }
            return Err(Error::NoConvergence {
                iterations: Z_MAX_ITER,
                residual: norm,
            });
        }
        let (s, j) = weighted_score_and_jacobian(sample, spec, which, &w, &theta, true);
        score = s;
        jac = j;
        norm = linalg::max_abs(&score);
    }
    if norm <= Z_TOL * theta.norm().max(1.0) {
        Ok(theta)
    } else {
        Err(Error::NoConvergence {
            iterations: Z_MAX_ITER,
            residual: norm,
        })
    }
}

/// Point estimate and covariance of a working-model parameter published by a
/// source.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStatistic {
    alpha: DVector<f64>,
    covariance: DMatrix<f64>,
    n_source: Option<u64>,
}

impl SummaryStatistic {
    pub fn new(
        alpha: DVector<f64>,
        covariance: DMatrix<f64>,
        n_source: Option<u64>,
    ) -> Result<Self> {
        let q = alpha.len();
        if covariance.nrows() != q || covariance.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, alpha has length {q}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if alpha.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("summary statistic".into()));
        }
        if linalg::relative_asymmetry(&covariance) > 1e-12 {
            return Err(Error::AsymmetricCovariance(format!(
                "relative asymmetry {:e}",
                linalg::relative_asymmetry(&covariance)
            )));
        }
        if !linalg::is_psd(&covariance, 1e-10) {
            return Err(Error::SingularCovariance(
                "covariance is not positive semidefinite".into(),
            ));
        }
        Ok(Self {
            alpha,
            covariance: linalg::symmetrize(&covariance),
            n_source,
        })
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn n_source(&self) -> Option<u64> {
        self.n_source
    }

    /// True when only the diagonal of the covariance is populated.
    pub fn is_diagonal(&self) -> bool {
        let q = self.alpha.len();
        (0..q).all(|i| (0..q).all(|j| i == j || self.covariance[(i, j)] == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn unit(x: &[f64], y: f64) -> UnitRecord {
        UnitRecord::new(x.to_vec(), y, 1.0, None).unwrap()
    }

    #[test]
    fn exact_fit_score_is_zero() {
        let spec = EstimatingSpec::standard(Family::Linear, 2).unwrap();
        let u = eval_score(&spec, Which::Full, &dvector![1.0, 2.0, 1.0], &unit(&[3.0, 11.0], 18.0))
            .unwrap();
        assert_eq!(u, dvector![0.0, 0.0, 0.0]);
    }

    #[test]
    fn logistic_reduced_score_at_zero() {
        let spec = EstimatingSpec::standard(Family::Logistic, 2).unwrap();
        let u = eval_score(&spec, Which::Reduced, &dvector![0.0, 0.0], &unit(&[5.0, 7.0], 1.0))
            .unwrap();
        assert_eq!(u, dvector![0.5, 2.5]);
    }

    #[test]
    fn linear_reduced_score_by_hand() {
        let spec = EstimatingSpec::standard(Family::Linear, 2).unwrap();
        let u = eval_score(&spec, Which::Reduced, &dvector![0.0, 1.0], &unit(&[2.0, 9.0], 5.0))
            .unwrap();
        assert_eq!(u, dvector![3.0, 6.0]);
    }

    #[test]
    fn score_dimension_mismatch() {
        let spec = EstimatingSpec::standard(Family::Linear, 2).unwrap();
        let err = eval_score(&spec, Which::Full, &dvector![1.0, 2.0], &unit(&[3.0, 11.0], 18.0));
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
        let err = eval_score(&spec, Which::Full, &dvector![1.0, 2.0, 0.0], &unit(&[3.0], 18.0));
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(matches!(
            UnitRecord::new(vec![f64::NAN], 1.0, 1.0, None),
            Err(Error::NonFiniteInput(_))
        ));
        let spec = EstimatingSpec::standard(Family::Linear, 1).unwrap();
        let err = eval_score(&spec, Which::Full, &dvector![f64::INFINITY, 0.0], &unit(&[1.0], 1.0));
        assert!(matches!(err, Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn jacobian_closed_forms() {
        let spec = EstimatingSpec::standard(Family::Linear, 1).unwrap();
        let j = eval_score_jacobian(&spec, Which::Full, &dvector![0.3, -1.0], &unit(&[2.0], 0.0))
            .unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, -2.0, -4.0]));
        let spec = EstimatingSpec::standard(Family::Logistic, 1).unwrap();
        let j = eval_score_jacobian(&spec, Which::Full, &dvector![0.0, 0.0], &unit(&[0.0], 1.0))
            .unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[-0.25, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn normalized_weight_examples() {
        let mk = |d: &[f64]| {
            let units = d
                .iter()
                .map(|&w| UnitRecord::new(vec![0.0], 0.0, w, None).unwrap())
                .collect();
            SurveySample::new(units, Design::Unknown, "t").unwrap()
        };
        assert!((normalized_weights(&mk(&[2.0, 2.0, 2.0])) - dvector![1.0, 1.0, 1.0] / 3.0).amax() < 1e-15);
        assert_eq!(normalized_weights(&mk(&[1.0, 3.0])), dvector![0.25, 0.75]);
        assert!((normalized_weights(&mk(&[10.0, 30.0, 60.0])) - dvector![0.1, 0.3, 0.6]).amax() < 1e-15);
    }

    #[test]
    fn ht_total_examples() {
        let mk = |d: &[f64]| {
            let units = d
                .iter()
                .map(|&w| UnitRecord::new(vec![0.0], 0.0, w, None).unwrap())
                .collect();
            SurveySample::new(units, Design::Unknown, "t").unwrap()
        };
        assert_eq!(ht_total(&mk(&[2.0, 2.0]), &[1.0, 1.0]).unwrap(), 4.0);
        assert_eq!(ht_total(&mk(&[10.0, 20.0]), &[0.5, 0.25]).unwrap(), 10.0);
        assert_eq!(ht_total(&mk(&[10.0, 20.0]), &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            ht_total(&mk(&[10.0, 20.0]), &[0.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn interpolating_solution() {
        let units = vec![
            unit(&[0.0, 0.0], 1.0),
            unit(&[1.0, 0.0], 3.0),
            unit(&[0.0, 1.0], 2.0),
        ];
        let s = SurveySample::new(units, Design::Unknown, "t").unwrap();
        let spec = EstimatingSpec::standard(Family::Linear, 2).unwrap();
        let theta = solve_weighted_z(&s, &spec, Which::Full, &DVector::from_element(3, 1.0), &DVector::zeros(3))
            .unwrap();
        assert!((theta - dvector![1.0, 2.0, 1.0]).amax() < 1e-12);
    }

    #[test]
    fn logistic_symmetric_data_has_zero_intercept() {
        let xs = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let ys = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let units = xs.iter().zip(ys).map(|(&x, y)| unit(&[x], y)).collect();
        let s = SurveySample::new(units, Design::Unknown, "t").unwrap();
        let spec = EstimatingSpec::standard(Family::Logistic, 1).unwrap();
        let theta = solve_weighted_z(&s, &spec, Which::Full, &DVector::from_element(6, 1.0), &DVector::zeros(2))
            .unwrap();
        assert!(theta[0].abs() < 1e-10);
    }

    #[test]
    fn srs_requires_equal_weights() {
        let units = vec![
            UnitRecord::new(vec![0.0], 0.0, 5.0, None).unwrap(),
            UnitRecord::new(vec![0.0], 0.0, 4.0, None).unwrap(),
        ];
        let err = SurveySample::new(units, Design::SrsWithoutReplacement { population_size: 10.0 }, "t");
        assert!(matches!(err, Err(Error::InvalidSample(_))));
    }

    #[test]
    fn inclusion_probability_must_match_weight() {
        assert!(UnitRecord::new(vec![0.0], 0.0, 4.0, Some(0.25)).is_ok());
        assert!(UnitRecord::new(vec![0.0], 0.0, 4.0, Some(0.2)).is_err());
    }

    #[test]
    fn reduced_mask_must_be_nested() {
        assert!(EstimatingSpec::new(Family::Linear, vec![true, false], vec![false, true], true).is_err());
        assert!(EstimatingSpec::new(Family::Linear, vec![true, true], vec![false, false], false).is_err());
    }

    #[test]
    fn summary_statistic_validation() {
        assert!(SummaryStatistic::new(dvector![1.0, 2.0], DMatrix::identity(2, 2), None).is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            SummaryStatistic::new(dvector![1.0, 2.0], asym, None),
            Err(Error::AsymmetricCovariance(_))
        ));
    }
}
