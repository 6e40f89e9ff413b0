//! Density-ratio propensity weights for a selection-biased big sample.
//!
//! With `N1` units in the big sample and `N̂0 = Σ_{S1} d_i - N1` units outside
//! it, a log-linear ratio `r(f) = exp(φ'f)` between the non-selected and
//! selected densities is fitted by exponential tilting: the tilted big-sample
//! moments `N1⁻¹ Σ exp(φ'f_i) f_i` must match the design-weighted moments of
//! the non-selected part. Inverse selection probabilities are then
//! `1 + (N̂0/N1) r(f)`.

use nalgebra::{DMatrix, DVector};

use crate::domain::{self, Design, EstimatingSpec, SummaryStatistic, SurveySample, UnitRecord, Which};
use crate::error::{Error, Result};
use crate::fusion;
use crate::linalg;

const EXP_CLAMP: f64 = 50.0;
const MOMENT_TOL: f64 = 1e-9;
const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 60;

/// Columns of the ratio model: an intercept, the selected covariates and
/// optionally the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSelector {
    pub covariate_mask: Vec<bool>,
    pub include_response: bool,
}

impl FeatureSelector {
    /// Intercept, the reduced-model covariates and the response.
    pub fn from_spec(spec: &EstimatingSpec) -> Self {
        Self {
            covariate_mask: spec.mask(Which::Reduced).to_vec(),
            include_response: true,
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.covariate_mask.iter().filter(|&&b| b).count() + usize::from(self.include_response)
    }

    pub fn features(&self, unit: &UnitRecord) -> DVector<f64> {
        let mut f = Vec::with_capacity(self.dim());
        f.push(1.0);
        f.extend(
            unit.covariates()
                .iter()
                .zip(&self.covariate_mask)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x),
        );
        if self.include_response {
            f.push(unit.response());
        }
        DVector::from_vec(f)
    }

    fn matrix(&self, sample: &SurveySample) -> Result<DMatrix<f64>> {
        if sample.n_covariates() != self.covariate_mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature mask has length {}, sample {} has {} covariates",
                self.covariate_mask.len(),
                sample.label(),
                sample.n_covariates()
            )));
        }
        let mut m = DMatrix::zeros(sample.len(), self.dim());
        for (i, u) in sample.units().iter().enumerate() {
            m.row_mut(i).copy_from(&self.features(u).transpose());
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioModel {
    pub phi: DVector<f64>,
    pub n1: usize,
    /// Estimated count of non-selected units; zero when the big sample is a
    /// census.
    pub n0_hat: f64,
    pub moment_targets: DVector<f64>,
    pub features: FeatureSelector,
    pub iterations: usize,
}

/// Tilted moments `N1⁻¹ Σ exp(φ'f_i) f_i` and their jacobian.
fn tilted_moments(f: &DMatrix<f64>, phi: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, f64) {
    let n1 = f.nrows() as f64;
    let k = f.ncols();
    let eta = f * phi;
    let mut m = DVector::zeros(k);
    let mut h = DMatrix::zeros(k, k);
    let mut total = 0.0;
    for (i, row) in f.row_iter().enumerate() {
        let e = eta[i].clamp(-EXP_CLAMP, EXP_CLAMP).exp() / n1;
        let r = row.transpose();
        m.axpy(e, &r, 1.0);
        h.ger(e, &r, &r, 1.0);
        total += e;
    }
    (m, h, total)
}

/// Fit the ratio model starting from `φ = 0`.
pub fn solve_density_ratio(
    big: &SurveySample,
    internal: &SurveySample,
    selector: &FeatureSelector,
) -> Result<DensityRatioModel> {
    solve_density_ratio_from(big, internal, selector, None)
}

/// Fit the ratio model by damped Newton on the convex objective
/// `G(φ) = N1⁻¹ Σ exp(φ'f_i) - φ't`, whose gradient is the moment residual.
pub fn solve_density_ratio_from(
    big: &SurveySample,
    internal: &SurveySample,
    selector: &FeatureSelector,
    phi0: Option<&DVector<f64>>,
) -> Result<DensityRatioModel> {
    let fb = selector.matrix(big)?;
    let fi = selector.matrix(internal)?;
    let k = selector.dim();
    let n1 = big.len();
    let n_hat = internal.population_size_hat();
    let n0_hat = n_hat - n1 as f64;
    if n0_hat.abs() <= 1e-9 * n_hat {
        // The big sample is the whole population: every unit is selected.
        return Ok(DensityRatioModel {
            phi: DVector::zeros(k),
            n1,
            n0_hat: 0.0,
            moment_targets: DVector::from_fn(k, |i, _| if i == 0 { 1.0 } else { 0.0 }),
            features: selector.clone(),
            iterations: 0,
        });
    }
    if !(n0_hat > 0.0) {
        return Err(Error::DegenerateTargets(format!(
            "estimated non-selected count {n0_hat} is not positive"
        )));
    }
    let d = internal.design_weights();
    let mut targets = (fi.transpose() * d - fb.row_sum().transpose()) / n0_hat;
    targets[0] = 1.0;

    let mut phi = match phi0 {
        Some(p) if p.len() == k => p.clone(),
        Some(p) => {
            return Err(Error::DimensionMismatch(format!(
                "start has length {}, model has {k} features",
                p.len()
            )))
        }
        None => DVector::zeros(k),
    };
    let objective = |total: f64, phi: &DVector<f64>| total - phi.dot(&targets);
    let (m, mut h, total) = tilted_moments(&fb, &phi);
    let mut grad = m - &targets;
    let mut obj = objective(total, &phi);
    let mut iterations = 0;
    while linalg::max_abs(&grad) > MOMENT_TOL {
        if iterations == MAX_ITER {
            return Err(Error::NoConvergence {
                iterations,
                residual: linalg::max_abs(&grad),
            });
        }
        iterations += 1;
        let step = linalg::solve(&h, &(-&grad)).ok_or_else(|| {
            Error::DegenerateTargets("tilted moment matrix is singular".into())
        })?;
        let slope = grad.dot(&step);
        let res = linalg::max_abs(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &phi + &step * t;
            let (cm, ch, ctotal) = tilted_moments(&fb, &cand);
            let cobj = objective(ctotal, &cand);
            let cgrad = cm - &targets;
            if cobj.is_finite() && (cobj <= obj + 1e-4 * t * slope || linalg::max_abs(&cgrad) < res) {
                phi = cand;
                h = ch;
                obj = cobj;
                grad = cgrad;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
            });
        }
        if (&fb * &phi).amax() > EXP_CLAMP {
            return Err(Error::DegenerateTargets(
                "targets lie outside the range of the big-sample features".into(),
            ));
        }
    }
    Ok(DensityRatioModel {
        phi,
        n1,
        n0_hat,
        moment_targets: targets,
        features: selector.clone(),
        iterations,
    })
}

/// Inverse selection probability `1 + (N̂0/N1) exp(φ'f)`, with the exponent
/// clamped to `±50`. The flag reports whether clamping happened.
pub fn propensity_inverse(model: &DensityRatioModel, unit: &UnitRecord) -> (f64, bool) {
    let eta = model.phi.dot(&model.features.features(unit));
    let clamped = eta.abs() > EXP_CLAMP;
    let r = eta.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
    (1.0 + model.n0_hat / model.n1 as f64 * r, clamped)
}

/// Reduced-model fit on the big sample weighted by the inverse selection
/// probabilities, with a with-replacement sandwich covariance that treats the
/// weights as fixed.
pub fn debiased_alpha2(
    big: &SurveySample,
    spec: &EstimatingSpec,
    model: &DensityRatioModel,
) -> Result<SummaryStatistic> {
    let units = big
        .units()
        .iter()
        .map(|u| u.reweighted(propensity_inverse(model, u).0))
        .collect::<Result<Vec<_>>>()?;
    let weighted = SurveySample::with_names(
        units,
        Design::Unknown,
        big.label(),
        big.covariate_names().to_vec(),
    )?;
    let q2 = spec.dim(Which::Reduced);
    let alpha = domain::solve_weighted_z(
        &weighted,
        spec,
        Which::Reduced,
        &weighted.design_weights(),
        &DVector::zeros(q2),
    )?;
    let v = fusion::variance_linearized(&weighted, spec, Which::Reduced, &alpha)?;
    SummaryStatistic::new(alpha, v, Some(big.len() as u64))
}

/// Reduced-model fit on the big sample ignoring selection.
pub fn naive_alpha2(big: &SurveySample, spec: &EstimatingSpec) -> Result<SummaryStatistic> {
    let units = big
        .units()
        .iter()
        .map(|u| u.reweighted(1.0))
        .collect::<Result<Vec<_>>>()?;
    let flat = SurveySample::with_names(units, Design::Unknown, big.label(), big.covariate_names().to_vec())?;
    fusion::estimate_alpha_internal(&flat, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn sample(points: &[(f64, f64)], weight: f64) -> SurveySample {
        let units = points
            .iter()
            .map(|&(x, y)| UnitRecord::new(vec![x], y, weight, None).unwrap())
            .collect();
        SurveySample::new(units, Design::Unknown, "t").unwrap()
    }

    fn one_feature() -> FeatureSelector {
        FeatureSelector {
            covariate_mask: vec![true],
            include_response: false,
        }
    }

    #[test]
    fn matching_means_need_no_tilt() {
        // Big sample {0, 1}; internal sample representing four units with
        // total feature sum 2, leaving mean 0.5 for the two non-selected.
        let big = sample(&[(0.0, 0.0), (1.0, 0.0)], 1.0);
        let internal = sample(&[(0.0, 0.0), (1.0, 0.0)], 2.0);
        let m = solve_density_ratio(&big, &internal, &one_feature()).unwrap();
        assert!(m.phi.amax() < 1e-12);
        assert_eq!(m.moment_targets, dvector![1.0, 0.5]);
    }

    #[test]
    fn shifted_mean_closed_form() {
        // Non-selected total 2, feature sum 2.6 - 1, so the target mean is 0.8.
        let big = sample(&[(0.0, 0.0), (1.0, 0.0)], 1.0);
        let internal = sample(&[(0.0, 0.0), (0.6, 0.0), (1.0, 0.0), (1.0, 0.0)], 1.0);
        let m = solve_density_ratio(&big, &internal, &one_feature()).unwrap();
        assert!((m.moment_targets[1] - 0.8).abs() < 1e-12);
        assert!((m.phi[1].exp() - 4.0).abs() < 1e-8);
        assert!((m.phi[0].exp() - 0.4).abs() < 1e-8);
    }

    #[test]
    fn unreachable_target_is_degenerate() {
        let big = sample(&[(0.0, 0.0), (1.0, 0.0)], 1.0);
        let internal = sample(&[(2.0, 0.0), (2.0, 0.0)], 2.0);
        assert!(matches!(
            solve_density_ratio(&big, &internal, &one_feature()),
            Err(Error::DegenerateTargets(_))
        ));
    }

    #[test]
    fn inverse_propensity_closed_forms() {
        let unit = UnitRecord::new(vec![1.3], 2.0, 1.0, None).unwrap();
        let mut m = DensityRatioModel {
            phi: dvector![0.0, 0.0],
            n1: 10,
            n0_hat: 10.0,
            moment_targets: dvector![1.0, 0.0],
            features: one_feature(),
            iterations: 0,
        };
        assert_eq!(propensity_inverse(&m, &unit), (2.0, false));
        m.phi = dvector![2f64.ln(), 0.0];
        m.n0_hat = 30.0;
        assert!((propensity_inverse(&m, &unit).0 - 7.0).abs() < 1e-12);
        m.n0_hat = 1e-300;
        assert!((propensity_inverse(&m, &unit).0 - 1.0).abs() < 1e-12);
        m.phi = dvector![100.0, 0.0];
        assert!(propensity_inverse(&m, &unit).1);
    }

    #[test]
    fn census_big_sample_gets_unit_weights() {
        let big = sample(&[(0.0, 0.0), (1.0, 0.0)], 1.0);
        let internal = sample(&[(0.0, 0.0), (1.0, 0.0)], 1.0);
        let m = solve_density_ratio(&big, &internal, &one_feature()).unwrap();
        assert_eq!(propensity_inverse(&m, &big.units()[0]), (1.0, false));
    }

    #[test]
    fn big_sample_larger_than_population_is_rejected() {
        let big = sample(&[(0.0, 0.0), (1.0, 0.0), (0.5, 0.0)], 1.0);
        let internal = sample(&[(0.0, 0.0), (1.0, 0.0)], 1.0);
        assert!(matches!(
            solve_density_ratio(&big, &internal, &one_feature()),
            Err(Error::DegenerateTargets(_))
        ));
    }
}
