//! Sandwich covariances and Wald intervals for the calibrated estimator.
//!
//! All covariances are on the `n^{1/2}(β̂ - β)` scale; interval half-widths
//! divide by `n` again. Because the score covariance is itself built as `n`
//! times the design variance of a weighted total, the choice of `n` cancels.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{self, CalibrationResult};
use crate::domain::{self, EstimatingSpec, SummaryStatistic, SurveySample, Which};
use crate::error::{Error, Result};
use crate::fusion::{self, PooledBenchmark};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Benchmark treated as a fixed population quantity.
    KnownAlpha,
    /// Benchmark pooled from an internal and an external estimate.
    PooledAlphaCase1,
    /// External estimate used as the benchmark with its variance ignored.
    ExternalDominant,
}

/// Plug-in blocks of the calibrated estimator's asymptotic covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDecomposition {
    /// `Σ d̃ ∂U1/∂β'`
    pub i11: DMatrix<f64>,
    /// `Σ d̃ U1 U2'`
    pub i12: DMatrix<f64>,
    /// `Σ d̃ U2 U2'`
    pub i22: DMatrix<f64>,
    /// `Σ d̃ ∂U2/∂α'`
    pub i0: DMatrix<f64>,
    /// `n` times the design covariance of `Σ d̃ (U1', U2')'`.
    pub sigma_u: DMatrix<f64>,
    pub mode: VarianceMode,
    pub n: usize,
}

impl VarianceDecomposition {
    pub fn q1(&self) -> usize {
        self.i11.nrows()
    }

    pub fn q2(&self) -> usize {
        self.i22.nrows()
    }

    pub fn sigma11(&self) -> DMatrix<f64> {
        self.sigma_u.view((0, 0), (self.q1(), self.q1())).into_owned()
    }

    pub fn sigma12(&self) -> DMatrix<f64> {
        self.sigma_u.view((0, self.q1()), (self.q1(), self.q2())).into_owned()
    }

    pub fn sigma22(&self) -> DMatrix<f64> {
        let q1 = self.q1();
        self.sigma_u.view((q1, q1), (self.q2(), self.q2())).into_owned()
    }
}

/// Evaluate the plug-in blocks at `(beta_hat, alpha_used)` with the normalized
/// design weights.
pub fn assemble_decomposition(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    beta_hat: &DVector<f64>,
    alpha_used: &DVector<f64>,
    mode: VarianceMode,
) -> Result<VarianceDecomposition> {
    let dt = domain::normalized_weights(sample);
    let u1 = domain::score_matrix(sample, spec, Which::Full, beta_hat)?;
    let u2 = domain::score_matrix(sample, spec, Which::Reduced, alpha_used)?;
    let (q1, q2) = (u1.ncols(), u2.ncols());

    let mut u1w = u1.clone();
    let mut u2w = u2.clone();
    for i in 0..sample.len() {
        u1w.row_mut(i).scale_mut(dt[i]);
        u2w.row_mut(i).scale_mut(dt[i]);
    }
    let i12 = u1w.transpose() * &u2;
    let i22 = linalg::symmetrize(&(u2w.transpose() * &u2));
    let i11 = domain::weighted_jacobian(sample, spec, Which::Full, &dt, beta_hat)?;
    let i0 = domain::weighted_jacobian(sample, spec, Which::Reduced, &dt, alpha_used)?;

    let mut stacked = DMatrix::zeros(sample.len(), q1 + q2);
    stacked.columns_mut(0, q1).copy_from(&u1);
    stacked.columns_mut(q1, q2).copy_from(&u2);
    let n = sample.len();
    let sigma_u = fusion::score_covariance(sample, &stacked)? * n as f64;

    Ok(VarianceDecomposition {
        i11,
        i12,
        i22,
        i0,
        sigma_u,
        mode,
        n,
    })
}

fn inverse_block(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    linalg::try_inverse(m).ok_or_else(|| Error::SingularBlock(format!("{what} is singular")))
}

/// `I11⁻¹Σ11I11⁻ᵀ − I11⁻¹I12I22⁻¹Σ21I11⁻ᵀ − I11⁻¹Σ12I22⁻¹I12ᵀI11⁻ᵀ
///  + I11⁻¹I12I22⁻¹Σ22I22⁻¹I12ᵀI11⁻ᵀ`
fn four_term(
    dec: &VarianceDecomposition,
    s11: &DMatrix<f64>,
    s12: &DMatrix<f64>,
    s22: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let a = inverse_block(&dec.i11, "I11")?;
    let i22inv = inverse_block(&dec.i22, "I22")?;
    let at = a.transpose();
    let b = &dec.i12 * &i22inv;
    let bt = b.transpose();
    let t1 = &a * s11 * &at;
    let t2 = &a * &b * s12.transpose() * &at;
    let t3 = &a * s12 * &bt * &at;
    let t4 = &a * &b * s22 * &bt * &at;
    Ok(linalg::symmetrize(&(t1 - t2 - t3 + t4)))
}

/// Covariance with the benchmark treated as known.
pub fn sandwich_known_alpha(dec: &VarianceDecomposition) -> Result<DMatrix<f64>> {
    four_term(dec, &dec.sigma11(), &dec.sigma12(), &dec.sigma22())
}

/// Covariance of the design-weighted estimator without calibration.
pub fn sandwich_uncalibrated(dec: &VarianceDecomposition) -> Result<DMatrix<f64>> {
    let a = inverse_block(&dec.i11, "I11")?;
    Ok(linalg::symmetrize(&(&a * dec.sigma11() * a.transpose())))
}

/// Known-benchmark covariance with the SRS plug-ins `Σ12 = Î12`, `Σ22 = Î22`,
/// which reduces to `I11⁻¹(Σ11 − I12 I22⁻¹ I21)I11⁻ᵀ`.
pub fn sandwich_srs_plugin(dec: &VarianceDecomposition) -> Result<DMatrix<f64>> {
    four_term(dec, &dec.sigma11(), &dec.i12, &dec.i22)
}

/// Covariance with a pooled benchmark `α̂* = (I - W)α̂1 + Wα̂2`.
///
/// The cross blocks become `Σ̃12 = Σ12 I0⁻ᵀ Wᵀ I0ᵀ` and
/// `Σ̃22 = I0 W (Σc + I0⁻¹ Σ22 I0⁻ᵀ) Wᵀ I0ᵀ` with `Σc = n V2`. An external-only
/// benchmark contributes `Σc = 0`.
pub fn sandwich_estimated_alpha(
    dec: &VarianceDecomposition,
    pooled: &PooledBenchmark,
    n: usize,
) -> Result<DMatrix<f64>> {
    let q2 = dec.q2();
    if pooled.w.nrows() != q2 || pooled.w.ncols() != q2 {
        return Err(Error::DimensionMismatch(format!(
            "GLS weight is {}x{}, reduced model has {q2} parameters",
            pooled.w.nrows(),
            pooled.w.ncols()
        )));
    }
    let i0inv = inverse_block(&dec.i0, "I0")?;
    let i0 = &dec.i0;
    let w = &pooled.w;
    let sigma_c = if pooled.external_only {
        DMatrix::zeros(q2, q2)
    } else {
        pooled.external.covariance() * n as f64
    };
    let s12 = dec.sigma12() * i0inv.transpose() * w.transpose() * i0.transpose();
    let inner = sigma_c + &i0inv * dec.sigma22() * i0inv.transpose();
    let s22 = linalg::symmetrize(&(i0 * w * inner * w.transpose() * i0.transpose()));
    four_term(dec, &dec.sigma11(), &s12, &s22)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationDiagnostics {
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub max_constraint_residual: f64,
    pub converged: bool,
    pub min_weight: f64,
    pub max_weight: f64,
}

impl From<&CalibrationResult> for CalibrationDiagnostics {
    fn from(r: &CalibrationResult) -> Self {
        Self {
            lambda: r.lambda.iter().copied().collect(),
            iterations: r.iterations,
            max_constraint_residual: r.max_constraint_residual,
            converged: r.converged,
            min_weight: r.weights.min(),
            max_weight: r.weights.max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub beta_hat: Vec<f64>,
    pub sigma_beta: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
    pub n: usize,
    pub variance_mode: VarianceMode,
    pub diagnostics: Option<CalibrationDiagnostics>,
}

impl EstimateReport {
    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci_lower[j] <= value && value <= self.ci_upper[j]
    }
}

/// Two-sided standard normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Intervals `β̂_j ± z · sqrt(Σβ_jj / n)`.
pub fn wald_report(
    beta_hat: &DVector<f64>,
    sigma_beta: &DMatrix<f64>,
    n: usize,
    level: f64,
    mode: VarianceMode,
    diagnostics: Option<&CalibrationResult>,
) -> EstimateReport {
    let z = normal_quantile(level);
    let q = beta_hat.len();
    let se: Vec<f64> = (0..q)
        .map(|j| (sigma_beta[(j, j)].max(0.0) / n as f64).sqrt())
        .collect();
    EstimateReport {
        beta_hat: beta_hat.iter().copied().collect(),
        sigma_beta: sigma_beta
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        ci_lower: (0..q).map(|j| beta_hat[j] - z * se[j]).collect(),
        ci_upper: (0..q).map(|j| beta_hat[j] + z * se[j]).collect(),
        std_errors: se,
        level,
        n,
        variance_mode: mode,
        diagnostics: diagnostics.map(CalibrationDiagnostics::from),
    }
}

/// Everything produced by the full calibrated pipeline on one sample.
#[derive(Debug, Clone)]
pub struct CalibratedFit {
    pub report: EstimateReport,
    pub pooled: PooledBenchmark,
    pub calibration: CalibrationResult,
    pub decomposition: VarianceDecomposition,
    pub beta_uncalibrated: DVector<f64>,
}

/// Fit the working model internally, pool it with `external` (or take
/// `external` as is), calibrate, solve the full model and attach a sandwich
/// covariance that accounts for the benchmark's sampling error.
pub fn fit_with_summary(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    external: &SummaryStatistic,
    external_only: bool,
    level: f64,
) -> Result<CalibratedFit> {
    let internal = fusion::estimate_alpha_internal(sample, spec)?;
    let (pooled, mode) = if external_only {
        (
            PooledBenchmark::external_only(Some(internal), external.clone())?,
            VarianceMode::ExternalDominant,
        )
    } else {
        (fusion::gls_pool(&internal, external)?, VarianceMode::PooledAlphaCase1)
    };
    let beta_uncalibrated = calibration::uncalibrated_estimate(sample, spec)?;
    let (beta, cal) =
        calibration::calibrated_estimate(sample, spec, &pooled.alpha_star, &beta_uncalibrated)?;
    let dec = assemble_decomposition(sample, spec, &beta, &pooled.alpha_star, mode)?;
    let n = sample.len();
    let sigma = sandwich_estimated_alpha(&dec, &pooled, n)?;
    let report = wald_report(&beta, &sigma, n, level, mode, Some(&cal));
    Ok(CalibratedFit {
        report,
        pooled,
        calibration: cal,
        decomposition: dec,
        beta_uncalibrated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn scalar_dec(i11: f64, s11: f64, i12: f64, s12: f64, i22: f64, s22: f64) -> VarianceDecomposition {
        VarianceDecomposition {
            i11: DMatrix::from_element(1, 1, i11),
            i12: DMatrix::from_element(1, 1, i12),
            i22: DMatrix::from_element(1, 1, i22),
            i0: DMatrix::from_element(1, 1, 1.0),
            sigma_u: DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]),
            mode: VarianceMode::KnownAlpha,
            n: 1,
        }
    }

    #[test]
    fn four_term_scalar_instance() {
        let v = sandwich_known_alpha(&scalar_dec(2.0, 4.0, 1.0, 1.0, 2.0, 2.0)).unwrap();
        assert!((v[(0, 0)] - 0.875).abs() < 1e-15);
    }

    #[test]
    fn no_cross_moment_gives_uncalibrated() {
        let d = scalar_dec(2.0, 4.0, 0.0, 1.0, 2.0, 2.0);
        assert_eq!(sandwich_known_alpha(&d).unwrap(), sandwich_uncalibrated(&d).unwrap());
    }

    #[test]
    fn half_weight_interpolates() {
        let d = scalar_dec(2.0, 4.0, 1.0, 1.0, 2.0, 2.0);
        let ext = SummaryStatistic::new(dvector![0.0], DMatrix::from_element(1, 1, 2.0), None).unwrap();
        let pooled = PooledBenchmark {
            alpha_star: dvector![0.0],
            v_star: DMatrix::from_element(1, 1, 1.0),
            w: DMatrix::from_element(1, 1, 0.5),
            internal: None,
            external: ext,
            external_only: false,
        };
        // Σc = n V2 = 2 = Σ22 / I0², so Σ̃22 = 0.25 · 4 = 1 and Σ̃12 = 0.5.
        let v = sandwich_estimated_alpha(&d, &pooled, 1).unwrap()[(0, 0)];
        let expect = 0.25 * (4.0 - 0.5 * 0.5 - 0.5 * 0.5 + 0.25 * 1.0);
        assert!((v - expect).abs() < 1e-15);
        let known = sandwich_known_alpha(&d).unwrap()[(0, 0)];
        let uncal = sandwich_uncalibrated(&d).unwrap()[(0, 0)];
        assert!(known < v && v < uncal);
    }

    #[test]
    fn wald_hand_arithmetic() {
        let r = wald_report(
            &dvector![1.0],
            &DMatrix::from_element(1, 1, 4.0),
            400,
            0.95,
            VarianceMode::KnownAlpha,
            None,
        );
        assert!((r.ci_lower[0] - 0.804).abs() < 1e-3);
        assert!((r.ci_upper[0] - 1.196).abs() < 1e-3);
        assert!((normal_quantile(0.95) - 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_degenerate_interval() {
        let r = wald_report(
            &dvector![2.0, 3.0],
            &DMatrix::zeros(2, 2),
            10,
            0.95,
            VarianceMode::KnownAlpha,
            None,
        );
        assert_eq!(r.ci_lower, vec![2.0, 3.0]);
        assert_eq!(r.ci_upper, vec![2.0, 3.0]);
    }
}
