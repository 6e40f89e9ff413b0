//! Linearization variances and GLS pooling of working-model estimates.

use nalgebra::{DMatrix, DVector};

use crate::domain::{self, Design, EstimatingSpec, SummaryStatistic, SurveySample, Which};
use crate::error::{Error, Result};
use crate::linalg;

/// Design-based covariance of the weighted score total `Σ d̃_i U_i`, where the
/// rows of `scores` are the per-unit `U_i`.
///
/// - Poisson: `Σ d̃_i² (1 - π_i) U_i U_i'`
/// - SRS without replacement: `(1 - n/N) n⁻¹ S_U`, with `S_U` the sample
///   covariance of the rows
/// - Unknown: the with-replacement form `Σ d̃_i² U_i U_i'`
pub fn score_covariance(sample: &SurveySample, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sample.len();
    if scores.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} score rows for {n} units",
            scores.nrows()
        )));
    }
    let q = scores.ncols();
    let dt = domain::normalized_weights(sample);
    let mut out = DMatrix::zeros(q, q);
    match sample.design() {
        Design::SrsWithoutReplacement { population_size } => {
            if n < 2 {
                return Ok(out);
            }
            let mean = scores.row_mean();
            for row in scores.row_iter() {
                let c = (row - &mean).transpose();
                out.ger(1.0, &c, &c, 1.0);
            }
            let f = n as f64 / population_size;
            out *= (1.0 - f) / (n as f64 * (n as f64 - 1.0));
        }
        Design::Poisson => {
            for (i, row) in scores.row_iter().enumerate() {
                let pi = 1.0 / sample.units()[i].design_weight();
                let r = row.transpose();
                out.ger(dt[i] * dt[i] * (1.0 - pi), &r, &r, 1.0);
            }
        }
        Design::Unknown => {
            for (i, row) in scores.row_iter().enumerate() {
                let r = row.transpose();
                out.ger(dt[i] * dt[i], &r, &r, 1.0);
            }
        }
    }
    Ok(linalg::symmetrize(&out))
}

/// Sandwich `Î⁻¹ Ŝ Î⁻ᵀ` with `Î = Σ d̃ ∂U/∂θ'` and `Ŝ` from [`score_covariance`].
pub fn variance_linearized(
    sample: &SurveySample,
    spec: &EstimatingSpec,
    which: Which,
    theta_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let dt = domain::normalized_weights(sample);
    let jac = domain::weighted_jacobian(sample, spec, which, &dt, theta_hat)?;
    let jinv = linalg::try_inverse(&jac)
        .ok_or_else(|| Error::SingularJacobian("score jacobian is singular".into()))?;
    let scores = domain::score_matrix(sample, spec, which, theta_hat)?;
    let s = score_covariance(sample, &scores)?;
    Ok(linalg::symmetrize(&(&jinv * s * jinv.transpose())))
}

/// Design-weighted fit of the working reduced model with its linearization
/// covariance.
pub fn estimate_alpha_internal(
    sample: &SurveySample,
    spec: &EstimatingSpec,
) -> Result<SummaryStatistic> {
    let q2 = spec.dim(Which::Reduced);
    let alpha = domain::solve_weighted_z(
        sample,
        spec,
        Which::Reduced,
        &domain::normalized_weights(sample),
        &DVector::zeros(q2),
    )?;
    let v = variance_linearized(sample, spec, Which::Reduced, &alpha)?;
    SummaryStatistic::new(alpha, v, Some(sample.len() as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledBenchmark {
    pub alpha_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
    /// GLS weight on the external estimate, `(V1⁻¹ + V2⁻¹)⁻¹ V2⁻¹`.
    pub w: DMatrix<f64>,
    pub internal: Option<SummaryStatistic>,
    pub external: SummaryStatistic,
    /// Set when the external estimate is taken as the benchmark outright.
    pub external_only: bool,
}

impl PooledBenchmark {
    /// Benchmark equal to the external estimate, `W = I`. Meant for external
    /// sources so large that their sampling error is negligible.
    pub fn external_only(
        internal: Option<SummaryStatistic>,
        external: SummaryStatistic,
    ) -> Result<Self> {
        let q = external.alpha().len();
        if let Some(int) = &internal {
            if int.alpha().len() != q {
                return Err(Error::DimensionMismatch(format!(
                    "internal alpha has length {}, external {q}",
                    int.alpha().len()
                )));
            }
        }
        Ok(Self {
            alpha_star: external.alpha().clone(),
            v_star: external.covariance().clone(),
            w: DMatrix::identity(q, q),
            internal,
            external,
            external_only: true,
        })
    }

    /// GLS weight on the internal estimate, `I - W`.
    pub fn internal_weight(&self) -> DMatrix<f64> {
        let q = self.w.nrows();
        DMatrix::identity(q, q) - &self.w
    }
}

/// Precision-weighted combination of an internal and an external estimate of
/// the working-model parameter.
pub fn gls_pool(internal: &SummaryStatistic, external: &SummaryStatistic) -> Result<PooledBenchmark> {
    let q = internal.alpha().len();
    if external.alpha().len() != q {
        return Err(Error::DimensionMismatch(format!(
            "internal alpha has length {q}, external {}",
            external.alpha().len()
        )));
    }
    let p1 = linalg::spd_inverse(internal.covariance(), "internal covariance")?;
    let p2 = linalg::spd_inverse(external.covariance(), "external covariance")?;
    let v_star = linalg::spd_inverse(&(&p1 + &p2), "pooled precision")?;
    let alpha_star = &v_star * (&p1 * internal.alpha() + &p2 * external.alpha());
    let w = &v_star * &p2;
    Ok(PooledBenchmark {
        alpha_star,
        v_star,
        w,
        internal: Some(internal.clone()),
        external: external.clone(),
        external_only: false,
    })
}
