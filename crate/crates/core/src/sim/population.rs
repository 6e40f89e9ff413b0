//! Synthetic finite populations.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::domain::{self, expit, Design, EstimatingSpec, Family, SurveySample, UnitRecord, Which};
use crate::error::Result;

use super::scenario::{CovariateMode, Scenario, VarianceMode};

/// Coefficients of the linear population model `y = 1 + 2x1 + x2 + ε`.
pub const LINEAR_BETA: [f64; 3] = [1.0, 2.0, 1.0];
/// Coefficients of the logistic population model.
pub const LOGISTIC_BETA: [f64; 3] = [-0.5, 0.3, -0.1];

/// A generated population together with the roots of its full and reduced
/// estimating equations.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    pub units: Vec<UnitRecord>,
    pub spec: EstimatingSpec,
    /// Root of the population full-model estimating equation.
    pub beta_n: DVector<f64>,
    /// Root of the population reduced-model estimating equation.
    pub alpha_n: DVector<f64>,
}

impl FinitePopulation {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn responses(&self) -> impl Iterator<Item = f64> + '_ {
        self.units.iter().map(|u| u.response())
    }

    pub fn as_sample(&self) -> Result<SurveySample> {
        SurveySample::new(self.units.clone(), Design::Unknown, "population")
    }
}

pub fn gen_population<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<FinitePopulation> {
    let x1_dist = Normal::new(3.0, 1.0).expect("valid normal");
    let x2_dist = Normal::new(11.0, 6.5).expect("valid normal");
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let mut units = Vec::with_capacity(scenario.population_size);
    for _ in 0..scenario.population_size {
        let x1 = x1_dist.sample(rng);
        let x2 = match scenario.covariates {
            CovariateMode::Independent => x2_dist.sample(rng),
            CovariateMode::Dependent => x1 * x1 + std.sample(rng),
        };
        let y = match scenario.family {
            Family::Linear => {
                let mu = LINEAR_BETA[0] + LINEAR_BETA[1] * x1 + LINEAR_BETA[2] * x2;
                let sd = match scenario.variance {
                    VarianceMode::Homo => 3.0,
                    VarianceMode::Hetero => 0.2 * mu.abs(),
                };
                mu + sd * std.sample(rng)
            }
            Family::Logistic => {
                let p = expit(LOGISTIC_BETA[0] + LOGISTIC_BETA[1] * x1 + LOGISTIC_BETA[2] * x2);
                f64::from(u8::from(Bernoulli::new(p).expect("probability").sample(rng)))
            }
        };
        units.push(UnitRecord::new(vec![x1, x2], y, 1.0, None)?);
    }
    let spec = scenario.spec()?;
    let sample = SurveySample::new(units, Design::Unknown, "population")?;
    let ones = DVector::from_element(sample.len(), 1.0);
    let beta_n = domain::solve_weighted_z(&sample, &spec, Which::Full, &ones, &DVector::zeros(3))?;
    let alpha_n = domain::solve_weighted_z(&sample, &spec, Which::Reduced, &ones, &DVector::zeros(spec.dim(Which::Reduced)))?;
    Ok(FinitePopulation {
        units: sample.units().to_vec(),
        spec,
        beta_n,
        alpha_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::SampleDesign;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(family: Family, cov: CovariateMode) -> Scenario {
        Scenario {
            family,
            covariates: cov,
            population_size: 20_000,
            ..Scenario::desk(SampleDesign::Srs, SampleDesign::Srs)
        }
    }

    #[test]
    fn independent_linear_mean() {
        let pop = gen_population(&scenario(Family::Linear, CovariateMode::Independent), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n = pop.len() as f64;
        let mean = pop.responses().sum::<f64>() / n;
        let var = pop.responses().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 18.0).abs() < 3.0 * (var / n).sqrt());
    }

    #[test]
    fn dependent_covariates_track_square() {
        let pop = gen_population(&scenario(Family::Linear, CovariateMode::Dependent), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a: Vec<f64> = pop.units.iter().map(|u| u.covariates()[0].powi(2)).collect();
        let b: Vec<f64> = pop.units.iter().map(|u| u.covariates()[1]).collect();
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        assert!(cov / (va * vb).sqrt() > 0.95);
    }

    #[test]
    fn logistic_prevalence_matches_model() {
        let pop = gen_population(&scenario(Family::Logistic, CovariateMode::Independent), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let n = pop.len() as f64;
        let frac = pop.responses().sum::<f64>() / n;
        let p: Vec<f64> = pop
            .units
            .iter()
            .map(|u| expit(-0.5 + 0.3 * u.covariates()[0] - 0.1 * u.covariates()[1]))
            .collect();
        let expected = p.iter().sum::<f64>() / n;
        let se = (p.iter().map(|p| p * (1.0 - p)).sum::<f64>()).sqrt() / n;
        assert!((frac - expected).abs() < 3.0 * se);
    }
}
