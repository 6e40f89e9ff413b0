//! Simulation scenario configuration.

use serde::{Deserialize, Serialize};

use crate::domain::{EstimatingSpec, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    Independent,
    Dependent,
}

/// Error variance of the linear population model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Homo,
    Hetero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleDesign {
    Srs,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Proposed,
    Cml,
    InternalOnly,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Proposed => "proposed",
            Estimator::Cml => "cml",
            Estimator::InternalOnly => "internal_only",
        }
    }
}

/// Which plug-in covariance the proposed estimator's intervals use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalVariance {
    /// Pooled benchmark with the external sampling error propagated.
    Pooled,
    /// Benchmark treated as known.
    KnownAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_population")]
    pub population_size: usize,
    #[serde(default = "default_n1")]
    pub n1: usize,
    #[serde(default = "default_n2")]
    pub n2: usize,
    #[serde(default = "default_covariates")]
    pub covariates: CovariateMode,
    #[serde(default = "default_variance")]
    pub variance: VarianceMode,
    #[serde(default = "default_design")]
    pub design1: SampleDesign,
    #[serde(default = "default_design")]
    pub design2: SampleDesign,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_interval_variance")]
    pub interval_variance: IntervalVariance,
    /// Covariates of the working reduced model; the first covariate when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_mask: Option<Vec<bool>>,
}

fn default_family() -> Family {
    Family::Linear
}
fn default_population() -> usize {
    20_000
}
fn default_n1() -> usize {
    500
}
fn default_n2() -> usize {
    2_000
}
fn default_covariates() -> CovariateMode {
    CovariateMode::Independent
}
fn default_variance() -> VarianceMode {
    VarianceMode::Homo
}
fn default_design() -> SampleDesign {
    SampleDesign::Srs
}
fn default_replications() -> usize {
    500
}
fn default_seed() -> u64 {
    20_240_601
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Proposed, Estimator::Cml, Estimator::InternalOnly]
}
fn default_interval_variance() -> IntervalVariance {
    IntervalVariance::Pooled
}

impl Default for Scenario {
    fn default() -> Self {
        Self::desk(SampleDesign::Srs, SampleDesign::Srs)
    }
}

impl Scenario {
    /// Laptop-sized linear scenario: N = 20,000, n1 = 500, n2 = 2,000, M = 500.
    pub fn desk(design1: SampleDesign, design2: SampleDesign) -> Self {
        Self {
            family: default_family(),
            population_size: default_population(),
            n1: default_n1(),
            n2: default_n2(),
            covariates: default_covariates(),
            variance: default_variance(),
            design1,
            design2,
            replications: default_replications(),
            seed: default_seed(),
            estimators: default_estimators(),
            interval_variance: default_interval_variance(),
            reduced_mask: None,
        }
    }

    /// Same scenario at full size: N = 100,000, n1 = 1,000, n2 = 10,000,
    /// M = 1,000.
    pub fn full_scale(mut self) -> Self {
        self.population_size = 100_000;
        self.n1 = 1_000;
        self.n2 = 10_000;
        self.replications = 1_000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.population_size;
        if self.n1 < 10 || self.n1 >= n || self.n2 < 10 || self.n2 >= n {
            return Err(Error::InvalidScenario(format!(
                "need 10 <= n1, n2 < N; got n1 = {}, n2 = {}, N = {n}",
                self.n1, self.n2
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidScenario("replications must be at least 1".into()));
        }
        if self.reduced_mask.as_ref().is_some_and(|m| m.len() != 2) {
            return Err(Error::InvalidScenario("reduced_mask must have two entries".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidScenario("no estimators selected".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Short label such as `linear/homo/independent/srs-poisson`.
    pub fn label(&self) -> String {
        let name = |d: SampleDesign| match d {
            SampleDesign::Srs => "srs",
            SampleDesign::Poisson => "poisson",
        };
        let family = match self.family {
            Family::Linear => "linear",
            Family::Logistic => "logistic",
        };
        let variance = match (self.family, self.variance) {
            (Family::Logistic, _) => "binary",
            (_, VarianceMode::Homo) => "homo",
            (_, VarianceMode::Hetero) => "hetero",
        };
        let cov = match self.covariates {
            CovariateMode::Independent => "independent",
            CovariateMode::Dependent => "dependent",
        };
        format!("{family}/{variance}/{cov}/{}-{}", name(self.design1), name(self.design2))
    }

    pub fn spec(&self) -> Result<EstimatingSpec> {
        let spec = EstimatingSpec::standard(self.family, 2)?;
        match &self.reduced_mask {
            Some(m) => spec.with_reduced(m.clone()),
            None => Ok(spec),
        }
    }

    pub fn has(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }
}
