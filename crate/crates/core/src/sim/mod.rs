//! Monte Carlo harness: synthetic populations, sampling designs and the
//! replication loop comparing the calibrated estimator with the CML baseline
//! and the internal-only fit.
//!
//! Every replication draws from its own ChaCha stream keyed by the scenario
//! seed and the replication index, and results are aggregated in replication
//! order, so a run is bitwise reproducible whatever the number of threads.

pub mod population;
pub mod sampling;
pub mod scenario;
pub mod svg;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cml::{self, CmlOutcome, ReducedParams};
use crate::domain::{self, EstimatingSpec, Family, SurveySample, Which};
use crate::error::{Error, Result};
use crate::fusion;
use crate::inference::{self, CalibratedFit};
use crate::linalg;
use crate::propensity::{self, FeatureSelector};

pub use population::{gen_population, FinitePopulation};
pub use sampling::{draw_poisson, draw_srs, poisson_inclusion};
pub use scenario::{CovariateMode, Estimator, IntervalVariance, SampleDesign, Scenario, VarianceMode};

/// Environment variable holding the worker count for [`run_monte_carlo`].
pub const THREADS_ENV: &str = "MODELCAL_THREADS";

/// One estimator's output in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub beta: Vec<f64>,
    /// Plug-in variance of each coefficient, `Σβ_jj / n`.
    pub plugin_var: Option<Vec<f64>>,
    pub covered: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(Draw),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub n1: usize,
    pub n2: usize,
    pub outcomes: Vec<(Estimator, Outcome)>,
    /// Whether the SRS plug-in trace inequality held for the proposed fit.
    pub srs_trace_ok: Option<bool>,
}

impl ReplicationRecord {
    pub fn outcome(&self, e: Estimator) -> Option<&Outcome> {
        self.outcomes.iter().find(|(k, _)| *k == e).map(|(_, o)| o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub estimator: Estimator,
    pub coefficient: usize,
    pub target: f64,
    pub mean: f64,
    pub bias: f64,
    /// Monte Carlo standard error of the mean estimate.
    pub bias_se: f64,
    pub mc_var: f64,
    pub mean_plugin_var: Option<f64>,
    pub coverage: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub scenario: Scenario,
    pub rows: Vec<MetricsRow>,
    pub replications: usize,
    pub srs_trace_checked: usize,
    pub srs_trace_violations: usize,
    pub records: Vec<ReplicationRecord>,
    pub wall_clock_secs: f64,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

impl MetricsTable {
    pub fn row(&self, e: Estimator, coefficient: usize) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == e && r.coefficient == coefficient)
    }

    /// One row per estimator and coefficient. Timing is left out so that the
    /// file depends on nothing but the scenario.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,estimator,coefficient,target,mean,bias,bias_se,mc_var,mean_plugin_var,coverage,successes,failures\n",
        );
        let label = self.scenario.label();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{label},{},beta{},{},{},{},{},{},{},{},{},{}",
                r.estimator.name(),
                r.coefficient,
                fmt_f(r.target),
                fmt_f(r.mean),
                fmt_f(r.bias),
                fmt_f(r.bias_se),
                fmt_f(r.mc_var),
                fmt_opt(r.mean_plugin_var),
                fmt_opt(r.coverage),
                r.successes,
                r.failures
            );
        }
        out
    }

    /// Per-replication log: one line per replication, estimator and
    /// coefficient.
    pub fn replications_csv(&self) -> String {
        let mut out = String::from("replication,n1,n2,estimator,coefficient,estimate,plugin_var,covered,status\n");
        for rec in &self.records {
            for (e, o) in &rec.outcomes {
                match o {
                    Outcome::Ok(d) => {
                        for (j, b) in d.beta.iter().enumerate() {
                            let v = d.plugin_var.as_ref().map(|v| v[j]);
                            let c = d
                                .covered
                                .as_ref()
                                .map(|c| u8::from(c[j]).to_string())
                                .unwrap_or_default();
                            let _ = writeln!(
                                out,
                                "{},{},{},{},beta{j},{},{},{c},ok",
                                rec.index,
                                rec.n1,
                                rec.n2,
                                e.name(),
                                fmt_f(*b),
                                fmt_opt(v)
                            );
                        }
                    }
                    Outcome::Failed(reason) => {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},,,,,\"failed: {}\"",
                            rec.index,
                            rec.n1,
                            rec.n2,
                            e.name(),
                            reason.replace('"', "'")
                        );
                    }
                }
            }
        }
        out
    }

    /// Paired draws `(a, b)` of coefficient `j` from replications where both
    /// estimators succeeded.
    pub fn paired(&self, a: Estimator, b: Estimator, j: usize) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| match (r.outcome(a), r.outcome(b)) {
                (Some(Outcome::Ok(x)), Some(Outcome::Ok(y))) => Some((x.beta[j], y.beta[j])),
                _ => None,
            })
            .collect()
    }
}

fn replication_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generate the scenario's population from stream 0 of its seed.
pub fn scenario_population(scenario: &Scenario) -> Result<FinitePopulation> {
    scenario.validate()?;
    gen_population(scenario, &mut ChaCha8Rng::seed_from_u64(scenario.seed))
}

/// Size measure of the informative internal Poisson design: the square root
/// of the shifted response for linear models, 0.9 versus 0.1 by outcome for
/// logistic models.
pub fn internal_sizes(pop: &FinitePopulation, family: Family) -> Vec<f64> {
    match family {
        Family::Linear => {
            let ymin = pop.responses().fold(f64::INFINITY, f64::min);
            pop.responses().map(|y| (y - ymin + 10.0).sqrt()).collect()
        }
        Family::Logistic => pop
            .responses()
            .map(|y| if y == 1.0 { 0.9 } else { 0.1 })
            .collect(),
    }
}

/// Size measure of the external Poisson design, `{1 + exp(0.2x1 + 0.1x2 - 0.6)}⁻¹`.
pub fn external_sizes(pop: &FinitePopulation) -> Vec<f64> {
    pop.units
        .iter()
        .map(|u| {
            let x = u.covariates();
            1.0 / (1.0 + (0.2 * x[0] + 0.1 * x[1] - 0.6).exp())
        })
        .collect()
}

/// Population plus the inclusion probabilities of both Poisson designs.
#[derive(Debug, Clone)]
pub struct Frame {
    pub population: FinitePopulation,
    pub pi1: Option<Vec<f64>>,
    pub pi2: Option<Vec<f64>>,
}

impl Frame {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let population = scenario_population(scenario)?;
        let pi1 = match scenario.design1 {
            SampleDesign::Poisson => Some(poisson_inclusion(
                &internal_sizes(&population, scenario.family),
                scenario.n1 as f64,
            )?),
            SampleDesign::Srs => None,
        };
        let pi2 = match scenario.design2 {
            SampleDesign::Poisson => Some(poisson_inclusion(&external_sizes(&population), scenario.n2 as f64)?),
            SampleDesign::Srs => None,
        };
        Ok(Self { population, pi1, pi2 })
    }

    fn draw(&self, design: SampleDesign, n: usize, pi: &Option<Vec<f64>>, rng: &mut ChaCha8Rng) -> Result<SurveySample> {
        match (design, pi) {
            (SampleDesign::Poisson, Some(pi)) => sampling::draw_poisson_with(&self.population, pi, rng),
            _ => draw_srs(&self.population, n, rng),
        }
    }

    /// Internal and external samples of replication `index`.
    pub fn draw_pair(&self, scenario: &Scenario, index: usize) -> Result<(SurveySample, SurveySample)> {
        let mut rng = replication_rng(scenario.seed, index);
        let s1 = self.draw(scenario.design1, scenario.n1, &self.pi1, &mut rng)?;
        let s2 = self.draw(scenario.design2, scenario.n2, &self.pi2, &mut rng)?;
        Ok((s1, s2))
    }
}

fn draw_from_report(report: &inference::EstimateReport, target: &DVector<f64>) -> Draw {
    let n = report.n as f64;
    Draw {
        beta: report.beta_hat.clone(),
        plugin_var: Some(report.sigma_beta.iter().enumerate().map(|(j, r)| r[j] / n).collect()),
        covered: Some((0..target.len()).map(|j| report.covers(j, target[j])).collect()),
    }
}

/// Residual variance of the reduced model on its own source, `Σ d̃ (y - z'α)²`.
pub fn reduced_residual_variance(sample: &SurveySample, spec: &EstimatingSpec, alpha: &DVector<f64>) -> f64 {
    let dt = domain::normalized_weights(sample);
    linalg::compensated_sum(sample.units().iter().zip(dt.iter()).map(|(u, w)| {
        let r = u.response() - spec.regressors(Which::Reduced, u.covariates()).dot(alpha);
        w * r * r
    }))
}

fn run_replication(scenario: &Scenario, frame: &Frame, spec: &EstimatingSpec, index: usize) -> ReplicationRecord {
    let target = &frame.population.beta_n;
    let mut record = ReplicationRecord {
        index,
        n1: 0,
        n2: 0,
        outcomes: Vec::new(),
        srs_trace_ok: None,
    };
    let (s1, s2) = match frame.draw_pair(scenario, index) {
        Ok(p) => p,
        Err(e) => {
            for &est in &scenario.estimators {
                record.outcomes.push((est, Outcome::Failed(e.to_string())));
            }
            return record;
        }
    };
    record.n1 = s1.len();
    record.n2 = s2.len();
    let external = fusion::estimate_alpha_internal(&s2, spec);

    let mut estimators = scenario.estimators.clone();
    estimators.sort();
    estimators.dedup();
    for est in estimators {
        let outcome = match est {
            Estimator::Proposed => {
                let fit = external
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|ext| inference::fit_with_summary(&s1, spec, ext, false, 0.95));
                match fit {
                    Ok(fit) => {
                        record.srs_trace_ok = srs_trace_check(&fit);
                        match proposed_draw(scenario, &fit, target) {
                            Ok(d) => Outcome::Ok(d),
                            Err(e) => Outcome::Failed(e.to_string()),
                        }
                    }
                    Err(e) => Outcome::Failed(e.to_string()),
                }
            }
            Estimator::InternalOnly => match internal_only_report(&s1, spec) {
                Ok(r) => Outcome::Ok(draw_from_report(&r, target)),
                Err(e) => Outcome::Failed(e.to_string()),
            },
            Estimator::Cml => match &external {
                Ok(ext) => {
                    let sigma2 = (spec.family() == Family::Linear)
                        .then(|| reduced_residual_variance(&s2, spec, ext.alpha()));
                    let reduced = ReducedParams {
                        alpha: ext.alpha().clone(),
                        sigma2,
                    };
                    match cml::cml_fit(&s1, spec, &reduced) {
                        CmlOutcome::Converged { beta, .. } => Outcome::Ok(Draw {
                            beta: beta.iter().copied().collect(),
                            plugin_var: None,
                            covered: None,
                        }),
                        CmlOutcome::NotAvailable { reason } => Outcome::Failed(reason),
                    }
                }
                Err(e) => Outcome::Failed(e.to_string()),
            },
        };
        record.outcomes.push((est, outcome));
    }
    record
}

fn proposed_draw(scenario: &Scenario, fit: &CalibratedFit, target: &DVector<f64>) -> Result<Draw> {
    match scenario.interval_variance {
        IntervalVariance::Pooled => Ok(draw_from_report(&fit.report, target)),
        IntervalVariance::KnownAlpha => {
            let sigma = inference::sandwich_known_alpha(&fit.decomposition)?;
            let beta = DVector::from_vec(fit.report.beta_hat.clone());
            let r = inference::wald_report(
                &beta,
                &sigma,
                fit.report.n,
                0.95,
                inference::VarianceMode::KnownAlpha,
                Some(&fit.calibration),
            );
            Ok(draw_from_report(&r, target))
        }
    }
}

/// `trace(Σβ_cal) ≤ trace(Σβ_uncal)` under the SRS plug-ins.
fn srs_trace_check(fit: &CalibratedFit) -> Option<bool> {
    let cal = inference::sandwich_srs_plugin(&fit.decomposition).ok()?;
    let uncal = inference::sandwich_uncalibrated(&fit.decomposition).ok()?;
    Some(cal.trace() <= uncal.trace() + 1e-10 * uncal.trace().abs().max(1.0))
}

/// Design-weighted fit without calibration and its linearization interval.
pub fn internal_only_report(sample: &SurveySample, spec: &EstimatingSpec) -> Result<inference::EstimateReport> {
    let beta = crate::calibration::uncalibrated_estimate(sample, spec)?;
    let n = sample.len();
    let v = fusion::variance_linearized(sample, spec, Which::Full, &beta)? * n as f64;
    Ok(inference::wald_report(&beta, &v, n, 0.95, inference::VarianceMode::KnownAlpha, None))
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub fn run_monte_carlo(scenario: &Scenario) -> Result<MetricsTable> {
    run_monte_carlo_with_threads(scenario, threads_from_env())
}

/// Run all replications on a dedicated pool of `threads` workers (rayon's
/// default when `None`).
pub fn run_monte_carlo_with_threads(scenario: &Scenario, threads: Option<usize>) -> Result<MetricsTable> {
    let start = Instant::now();
    let frame = Frame::new(scenario)?;
    let spec = scenario.spec()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    let records: Vec<ReplicationRecord> = pool.install(|| {
        (0..scenario.replications)
            .into_par_iter()
            .map(|r| run_replication(scenario, &frame, &spec, r))
            .collect()
    });
    if records.len() != scenario.replications {
        return Err(Error::InvalidScenario(format!(
            "{} of {} replications completed",
            records.len(),
            scenario.replications
        )));
    }
    let mut table = aggregate(scenario, &frame.population.beta_n, records);
    table.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(table)
}

fn aggregate(scenario: &Scenario, target: &DVector<f64>, records: Vec<ReplicationRecord>) -> MetricsTable {
    let mut estimators = scenario.estimators.clone();
    estimators.sort();
    estimators.dedup();
    let mut rows = Vec::new();
    for &est in &estimators {
        let draws: Vec<&Draw> = records
            .iter()
            .filter_map(|r| match r.outcome(est) {
                Some(Outcome::Ok(d)) => Some(d),
                _ => None,
            })
            .collect();
        let s = draws.len();
        for (j, &t) in target.iter().enumerate() {
            let mean = linalg::compensated_sum(draws.iter().map(|d| d.beta[j])) / s as f64;
            let mc_var = if s > 1 {
                linalg::compensated_sum(draws.iter().map(|d| (d.beta[j] - mean).powi(2))) / (s as f64 - 1.0)
            } else {
                f64::NAN
            };
            let mean_plugin_var = draws
                .iter()
                .map(|d| d.plugin_var.as_ref().map(|v| v[j]))
                .collect::<Option<Vec<f64>>>()
                .filter(|v| !v.is_empty())
                .map(|v| linalg::compensated_sum(v.iter().copied()) / s as f64);
            let coverage = draws
                .iter()
                .map(|d| d.covered.as_ref().map(|c| c[j]))
                .collect::<Option<Vec<bool>>>()
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().filter(|&&c| c).count() as f64 / s as f64);
            rows.push(MetricsRow {
                estimator: est,
                coefficient: j,
                target: t,
                mean,
                bias: mean - t,
                bias_se: (mc_var / s as f64).sqrt(),
                mc_var,
                mean_plugin_var,
                coverage,
                successes: s,
                failures: records.len() - s,
            });
        }
    }
    let checked: Vec<bool> = records.iter().filter_map(|r| r.srs_trace_ok).collect();
    MetricsTable {
        scenario: scenario.clone(),
        rows,
        replications: records.len(),
        srs_trace_checked: checked.len(),
        srs_trace_violations: checked.iter().filter(|&&ok| !ok).count(),
        records,
        wall_clock_secs: 0.0,
    }
}

/// Monte Carlo summary of the propensity-debiased and naive external fits.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityStudy {
    /// Reduced-model root on the full population.
    pub alpha_population: Vec<f64>,
    pub debiased_mean: Vec<f64>,
    pub debiased_se: Vec<f64>,
    pub naive_mean: Vec<f64>,
    pub naive_se: Vec<f64>,
    pub successes: usize,
    pub failures: usize,
}

impl PropensityStudy {
    /// `|mean - α_N| / SE` per coefficient.
    pub fn debiased_z(&self) -> Vec<f64> {
        zscores(&self.debiased_mean, &self.debiased_se, &self.alpha_population)
    }

    pub fn naive_z(&self) -> Vec<f64> {
        zscores(&self.naive_mean, &self.naive_se, &self.alpha_population)
    }
}

fn zscores(mean: &[f64], se: &[f64], target: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(se)
        .zip(target)
        .map(|((m, s), t)| (m - t).abs() / s)
        .collect()
}

/// Treat the external sample as a big non-probability sample: ignore its
/// design weights and debias it with a density-ratio model fitted against the
/// internal sample.
pub fn propensity_study(scenario: &Scenario, selector: Option<FeatureSelector>, threads: Option<usize>) -> Result<PropensityStudy> {
    let frame = Frame::new(scenario)?;
    let spec = scenario.spec()?;
    let selector = selector.unwrap_or_else(|| FeatureSelector::from_spec(&spec));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    let fits: Vec<Option<(DVector<f64>, DVector<f64>)>> = pool.install(|| {
        (0..scenario.replications)
            .into_par_iter()
            .map(|r| {
                let (s1, s2) = frame.draw_pair(scenario, r).ok()?;
                let model = propensity::solve_density_ratio(&s2, &s1, &selector).ok()?;
                let deb = propensity::debiased_alpha2(&s2, &spec, &model).ok()?;
                let naive = propensity::naive_alpha2(&s2, &spec).ok()?;
                Some((deb.alpha().clone(), naive.alpha().clone()))
            })
            .collect()
    });
    let ok: Vec<&(DVector<f64>, DVector<f64>)> = fits.iter().flatten().collect();
    let s = ok.len();
    if s < 2 {
        return Err(Error::InvalidScenario("fewer than two successful replications".into()));
    }
    let q2 = spec.dim(Which::Reduced);
    let summarize = |pick: &dyn Fn(&(DVector<f64>, DVector<f64>)) -> f64| {
        let mean = linalg::compensated_sum(ok.iter().map(|p| pick(p))) / s as f64;
        let var = linalg::compensated_sum(ok.iter().map(|p| (pick(p) - mean).powi(2))) / (s as f64 - 1.0);
        (mean, (var / s as f64).sqrt())
    };
    let mut study = PropensityStudy {
        alpha_population: frame.population.alpha_n.iter().copied().collect(),
        debiased_mean: Vec::with_capacity(q2),
        debiased_se: Vec::with_capacity(q2),
        naive_mean: Vec::with_capacity(q2),
        naive_se: Vec::with_capacity(q2),
        successes: s,
        failures: fits.len() - s,
    };
    for j in 0..q2 {
        let (m, se) = summarize(&|p| p.0[j]);
        study.debiased_mean.push(m);
        study.debiased_se.push(se);
        let (m, se) = summarize(&|p| p.1[j]);
        study.naive_mean.push(m);
        study.naive_se.push(se);
    }
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(design1: SampleDesign, design2: SampleDesign) -> Scenario {
        Scenario {
            population_size: 3_000,
            n1: 200,
            n2: 600,
            replications: 6,
            ..Scenario::desk(design1, design2)
        }
    }

    #[test]
    fn single_replication_smoke() {
        let s = Scenario {
            replications: 1,
            ..tiny(SampleDesign::Srs, SampleDesign::Srs)
        };
        let t = run_monte_carlo_with_threads(&s, Some(1)).unwrap();
        assert_eq!(t.rows.len(), 9);
        assert_eq!(t.replications, 1);
        assert!(t.rows.iter().all(|r| r.successes + r.failures == 1));
        assert_eq!(t.to_csv().lines().count(), 10);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let s = tiny(SampleDesign::Poisson, SampleDesign::Poisson);
        let a = run_monte_carlo_with_threads(&s, Some(1)).unwrap();
        let b = run_monte_carlo_with_threads(&s, Some(3)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.replications_csv(), b.replications_csv());
    }

    #[test]
    fn coverage_is_a_fraction() {
        let t = run_monte_carlo_with_threads(&tiny(SampleDesign::Srs, SampleDesign::Poisson), None).unwrap();
        for r in &t.rows {
            if let Some(c) = r.coverage {
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }
}
