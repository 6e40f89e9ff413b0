//! Sampling designs over a finite population.

use rand::Rng;

use crate::domain::{Design, SurveySample, UnitRecord};
use crate::error::{Error, Result};

use super::population::FinitePopulation;

const BISECTION_TOL: f64 = 1e-6;

/// Simple random sample without replacement, units kept in population order.
pub fn draw_srs<R: Rng + ?Sized>(pop: &FinitePopulation, n: usize, rng: &mut R) -> Result<SurveySample> {
    let big_n = pop.len();
    if n == 0 || n > big_n {
        return Err(Error::InvalidScenario(format!("cannot draw {n} of {big_n} units")));
    }
    let mut idx = rand::seq::index::sample(rng, big_n, n).into_vec();
    idx.sort_unstable();
    let pi = n as f64 / big_n as f64;
    let d = big_n as f64 / n as f64;
    let units = idx
        .into_iter()
        .map(|i| {
            let u = &pop.units[i];
            UnitRecord::new(u.covariates().to_vec(), u.response(), d, Some(pi))
        })
        .collect::<Result<Vec<_>>>()?;
    SurveySample::new(units, Design::SrsWithoutReplacement { population_size: big_n as f64 }, "srs")
}

/// Inclusion probabilities `min(c·s_i, 1)` with `c` chosen by bisection so that
/// they sum to `target_n`.
pub fn poisson_inclusion(size_values: &[f64], target_n: f64) -> Result<Vec<f64>> {
    if size_values.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidScenario("size values must be positive".into()));
    }
    let big_n = size_values.len() as f64;
    if !(target_n > 0.0) {
        return Err(Error::InvalidScenario("target size must be positive".into()));
    }
    if target_n >= big_n {
        return Ok(vec![1.0; size_values.len()]);
    }
    let total = |c: f64| size_values.iter().map(|s| (c * s).min(1.0)).sum::<f64>();
    let smin = size_values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut c = target_n / size_values.iter().sum::<f64>();
    if total(c) < target_n - BISECTION_TOL {
        let (mut lo, mut hi) = (c, 1.0 / smin);
        for _ in 0..200 {
            c = 0.5 * (lo + hi);
            let t = total(c);
            if (t - target_n).abs() <= BISECTION_TOL {
                break;
            }
            if t < target_n {
                lo = c;
            } else {
                hi = c;
            }
        }
    }
    Ok(size_values.iter().map(|s| (c * s).min(1.0)).collect())
}

/// Poisson sample: independent Bernoulli draws with probabilities proportional
/// to `size_values`, `d_i = 1/π_i`.
pub fn draw_poisson<R: Rng + ?Sized>(
    pop: &FinitePopulation,
    target_n: f64,
    size_values: &[f64],
    rng: &mut R,
) -> Result<SurveySample> {
    if size_values.len() != pop.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} size values for {} units",
            size_values.len(),
            pop.len()
        )));
    }
    let pi = poisson_inclusion(size_values, target_n)?;
    draw_poisson_with(pop, &pi, rng)
}

/// Poisson sample from precomputed inclusion probabilities.
pub fn draw_poisson_with<R: Rng + ?Sized>(
    pop: &FinitePopulation,
    pi: &[f64],
    rng: &mut R,
) -> Result<SurveySample> {
    let mut units = Vec::new();
    for (u, &p) in pop.units.iter().zip(pi) {
        if rng.random::<f64>() < p {
            units.push(UnitRecord::from_inclusion(u.covariates().to_vec(), u.response(), p)?);
        }
    }
    if units.len() < 2 {
        return Err(Error::InvalidSample("Poisson draw selected fewer than two units".into()));
    }
    SurveySample::new(units, Design::Poisson, "poisson")
}
