//! Debias a selection-biased big sample with density-ratio propensity
//! weights fitted against a small probability sample.

use modelcal::propensity::{self, FeatureSelector};
use modelcal::sim::{self, SampleDesign, Scenario};

fn main() -> modelcal::Result<()> {
    let scenario = Scenario::desk(SampleDesign::Srs, SampleDesign::Poisson);
    let frame = sim::Frame::new(&scenario)?;
    // The external Poisson sample plays the big non-probability source; its
    // inclusion probabilities are never used.
    let (internal, big) = frame.draw_pair(&scenario, 3)?;
    let spec = scenario.spec()?;
    let selector = FeatureSelector::from_spec(&spec);

    let model = propensity::solve_density_ratio(&big, &internal, &selector)?;
    let inverses: Vec<f64> = big.units().iter().map(|u| propensity::propensity_inverse(&model, u).0).collect();
    let (lo, hi) = inverses.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
    println!("big sample {} units, estimated non-selected {:.0}", big.len(), model.n0_hat);
    println!("phi = {:?} ({} Newton steps)", model.phi.as_slice(), model.iterations);
    println!("inverse propensities in [{lo:.2}, {hi:.2}]");

    let debiased = propensity::debiased_alpha2(&big, &spec, &model)?;
    let naive = propensity::naive_alpha2(&big, &spec)?;
    println!("population alpha {:?}", frame.population.alpha_n.as_slice());
    println!("naive            {:?}", naive.alpha().as_slice());
    println!("debiased         {:?}", debiased.alpha().as_slice());
    Ok(())
}
