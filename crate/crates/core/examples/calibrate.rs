//! Empirical-likelihood calibration: a two-unit toy problem, then a Poisson
//! sample calibrated to the population fit of the working model.

use modelcal::calibration::{self, CalibrationProblem};
use modelcal::sim::{self, SampleDesign, Scenario};
use modelcal::Which;
use nalgebra::{dvector, DMatrix};

fn main() -> modelcal::Result<()> {
    // d̃ = (0.5, 0.5), u = (1, -3): λ = 1/3 and ŵ = (0.75, 0.25).
    let toy = CalibrationProblem::new(dvector![0.5, 0.5], DMatrix::from_column_slice(2, 1, &[1.0, -3.0]))?;
    let r = calibration::solve_dual_lambda(&toy)?;
    println!("toy: lambda = {:.6}, weights = {:?}", r.lambda[0], r.weights.as_slice());

    let scenario = Scenario {
        population_size: 10_000,
        n1: 400,
        ..Scenario::desk(SampleDesign::Poisson, SampleDesign::Srs)
    };
    let frame = sim::Frame::new(&scenario)?;
    let (sample, _) = frame.draw_pair(&scenario, 0)?;
    let spec = scenario.spec()?;
    let alpha_n = &frame.population.alpha_n;

    let beta0 = calibration::uncalibrated_estimate(&sample, &spec)?;
    let (beta, cal) = calibration::calibrated_estimate(&sample, &spec, alpha_n, &beta0)?;
    let d = modelcal::normalized_weights(&sample);
    let u = calibration::reduced_score_matrix(&sample, &spec, alpha_n)?;

    println!("sample of {} units, {} reduced constraints", sample.len(), spec.dim(Which::Reduced));
    println!("lambda = {:?} after {} iterations", cal.lambda.as_slice(), cal.iterations);
    println!("max |sum w u| = {:.2e}", (u.transpose() * &cal.weights).amax());
    println!("weight ratio w/d in [{:.3}, {:.3}]", cal.weights.component_div(&d).min(), cal.weights.component_div(&d).max());
    println!("KL gain = {:.3e}", cal.kl_gain(&d));
    println!("population beta   {:?}", frame.population.beta_n.as_slice());
    println!("design-weighted   {:?}", beta0.as_slice());
    println!("calibrated        {:?}", beta.as_slice());
    Ok(())
}
