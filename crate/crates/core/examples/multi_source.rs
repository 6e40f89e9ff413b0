//! Calibration to two external sources, each publishing a different
//! single-covariate working regression.

use modelcal::calibration;
use modelcal::sim::{self, SampleDesign, Scenario};
use modelcal::{solve_weighted_z, Which};
use nalgebra::DVector;

fn main() -> modelcal::Result<()> {
    let scenario = Scenario::desk(SampleDesign::Poisson, SampleDesign::Srs);
    let frame = sim::Frame::new(&scenario)?;
    let (sample, _) = frame.draw_pair(&scenario, 2)?;
    let full = scenario.spec()?;
    let on_x1 = full.with_reduced(vec![true, false])?;
    let on_x2 = full.with_reduced(vec![false, true])?;

    // Each source knows its working model's population fit.
    let pop = frame.population.as_sample()?;
    let ones = DVector::from_element(pop.len(), 1.0);
    let alpha_x1 = solve_weighted_z(&pop, &on_x1, Which::Reduced, &ones, &DVector::zeros(2))?;
    let alpha_x2 = solve_weighted_z(&pop, &on_x2, Which::Reduced, &ones, &DVector::zeros(2))?;

    let (one, _) = calibration::calibrated_estimate(&sample, &on_x1, &alpha_x1, &DVector::zeros(3))?;
    let (both, cal) =
        calibration::multi_source_calibrate(&sample, &[(on_x1, alpha_x1), (on_x2, alpha_x2)], &full)?;
    println!("population beta  {:?}", frame.population.beta_n.as_slice());
    println!("design-weighted  {:?}", calibration::uncalibrated_estimate(&sample, &full)?.as_slice());
    println!("x1 source only   {:?}", one.as_slice());
    println!("both sources     {:?}", both.as_slice());
    println!("{} stacked constraints, residual {:.1e}", cal.lambda.len(), cal.max_constraint_residual);
    Ok(())
}
