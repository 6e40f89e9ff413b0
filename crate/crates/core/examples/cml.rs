//! Constrained maximum likelihood with a published reduced model, next to the
//! calibrated estimator, on one informative Poisson sample.

use modelcal::cml::{self, CmlOutcome, ReducedParams};
use modelcal::sim::{self, CovariateMode, SampleDesign, Scenario};
use modelcal::{calibration, Which};

fn main() -> modelcal::Result<()> {
    let scenario = Scenario {
        covariates: CovariateMode::Dependent,
        ..Scenario::desk(SampleDesign::Poisson, SampleDesign::Srs)
    };
    let frame = sim::Frame::new(&scenario)?;
    let (sample, _) = frame.draw_pair(&scenario, 4)?;
    let spec = scenario.spec()?;
    let pop = frame.population.as_sample()?;
    let alpha = frame.population.alpha_n.clone();
    let sigma2 = sim::reduced_residual_variance(&pop, &spec, &alpha);
    let reduced = ReducedParams {
        alpha: alpha.clone(),
        sigma2: Some(sigma2),
    };

    println!("population beta {:?}", frame.population.beta_n.as_slice());
    match cml::cml_fit(&sample, &spec, &reduced) {
        CmlOutcome::Converged { beta, lambda, iterations, .. } => {
            println!("cml             {:?} ({iterations} iterations)", beta.as_slice());
            println!("multiplier      {:?}", lambda.as_slice());
        }
        CmlOutcome::NotAvailable { reason } => println!("cml not available: {reason}"),
    }
    let beta0 = calibration::uncalibrated_estimate(&sample, &spec)?;
    let (beta, _) = calibration::calibrated_estimate(&sample, &spec, &alpha, &beta0)?;
    println!("calibrated      {:?}", beta.as_slice());
    println!("reduced model has {} parameters", spec.dim(Which::Reduced));
    Ok(())
}
