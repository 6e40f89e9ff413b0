//! GLS pooling of an internal and an external working-model fit.

use modelcal::fusion::{self, PooledBenchmark};
use modelcal::sim::{self, SampleDesign, Scenario};
use modelcal::SummaryStatistic;
use nalgebra::{dvector, DMatrix};

fn main() -> modelcal::Result<()> {
    let a1 = SummaryStatistic::new(dvector![1.0], DMatrix::from_element(1, 1, 4.0), None)?;
    let a2 = SummaryStatistic::new(dvector![3.0], DMatrix::from_element(1, 1, 1.0), None)?;
    let p = fusion::gls_pool(&a1, &a2)?;
    println!("scalar: alpha* = {:.3}, V* = {:.3}, W = {:.3}", p.alpha_star[0], p.v_star[(0, 0)], p.w[(0, 0)]);

    let scenario = Scenario::desk(SampleDesign::Poisson, SampleDesign::Poisson);
    let frame = sim::Frame::new(&scenario)?;
    let (s1, s2) = frame.draw_pair(&scenario, 0)?;
    let spec = scenario.spec()?;
    let internal = fusion::estimate_alpha_internal(&s1, &spec)?;
    let external = fusion::estimate_alpha_internal(&s2, &spec)?;
    let pooled = fusion::gls_pool(&internal, &external)?;
    println!("population alpha  {:?}", frame.population.alpha_n.as_slice());
    println!("internal  (n={}) {:?}", s1.len(), internal.alpha().as_slice());
    println!("external  (n={}) {:?}", s2.len(), external.alpha().as_slice());
    println!("pooled            {:?}", pooled.alpha_star.as_slice());
    println!("W =\n{:.3}", pooled.w);

    let big = PooledBenchmark::external_only(Some(internal), external)?;
    println!("external only: alpha* = {:?}", big.alpha_star.as_slice());
    Ok(())
}
