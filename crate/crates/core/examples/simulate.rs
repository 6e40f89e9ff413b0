//! Monte Carlo run of one scenario. Pass a TOML file to override the small
//! built-in configuration, e.g. `cargo run --release --example simulate --
//! scenarios/desk_default.toml`.

use modelcal::sim::{self, Estimator, SampleDesign, Scenario};

fn main() -> modelcal::Result<()> {
    let scenario = match std::env::args().nth(1) {
        Some(path) => Scenario::from_toml(&std::fs::read_to_string(path)?)?,
        None => Scenario {
            population_size: 5_000,
            n1: 200,
            n2: 800,
            replications: 100,
            ..Scenario::desk(SampleDesign::Poisson, SampleDesign::Poisson)
        },
    };
    let table = sim::run_monte_carlo(&scenario)?;
    println!("{}: {} replications in {:.1}s", scenario.label(), table.replications, table.wall_clock_secs);
    println!("{:<14} {:>5} {:>10} {:>10} {:>10} {:>9}", "estimator", "coef", "bias", "mc sd", "plugin sd", "coverage");
    for r in &table.rows {
        println!(
            "{:<14} {:>5} {:>10.4} {:>10.4} {:>10} {:>9}",
            r.estimator.name(),
            format!("beta{}", r.coefficient),
            r.bias,
            r.mc_var.sqrt(),
            r.mean_plugin_var.map(|v| format!("{:.4}", v.sqrt())).unwrap_or_default(),
            r.coverage.map(|c| format!("{c:.3}")).unwrap_or_default()
        );
    }
    if let Some(r) = table.row(Estimator::Proposed, 1) {
        println!("proposed beta1 failures: {}", r.failures);
    }
    Ok(())
}
