//! A small Monte Carlo study in both scenarios.
//!
//! cargo run --release --example monte_carlo -- [reps]

use catefuse::simulation::run_simulation;
use catefuse::{Scenario, ScenarioConfig};

fn main() -> catefuse::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    for scenario in [Scenario::Correct, Scenario::Misspecified] {
        let config = ScenarioConfig::new(scenario, 1000, reps, 2024);
        let out = run_simulation(&config)?;
        let m = &out.metrics;
        println!("{} (n = 1000, {} reps, {} failed)", scenario.name(), reps, m.failures.len());
        for est in ["trial", "os", "adaptive"] {
            let r = m.integrated(est).expect("integrated row");
            println!("  {est:>8}: bias {:+.3} rmse {:.3} coverage {:.2}", r.bias, r.rmse, r.coverage);
        }
        println!(
            "  smallest lambda chosen in {:.0}% of reps, eta all zero in {:.0}%",
            100.0 * m.share_lambda_smallest,
            100.0 * m.share_eta_all_zero
        );
    }
    Ok(())
}
