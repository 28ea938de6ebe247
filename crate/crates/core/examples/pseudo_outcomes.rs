//! Doubly robust pseudo-outcomes and the reduced covariate V.
//!
//! cargo run --release --example pseudo_outcomes

use catefuse::nuisance::{fit_all_nuisances, NuisanceConfig};
use catefuse::pseudo::{compute_pseudo_outcomes, dr_pseudo_outcome};
use catefuse::simulation::generate_dataset;
use catefuse::{ReductionSpec, Scenario};

fn main() -> catefuse::Result<()> {
    // treated unit, π = 0.5, μ1 = 2, μ0 = 1, observed y = 3
    println!("single record: {}", dr_pseudo_outcome(1, 3.0, 0.5, 2.0, 1.0));

    let data = generate_dataset(2000, Scenario::Correct, 2)?;
    let fitted = fit_all_nuisances(&data, &NuisanceConfig::default())?;
    let panel = compute_pseudo_outcomes(&data, &fitted, &ReductionSpec::PercentileOfColumn { index: 0 }, &data)?;

    for z in 0..=1u8 {
        let (mut sum, mut count) = (0.0, 0);
        for (i, &zi) in panel.z().iter().enumerate() {
            if zi == z {
                sum += panel.psi()[i];
                count += 1;
            }
        }
        println!("z = {z}: {count} records, mean pseudo-outcome {:.3}", sum / count as f64);
    }
    for i in 0..5 {
        println!(
            "z={} v={:.4} psi={:+.3} omega={:.3}",
            panel.z()[i],
            panel.v(i)[0],
            panel.psi()[i],
            panel.omega()[i]
        );
    }
    Ok(())
}
