//! Nadaraya-Watson smoothing of the pseudo-outcomes, with influence
//! function vectors and a bandwidth sweep.
//!
//! cargo run --release --example kernel_smoothing

use catefuse::kernel::{rule_of_thumb_bandwidth, KernelConfig, KernelSmoother};
use catefuse::nuisance::{fit_all_nuisances, NuisanceConfig};
use catefuse::pseudo::compute_pseudo_outcomes;
use catefuse::simulation::generate_dataset;
use catefuse::{ReductionSpec, Scenario};

fn main() -> catefuse::Result<()> {
    let data = generate_dataset(3000, Scenario::Correct, 9)?;
    let fitted = fit_all_nuisances(&data, &NuisanceConfig::default())?;
    let panel = compute_pseudo_outcomes(&data, &fitted, &ReductionSpec::PercentileOfColumn { index: 0 }, &data)?;

    let trial_v = panel.v_coordinate(0, 0);
    let h = rule_of_thumb_bandwidth(&trial_v, trial_v.len())?;
    println!("rule-of-thumb bandwidth from {} trial records: {h:.4}", trial_v.len());

    let points = [0.25, 0.5, 0.75];
    for scale in [0.5, 1.0, 2.0] {
        let smoother = KernelSmoother::from_config(panel.clone(), 1, &KernelConfig::fixed(h * scale))?;
        let line: Vec<String> = points
            .iter()
            .map(|&v| smoother.estimate(&[v]).map(|b| format!("v={v:.2}: trial {:+.3} os {:+.3}", b.tau_r, b.tau_o)))
            .collect::<catefuse::Result<_>>()?;
        println!("h x {scale}: {}", line.join(" | "));
    }

    let b = KernelSmoother::from_config(panel, 1, &KernelConfig::fixed(h))?.estimate(&[0.5])?;
    let sum_r: f64 = b.xi_r.iter().sum();
    println!("density trial {:.3}, OS {:.3}; influence sum {sum_r:.2e}", b.f_r, b.f_o);
    Ok(())
}
