//! Working models: propensity scores, outcome regressions and the odds
//! weight linking the two study populations.
//!
//! cargo run --release --example nuisance_models

use catefuse::nuisance::{fit_all_nuisances, NuisanceConfig, Terms};
use catefuse::simulation::generate_dataset;
use catefuse::Scenario;

fn main() -> catefuse::Result<()> {
    let data = generate_dataset(4000, Scenario::Correct, 5)?;
    println!("trial n = {}, OS n = {}", data.n_trial(), data.n_os());

    let fitted = fit_all_nuisances(&data, &NuisanceConfig::default())?;
    println!("{}", serde_json::to_string_pretty(&fitted.coefficients_json()).expect("json"));

    let x = &data.records()[0].x;
    println!("record 0: x = {x:?}");
    println!("  P(T=1 | x, trial) = {:.4}", fitted.propensity(x, 0)?);
    println!("  P(T=1 | x, OS)    = {:.4}", fitted.propensity(x, 1)?);
    println!("  E[Y | x, OS, T=1] = {:.3}", fitted.outcome(x, 1, 1)?);
    println!("  odds P(Z=1|x)/P(Z=0|x) = {:.3}", fitted.odds(x)?);

    let degraded = NuisanceConfig {
        ps_os: Terms::InterceptOnly,
        ..NuisanceConfig::default()
    };
    let fitted = fit_all_nuisances(&data, &degraded)?;
    println!("intercept-only OS propensity: {:.4}", fitted.propensity(x, 1)?);
    Ok(())
}
