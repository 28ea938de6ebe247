//! Weight estimators on a single point: unpenalized, lasso path, ridge.
//!
//! cargo run --release --example adaptive_weights

use catefuse::combiner::{combine, eta_lasso, eta_ridge, eta_unpenalized};
use catefuse::kernel::{InfluenceMoments, PointSummary};
use catefuse::{CombinerConfig, Method};

fn main() -> catefuse::Result<()> {
    let moments = InfluenceMoments { rr: 4.0, oo: 1.0, ro: 0.5 };
    let point = PointSummary {
        v: vec![0.5],
        tau_r: 0.2,
        tau_o: 1.2,
        f_r: 1.0,
        f_o: 1.0,
        moments,
    };
    let bias = point.bias();
    let eta_o = eta_unpenalized(&moments).eta;
    println!("precision weight {eta_o:.4}, bias estimate {bias:+.2}");

    for lambda in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let eta = eta_lasso(&moments, bias, lambda).eta;
        println!("lasso lambda {lambda:.1}: eta {eta:.4}");
    }
    for n in [100, 10_000, 1_000_000] {
        let eta = eta_ridge(&moments, bias, n, 0.05, 0.25).eta;
        println!("ridge n {n:>8}: eta {eta:.4}");
    }

    let config = CombinerConfig {
        method: Method::Lasso,
        lambda: 0.3,
        ..CombinerConfig::default()
    };
    let c = combine(&point, &config, 1000, 0.05)?;
    println!(
        "combined tau {:.4}, se {:.4} (conservative {:.4}), 95% CI [{:.3}, {:.3}]",
        c.tau, c.se_plain, c.se_conservative, c.ci_low, c.ci_high
    );
    Ok(())
}
