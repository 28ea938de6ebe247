//! Out-of-sample selection of the lasso penalty and its risk curve.
//!
//! cargo run --release --example lambda_tuning

use catefuse::combiner::eta_unpenalized;
use catefuse::simulation::generate_dataset;
use catefuse::tuning::{build_lambda_grid, select_lambda, ValidationContext};
use catefuse::{EvaluationGrid, FittedPipeline, PipelineConfig, Scenario};

fn main() -> catefuse::Result<()> {
    let config = PipelineConfig::default();
    for scenario in [Scenario::Correct, Scenario::Misspecified] {
        let train = generate_dataset(1000, scenario, 21)?;
        let valid = generate_dataset(5000, scenario, 22)?;
        let fit = FittedPipeline::fit(&train, &valid, &config)?;
        let valid_fit = FittedPipeline::fit(&valid, &valid, &config)?;

        let grid = EvaluationGrid::even(19)?;
        let per_point = grid
            .iter()
            .map(|v| fit.summary(v).map(|s| (eta_unpenalized(&s.moments).eta, s.bias())))
            .collect::<catefuse::Result<Vec<_>>>()?;
        let lambdas = build_lambda_grid(&per_point, config.epsilon, config.grid_size)?;
        let context = ValidationContext::new(&fit, &valid_fit, config.combiner.lasso_scale)?;
        let tuning = select_lambda(&lambdas, &context)?;

        println!("{}: lambda_max {:.3e}, lambda_max+ {:.3e}", scenario.name(), lambdas.lambda_max, lambdas.lambda_max_plus);
        for (i, (l, r)) in tuning.risk_curve.iter().enumerate().step_by(4) {
            println!("  [{i:>2}] lambda {l:.3e}  risk {r:.1}");
        }
        println!("  selected index {} (lambda {:.3e})", tuning.selected_index, tuning.selected_lambda);
    }
    Ok(())
}
