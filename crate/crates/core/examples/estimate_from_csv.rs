//! Full pipeline on a CSV file: split, fit, tune, write the output tables.
//!
//! cargo run --release --example estimate_from_csv

use std::fs::File;

use catefuse::data::{load_csv, split_train_validation, write_csv, CsvSchema};
use catefuse::pipeline::estimate;
use catefuse::simulation::generate_dataset;
use catefuse::{EvaluationGrid, PipelineConfig, Scenario};

fn main() -> catefuse::Result<()> {
    let dir = std::env::temp_dir().join("catefuse_estimate_example");
    std::fs::create_dir_all(&dir).expect("create output dir");
    let csv_path = dir.join("study.csv");

    let data = generate_dataset(5000, Scenario::Correct, 11)?;
    write_csv(&data, File::create(&csv_path).expect("create csv"))?;

    let data = load_csv(&csv_path, &CsvSchema::default())?;
    let (train, valid) = split_train_validation(&data, 0.2, 7)?;
    let grid = EvaluationGrid::from_values(vec![0.05, 0.25, 0.5, 0.75, 0.95])?;
    let report = estimate(&train, &valid, &grid, &PipelineConfig::default())?;

    println!("train {} / valid {}, h = {:?}, selected lambda = {:.3e}", report.n_train, report.n_valid, report.bandwidth, report.lambda);
    println!("{:>6} {:>9} {:>9} {:>9} {:>7}", "v", "trial", "os", "adaptive", "eta");
    for p in &report.points {
        println!(
            "{:>6.2} {:>9.3} {:>9.3} {:>9.3} {:>7.3}",
            p.v()[0],
            p.trial.tau,
            p.os.tau,
            p.adaptive.tau,
            p.adaptive.eta
        );
    }

    report.write_estimates(File::create(dir.join("estimates.csv")).expect("create"))?;
    report.write_weights(File::create(dir.join("weights.csv")).expect("create"))?;
    println!("tables written to {}", dir.display());
    Ok(())
}
