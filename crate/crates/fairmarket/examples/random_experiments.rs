//! Average-case behavior of the constraint families on random markets.
//!
//! Samples markets by rejection so each constraint has something to
//! correct, solves with and without the constraint, and summarizes welfare
//! transfers, Pareto gaps, and online-loop convergence.
//!
//! ```bash
//! cargo run --release --example random_experiments
//! ```

use fairmarket::chart::emit_chart;
use fairmarket::experiments::run_random_experiments;
use fairmarket::generate::{ExperimentConfig, Family};
use fairmarket::solver::SolverConfig;

fn main() {
    let solver = SolverConfig::default();
    let out = std::path::Path::new("target/random_experiments");
    std::fs::create_dir_all(out).unwrap();

    let mut stdout = std::io::stdout();
    for family in [Family::Pbp, Family::Pip, Family::Aef] {
        let mut config = ExperimentConfig::new(family);
        config.n_markets = 15;
        config.seed = 7;
        let report = run_random_experiments(&config, &solver).unwrap();
        report.write_summary(&mut stdout).unwrap();

        let name = format!("violation_{}.svg", family.name());
        emit_chart(&report.violation_chart(), &out.join(&name)).unwrap();
        let mut csv =
            std::fs::File::create(out.join(format!("buyers_{}.csv", family.name()))).unwrap();
        report.write_csv(&mut csv).unwrap();
    }
    println!("charts and CSVs under {}", out.display());
}
