//! Learn the interventions online, observing only equilibrium allocations.
//!
//! Each round: publish interventions from the current multipliers, watch
//! the market settle, nudge the multipliers by the observed constraint
//! violation. The instantaneous violation oscillates under a constant
//! rate; the time-averaged allocation converges quickly, which is what the
//! trace below reports.
//!
//! ```bash
//! cargo run --release --example online_interventions
//! ```

use fairmarket::cases::{constraint_t1, market_t1};
use fairmarket::chart::{emit_chart, Chart, Series};
use fairmarket::opic::{run_opic, time_averaged_violation, RateSchedule, SolverOracle};
use fairmarket::solver::SolverConfig;

fn main() {
    let market = market_t1();
    let cs = constraint_t1(&market);
    let config = SolverConfig::default();

    let mut oracle = SolverOracle::new(&market, config);
    let trace = run_opic(&mut oracle, &cs, RateSchedule::Constant(0.2), 60).unwrap();

    println!("round  gamma  inst.violation  time-avg violation");
    let mut averaged = Vec::new();
    for upto in 1..=trace.rounds.len() {
        let avg = time_averaged_violation(&trace, &cs, upto).unwrap().max_violation;
        averaged.push(avg);
        if upto % 10 == 0 || upto == 1 {
            let r = &trace.rounds[upto - 1];
            println!(
                "{:>5}  {:>5.2}  {:>14.4}  {:>18.4}",
                r.round, r.gamma, r.residual.max_violation, avg
            );
        }
    }

    // Export the trace and a chart of the averaged violation.
    let out = std::path::Path::new("target/online_interventions");
    std::fs::create_dir_all(out).unwrap();
    let mut csv = std::fs::File::create(out.join("trace.csv")).unwrap();
    trace.write_csv(&cs, &mut csv).unwrap();
    let chart = Chart {
        title: "time-averaged constraint violation".into(),
        x_label: "round".into(),
        y_label: "max violation".into(),
        series: vec![Series::line(
            "parity",
            (1..=averaged.len()).map(|t| t as f64).collect(),
            averaged,
        )],
    };
    emit_chart(&chart, &out.join("violation.svg")).unwrap();
    println!("wrote {}/trace.csv and violation.svg", out.display());
}
