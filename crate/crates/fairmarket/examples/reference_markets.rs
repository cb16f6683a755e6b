//! Check the six built-in reference markets against their known
//! equilibria, printing one pass/fail line per assertion.
//!
//! ```bash
//! cargo run --release --example reference_markets
//! ```

use std::process::ExitCode;

use fairmarket::cases::run_repro_suite;

fn main() -> ExitCode {
    let report = run_repro_suite().expect("reference solves succeed");
    let mut stdout = std::io::stdout();
    report.write_text(&mut stdout).unwrap();
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
