//! Thin command-line front end over the library: scenario solves, the
//! intervention pipeline, the online loop, audits, the reference suite,
//! random-market experiments, and chart rendering.
//!
//! Exit codes: 0 success, 1 assertion or convergence failure, 2 input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairmarket::audit::{
    budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, exposure_report,
    welfare_delta,
};
use fairmarket::cases::run_repro_suite;
use fairmarket::chart::{emit_chart, Chart, Series};
use fairmarket::experiments::run_random_experiments;
use fairmarket::generate::{ExperimentConfig, Family};
use fairmarket::opic::{run_opic, SolverOracle};
use fairmarket::scenario::{load_scenario, Scenario};
use fairmarket::solver::{solve_constrained_eg, solve_offset_eg, TaxSubsidyEquilibrium};
use fairmarket::{Market, Mat};

#[derive(Parser)]
#[command(
    name = "fairmarket",
    about = "Fisher market equilibria with fairness constraints via taxes and subsidies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the solver seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scenario's market without constraints.
    Solve(ScenarioArgs),
    /// Solve with constraints and derive the tax/subsidy interventions.
    Intervene(ScenarioArgs),
    /// Run the online intervention loop and export the trace.
    Opic(ScenarioArgs),
    /// Audit welfare and fairness: envy, Pareto gaps, exposure, deltas.
    Audit(ScenarioArgs),
    /// Check the built-in reference markets against their known values.
    Repro {
        /// Directory for the report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample random markets, impose a constraint family, measure effects.
    Randexp {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, default_value_t = 50)]
        markets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        buyers: usize,
        #[arg(long, default_value_t = 10)]
        items: usize,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        #[arg(long, default_value_t = 0.2)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a CSV series (an online trace or violation summary) as SVG.
    Chart {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Column to plot on the y axis.
        #[arg(long, default_value = "max_violation")]
        column: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Pbp,
    Pip,
    Aef,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Pbp => Family::Pbp,
            FamilyArg::Pip => Family::Pip,
            FamilyArg::Aef => Family::Aef,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
struct CliError {
    message: String,
    input_error: bool,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            input_error: true,
        }
    }
    fn run(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            input_error: false,
        }
    }
    fn exit_code(&self) -> u8 {
        if self.input_error {
            2
        } else {
            1
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut scenario =
        load_scenario(&args.scenario).map_err(|e| CliError::input(e.to_string()))?;
    if let Some(tol) = args.tol {
        scenario.solver.tol = tol;
    }
    if let Some(seed) = args.seed {
        scenario.solver.seed = seed;
    }
    for warning in scenario.constraints.redundancy_warnings() {
        eprintln!("warning: {warning}");
    }
    Ok(scenario)
}

fn out_writer(dir: &Option<PathBuf>, name: &str) -> Result<Box<dyn std::io::Write>, CliError> {
    match dir {
        None => Ok(Box::new(std::io::stdout())),
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::input(format!("cannot create {dir:?}: {e}")))?;
            let path = dir.join(name);
            let file = fs::File::create(&path)
                .map_err(|e| CliError::input(format!("cannot create {path:?}: {e}")))?;
            Ok(Box::new(file))
        }
    }
}

fn write_equilibrium(
    market: &Market,
    eq: &TaxSubsidyEquilibrium,
    format: Format,
    out: &mut dyn std::io::Write,
) -> std::io::Result<()> {
    match format {
        Format::Csv => {
            writeln!(out, "kind,buyer,item,value")?;
            for (j, p) in eq.prices.base.iter().enumerate() {
                writeln!(out, "price,,{j},{p}")?;
            }
            for i in 0..market.n_buyers() {
                for j in 0..market.m_items() {
                    writeln!(out, "allocation,{i},{j},{}", eq.alloc.x.get(i, j))?;
                    let t = eq.prices.interventions.get(i, j);
                    if t != 0.0 {
                        writeln!(out, "intervention,{i},{j},{t}")?;
                    }
                }
            }
            for (i, d) in eq.alloc.delta.iter().enumerate() {
                writeln!(out, "leftover,{i},,{d}")?;
            }
            for (i, u) in eq.utilities(market).iter().enumerate() {
                writeln!(out, "utility,{i},,{u}")?;
            }
            writeln!(out, "kkt_max_residual,,,{}", eq.kkt.max_residual)?;
        }
        Format::Text => {
            writeln!(out, "prices: {:?}", eq.prices.base)?;
            writeln!(out, "utilities: {:?}", eq.utilities(market))?;
            writeln!(out, "leftovers: {:?}", eq.alloc.delta)?;
            for i in 0..market.n_buyers() {
                writeln!(out, "buyer {i}: x = {:?}", eq.alloc.x.row(i))?;
            }
            if eq.multipliers.ineq.len() + eq.multipliers.eq.len() > 0 {
                writeln!(
                    out,
                    "multipliers: ineq {:?}, eq {:?}",
                    eq.multipliers.ineq, eq.multipliers.eq
                )?;
                for i in 0..market.n_buyers() {
                    let row = eq.prices.interventions.row(i);
                    if row.iter().any(|v| *v != 0.0) {
                        writeln!(out, "interventions buyer {i}: {row:?}")?;
                    }
                }
            }
            writeln!(out, "kkt max residual: {:.3e}", eq.kkt.max_residual)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Solve(args) => {
            let s = load(&args)?;
            let zero = Mat::zeros(s.market.n_buyers(), s.market.m_items());
            let eq = solve_offset_eg(&s.market, &zero, &s.solver)
                .map_err(|e| CliError::run(e.to_string()))?;
            let mut out = out_writer(&args.out, "solve.csv")?;
            write_equilibrium(&s.market, &eq, args.format, &mut out)
                .map_err(|e| CliError::run(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Intervene(args) => {
            let s = load(&args)?;
            if s.constraints.is_empty() {
                return Err(CliError::input(
                    "scenario has no constraints; nothing to intervene on",
                ));
            }
            let eq = solve_constrained_eg(&s.market, &s.constraints, &s.solver)
                .map_err(|e| CliError::run(e.to_string()))?;
            let mut out = out_writer(&args.out, "intervene.csv")?;
            write_equilibrium(&s.market, &eq, args.format, &mut out)
                .map_err(|e| CliError::run(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Opic(args) => {
            let s = load(&args)?;
            let mut oracle = SolverOracle::new(&s.market, s.solver);
            let trace = run_opic(&mut oracle, &s.constraints, s.opic.rate, s.opic.rounds)
                .map_err(|e| CliError::run(e.to_string()))?;
            let mut out = out_writer(&args.out, "trace.csv")?;
            trace
                .write_csv(&s.constraints, &mut out)
                .map_err(|e| CliError::run(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit(args) => {
            let s = load(&args)?;
            let zero = Mat::zeros(s.market.n_buyers(), s.market.m_items());
            let base = solve_offset_eg(&s.market, &zero, &s.solver)
                .map_err(|e| CliError::run(e.to_string()))?;
            let mut out = out_writer(&args.out, "audit.txt")?;
            let constrained = if s.constraints.is_empty() {
                None
            } else {
                Some(
                    solve_constrained_eg(&s.market, &s.constraints, &s.solver)
                        .map_err(|e| CliError::run(e.to_string()))?,
                )
            };
            audit_report(&s, &base, constrained.as_ref(), &mut out)
                .map_err(|e| CliError::run(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Repro { out } => {
            let report = run_repro_suite().map_err(|e| CliError::run(e.to_string()))?;
            let mut w = out_writer(&out, "repro.txt")?;
            report
                .write_text(&mut w)
                .map_err(|e| CliError::run(e.to_string()))?;
            if report.all_passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Randexp {
            family,
            markets,
            seed,
            buyers,
            items,
            rounds,
            rate,
            out,
        } => {
            let mut config = ExperimentConfig::new(family.into());
            config.n_markets = markets;
            config.seed = seed;
            config.n_buyers = buyers;
            config.n_items = items;
            config.opic_rounds = rounds;
            config.learning_rate = rate;
            let solver = fairmarket::SolverConfig::default();
            let report = run_random_experiments(&config, &solver)
                .map_err(|e| CliError::run(e.to_string()))?;
            fs::create_dir_all(&out)
                .map_err(|e| CliError::input(format!("cannot create {out:?}: {e}")))?;
            let create = |name: &str| -> Result<fs::File, CliError> {
                fs::File::create(out.join(name)).map_err(|e| CliError::run(e.to_string()))
            };
            let run_io = |r: std::io::Result<()>| -> Result<(), CliError> {
                r.map_err(|e| CliError::run(e.to_string()))
            };
            run_io(report.write_csv(&mut create("buyers.csv")?))?;
            run_io(report.write_violation_csv(&mut create("violation.csv")?))?;
            run_io(report.write_summary(&mut create("summary.txt")?))?;
            emit_chart(&report.violation_chart(), &out.join("violation.svg"))
                .map_err(|e| CliError::run(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chart { input, out, column } => {
            let chart = chart_from_csv(&input, &column)?;
            emit_chart(&chart, &out).map_err(|e| CliError::run(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn audit_report(
    s: &Scenario,
    base: &TaxSubsidyEquilibrium,
    constrained: Option<&TaxSubsidyEquilibrium>,
    out: &mut dyn std::io::Write,
) -> std::io::Result<()> {
    let market = &s.market;
    let groups = group_partition(market);
    writeln!(out, "unconstrained utilities: {:?}", base.utilities(market))?;
    let envy = budget_adjusted_envy(market, &base.alloc, &groups);
    writeln!(
        out,
        "unconstrained within-group envy: {:.3e}",
        envy.max_within_group
    )?;
    let gap = buyer_pareto_gap(market, &base.alloc.x)
        .map(|r| r.gap)
        .unwrap_or(f64::NAN);
    writeln!(out, "unconstrained buyer gap: {gap:.3e}")?;

    if let Some(con) = constrained {
        writeln!(out, "constrained utilities: {:?}", con.utilities(market))?;
        let envy = budget_adjusted_envy(market, &con.alloc, &groups);
        writeln!(
            out,
            "constrained within-group envy: {:.3e}",
            envy.max_within_group
        )?;
        let targets = constrained_buyers(s);
        let delta = welfare_delta(market, base, con, &targets);
        writeln!(
            out,
            "target delta: mean {:+.4} [{:+.4}, {:+.4}] over {} buyers",
            delta.target.mean, delta.target.p05, delta.target.p95, delta.target.count
        )?;
        writeln!(
            out,
            "other delta:  mean {:+.4} [{:+.4}, {:+.4}] over {} buyers",
            delta.other.mean, delta.other.p05, delta.other.p95, delta.other.count
        )?;
        let gap = buyer_pareto_gap(market, &con.alloc.x)
            .map(|r| r.gap)
            .unwrap_or(f64::NAN);
        writeln!(out, "constrained buyer gap: {gap:.3e}")?;
        if let Some((buyers, items)) = protected_sets(s) {
            let gap = buyer_item_pareto_gap(market, &con.alloc.x, &buyers, &items)
                .map(|r| r.gap)
                .unwrap_or(f64::NAN);
            writeln!(out, "constrained buyer-item gap: {gap:.3e}")?;
            let all: Vec<usize> = (0..market.m_items()).collect();
            let pairs = vec![
                ("protected".to_string(), buyers.clone(), items.clone()),
                ("constrained_x_all".to_string(), buyers, all),
            ];
            let base_exp = exposure_report(&base.alloc.x, &pairs);
            let con_exp = exposure_report(&con.alloc.x, &pairs);
            for ((name, before), (_, after)) in
                base_exp.entries.iter().zip(&con_exp.entries)
            {
                writeln!(out, "exposure {name}: {before:.4} -> {after:.4}")?;
            }
        }
    }
    Ok(())
}

fn group_partition(market: &Market) -> Vec<Vec<usize>> {
    match market.buyer_groups() {
        None => vec![(0..market.n_buyers()).collect()],
        Some(labels) => {
            let mut unique: Vec<&String> = Vec::new();
            for l in labels {
                if !unique.contains(&l) {
                    unique.push(l);
                }
            }
            unique
                .into_iter()
                .map(|g| {
                    labels
                        .iter()
                        .enumerate()
                        .filter(|(_, l)| *l == g)
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect()
        }
    }
}

fn constrained_buyers(s: &Scenario) -> Vec<usize> {
    let mut buyers: Vec<usize> = s
        .constraints
        .ineq_terms()
        .iter()
        .chain(s.constraints.eq_terms())
        .map(|t| t.buyer)
        .collect();
    buyers.sort_unstable();
    buyers.dedup();
    buyers
}

fn protected_sets(s: &Scenario) -> Option<(Vec<usize>, Vec<usize>)> {
    let spec = s.file.constraints.as_ref()?;
    match spec.family.as_str() {
        "aef" => Some((spec.buyers.clone()?, spec.items.clone()?)),
        "pbp" => Some((spec.buyers.clone()?, spec.item_group_a.clone()?)),
        "pip" => Some((spec.buyer_group_a.clone()?, spec.items.clone()?)),
        _ => None,
    }
}

fn chart_from_csv(input: &Path, column: &str) -> Result<Chart, CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::input(format!("cannot read {input:?}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::input("empty CSV"))?;
    let names: Vec<&str> = header.split(',').collect();
    let y_ix = names
        .iter()
        .position(|n| *n == column)
        .ok_or_else(|| {
            CliError::input(format!(
                "column '{column}' not found; available: {names:?}"
            ))
        })?;
    let lo_ix = names.iter().position(|n| *n == "p05");
    let hi_ix = names.iter().position(|n| *n == "p95");
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |ix: usize| -> Result<f64, CliError> {
            fields
                .get(ix)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| {
                    CliError::input(format!("line {}: bad number in column {ix}", ln + 2))
                })
        };
        x.push(parse(0)?);
        y.push(parse(y_ix)?);
        if let (Some(l), Some(h)) = (lo_ix, hi_ix) {
            lo.push(parse(l)?);
            hi.push(parse(h)?);
        }
    }
    let mut series = Series::line(column, x, y);
    if !lo.is_empty() {
        series = series.with_band(lo, hi);
    }
    Ok(Chart {
        title: input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        x_label: names.first().unwrap_or(&"x").to_string(),
        y_label: column.to_string(),
        series: vec![series],
    })
}
