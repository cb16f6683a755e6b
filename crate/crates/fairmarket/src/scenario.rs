//! Scenario files: a human-readable TOML schema describing a market, an
//! optional constraint, and solver/online-loop settings.
//!
//! ```toml
//! version = 1
//!
//! [market]
//! budgets = [1.0, 1.0]
//! valuations = [[2.0, 1.0], [1.0, 2.0]]
//! supplies = [1.0, 1.0]        # optional, defaults to 1 per item
//! buyer_groups = ["C", "U"]    # optional labels
//! item_groups = ["A", "B"]
//!
//! [constraints]
//! family = "pbp"               # pbp | pip | aef | raw | none
//! buyers = [0]
//! item_group_a = [0]
//! item_group_b = [1]
//! alpha = 1.0                  # optional; defaults to |B| / |A|
//!
//! [solver]
//! tol = 1e-6
//! max_iters = 4000
//! step = { kind = "polynomial", scale = 0.1, exponent = 0.5 }
//! seed = 0
//!
//! [opic]
//! rounds = 50
//! rate = { kind = "constant", value = 0.2 }
//! ```
//!
//! `raw` constraints list explicit sparse rows:
//!
//! ```toml
//! [constraints]
//! family = "raw"
//! eq = [{ terms = [[0, 0, 1.0], [0, 1, -1.0]], rhs = 0.0, label = "parity" }]
//! ineq = [{ terms = [[1, 0, -1.0]], rhs = -0.5, label = "floor" }]
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{
    build_aef, build_pbp, build_pip, equal_exposure_alpha, ConstraintError,
    LinearConstraintSet,
};
use crate::market::{Market, MarketError};
use crate::mat::Mat;
use crate::opic::RateSchedule;
use crate::solver::{SolverConfig, StepSchedule};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("market: {0}")]
    Market(#[from] MarketError),
    #[error("constraints: {0}")]
    Constraints(#[from] ConstraintError),
}

fn field_err(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub market: MarketSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opic: Option<OpicSpec>,
}

fn default_version() -> u32 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub budgets: Vec<f64>,
    pub valuations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyer_groups: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_groups: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_group_a: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_group_b: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyer_group_a: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyer_group_b: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eq: Vec<RawRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ineq: Vec<RawRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawRow {
    /// Sparse terms `[buyer, item, coef]`.
    pub terms: Vec<(usize, usize, f64)>,
    pub rhs: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StepSpec {
    Constant { value: f64 },
    Polynomial { scale: f64, exponent: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OpicSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RateSpec {
    Constant { value: f64 },
    Harmonic { value: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct OpicConfig {
    pub rounds: usize,
    pub rate: RateSchedule,
}

impl Default for OpicConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            rate: RateSchedule::Constant(0.2),
        }
    }
}

/// A validated scenario: the built artifacts plus the raw file for
/// round-tripping.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub market: Market,
    pub constraints: LinearConstraintSet,
    pub solver: SolverConfig,
    pub opic: OpicConfig,
    pub file: ScenarioFile,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    build_scenario(file)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.file).expect("scenario serializes")
    }
}

fn build_scenario(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    if file.version != 1 {
        return Err(field_err("version", format!("unsupported version {}", file.version)));
    }
    let spec = &file.market;
    if spec.valuations.is_empty() {
        return Err(field_err("market.valuations", "at least one buyer row required"));
    }
    let m_items = spec.valuations[0].len();
    if m_items == 0 {
        return Err(field_err("market.valuations", "at least one item column required"));
    }
    if spec.valuations.iter().any(|r| r.len() != m_items) {
        return Err(field_err(
            "market.valuations",
            "all rows must have the same length",
        ));
    }
    let supplies = spec.supplies.clone().unwrap_or_else(|| vec![1.0; m_items]);
    let market = Market::with_supplies(
        spec.budgets.clone(),
        Mat::from_rows(&spec.valuations),
        supplies,
    )?
    .with_groups(spec.buyer_groups.clone(), spec.item_groups.clone())?;

    let constraints = match &file.constraints {
        None => LinearConstraintSet::empty(market.n_buyers(), market.m_items()),
        Some(spec) => build_constraints(&market, spec)?,
    };

    let mut solver = SolverConfig::default();
    if let Some(s) = &file.solver {
        if let Some(tol) = s.tol {
            if !(tol > 0.0) {
                return Err(field_err("solver.tol", "must be positive"));
            }
            solver.tol = tol;
        }
        if let Some(mi) = s.max_iters {
            if mi == 0 {
                return Err(field_err("solver.max_iters", "must be at least 1"));
            }
            solver.max_iters = mi;
        }
        if let Some(step) = &s.step {
            solver.step = match *step {
                StepSpec::Constant { value } => StepSchedule::Constant(value),
                StepSpec::Polynomial { scale, exponent } => {
                    StepSchedule::Polynomial { scale, exponent }
                }
            };
        }
        if let Some(seed) = s.seed {
            solver.seed = seed;
        }
    }

    let mut opic = OpicConfig::default();
    if let Some(o) = &file.opic {
        if let Some(rounds) = o.rounds {
            if rounds == 0 {
                return Err(field_err("opic.rounds", "must be at least 1"));
            }
            opic.rounds = rounds;
        }
        if let Some(rate) = &o.rate {
            opic.rate = match *rate {
                RateSpec::Constant { value } => RateSchedule::Constant(value),
                RateSpec::Harmonic { value } => RateSchedule::Harmonic(value),
            };
        }
    }

    Ok(Scenario {
        market,
        constraints,
        solver,
        opic,
        file,
    })
}

fn to_set(field: &str, v: &Option<Vec<usize>>) -> Result<BTreeSet<usize>, ScenarioError> {
    v.as_ref()
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| field_err(field, "required for this constraint family"))
}

fn build_constraints(
    market: &Market,
    spec: &ConstraintSpec,
) -> Result<LinearConstraintSet, ScenarioError> {
    match spec.family.as_str() {
        "none" => Ok(LinearConstraintSet::empty(
            market.n_buyers(),
            market.m_items(),
        )),
        "pbp" => {
            let buyers = to_set("constraints.buyers", &spec.buyers)?;
            let a = to_set("constraints.item_group_a", &spec.item_group_a)?;
            let b = to_set("constraints.item_group_b", &spec.item_group_b)?;
            let alpha = spec
                .alpha
                .unwrap_or_else(|| equal_exposure_alpha(a.len(), b.len()));
            Ok(build_pbp(market, &buyers, &a, &b, alpha)?)
        }
        "pip" => {
            let items = to_set("constraints.items", &spec.items)?;
            let a = to_set("constraints.buyer_group_a", &spec.buyer_group_a)?;
            let b = to_set("constraints.buyer_group_b", &spec.buyer_group_b)?;
            let alpha = spec
                .alpha
                .unwrap_or_else(|| equal_exposure_alpha(a.len(), b.len()));
            Ok(build_pip(market, &items, &a, &b, alpha)?)
        }
        "aef" => {
            let buyers = to_set("constraints.buyers", &spec.buyers)?;
            let items = to_set("constraints.items", &spec.items)?;
            let floor = spec
                .floor
                .ok_or_else(|| field_err("constraints.floor", "required for aef"))?;
            Ok(build_aef(market, &buyers, &items, floor)?)
        }
        "raw" => {
            let mut cs = LinearConstraintSet::empty(market.n_buyers(), market.m_items());
            for (k, row) in spec.ineq.iter().enumerate() {
                let label = if row.label.is_empty() {
                    format!("ineq_{k}")
                } else {
                    row.label.clone()
                };
                cs.push_ineq(&row.terms, row.rhs, label)?;
            }
            for (k, row) in spec.eq.iter().enumerate() {
                let label = if row.label.is_empty() {
                    format!("eq_{k}")
                } else {
                    row.label.clone()
                };
                cs.push_eq(&row.terms, row.rhs, label)?;
            }
            Ok(cs)
        }
        other => Err(field_err(
            "constraints.family",
            format!("unknown family '{other}' (expected pbp, pip, aef, raw, or none)"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
version = 1

[market]
budgets = [1.0, 1.0]
valuations = [[2.0, 1.0], [1.0, 2.0]]
buyer_groups = ["C", "U"]
item_groups = ["A", "B"]

[constraints]
family = "pbp"
buyers = [0]
item_group_a = [0]
item_group_b = [1]

[solver]
tol = 1e-7

[opic]
rounds = 40
rate = { kind = "harmonic", value = 0.5 }
"#;

    #[test]
    fn parses_and_builds() {
        let s = parse_scenario(EXAMPLE).unwrap();
        assert_eq!(s.market.n_buyers(), 2);
        assert_eq!(s.constraints.n_eq(), 1);
        assert_eq!(s.solver.tol, 1e-7);
        assert_eq!(s.opic.rounds, 40);
        assert_eq!(s.opic.rate, RateSchedule::Harmonic(0.5));
    }

    #[test]
    fn alpha_defaults_to_group_size_ratio() {
        let text = r#"
[market]
budgets = [1.0]
valuations = [[1.0, 1.0, 1.0]]

[constraints]
family = "pbp"
buyers = [0]
item_group_a = [0]
item_group_b = [1, 2]
"#;
        let s = parse_scenario(text).unwrap();
        // alpha = |B|/|A| = 2, so the B-side coefficients are -2.
        let coefs: Vec<f64> = s.constraints.eq_terms().iter().map(|t| t.coef).collect();
        assert_eq!(coefs, vec![1.0, -2.0, -2.0]);
    }

    #[test]
    fn round_trip_is_semantically_identical() {
        let s = parse_scenario(EXAMPLE).unwrap();
        let serialized = s.to_toml();
        let again = parse_scenario(&serialized).unwrap();
        assert_eq!(s.file, again.file);
        assert_eq!(s.market, again.market);
        assert_eq!(s.constraints, again.constraints);
    }

    #[test]
    fn unknown_field_and_family_are_addressed() {
        let bad = "[market]\nbudgets = [1.0]\nvaluations = [[1.0]]\nbad_field = 3\n";
        let err = parse_scenario(bad).unwrap_err();
        assert!(err.to_string().contains("bad_field"), "{err}");

        let bad_family = r#"
[market]
budgets = [1.0]
valuations = [[1.0]]

[constraints]
family = "quota"
"#;
        let err = parse_scenario(bad_family).unwrap_err();
        assert!(err.to_string().contains("constraints.family"), "{err}");
    }

    #[test]
    fn raw_rows_build() {
        let text = r#"
[market]
budgets = [1.0, 1.0]
valuations = [[0.0, 2.0], [2.0, 0.0]]

[constraints]
family = "raw"
ineq = [{ terms = [[0, 0, -1.0]], rhs = -0.5, label = "floor" }]
"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.constraints.n_ineq(), 1);
        assert_eq!(s.constraints.ineq_labels()[0], "floor");
    }
}
