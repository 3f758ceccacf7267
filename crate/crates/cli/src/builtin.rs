//! Scenarios shipped with the binary. The TOML sources live in
//! `crates/cli/scenarios/` and double as grammar examples.

use crate::scenario::{parse_scenario, Scenario, ScenarioError};

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

/// `(name, TOML source)` in display order.
pub const BUILTIN: &[(&str, &str)] = builtin![
    "tempered_linear",
    "tempered_linear_weak",
    "tempered_quadratic",
    "tempered_quadratic_2d",
    "heavy_tail_dichotomy",
    "heavy_tail_dichotomy_weighted",
    "heavy_tail_stable",
    "heavy_tail_stable_weighted",
    "threshold_e07",
    "threshold_e10",
    "threshold_e13",
    "super_poincare_rate",
    "concentration_linear",
    "concentration_log_polynomial",
    "concentration_stretched",
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(name, _)| *name)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Parsed built-in scenario, `None` for unknown names.
pub fn builtin(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    source(name).map(parse_scenario)
}
