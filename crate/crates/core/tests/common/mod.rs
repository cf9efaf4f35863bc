#![allow(dead_code)]

use std::path::PathBuf;

use rmss_core::{
    parse_case, tag_essential, Axes, CaseFormat, GridCase, Spread, StochasticParameterSet,
};

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("cases")
        .join(name)
}

pub fn load(name: &str) -> GridCase {
    parse_case(case_path(name), CaseFormat::MatpowerM).unwrap()
}

/// Bundled case with its stochastic selection tagged.
pub fn tagged(name: &str) -> GridCase {
    let selector = match name {
        "case2.m" => "all",
        "case14_solar.m" => "solar",
        _ => "renewable",
    };
    tag_essential(&load(name), &selector.parse().unwrap()).unwrap()
}

pub fn two_percent(case: &GridCase, axes: Axes) -> StochasticParameterSet {
    StochasticParameterSet::from_case(case, axes, Spread::Relative(0.02)).unwrap()
}

pub const CASES: [&str; 3] = ["case2.m", "case14_solar.m", "synth118.m"];
