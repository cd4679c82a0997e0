//! Every rule applied at every position of generated plans keeps results.

mod common;

use common::corpus::{check_enumerated_spaces, check_every_rule};

#[test]
fn every_rule_at_every_position_is_sound() {
    let fired = check_every_rule().unwrap_or_else(|msg| panic!("{msg}"));
    let missing: Vec<_> = fired.iter().filter(|(_, n)| **n == 0).map(|(r, _)| *r).collect();
    assert!(missing.is_empty(), "rules never exercised: {missing:?}; counts {fired:?}");
}

#[test]
fn enumerated_plan_spaces_are_sound() {
    assert!(check_enumerated_spaces().unwrap_or_else(|msg| panic!("{msg}")) > 20);
}
