//! Predicted transfer equals what the runtime measures, node by node.

mod common;

use common::suites::metering_suite;

#[test]
fn workload_and_compiled_random_plans() {
    assert!(metering_suite(60).unwrap_or_else(|m| panic!("{m}")) > 60);
}
