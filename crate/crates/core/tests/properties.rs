//! Uniqueness and continuity survive every shape-changing operator, and
//! concatenation undoes tiling.

mod common;

use common::props::{case, check_closure, check_concat_tile, tile_case};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn operators_preserve_uniqueness_and_continuity((frontier, bound, op, seed) in case()) {
        if let Err(msg) = check_closure(&frontier, &bound, &op, seed) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn concat_undoes_tile((frontier, bound, pick, seed) in tile_case()) {
        if let Err(msg) = check_concat_tile(&frontier, &bound, pick, seed) {
            prop_assert!(false, "{}", msg);
        }
    }
}
