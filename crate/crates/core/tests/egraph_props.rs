mod common;

use common::graphs::{extraction_vs_brute_force, stress};
use proptest::prelude::*;

#[test]
fn ten_thousand_random_operations() {
    for seed in 0..3 {
        stress(seed, 10_000);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn random_operations_keep_invariants(seed in any::<u64>()) {
        stress(seed, 1_500);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn extraction_matches_brute_force(seed in any::<u64>()) {
        if let Err(e) = extraction_vs_brute_force(seed) {
            prop_assert!(false, "{}", e);
        }
    }
}
