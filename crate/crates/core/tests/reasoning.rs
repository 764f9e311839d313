mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_inference_matches_hard_closure(seed in any::<u64>()) {
        if let Err(e) = tc_case(seed) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn fixed_seed_programs_match_hard_closure() {
    for seed in 0..200 {
        tc_case(seed).unwrap();
    }
}

#[test]
fn reasoning_gradients_match_finite_differences() {
    for seed in 0..50 {
        let (ew, ex) = reasoning_gradient_errors(seed);
        assert!(ew < 1e-3 && ex < 1e-3, "seed {seed}: weights {ew}, inputs {ex}");
    }
}

#[test]
fn valuation_gradients_match_finite_differences() {
    for seed in 0..50 {
        let e = valuation_gradient_error(seed);
        assert!(e < 1e-3, "seed {seed}: {e}");
    }
}

#[test]
fn policy_gradients_match_finite_differences() {
    for seed in 0..50 {
        let e = policy_gradient_error(seed);
        assert!(e < 1e-3, "seed {seed}: {e}");
    }
}

#[test]
fn graph_grows_linearly_with_constants() {
    let sizes: Vec<(usize, usize)> = [2, 4, 8].iter().map(|&n| kangaroo_graph_size(n)).collect();
    for w in sizes.windows(2) {
        assert_eq!(w[1].0, 2 * w[0].0, "ground rules double");
        let ratio = w[1].1 as f64 / w[0].1 as f64;
        assert!(ratio <= 2.2, "{sizes:?}");
    }
}
