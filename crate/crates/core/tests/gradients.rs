mod common;

use common::*;
use mood_core::nets::Arch;

fn assert_small(name: &str, err: f64) {
    assert!(err < FD_TOL, "{name}: max relative error {err:.3e}");
}

#[test]
fn critic_loss_matches_finite_differences() {
    for seed in 0..3 {
        assert_small("critic simple", critic_case(&setup(seed, false)));
        assert_small("critic modern", critic_case(&setup(seed, true)));
    }
}

#[test]
fn td3_and_td3bc_actor_match_finite_differences() {
    for seed in 0..3 {
        for alpha in [0.0, 0.1, 2.5] {
            assert_small("td3bc simple", td3bc_case(&setup(seed, false), alpha));
            assert_small("td3bc modern", td3bc_case(&setup(seed, true), alpha));
        }
    }
}

#[test]
fn awac_actor_matches_finite_differences() {
    for seed in 0..3 {
        for beta in [0.1, 1.0, 10.0] {
            assert_small("awac", awac_case(&setup(seed, seed % 2 == 0), beta));
        }
    }
}

#[test]
fn asac_actor_matches_finite_differences() {
    for seed in 0..3 {
        assert_small("asac", asac_case(&setup(seed, seed % 2 == 1)));
    }
}

#[test]
fn value_loss_matches_finite_differences() {
    for seed in 0..3 {
        for tau in [0.5, 0.7, 0.9] {
            assert_small("value", value_case(&setup(seed, seed % 2 == 0), tau));
        }
    }
}

#[test]
fn network_backward_matches_finite_differences() {
    for seed in 0..4 {
        assert_small(
            "simple",
            net_case(
                &Arch::Simple {
                    dims: vec![3, 9, 9, 2],
                },
                seed,
            ),
        );
        assert_small(
            "modern",
            net_case(
                &Arch::Modern {
                    input: 3,
                    hidden: 5,
                    blocks: 3,
                    output: 2,
                },
                seed,
            ),
        );
        assert_small(
            "modern 0 blocks",
            net_case(
                &Arch::Modern {
                    input: 3,
                    hidden: 5,
                    blocks: 0,
                    output: 2,
                },
                seed,
            ),
        );
    }
}
