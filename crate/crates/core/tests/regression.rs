//! Seed-pinned episode values, frozen from a verified run.

mod common;

use common::example_market;
use fluidgate::policy::PolicyConfig;
use fluidgate::sim::run_episode;

#[test]
fn nondegenerate_episode_is_pinned() {
    let (r, _) = run_episode(
        &example_market([1.0, 1.0]),
        PolicyConfig::default(),
        2024,
        false,
    )
    .unwrap();
    assert!((r.reward_to_tau - 757.3999999999988).abs() < 1e-9);
    assert!((r.reward_to_t - 759.3999999999988).abs() < 1e-9);
    assert_eq!((r.tau, r.tau_s), (998, Some(2)));
    assert!((r.hindsight_value - 760.2).abs() < 1e-9);
    assert!(r.reward_to_tau >= 0.0 && r.reward_to_tau <= 760.0);
}

#[test]
fn degenerate_episode_is_pinned() {
    let (r, _) = run_episode(
        &example_market([1.0, 1.15]),
        PolicyConfig::default(),
        2024,
        false,
    )
    .unwrap();
    assert!((r.reward_to_tau - 790.3999999999986).abs() < 1e-9);
    assert!((r.reward_to_t - 792.1999999999986).abs() < 1e-9);
    assert_eq!((r.tau, r.tau_s), (997, None));
    assert!((r.hindsight_value - 794.2).abs() < 1e-9);
}
