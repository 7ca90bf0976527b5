mod common;

use std::sync::Arc;

use hmrl_core::env::{apply_action, CaseContext, EnvConfig, Environment};
use hmrl_core::objective::TerminationOutcome;
use hmrl_core::rng;
use hmrl_core::sim::ForwardModel;
use proptest::prelude::*;
use rand::Rng;

fn context() -> Arc<CaseContext> {
    let case = common::desk_case();
    let model: Arc<dyn ForwardModel> = Arc::new(case.simulator());
    Arc::new(CaseContext::new(&case, model).unwrap())
}

/// Plays random actions until `episodes` episodes end, returning per-episode
/// (Σ step rewards, F0 − F_final, F0).
fn play(env: &mut Environment, episodes: usize, scale: f64, bias: f64, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut r = rng::seeded(seed);
    let f0 = env.context().initial_objective;
    let mut out = Vec::new();
    let mut sum = 0.0;
    while out.len() < episodes {
        let a: Vec<f64> = (0..env.state().len()).map(|_| bias + scale * r.random_range(-1.0..1.0)).collect();
        let res = env.step(&a).unwrap();
        sum += res.step_reward;
        if res.outcome.is_terminal() {
            out.push((sum, f0 - res.objective, f0));
            sum = 0.0;
        }
    }
    out
}

#[test]
fn step_rewards_telescope_over_episodes() {
    let cfg = EnvConfig {
        max_steps_per_episode: 12,
        ..EnvConfig::default()
    };
    let mut env = Environment::new(0, context(), Arc::new(cfg), 7);
    let mut outcomes = 0;
    for (bias, seed) in [(0.0, 1), (3.0, 2), (-20.0, 3)] {
        for (sum, direct, f0) in play(&mut env, 3, 10.0, bias, seed) {
            assert!((sum - direct).abs() <= 1e-12 * f0, "{sum} vs {direct}");
            outcomes += 1;
        }
    }
    assert_eq!(outcomes, 9);
}

#[test]
fn solved_episode_pays_the_bonus_and_resets() {
    let ctx = context();
    let cfg = Arc::new(EnvConfig::default());
    let mut env = Environment::new(0, ctx.clone(), cfg.clone(), 1);
    // the shipped case is solved by a uniform shift of about 15 mD
    let res = env.step(&vec![15.0; ctx.start.len()]).unwrap();
    assert_eq!(res.outcome, TerminationOutcome::Solved);
    assert_eq!(res.reward, res.step_reward + cfg.rewards.solved);
    assert!(res.solved_series.is_some());
    assert_eq!(env.state(), ctx.start.as_slice());
    assert_eq!(env.episode_step(), 0);
}

#[test]
fn environments_do_not_share_state() {
    let ctx = context();
    let cfg = Arc::new(EnvConfig::default());
    let mut a = Environment::new(0, ctx.clone(), cfg.clone(), 11);
    let mut b = Environment::new(1, ctx.clone(), cfg.clone(), 12);
    let b_before = b.snapshot();
    play(&mut a, 1, 50.0, 0.0, 4);
    let b_after = b.snapshot();
    assert_eq!(b_before, b_after);
    let mut lone = Environment::new(1, ctx, cfg, 12);
    let x = vec![2.0; lone.state().len()];
    assert_eq!(b.step(&x).unwrap().objective, lone.step(&x).unwrap().objective);
}

proptest! {
    #[test]
    fn actions_stay_within_bounds(
        state in prop::collection::vec(0.0..500.0f64, 3..60),
        seed in any::<u64>(),
        kd in (1.0..200.0f64, 1.0..200.0f64, 0.1..10.0f64),
    ) {
        let n = state.len() - state.len() % 3;
        let state = &state[..n];
        let mut r = rng::seeded(seed);
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(-1e3..1e3)).collect();
        let cfg = EnvConfig { k_delta: [kd.0, kd.1, kd.2], ..EnvConfig::default() };
        let next = apply_action(state, &raw, &cfg).unwrap();
        for (i, (s, x)) in state.iter().zip(&next).enumerate() {
            let bound = cfg.k_delta[i / (n / 3)];
            prop_assert!(*x >= 0.0);
            prop_assert!((x - s).abs() <= bound * (1.0 + 1e-12));
        }
    }
}
