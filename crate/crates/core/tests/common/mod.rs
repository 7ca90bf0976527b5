#![allow(dead_code)]

use hmrl_core::agent::{AgentParams, RolloutBatch};
use hmrl_core::agent::policy::action_log_prob;
use hmrl_core::case::{build_case, CaseFile};
use hmrl_core::harness::Preset;
use hmrl_core::orchestrator::RunConfig;
use hmrl_core::rng;
use ndarray::Array2;
use rand::Rng;

pub fn desk_case() -> CaseFile {
    build_case(&Preset::Spe1Analog.recipe().unwrap()).unwrap()
}

/// Desk preset training config trimmed for quick tests.
pub fn quick_config(n_envs: usize, budget: u64, seed: u64) -> RunConfig {
    let mut cfg = Preset::Spe1Analog.run_config();
    cfg.n_envs = n_envs;
    cfg.budget = budget;
    cfg.seed = seed;
    cfg.ppo.hidden = 16;
    cfg
}

/// Batch whose stored log-probs sit at fixed offsets from the current policy,
/// so ratios land on both sides of the clip window.
pub fn random_batch(params: &AgentParams, n: usize, seed: u64) -> RolloutBatch {
    let mut r = rng::seeded(seed);
    let d = params.dim();
    let states = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    let log_probs = (0..n)
        .map(|i| {
            let lp = action_log_prob(params, states.row(i).as_slice().unwrap(), actions.row(i).as_slice().unwrap()).unwrap();
            lp + [0.05, -0.07, 0.4, -0.5, 0.0][i % 5] + 0.013 * i as f64
        })
        .collect();
    RolloutBatch {
        states,
        actions,
        log_probs,
        values: vec![0.0; n],
        returns: (0..n).map(|i| (i as f64 * 0.37).sin()).collect(),
        advantages: (0..n).map(|i| if i % 3 == 0 { -1.0 } else { 0.5 + 0.1 * i as f64 }).collect(),
    }
}
