use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use hmrl_core::agent::policy::action_log_prob;
use hmrl_core::agent::{ppo_loss_and_grad, AgentParams, PpoConfig, RolloutBatch};
use hmrl_core::case::{build_case, CaseFile};
use hmrl_core::harness::Preset;
use hmrl_core::orchestrator::{RunConfig, Trainer};
use hmrl_core::parallel::{ExecMode, Executor};
use hmrl_core::rng;
use ndarray::Array2;
use rand::Rng;

const MODES: [(ExecMode, &str); 2] = [(ExecMode::Parallel, "parallel"), (ExecMode::Sequential, "sequential")];

fn config(n_envs: usize, exec: ExecMode) -> RunConfig {
    let mut cfg = Preset::Spe1Analog.run_config();
    cfg.n_envs = n_envs;
    cfg.exec = exec;
    cfg.budget = u64::MAX;
    cfg
}

fn desk() -> CaseFile {
    build_case(&Preset::Spe1Analog.recipe().expect("preset")).expect("case")
}

/// One full training iteration: rollout collection plus the PPO update.
fn iteration(c: &mut Criterion) {
    let case = desk();
    let mut group = c.benchmark_group("iteration");
    group.sample_size(10);
    for n in [1, 4] {
        for (mode, name) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter_batched(
                    || Trainer::new(config(n, mode), case.clone()).expect("trainer"),
                    |mut t| t.iterate().expect("iteration"),
                    BatchSize::LargeInput,
                );
            });
        }
    }
    group.finish();
}

fn synthetic_batch(params: &AgentParams, n: usize) -> RolloutBatch {
    let mut r = rng::seeded(7);
    let d = params.dim();
    let states = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    let log_probs = (0..n)
        .map(|i| {
            action_log_prob(params, states.row(i).as_slice().unwrap(), actions.row(i).as_slice().unwrap()).unwrap()
                + 0.1 * ((i % 7) as f64 - 3.0)
        })
        .collect();
    RolloutBatch {
        states,
        actions,
        log_probs,
        values: vec![0.0; n],
        returns: (0..n).map(|i| (i as f64).cos()).collect(),
        advantages: (0..n).map(|i| (i as f64 * 0.3).sin()).collect(),
    }
}

/// Loss and gradient of one minibatch at the large preset's dimension.
fn gradient(c: &mut Criterion) {
    let dim = Preset::Spe9Analog.recipe().expect("preset").grid.n_params();
    let params = AgentParams::init(dim, 128, &mut rng::seeded(3));
    let batch = synthetic_batch(&params, 64);
    let cfg = PpoConfig::default();
    let mut group = c.benchmark_group("ppo_gradient");
    group.sample_size(10);
    for (mode, name) in MODES {
        let exec = Executor::new(mode, 4).expect("executor");
        group.bench_function(name, |b| b.iter(|| ppo_loss_and_grad(&params, &batch, &cfg, &exec).expect("loss")));
    }
    group.finish();
}

criterion_group!(benches, iteration, gradient);
criterion_main!(benches);
