mod common;

use hmrl_core::case::build_case;
use hmrl_core::harness::Preset;
use hmrl_core::orchestrator::{read_solutions, relative_distance, Checkpoint, RunConfig, Trainer, Workspace};
use hmrl_core::parallel::ExecMode;

fn run_in(dir: &std::path::Path, cfg: RunConfig) -> (String, Trainer) {
    let mut t = Trainer::new(cfg, common::desk_case()).unwrap();
    t.attach_workspace(Workspace::at(dir).unwrap()).unwrap();
    t.run().unwrap();
    let metrics = std::fs::read_to_string(t.workspace().unwrap().metrics_path()).unwrap();
    (metrics, t)
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::quick_config(2, 192, 5);
    let (a, _) = run_in(&dir.path().join("a"), cfg.clone());
    let (b, _) = run_in(&dir.path().join("b"), cfg.clone());
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 6);
    let (c, _) = run_in(&dir.path().join("c"), RunConfig { seed: 6, ..cfg });
    assert_ne!(a, c);
}

#[test]
fn backends_agree_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::quick_config(4, 128, 3);
    let (par, _) = run_in(&dir.path().join("p"), cfg.clone());
    let (seq, _) = run_in(
        &dir.path().join("s"),
        RunConfig {
            exec: ExecMode::Sequential,
            ..cfg
        },
    );
    assert_eq!(par, seq);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        checkpoint_every: 2,
        ..common::quick_config(2, 192, 9)
    };
    let (full, trainer) = run_in(&dir.path().join("full"), cfg);
    let ck_path = trainer.workspace().unwrap().checkpoint_path(2);
    let ck = Checkpoint::load(&ck_path).unwrap();
    assert_eq!(ck.header.iteration, 2);
    let mut resumed = Trainer::resume(&ck).unwrap();
    resumed.attach_workspace(Workspace::at(&dir.path().join("resumed")).unwrap()).unwrap();
    resumed.run().unwrap();
    let again = std::fs::read_to_string(resumed.workspace().unwrap().metrics_path()).unwrap();
    assert_eq!(full, again);
    assert_eq!(trainer.agent().params, resumed.agent().params);
    assert_eq!(trainer.archive().entries(), resumed.archive().entries());
}

#[test]
fn zero_budget_does_nothing() {
    let mut t = Trainer::new(common::quick_config(2, 0, 0), common::desk_case()).unwrap();
    let report = t.run().unwrap();
    assert_eq!((report.iterations, report.global_step, report.sims_total), (0, 0, 0));
    assert!(report.solutions.is_empty());
}

#[test]
fn budget_bounds_the_step_count() {
    let mut t = Trainer::new(common::quick_config(2, 100, 0), common::desk_case()).unwrap();
    let report = t.run().unwrap();
    assert_eq!(report.iterations, 3);
    assert_eq!(report.global_step, 96);
    assert_eq!(report.history.len(), 3);
    assert!(report.history.windows(2).all(|w| w[0].global_step < w[1].global_step));
}

#[test]
fn archived_solutions_are_distinct_and_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let (_, t) = run_in(dir.path(), common::quick_config(2, 640, 1));
    let entries = t.archive().entries();
    assert!(!entries.is_empty(), "no solution in 640 steps");
    let eps = common::desk_case().objective.epsilon;
    for (i, a) in entries.iter().enumerate() {
        assert!(a.objective < eps);
        assert!(a.global_step >= 1 && a.global_step <= t.global_step());
        for b in &entries[..i] {
            assert!(relative_distance(&a.params, &b.params) >= 0.01);
        }
    }
    let files = read_solutions(&t.workspace().unwrap().solutions_dir()).unwrap();
    assert_eq!(files.len(), entries.len());
    assert_eq!(files[0].entry, entries[0]);
}

#[test]
fn stops_at_solution_target() {
    let mut cfg = common::quick_config(2, 5000, 1);
    cfg.stop_after_solutions = Some(1);
    let mut t = Trainer::new(cfg, common::desk_case()).unwrap();
    let report = t.run().unwrap();
    assert!(!report.solutions.is_empty());
    assert!(report.global_step < 5000);
    assert!(report.first_solution_step.unwrap() <= report.global_step);
}

#[test]
fn large_preset_runs_briefly() {
    let case = build_case(&Preset::Spe9Analog.recipe().unwrap()).unwrap();
    assert_eq!(case.grid.n_params(), 27_000);
    let mut cfg = Preset::Spe9Analog.run_config();
    cfg.ppo.hidden = 128;
    cfg.n_envs = 2;
    cfg.batch_size = 10;
    cfg.budget = 10;
    let mut t = Trainer::new(cfg, case).unwrap();
    let report = t.run().unwrap();
    assert_eq!(report.global_step, 10);
    assert_eq!(report.sims_total, 10);
    assert!(report.history[0].mean_reward.is_finite());
}
