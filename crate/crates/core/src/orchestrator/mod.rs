//! Bulk-synchronous training across `N` environments: every iteration each
//! environment takes `B/N` steps with the same frozen policy, then one PPO
//! update runs on the concatenated batch.

pub mod archive;
pub mod checkpoint;
pub mod workspace;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentParams, AdamState, PpoConfig, RolloutBatch};
use crate::case::CaseFile;
use crate::env::{CaseContext, EnvConfig, Environment, Transition};
use crate::error::{Error, Result};
use crate::field::derive_seed;
use crate::objective::TerminationOutcome;
use crate::parallel::{ExecMode, Executor};
use crate::sim::ForwardModel;

pub use archive::{read_solutions, relative_distance, ArchiveEntry, SolutionArchive, SolutionFile};
pub use checkpoint::{ArchiveMeta, Checkpoint, CheckpointHeader};
pub use workspace::{default_base, Workspace, WORKSPACE_ENV};

/// Stream index of the agent RNG under the master seed; environments use
/// `0..N`.
pub const AGENT_STREAM: u64 = 0xA6E0_0000;

/// Consecutive simulator failures tolerated in one environment before the
/// iteration is abandoned.
pub const MAX_CONSECUTIVE_FAILURES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_envs: usize,
    pub batch_size: usize,
    /// total environment time-steps
    pub budget: u64,
    pub seed: u64,
    /// per-environment seeds; derived from `seed` when absent
    #[serde(default)]
    pub env_seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub case_path: Option<PathBuf>,
    #[serde(default)]
    pub workspace_root: Option<PathBuf>,
    /// iterations between checkpoints; 0 writes only the final one
    #[serde(default)]
    pub checkpoint_every: u64,
    /// stop once this many solutions are archived
    #[serde(default)]
    pub stop_after_solutions: Option<usize>,
    pub distinct_threshold: f64,
    pub exec: ExecMode,
    /// partitions used inside each simulation's linear solves
    pub sim_partitions: usize,
    /// bootstrap with the critic where a batch cuts an unfinished episode
    pub bootstrap_truncation: bool,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_envs: 1,
            batch_size: 32,
            budget: 20_000,
            seed: 0,
            env_seeds: None,
            case_path: None,
            workspace_root: None,
            checkpoint_every: 0,
            stop_after_solutions: None,
            distinct_threshold: 0.01,
            exec: ExecMode::Parallel,
            sim_partitions: 1,
            bootstrap_truncation: true,
            ppo: PpoConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_envs;
        let b = self.batch_size;
        if n == 0 {
            return Err(Error::Config("n_envs must be >= 1".into()));
        }
        if b < n || !b.is_multiple_of(n) {
            return Err(Error::Config(format!(
                "batch size {b} must be a positive multiple of the environment count {n}"
            )));
        }
        if let Some(seeds) = &self.env_seeds {
            if seeds.len() != n {
                return Err(Error::shape("env_seeds", n, seeds.len()));
            }
        }
        if !(self.distinct_threshold >= 0.0) {
            return Err(Error::Config("distinct_threshold must be non-negative".into()));
        }
        if self.sim_partitions == 0 {
            return Err(Error::Config("sim_partitions must be >= 1".into()));
        }
        self.ppo.validate()?;
        self.env.validate()
    }

    pub fn env_seed(&self, i: usize) -> u64 {
        match &self.env_seeds {
            Some(s) => s[i],
            None => derive_seed(self.seed, i as u64),
        }
    }

    pub fn agent_seed(&self) -> u64 {
        derive_seed(self.seed, AGENT_STREAM)
    }

    pub fn iterations_for_budget(&self) -> u64 {
        self.budget / self.batch_size as u64
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub global_step: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub sims_total: u64,
    pub solutions: usize,
}

pub const METRICS_HEADER: &str =
    "iteration,global_step,mean_reward,policy_loss,value_loss,clip_fraction,sims_total,solutions";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.global_step,
            self.mean_reward,
            self.policy_loss,
            self.value_loss,
            self.clip_fraction,
            self.sims_total,
            self.solutions
        )
    }
}

/// Wall-clock per phase; kept apart from the deterministic metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub iteration: u64,
    pub collect_ms: f64,
    pub update_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub iterations: u64,
    pub global_step: u64,
    pub sims_total: u64,
    pub failures: u64,
    pub solutions: Vec<ArchiveEntry>,
    pub history: Vec<IterationMetrics>,
    pub timings: Vec<PhaseTiming>,
    pub run_dir: Option<PathBuf>,
    /// global step at which the first solution was found
    pub first_solution_step: Option<u64>,
    /// simulator calls at the end of the iteration that found it
    pub first_solution_sims: Option<u64>,
    pub wall_seconds: f64,
}

/// A solved state met during collection.
#[derive(Clone, Debug)]
pub struct SolvedState {
    /// 0-based step within this collection
    pub local_step: usize,
    pub params: Vec<f64>,
    pub objective: f64,
    pub observations: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EnvRollout {
    pub env_id: usize,
    pub transitions: Vec<Transition>,
    pub solved: Vec<SolvedState>,
    pub failures: u64,
}

fn collect_one(env: &mut Environment, agent: &Agent, steps: usize) -> Result<EnvRollout> {
    let mut transitions = Vec::with_capacity(steps);
    let mut solved = Vec::new();
    let mut failures = 0;
    let mut streak = 0;
    while transitions.len() < steps {
        let state = env.state().to_vec();
        let (action, log_prob, value) = agent.act(&state, env.rng_mut())?;
        let res = match env.step(&action) {
            Ok(r) => r,
            Err(Error::Simulation { .. } | Error::NonFinite(_)) => {
                failures += 1;
                streak += 1;
                if streak >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::Config(format!(
                        "environment {} failed {streak} consecutive simulations",
                        env.id()
                    )));
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        streak = 0;
        let terminal_value = if res.outcome == TerminationOutcome::TimedOut && env.config().bootstrap_on_timeout {
            agent.value(&res.new_state)?
        } else {
            0.0
        };
        if let Some(series) = res.solved_series {
            solved.push(SolvedState {
                local_step: transitions.len(),
                params: res.new_state.clone(),
                objective: res.objective,
                observations: series.observations,
            });
        }
        transitions.push(Transition {
            state,
            action,
            log_prob,
            reward: res.reward,
            outcome: res.outcome,
            value,
            objective: res.objective,
            terminal_value,
        });
    }
    env.flush_log()?;
    Ok(EnvRollout {
        env_id: env.id(),
        transitions,
        solved,
        failures,
    })
}

/// Advances every environment by `batch / N` steps with the same policy.
/// Results are in environment order regardless of scheduling.
pub fn collect_rollouts(envs: &mut [Environment], agent: &Agent, batch: usize, exec: &Executor) -> Result<Vec<EnvRollout>> {
    let n = envs.len();
    if n == 0 || !batch.is_multiple_of(n) || batch < n {
        return Err(Error::Config(format!("batch {batch} cannot be split over {n} environments")));
    }
    let steps = batch / n;
    exec.map_mut(envs, |env| collect_one(env, agent, steps)).into_iter().collect()
}

pub struct Trainer {
    cfg: RunConfig,
    case: CaseFile,
    envs: Vec<Environment>,
    agent: Agent,
    exec: Executor,
    archive: SolutionArchive,
    iteration: u64,
    global_step: u64,
    history: Vec<IterationMetrics>,
    timings: Vec<PhaseTiming>,
    workspace: Option<Workspace>,
    metrics_out: Option<BufWriter<File>>,
    timings_out: Option<BufWriter<File>>,
}

fn build_context(cfg: &RunConfig, case: &CaseFile) -> Result<Arc<CaseContext>> {
    let model: Arc<dyn ForwardModel> = Arc::new(case.simulator().with_partitions(cfg.sim_partitions));
    Ok(Arc::new(CaseContext::new(case, model)?))
}

impl Trainer {
    pub fn new(cfg: RunConfig, case: CaseFile) -> Result<Self> {
        cfg.validate()?;
        case.validate()?;
        let ctx = build_context(&cfg, &case)?;
        let env_cfg = Arc::new(cfg.env.clone());
        let envs = (0..cfg.n_envs)
            .map(|i| Environment::new(i, ctx.clone(), env_cfg.clone(), cfg.env_seed(i)))
            .collect();
        let agent = Agent::new(case.grid.n_params(), cfg.ppo.hidden, cfg.agent_seed());
        let exec = Executor::new(cfg.exec, cfg.n_envs)?;
        let archive = SolutionArchive::new(case.name.clone(), ctx.epsilon(), cfg.distinct_threshold);
        Ok(Self {
            cfg,
            case,
            envs,
            agent,
            exec,
            archive,
            iteration: 0,
            global_step: 0,
            history: Vec::new(),
            timings: Vec::new(),
            workspace: None,
            metrics_out: None,
            timings_out: None,
        })
    }

    /// Rebuilds the full training state saved by [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let h = &ck.header;
        let mut t = Self::new(h.config.clone(), h.case.clone())?;
        if h.dim != t.case.grid.n_params() {
            return Err(Error::shape("checkpoint parameter dimension", t.case.grid.n_params(), h.dim));
        }
        if h.envs.len() != t.cfg.n_envs {
            return Err(Error::shape("checkpoint environments", t.cfg.n_envs, h.envs.len()));
        }
        let ctx = build_context(&t.cfg, &t.case)?;
        let env_cfg = Arc::new(t.cfg.env.clone());
        t.envs = h
            .envs
            .iter()
            .map(|s| Environment::from_snapshot(s, ctx.clone(), env_cfg.clone()))
            .collect::<Result<_>>()?;

        let mut params = AgentParams::init(h.dim, h.hidden, &mut crate::rng::seeded(0));
        params.load_tensors(&ck.group("param"))?;
        let mut adam = AdamState::new(&params);
        adam.m.load_tensors(&ck.group("adam_m"))?;
        adam.v.load_tensors(&ck.group("adam_v"))?;
        adam.t = h.adam_t;
        t.agent = Agent::from_parts(params, adam, &h.agent_rng, h.agent_updates);

        let entries = h
            .archive
            .iter()
            .enumerate()
            .map(|(k, m)| {
                Ok(ArchiveEntry {
                    params: ck.array(&format!("archive.{k}.params"))?.to_vec(),
                    objective: m.objective,
                    env_id: m.env_id,
                    global_step: m.global_step,
                    observations: ck.array(&format!("archive.{k}.observations"))?.to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        t.archive.restore(entries);
        t.iteration = h.iteration;
        t.global_step = h.global_step;
        t.history = h.history.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let params = &self.agent.params;
        let mut arrays = Vec::new();
        for (prefix, p) in [("param", params), ("adam_m", &self.agent.adam.m), ("adam_v", &self.agent.adam.v)] {
            arrays.extend(p.named_tensors().into_iter().map(|(n, a)| (format!("{prefix}.{n}"), a)));
        }
        for (k, e) in self.archive.entries().iter().enumerate() {
            arrays.push((format!("archive.{k}.params"), e.params.clone()));
            arrays.push((format!("archive.{k}.observations"), e.observations.clone()));
        }
        Checkpoint {
            header: CheckpointHeader {
                config: self.cfg.clone(),
                case: self.case.clone(),
                dim: params.dim(),
                hidden: params.hidden(),
                iteration: self.iteration,
                global_step: self.global_step,
                adam_t: self.agent.adam.t,
                agent_updates: self.agent.updates(),
                agent_rng: self.agent.rng_state(),
                envs: self.envs.iter().map(Environment::snapshot).collect(),
                archive: self
                    .archive
                    .entries()
                    .iter()
                    .map(|e| ArchiveMeta {
                        objective: e.objective,
                        env_id: e.env_id,
                        global_step: e.global_step,
                    })
                    .collect(),
                history: self.history.clone(),
            },
            arrays,
        }
    }

    /// Directs all output into `ws`: config snapshot, metrics, timings,
    /// solutions, checkpoints and per-environment logs.
    pub fn attach_workspace(&mut self, ws: Workspace) -> Result<()> {
        self.archive.persist_to(&ws.solutions_dir())?;
        for env in &mut self.envs {
            env.attach_workspace(ws.root())?;
        }
        let snapshot = self.config_snapshot()?;
        let cfg_path = ws.config_path();
        std::fs::write(&cfg_path, snapshot).map_err(|e| Error::io(&cfg_path, e))?;

        let path = ws.metrics_path();
        let mut m = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(m, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        for row in &self.history {
            writeln!(m, "{}", row.csv_row()).map_err(|e| Error::io(&path, e))?;
        }
        m.flush().map_err(|e| Error::io(&path, e))?;
        let path = ws.timings_path();
        let mut t = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(t, "iteration,wall_ms_collect,wall_ms_update").map_err(|e| Error::io(&path, e))?;
        self.metrics_out = Some(m);
        self.timings_out = Some(t);
        self.workspace = Some(ws);
        Ok(())
    }

    fn config_snapshot(&self) -> Result<String> {
        let seeds: Vec<u64> = (0..self.cfg.n_envs).map(|i| self.cfg.env_seed(i)).collect();
        let body = serde_json::json!({
            "hmrl_version": env!("CARGO_PKG_VERSION"),
            "config": self.cfg,
            "case_name": self.case.name,
            "n_params": self.case.grid.n_params(),
            "initial_objective": self.case.initial_objective,
            "epsilon": self.case.objective.epsilon,
            "env_seeds": seeds,
            "agent_seed": self.cfg.agent_seed(),
            "exec_mode": self.exec.effective_mode(),
            "threads": self.exec.threads(),
            "sim_partitions": self.cfg.sim_partitions,
            "resumed_at_iteration": self.iteration,
        });
        Ok(serde_json::to_string_pretty(&body)?)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn set_budget(&mut self, budget: u64) {
        self.cfg.budget = budget;
    }

    pub fn set_stop_after_solutions(&mut self, target: Option<usize>) {
        self.cfg.stop_after_solutions = target;
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn environments(&self) -> &[Environment] {
        &self.envs
    }

    pub fn archive(&self) -> &SolutionArchive {
        &self.archive
    }

    pub fn history(&self) -> &[IterationMetrics] {
        &self.history
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn workspace(&self) -> Option<&Workspace> {
        self.workspace.as_ref()
    }

    pub fn sims_total(&self) -> u64 {
        self.envs.iter().map(Environment::sim_calls).sum()
    }

    pub fn failures(&self) -> u64 {
        self.envs.iter().map(Environment::failures).sum()
    }

    fn target_met(&self) -> bool {
        self.cfg.stop_after_solutions.is_some_and(|k| self.archive.len() >= k)
    }

    /// Collect, archive, update. Returns the new metrics row.
    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let b = self.cfg.batch_size;
        let n = self.cfg.n_envs as u64;
        let t0 = Instant::now();
        let rollouts = collect_rollouts(&mut self.envs, &self.agent, b, &self.exec)?;
        let collect_ms = t0.elapsed().as_secs_f64() * 1e3;
        let base = self.global_step;
        self.global_step += b as u64;

        for ro in &rollouts {
            for s in &ro.solved {
                let entry = ArchiveEntry {
                    params: s.params.clone(),
                    objective: s.objective,
                    env_id: ro.env_id,
                    global_step: base + s.local_step as u64 * n + ro.env_id as u64 + 1,
                    observations: s.observations.clone(),
                };
                self.archive.submit(entry)?;
            }
        }

        let t1 = Instant::now();
        let mut segments = Vec::with_capacity(rollouts.len());
        let mut reward_sum = 0.0;
        for (ro, env) in rollouts.into_iter().zip(&self.envs) {
            reward_sum += ro.transitions.iter().map(|t| t.reward).sum::<f64>();
            let open = ro.transitions.last().is_some_and(|t| !t.done());
            let bootstrap = if self.cfg.bootstrap_truncation && open {
                self.agent.value(env.state())?
            } else {
                0.0
            };
            segments.push((ro.transitions, bootstrap));
        }
        let batch = RolloutBatch::from_segments(&segments, self.cfg.ppo.gamma)?;
        let upd = self.agent.update(&batch, &self.cfg.ppo, &self.exec)?;
        if upd.aborted {
            return Err(Error::NonFinite("PPO update"));
        }
        let update_ms = t1.elapsed().as_secs_f64() * 1e3;

        self.iteration += 1;
        let row = IterationMetrics {
            iteration: self.iteration,
            global_step: self.global_step,
            mean_reward: reward_sum / b as f64,
            policy_loss: upd.policy_loss,
            value_loss: upd.value_loss,
            clip_fraction: upd.clip_fraction,
            sims_total: self.sims_total(),
            solutions: self.archive.len(),
        };
        let timing = PhaseTiming {
            iteration: self.iteration,
            collect_ms,
            update_ms,
        };
        if let (Some(ws), Some(m), Some(t)) = (&self.workspace, &mut self.metrics_out, &mut self.timings_out) {
            let write = |w: &mut BufWriter<File>, line: String, path: PathBuf| -> Result<()> {
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
            };
            write(m, row.csv_row(), ws.metrics_path())?;
            write(
                t,
                format!("{},{},{}", timing.iteration, timing.collect_ms, timing.update_ms),
                ws.timings_path(),
            )?;
        }
        self.history.push(row.clone());
        self.timings.push(timing);
        Ok(row)
    }

    /// Iterates until the budget leaves no room for another batch or the
    /// solution target is met.
    pub fn run(&mut self) -> Result<TrainingReport> {
        let start = Instant::now();
        let b = self.cfg.batch_size as u64;
        while self.global_step + b <= self.cfg.budget && !self.target_met() {
            self.iterate()?;
            if self.cfg.checkpoint_every > 0 && self.iteration.is_multiple_of(self.cfg.checkpoint_every) {
                if let Some(ws) = &self.workspace {
                    self.checkpoint().save(&ws.checkpoint_path(self.iteration))?;
                }
            }
        }
        if let Some(ws) = &self.workspace {
            self.checkpoint().save(&ws.final_checkpoint_path())?;
        }
        Ok(self.report(start.elapsed().as_secs_f64()))
    }

    pub fn report(&self, wall_seconds: f64) -> TrainingReport {
        let first_row = self.history.iter().find(|r| r.solutions > 0);
        TrainingReport {
            iterations: self.iteration,
            global_step: self.global_step,
            sims_total: self.sims_total(),
            failures: self.failures(),
            solutions: self.archive.entries().to_vec(),
            history: self.history.clone(),
            timings: self.timings.clone(),
            run_dir: self.workspace.as_ref().map(|w| w.root().to_path_buf()),
            first_solution_step: self.archive.entries().iter().map(|e| e.global_step).min(),
            first_solution_sims: first_row.map(|r| r.sims_total),
            wall_seconds,
        }
    }
}

/// Builds a trainer for `case`, optionally inside a fresh run directory
/// under `workspace_base`, and runs it to completion.
pub fn run_training(cfg: RunConfig, case: CaseFile, workspace_base: Option<&std::path::Path>) -> Result<TrainingReport> {
    let mut trainer = Trainer::new(cfg, case)?;
    if let Some(base) = workspace_base {
        trainer.attach_workspace(Workspace::create(base)?)?;
    }
    trainer.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_must_split_evenly() {
        let ok = RunConfig {
            n_envs: 8,
            batch_size: 192,
            ..RunConfig::default()
        };
        assert!(ok.validate().is_ok());
        for (n, b) in [(0, 32), (3, 32), (64, 32)] {
            let c = RunConfig {
                n_envs: n,
                batch_size: b,
                ..RunConfig::default()
            };
            assert!(c.validate().is_err(), "{n} {b}");
        }
    }

    #[test]
    fn iteration_count_for_budget() {
        let c = RunConfig {
            n_envs: 8,
            batch_size: 192,
            budget: 20_000,
            ..RunConfig::default()
        };
        assert_eq!(c.iterations_for_budget(), 104);
    }

    #[test]
    fn env_seeds_are_distinct_and_overridable() {
        let c = RunConfig {
            n_envs: 3,
            batch_size: 3,
            ..RunConfig::default()
        };
        assert_ne!(c.env_seed(0), c.env_seed(1));
        assert_ne!(c.env_seed(0), c.agent_seed());
        let d = RunConfig {
            env_seeds: Some(vec![5, 5, 9]),
            ..c
        };
        assert_eq!(d.env_seed(1), 5);
    }
}
