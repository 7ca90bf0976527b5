//! The history-matching MDP: state = parameter vector, action = bounded
//! per-entry change, reward = decrease of the objective.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::CaseFile;
use crate::error::{Error, Result};
use crate::field::ParameterVector;
use crate::objective::{evaluate_objective, step_reward, terminal_reward, ObjectiveSpec, RewardConfig, TerminationOutcome};
use crate::rng::{self, RngState};
use crate::sim::{ForwardModel, SimulatedSeries, WellSchedule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// `s + clamp(a, ±K_Δ)`, floored at zero
    #[default]
    Additive,
    /// `s · clamp(1 + a·K_Δ, 1 ± K_Δ)`
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// action bound per permeability block (x, y, z)
    pub k_delta: [f64; 3],
    pub max_steps_per_episode: usize,
    pub divergence_factor: f64,
    pub rewards: RewardConfig,
    #[serde(default)]
    pub action_mode: ActionMode,
    /// Bootstrap the critic's value at time-limit terminals instead of
    /// treating them as true terminals.
    #[serde(default)]
    pub bootstrap_on_timeout: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            k_delta: [100.0; 3],
            max_steps_per_episode: 100,
            divergence_factor: 2.0,
            rewards: RewardConfig::small_case(),
            action_mode: ActionMode::Additive,
            bootstrap_on_timeout: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_delta.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::Config("k_delta must be positive for every block".into()));
        }
        if self.max_steps_per_episode == 0 {
            return Err(Error::Config("max_steps_per_episode must be >= 1".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        if self.action_mode == ActionMode::Multiplicative && self.k_delta.iter().any(|&k| k >= 1.0) {
            return Err(Error::Config("multiplicative k_delta must be below 1".into()));
        }
        Ok(())
    }
}

pub fn apply_action(state: &[f64], raw_action: &[f64], cfg: &EnvConfig) -> Result<Vec<f64>> {
    if raw_action.len() != state.len() {
        return Err(Error::shape("action", state.len(), raw_action.len()));
    }
    let block_len = (state.len() / 3).max(1);
    Ok(state
        .iter()
        .zip(raw_action)
        .enumerate()
        .map(|(i, (&s, &a))| {
            let bound = cfg.k_delta[(i / block_len).min(2)];
            match cfg.action_mode {
                ActionMode::Additive => (s + a.clamp(-bound, bound)).max(0.0),
                ActionMode::Multiplicative => s * (1.0 + a * bound).clamp(1.0 - bound, 1.0 + bound),
            }
        })
        .collect())
}

/// Solved beats diverged beats timed out.
pub fn classify_termination(f_t: f64, f0: f64, steps: usize, cfg: &EnvConfig, epsilon: f64) -> TerminationOutcome {
    if f_t < epsilon {
        TerminationOutcome::Solved
    } else if f_t > cfg.divergence_factor * f0 {
        TerminationOutcome::Diverged
    } else if steps >= cfg.max_steps_per_episode {
        TerminationOutcome::TimedOut
    } else {
        TerminationOutcome::Running
    }
}

/// One (s, a, log π, r, done, V) experience.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// step reward plus any terminal bonus
    pub reward: f64,
    pub outcome: TerminationOutcome,
    pub value: f64,
    /// objective after the action
    pub objective: f64,
    /// critic value of the pre-reset state at a bootstrapped time limit
    pub terminal_value: f64,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.outcome.is_terminal()
    }
}

/// Immutable data shared by every environment working on one case.
pub struct CaseContext {
    pub model: Arc<dyn ForwardModel>,
    pub schedule: WellSchedule,
    pub objective: ObjectiveSpec,
    pub start: ParameterVector,
    pub initial_objective: f64,
}

impl CaseContext {
    /// Evaluates `F` at the case start vector with the given model.
    pub fn new(case: &CaseFile, model: Arc<dyn ForwardModel>) -> Result<Self> {
        let q0 = model.simulate(case.start.as_slice(), &case.schedule)?;
        let f0 = evaluate_objective(case.start.as_slice(), &q0.observations, &case.objective)?;
        Ok(Self {
            model,
            schedule: case.schedule.clone(),
            objective: case.objective.clone(),
            start: case.start.clone(),
            initial_objective: f0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.objective.epsilon
    }
}

/// What [`Environment::step`] reports back.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub reward: f64,
    /// `F_prev − F_t` without the terminal bonus
    pub step_reward: f64,
    pub objective: f64,
    pub outcome: TerminationOutcome,
    /// state produced by the action (before any auto-reset)
    pub new_state: Vec<f64>,
    /// simulated series, kept only for solved states
    pub solved_series: Option<SimulatedSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub id: usize,
    pub state: Vec<f64>,
    pub f_prev: f64,
    pub episode_step: usize,
    pub steps: u64,
    pub sim_calls: u64,
    pub failures: u64,
    pub episodes: u64,
    pub rng: RngState,
}

struct EpisodeLog {
    dir: PathBuf,
    writer: BufWriter<File>,
}

pub struct Environment {
    id: usize,
    ctx: Arc<CaseContext>,
    cfg: Arc<EnvConfig>,
    state: Vec<f64>,
    f_prev: f64,
    episode_step: usize,
    steps: u64,
    sim_calls: u64,
    failures: u64,
    episodes: u64,
    rng: ChaCha8Rng,
    log: Option<EpisodeLog>,
}

impl Environment {
    pub fn new(id: usize, ctx: Arc<CaseContext>, cfg: Arc<EnvConfig>, seed: u64) -> Self {
        let state = ctx.start.as_slice().to_vec();
        let f_prev = ctx.initial_objective;
        Self {
            id,
            ctx,
            cfg,
            state,
            f_prev,
            episode_step: 0,
            steps: 0,
            sim_calls: 0,
            failures: 0,
            episodes: 0,
            rng: rng::seeded(seed),
            log: None,
        }
    }

    pub fn from_snapshot(snap: &EnvSnapshot, ctx: Arc<CaseContext>, cfg: Arc<EnvConfig>) -> Result<Self> {
        if snap.state.len() != ctx.start.len() {
            return Err(Error::shape("environment state", ctx.start.len(), snap.state.len()));
        }
        Ok(Self {
            id: snap.id,
            ctx,
            cfg,
            state: snap.state.clone(),
            f_prev: snap.f_prev,
            episode_step: snap.episode_step,
            steps: snap.steps,
            sim_calls: snap.sim_calls,
            failures: snap.failures,
            episodes: snap.episodes,
            rng: rng::restore(&snap.rng),
            log: None,
        })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            id: self.id,
            state: self.state.clone(),
            f_prev: self.f_prev,
            episode_step: self.episode_step,
            steps: self.steps,
            sim_calls: self.sim_calls,
            failures: self.failures,
            episodes: self.episodes,
            rng: rng::capture(&self.rng),
        }
    }

    /// Attaches a private workspace directory `root/env_<id>/`. Episode rows
    /// are appended to `episodes.csv`; solved states go to `solved_<step>.json`.
    pub fn attach_workspace(&mut self, root: &Path) -> Result<()> {
        let dir = root.join(format!("env_{}", self.id));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("episodes.csv");
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut writer = BufWriter::new(file);
        if fresh {
            writeln!(writer, "step,F_t,r_t,outcome").map_err(|e| Error::io(&path, e))?;
        }
        self.log = Some(EpisodeLog { dir, writer });
        Ok(())
    }

    pub fn flush_log(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.writer.flush().map_err(|e| Error::io(&log.dir, e))?;
        }
        Ok(())
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn previous_objective(&self) -> f64 {
        self.f_prev
    }

    pub fn episode_step(&self) -> usize {
        self.episode_step
    }

    /// Successful steps taken.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Forward-model invocations, including failed ones.
    pub fn sim_calls(&self) -> u64 {
        self.sim_calls
    }

    pub fn failures(&self) -> u64 {
        self.failures
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn context(&self) -> &CaseContext {
        &self.ctx
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.state.clear();
        self.state.extend_from_slice(self.ctx.start.as_slice());
        self.f_prev = self.ctx.initial_objective;
        self.episode_step = 0;
        self.state.clone()
    }

    /// Applies the action, runs one simulation, and scores it. Terminal
    /// outcomes reset the environment before returning. A simulator failure
    /// also resets it and is returned as an error.
    pub fn step(&mut self, raw_action: &[f64]) -> Result<StepResult> {
        let new_state = apply_action(&self.state, raw_action, &self.cfg)?;
        self.sim_calls += 1;
        let series = match self.ctx.model.simulate(&new_state, &self.ctx.schedule) {
            Ok(s) => s,
            Err(e) => {
                self.failures += 1;
                self.episodes += 1;
                self.reset();
                return Err(e);
            }
        };
        let f_t = evaluate_objective(&new_state, &series.observations, &self.ctx.objective)?;
        if !f_t.is_finite() {
            self.failures += 1;
            self.episodes += 1;
            self.reset();
            return Err(Error::NonFinite("objective"));
        }
        self.steps += 1;
        self.episode_step += 1;
        let outcome = classify_termination(
            f_t,
            self.ctx.initial_objective,
            self.episode_step,
            &self.cfg,
            self.ctx.epsilon(),
        );
        let base = step_reward(self.f_prev, f_t);
        let reward = base + terminal_reward(outcome, &self.cfg.rewards);
        if let Some(log) = &mut self.log {
            writeln!(log.writer, "{},{},{},{}", self.steps, f_t, reward, outcome.as_str())
                .map_err(|e| Error::io(&log.dir, e))?;
            if outcome == TerminationOutcome::Solved {
                let path = log.dir.join(format!("solved_{}.json", self.steps));
                let body = serde_json::json!({ "env_id": self.id, "step": self.steps, "objective": f_t, "params": new_state });
                std::fs::write(&path, body.to_string()).map_err(|e| Error::io(&path, e))?;
            }
        }
        let solved_series = (outcome == TerminationOutcome::Solved).then_some(series);
        if outcome.is_terminal() {
            self.episodes += 1;
            self.reset();
        } else {
            self.state.clone_from(&new_state);
            self.f_prev = f_t;
        }
        Ok(StepResult {
            reward,
            step_reward: base,
            objective: f_t,
            outcome,
            new_state,
            solved_series,
        })
    }
}
