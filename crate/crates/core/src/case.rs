//! Synthetic history-matching cases and their on-disk form.
//!
//! A case file is a single JSON document:
//!
//! | key          | content                                                   |
//! |--------------|-----------------------------------------------------------|
//! | `format`     | always `"hmrl-case"`                                      |
//! | `version`    | schema version (currently 1)                              |
//! | `name`       | free-form label                                           |
//! | `grid`       | `nx, ny, nz, dx, dy, dz`                                  |
//! | `schedule`   | wells, `dt`, `n_steps`, initial pressure, fluid, observed |
//! | `start`      | stacked starting permeabilities `[kx | ky | kz]`          |
//! | `objective`  | `alpha, lambda, c_q, c_u, u_prior, epsilon, observations` |
//! | `noise`      | scrambling provenance: `amplitude, correlation_length, seed` |
//! | `initial_objective` | objective value at `start`                         |
//! | `holdout`    | optional `{n_steps, observations}` forecast window        |
//!
//! The truth model used to synthesize the observations is never stored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{scramble, stack_parameters, GridSpec, NoiseSpec, ParameterVector, PermeabilityField};
use crate::objective::{evaluate_objective, ObjectiveSpec};
use crate::sim::{ForwardModel, SinglePhaseSimulator, WellSchedule};

pub const CASE_FORMAT: &str = "hmrl-case";
pub const CASE_VERSION: u32 = 1;

/// Observations for report steps that follow the training window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub n_steps: usize,
    pub observations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub grid: GridSpec,
    pub schedule: WellSchedule,
    pub start: ParameterVector,
    pub objective: ObjectiveSpec,
    pub noise: NoiseSpec,
    pub initial_objective: f64,
    #[serde(default)]
    pub holdout: Option<Holdout>,
}

impl CaseFile {
    pub fn validate(&self) -> Result<()> {
        if self.format != CASE_FORMAT {
            return Err(Error::Config(format!("not a case file (format {:?})", self.format)));
        }
        self.grid.validate()?;
        self.schedule.validate(&self.grid)?;
        self.objective.validate()?;
        let n = self.grid.n_params();
        if self.start.len() != n {
            return Err(Error::shape("start vector", n, self.start.len()));
        }
        if self.objective.u_prior.len() != n {
            return Err(Error::shape("u_prior", n, self.objective.u_prior.len()));
        }
        let nq = self.schedule.n_steps * self.schedule.observations_per_step();
        if self.objective.observations.len() != nq {
            return Err(Error::shape("observations", nq, self.objective.observations.len()));
        }
        if let Some(h) = &self.holdout {
            let nh = h.n_steps * self.schedule.observations_per_step();
            if h.observations.len() != nh {
                return Err(Error::shape("holdout observations", nh, h.observations.len()));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let case: CaseFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if case.version != CASE_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: case.version,
                expected: CASE_VERSION,
            });
        }
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn simulator(&self) -> SinglePhaseSimulator {
        SinglePhaseSimulator::new(self.grid.clone())
    }

    /// Schedule covering the training window followed by the holdout window.
    pub fn extended_schedule(&self) -> WellSchedule {
        let extra = self.holdout.as_ref().map_or(0, |h| h.n_steps);
        self.schedule.with_steps(self.schedule.n_steps + extra)
    }
}

/// Simulates the truth to obtain the historical series and scrambles it into
/// a starting vector. The truth does not leave this function.
pub fn make_synthetic_case(
    truth: &PermeabilityField,
    grid: &GridSpec,
    schedule: &WellSchedule,
    noise: &NoiseSpec,
) -> Result<(Vec<f64>, ParameterVector)> {
    let model = SinglePhaseSimulator::new(grid.clone());
    let u_truth = stack_parameters(truth)?;
    let observed = model.simulate(u_truth.as_slice(), schedule)?;
    let start = scramble(truth, grid, noise)?;
    Ok((observed.observations, start))
}

/// How the case tolerance is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// fraction of the initial objective
    Relative(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecipe {
    pub name: String,
    pub grid: GridSpec,
    pub truth: PermeabilityField,
    pub schedule: WellSchedule,
    pub noise: NoiseSpec,
    pub alpha: f64,
    pub lambda: f64,
    pub tolerance: Tolerance,
    pub holdout_steps: usize,
}

/// Builds a complete case: history, start vector, objective, optional holdout.
/// The prior is the scrambled start vector itself.
pub fn build_case(recipe: &CaseRecipe) -> Result<CaseFile> {
    recipe.schedule.validate(&recipe.grid)?;
    recipe.noise.validate()?;
    let full = recipe
        .schedule
        .with_steps(recipe.schedule.n_steps + recipe.holdout_steps);
    let (all_obs, start) = make_synthetic_case(&recipe.truth, &recipe.grid, &full, &recipe.noise)?;
    let per = recipe.schedule.observations_per_step();
    let split = recipe.schedule.n_steps * per;
    let observations = all_obs[..split].to_vec();
    let holdout = (recipe.holdout_steps > 0).then(|| Holdout {
        n_steps: recipe.holdout_steps,
        observations: all_obs[split..].to_vec(),
    });

    let mut objective = ObjectiveSpec::identity(recipe.alpha, recipe.lambda, 1.0, observations, start.clone());
    let model = SinglePhaseSimulator::new(recipe.grid.clone());
    let q0 = model.simulate(start.as_slice(), &recipe.schedule)?;
    let f0 = evaluate_objective(start.as_slice(), &q0.observations, &objective)?;
    objective.epsilon = match recipe.tolerance {
        Tolerance::Absolute(e) => e,
        Tolerance::Relative(frac) => (frac * f0).max(f64::MIN_POSITIVE),
    };
    let case = CaseFile {
        format: CASE_FORMAT.into(),
        version: CASE_VERSION,
        name: recipe.name.clone(),
        grid: recipe.grid.clone(),
        schedule: recipe.schedule.clone(),
        start,
        objective,
        noise: recipe.noise.clone(),
        initial_objective: f0,
        holdout,
    };
    case.validate()?;
    Ok(case)
}
