//! Forward model: single-phase slightly-compressible flow on a regular grid.

pub mod cg;
pub mod flow;
pub mod well;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{unstack_parameters, GridSpec};

pub use cg::{CgSettings, Preconditioner};
pub use flow::{compute_transmissibilities, step_pressure, ActiveControl, Face, FlowSystem, StepOutcome};
pub use well::{
    equivalent_radius, well_index, FluidProps, ObservedQuantity, WellControl, WellKind, WellSchedule,
    WellSpec,
};

/// Per-step well rates and pressures plus the flattened observation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSeries {
    pub n_steps: usize,
    pub n_wells: usize,
    /// step-major, well-minor; production positive (rb/day)
    pub rates: Vec<f64>,
    /// step-major, well-minor (psi)
    pub bhp: Vec<f64>,
    /// observed quantities, step-major
    pub observations: Vec<f64>,
}

impl SimulatedSeries {
    pub fn rate(&self, step: usize, well: usize) -> f64 {
        self.rates[step * self.n_wells + well]
    }

    pub fn bhp(&self, step: usize, well: usize) -> f64 {
        self.bhp[step * self.n_wells + well]
    }

    /// Observation entries belonging to report steps `from..to`.
    pub fn observation_window(&self, from: usize, to: usize) -> &[f64] {
        let per = self.observations.len() / self.n_steps.max(1);
        &self.observations[from * per..to * per]
    }
}

/// What a forward model consumes and produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub n_params: usize,
    /// inner partition count used by the linear solver
    pub partitions: usize,
}

/// `q̂ = f(u)`. Implementations must be pure: identical inputs give
/// bitwise-identical outputs.
pub trait ForwardModel: Send + Sync {
    fn descriptor(&self) -> ModelDescriptor;
    fn simulate(&self, u: &[f64], schedule: &WellSchedule) -> Result<SimulatedSeries>;
}

/// Per-step diagnostics from a full run.
#[derive(Clone, Debug, Default)]
pub struct RunDiagnostics {
    pub mass_balance: Vec<f64>,
    pub cg_iterations: Vec<usize>,
    /// `|r| / |b|` of the accepted solve per step
    pub relative_residual: Vec<f64>,
    pub final_pressure: Vec<f64>,
    /// wells that switched to their secondary limit, per step
    pub switched: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct SinglePhaseSimulator {
    pub grid: GridSpec,
    pub cg: CgSettings,
}

impl SinglePhaseSimulator {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            cg: CgSettings::default(),
        }
    }

    pub fn with_partitions(mut self, partitions: usize) -> Self {
        self.cg.partitions = partitions.max(1);
        self
    }

    fn nominal(schedule: &WellSchedule) -> Vec<ActiveControl> {
        schedule
            .wells
            .iter()
            .map(|w| match w.control {
                WellControl::Bhp { bhp, .. } => ActiveControl::Bhp(bhp),
                WellControl::Rate { rate, .. } => ActiveControl::Rate(w.sign() * rate),
            })
            .collect()
    }

    /// Wells whose secondary limit is violated, with the control to switch to.
    fn violated(schedule: &WellSchedule, out: &StepOutcome) -> Vec<(usize, ActiveControl)> {
        let mut switches = Vec::new();
        for (w, spec) in schedule.wells.iter().enumerate() {
            let (q, pw) = (out.rates[w], out.bhp[w]);
            match (spec.control, spec.kind) {
                (WellControl::Rate { bhp_limit, .. }, WellKind::Producer) if pw < bhp_limit => {
                    switches.push((w, ActiveControl::Bhp(bhp_limit)))
                }
                (WellControl::Rate { bhp_limit, .. }, WellKind::Injector) if pw > bhp_limit => {
                    switches.push((w, ActiveControl::Bhp(bhp_limit)))
                }
                (WellControl::Bhp { rate_limit, .. }, WellKind::Producer) if q > rate_limit => {
                    switches.push((w, ActiveControl::Rate(rate_limit)))
                }
                (WellControl::Bhp { rate_limit, .. }, WellKind::Injector) if -q > rate_limit => {
                    switches.push((w, ActiveControl::Rate(-rate_limit)))
                }
                _ => {}
            }
        }
        switches
    }

    /// Runs the schedule, returning the series and solver diagnostics.
    pub fn run(&self, u: &[f64], schedule: &WellSchedule) -> Result<(SimulatedSeries, RunDiagnostics)> {
        let grid = &self.grid;
        if u.len() != grid.n_params() {
            return Err(Error::shape("parameter vector", grid.n_params(), u.len()));
        }
        if u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("permeabilities must be finite and non-negative".into()));
        }
        schedule.validate(grid)?;
        let perm = unstack_parameters(u, grid)?;
        let sys = FlowSystem::new(grid, &perm, schedule)?;
        let n_wells = schedule.wells.len();
        let nominal = Self::nominal(schedule);

        let mut p = vec![schedule.initial_pressure; grid.n_cells()];
        let mut rates = Vec::with_capacity(schedule.n_steps * n_wells);
        let mut bhp = Vec::with_capacity(schedule.n_steps * n_wells);
        let mut diag = RunDiagnostics::default();
        // previous increment as the starting guess; ignored when the unknowns change
        let mut guess: Vec<f64> = Vec::new();

        for step in 0..schedule.n_steps {
            let with_step = |e: Error| match e {
                Error::Simulation {
                    reason, residual, ..
                } => Error::Simulation {
                    step,
                    reason,
                    residual,
                },
                other => other,
            };
            let mut out = step_pressure(&sys, &p, schedule.dt, &nominal, &self.cg, &guess).map_err(with_step)?;
            // limits are checked once per report step; no further iteration
            let switches = Self::violated(schedule, &out);
            if !switches.is_empty() {
                let mut controls = nominal.clone();
                for &(w, c) in &switches {
                    controls[w] = c;
                }
                out = step_pressure(&sys, &p, schedule.dt, &controls, &self.cg, &guess).map_err(with_step)?;
            }
            diag.switched.push(switches.iter().map(|s| s.0).collect());
            diag.mass_balance.push(out.mass_balance_error());
            diag.cg_iterations.push(out.iterations);
            diag.relative_residual.push(if out.rhs_norm > 0.0 {
                out.residual / out.rhs_norm
            } else {
                0.0
            });
            rates.extend_from_slice(&out.rates);
            bhp.extend_from_slice(&out.bhp);
            guess = out.increment;
            p = out.pressure;
        }
        diag.final_pressure = p;

        let mut observations = Vec::with_capacity(schedule.n_steps * schedule.observed.len());
        for step in 0..schedule.n_steps {
            for q in &schedule.observed {
                let v = match q {
                    ObservedQuantity::Bhp { well } => {
                        bhp[step * n_wells + schedule.well_position(well).expect("validated")]
                    }
                    ObservedQuantity::Rate { well } => {
                        rates[step * n_wells + schedule.well_position(well).expect("validated")]
                    }
                    ObservedQuantity::FieldProductionRate => schedule
                        .wells
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| w.kind == WellKind::Producer)
                        .map(|(w, _)| rates[step * n_wells + w])
                        .sum(),
                };
                observations.push(v);
            }
        }
        if observations.iter().chain(&rates).chain(&bhp).any(|v| !v.is_finite()) {
            return Err(Error::Simulation {
                step: schedule.n_steps,
                reason: "non-finite output".into(),
                residual: f64::NAN,
            });
        }
        Ok((
            SimulatedSeries {
                n_steps: schedule.n_steps,
                n_wells,
                rates,
                bhp,
                observations,
            },
            diag,
        ))
    }
}

impl ForwardModel for SinglePhaseSimulator {
    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            name: "single-phase-fv".into(),
            n_params: self.grid.n_params(),
            partitions: self.cg.partitions,
        }
    }

    fn simulate(&self, u: &[f64], schedule: &WellSchedule) -> Result<SimulatedSeries> {
        self.run(u, schedule).map(|(s, _)| s)
    }
}
