//! Well definitions, schedules, and the Peaceman well model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, PermeabilityField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellKind {
    Injector,
    Producer,
}

/// Nominal control with its secondary limit. Rates are positive magnitudes;
/// the well kind decides the sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WellControl {
    Bhp { bhp: f64, rate_limit: f64 },
    Rate { rate: f64, bhp_limit: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub name: String,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub kind: WellKind,
    pub control: WellControl,
    pub radius: f64,
    /// Completed z-layers; empty means only layer `k`.
    #[serde(default)]
    pub completions: Vec<usize>,
}

impl WellSpec {
    pub fn layers(&self) -> Vec<usize> {
        if self.completions.is_empty() {
            vec![self.k]
        } else {
            self.completions.clone()
        }
    }

    /// Sign applied to magnitudes: production is positive.
    pub fn sign(&self) -> f64 {
        match self.kind {
            WellKind::Producer => 1.0,
            WellKind::Injector => -1.0,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        for k in self.layers() {
            if !grid.contains(self.i, self.j, k) {
                return Err(Error::Config(format!(
                    "well {} completion ({}, {}, {k}) outside grid",
                    self.name, self.i, self.j
                )));
            }
        }
        let ok = match self.control {
            WellControl::Bhp { bhp, rate_limit } => bhp > 0.0 && rate_limit > 0.0,
            WellControl::Rate { rate, bhp_limit } => rate > 0.0 && bhp_limit > 0.0,
        };
        if !ok {
            return Err(Error::Config(format!(
                "well {}: BHP and rate limits must be positive",
                self.name
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("well {}: radius must be positive", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidProps {
    /// cP
    pub viscosity: f64,
    /// 1/psi
    pub compressibility: f64,
    /// lb/ft3; carried for completeness, gravity is not modelled
    pub reference_density: f64,
    pub porosity: f64,
}

/// One entry of the observation vector for every report step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservedQuantity {
    Bhp { well: String },
    Rate { well: String },
    FieldProductionRate,
}

impl ObservedQuantity {
    pub fn label(&self) -> String {
        match self {
            ObservedQuantity::Bhp { well } => format!("bhp:{well}"),
            ObservedQuantity::Rate { well } => format!("rate:{well}"),
            ObservedQuantity::FieldProductionRate => "fopr".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSchedule {
    pub wells: Vec<WellSpec>,
    /// report-step length in days
    pub dt: f64,
    pub n_steps: usize,
    /// psi
    pub initial_pressure: f64,
    pub fluid: FluidProps,
    pub observed: Vec<ObservedQuantity>,
}

impl WellSchedule {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.dt > 0.0) || self.n_steps == 0 {
            return Err(Error::Config("schedule needs dt > 0 and n_steps >= 1".into()));
        }
        let f = &self.fluid;
        if !(f.viscosity > 0.0 && f.compressibility > 0.0 && f.porosity > 0.0) {
            return Err(Error::Config(
                "viscosity, compressibility and porosity must be positive".into(),
            ));
        }
        if !(self.initial_pressure.is_finite()) {
            return Err(Error::NonFinite("initial pressure"));
        }
        if self.observed.is_empty() {
            return Err(Error::Config("schedule observes no quantities".into()));
        }
        for w in &self.wells {
            w.validate(grid)?;
        }
        for q in &self.observed {
            if let ObservedQuantity::Bhp { well } | ObservedQuantity::Rate { well } = q {
                if self.well_position(well).is_none() {
                    return Err(Error::Config(format!("observed well {well} not in schedule")));
                }
            }
        }
        Ok(())
    }

    pub fn well_position(&self, name: &str) -> Option<usize> {
        self.wells.iter().position(|w| w.name == name)
    }

    /// Same wells and controls, different number of report steps.
    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self {
            n_steps,
            ..self.clone()
        }
    }

    pub fn observations_per_step(&self) -> usize {
        self.observed.len()
    }
}

/// Peaceman equivalent radius for an anisotropic rectangular cell.
pub fn equivalent_radius(kx: f64, ky: f64, dx: f64, dy: f64) -> f64 {
    let ryx = (ky / kx).sqrt();
    let rxy = (kx / ky).sqrt();
    0.28 * (ryx * dx * dx + rxy * dy * dy).sqrt() / (ryx.sqrt() + rxy.sqrt())
}

/// Geometric well index per completed cell, `2π·√(kx·ky)·dz / ln(r_eq/r_w)`
/// (mD·ft). Cells with zero horizontal permeability get zero.
pub fn connection_indices(
    grid: &GridSpec,
    well: &WellSpec,
    perm: &PermeabilityField,
) -> Result<Vec<(usize, f64)>> {
    well.layers()
        .into_iter()
        .map(|k| {
            if !grid.contains(well.i, well.j, k) {
                return Err(Error::Config(format!("well {} outside grid", well.name)));
            }
            let cell = grid.index(well.i, well.j, k);
            let (kx, ky) = (perm.kx[cell], perm.ky[cell]);
            if kx <= 0.0 || ky <= 0.0 {
                return Ok((cell, 0.0));
            }
            let r_eq = equivalent_radius(kx, ky, grid.dx, grid.dy);
            if r_eq <= well.radius {
                return Err(Error::Config(format!(
                    "well {}: equivalent radius {r_eq} not larger than wellbore radius {}",
                    well.name, well.radius
                )));
            }
            let wi = 2.0 * std::f64::consts::PI * (kx * ky).sqrt() * grid.dz / (r_eq / well.radius).ln();
            Ok((cell, wi))
        })
        .collect()
}

/// Total well index over all completions.
pub fn well_index(grid: &GridSpec, well: &WellSpec, perm: &PermeabilityField) -> Result<f64> {
    Ok(connection_indices(grid, well, perm)?.iter().map(|c| c.1).sum())
}
