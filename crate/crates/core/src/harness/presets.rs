//! Shipped cases and their training defaults.

use std::fmt;
use std::str::FromStr;

use crate::agent::PpoConfig;
use crate::case::{CaseRecipe, Tolerance};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::field::{sample_correlated_field, GridSpec, NoiseSpec, PermeabilityField};
use crate::objective::RewardConfig;
use crate::orchestrator::RunConfig;
use crate::sim::{FluidProps, ObservedQuantity, WellControl, WellKind, WellSchedule, WellSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 10×10×3, one injector and one producer, producer BHP observed
    Spe1Analog,
    /// 24×25×15, one injector and 25 producers, field production rate observed
    Spe9Analog,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Spe1Analog, Preset::Spe9Analog];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Spe1Analog => "spe1-analog",
            Preset::Spe9Analog => "spe9-analog",
        }
    }

    pub fn recipe(self) -> Result<CaseRecipe> {
        match self {
            Preset::Spe1Analog => spe1_analog(),
            Preset::Spe9Analog => spe9_analog(),
        }
    }

    pub fn run_config(self) -> RunConfig {
        match self {
            Preset::Spe1Analog => RunConfig {
                n_envs: 1,
                batch_size: 32,
                budget: 10_000,
                ppo: PpoConfig {
                    learning_rate: 9e-4,
                    hidden: 128,
                    ..PpoConfig::default()
                },
                env: EnvConfig {
                    k_delta: [100.0; 3],
                    rewards: RewardConfig::small_case(),
                    ..EnvConfig::default()
                },
                ..RunConfig::default()
            },
            Preset::Spe9Analog => RunConfig {
                n_envs: 8,
                batch_size: 192,
                budget: 20_000,
                sim_partitions: 4,
                ppo: PpoConfig {
                    learning_rate: 1e-5,
                    hidden: 4096,
                    ..PpoConfig::default()
                },
                env: EnvConfig {
                    k_delta: [100.0, 100.0, 1.0],
                    rewards: RewardConfig::large_case(),
                    ..EnvConfig::default()
                },
                ..RunConfig::default()
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?} (expected spe1-analog or spe9-analog)")))
    }
}

fn water() -> FluidProps {
    FluidProps {
        viscosity: 1.0,
        compressibility: 1e-5,
        reference_density: 62.4,
        porosity: 0.3,
    }
}

fn spe1_analog() -> Result<CaseRecipe> {
    let grid = GridSpec::new(10, 10, 3, 300.0, 300.0, 30.0)?;
    let truth = PermeabilityField::layered(&grid, &[(100.0, 100.0, 10.0), (10.0, 10.0, 1.0), (40.0, 40.0, 4.0)])?;
    let schedule = WellSchedule {
        wells: vec![
            WellSpec {
                name: "INJ".into(),
                i: 0,
                j: 0,
                k: 0,
                kind: WellKind::Injector,
                control: WellControl::Rate {
                    rate: 10_000.0,
                    bhp_limit: 20_000.0,
                },
                radius: 0.25,
                completions: vec![0, 1, 2],
            },
            WellSpec {
                name: "PROD".into(),
                i: 9,
                j: 9,
                k: 0,
                kind: WellKind::Producer,
                control: WellControl::Rate {
                    rate: 10_000.0,
                    bhp_limit: 100.0,
                },
                radius: 0.25,
                completions: vec![0, 1, 2],
            },
        ],
        dt: 60.0,
        n_steps: 12,
        initial_pressure: 8000.0,
        fluid: FluidProps {
            compressibility: 1e-3,
            ..water()
        },
        observed: vec![ObservedQuantity::Bhp { well: "PROD".into() }],
    };
    Ok(CaseRecipe {
        name: "spe1-analog".into(),
        grid,
        truth,
        schedule,
        noise: NoiseSpec {
            amplitude: 20.0,
            correlation_length: [5.0, 5.0, 1.0],
            seed: 5,
        },
        alpha: 1e-3,
        lambda: 0.1,
        tolerance: Tolerance::Absolute(1000.0),
        holdout_steps: 6,
    })
}

fn spe9_analog() -> Result<CaseRecipe> {
    let grid = GridSpec::new(24, 25, 15, 300.0, 300.0, 20.0)?;
    let logk = sample_correlated_field(
        &grid,
        &NoiseSpec {
            amplitude: 1.0,
            correlation_length: [4.0, 4.0, 2.0],
            seed: 9,
        },
    )?;
    let kx: Vec<f64> = logk.iter().map(|g| 100.0 * (0.8 * g).exp()).collect();
    let truth = PermeabilityField {
        ky: kx.clone(),
        kz: kx.iter().map(|k| 0.1 * k).collect(),
        kx,
    };
    let mut wells = vec![WellSpec {
        name: "INJ".into(),
        i: 0,
        j: 0,
        k: 0,
        kind: WellKind::Injector,
        control: WellControl::Rate {
            rate: 5000.0,
            bhp_limit: 10_000.0,
        },
        radius: 0.25,
        completions: (10..15).collect(),
    }];
    let cols = [3, 8, 12, 16, 21];
    let rows = [3, 8, 12, 17, 22];
    for (a, &i) in cols.iter().enumerate() {
        for (b, &j) in rows.iter().enumerate() {
            wells.push(WellSpec {
                name: format!("PROD{:02}", a * 5 + b + 1),
                i,
                j,
                k: 1,
                kind: WellKind::Producer,
                control: WellControl::Bhp {
                    bhp: 3000.0,
                    rate_limit: 1500.0,
                },
                radius: 0.25,
                completions: vec![1, 2, 3, 4],
            });
        }
    }
    let schedule = WellSchedule {
        wells,
        dt: 15.0,
        n_steps: 5 * 365 / 15,
        initial_pressure: 3600.0,
        fluid: water(),
        observed: vec![ObservedQuantity::FieldProductionRate],
    };
    Ok(CaseRecipe {
        name: "spe9-analog".into(),
        grid,
        truth,
        schedule,
        noise: NoiseSpec {
            amplitude: 30.0,
            correlation_length: [4.0, 4.0, 2.0],
            seed: 2025,
        },
        alpha: 1e-3,
        lambda: 1.0,
        tolerance: Tolerance::Absolute(2500.0),
        holdout_steps: 365 / 15,
    })
}
