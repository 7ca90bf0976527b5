//! Finite-volume discretization of single-phase slightly-compressible flow
//! and the backward-Euler pressure step.

use crate::error::{Error, Result};
use crate::field::{GridSpec, PermeabilityField};

use super::cg::{self, CgSettings, CsrMatrix};
use super::well::{connection_indices, WellSchedule};

/// Darcy constant in field units: rb/day per (mD·ft·psi/cP).
pub const DARCY: f64 = 0.001_127;
/// Cubic feet per reservoir barrel.
pub const FT3_PER_BBL: f64 = 5.614_583;

/// Interior face between cells `a` and `b` with its geometric transmissibility
/// (mD·ft).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub trans: f64,
}

fn harmonic(ka: f64, kb: f64) -> f64 {
    if ka <= 0.0 || kb <= 0.0 {
        0.0
    } else {
        2.0 * ka * kb / (ka + kb)
    }
}

/// Two-point transmissibilities: harmonic-mean permeability × area / distance.
/// Faces are listed x-faces first, then y, then z.
pub fn compute_transmissibilities(grid: &GridSpec, perm: &PermeabilityField) -> Vec<Face> {
    let mut faces = Vec::new();
    let (ax, ay, az) = (grid.dy * grid.dz, grid.dx * grid.dz, grid.dx * grid.dy);
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for i in 0..grid.nx.saturating_sub(1) {
                let (a, b) = (grid.index(i, j, k), grid.index(i + 1, j, k));
                faces.push(Face {
                    a,
                    b,
                    trans: harmonic(perm.kx[a], perm.kx[b]) * ax / grid.dx,
                });
            }
        }
    }
    for k in 0..grid.nz {
        for j in 0..grid.ny.saturating_sub(1) {
            for i in 0..grid.nx {
                let (a, b) = (grid.index(i, j, k), grid.index(i, j + 1, k));
                faces.push(Face {
                    a,
                    b,
                    trans: harmonic(perm.ky[a], perm.ky[b]) * ay / grid.dy,
                });
            }
        }
    }
    for k in 0..grid.nz.saturating_sub(1) {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (a, b) = (grid.index(i, j, k), grid.index(i, j, k + 1));
                faces.push(Face {
                    a,
                    b,
                    trans: harmonic(perm.kz[a], perm.kz[b]) * az / grid.dz,
                });
            }
        }
    }
    faces
}

/// Control actually applied during one step. Rates are signed, production
/// positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActiveControl {
    Bhp(f64),
    Rate(f64),
}

/// Everything about the discretized reservoir that does not change between
/// steps. Mobility (`DARCY / viscosity`) is folded into all coefficients.
#[derive(Clone, Debug)]
pub struct FlowSystem {
    pub n_cells: usize,
    pub faces: Vec<Face>,
    /// pore volume × compressibility per cell, rb/psi
    pub storage: Vec<f64>,
    /// per well: (cell, connection coefficient in rb/day/psi)
    pub wells: Vec<Vec<(usize, f64)>>,
}

impl FlowSystem {
    pub fn new(grid: &GridSpec, perm: &PermeabilityField, schedule: &WellSchedule) -> Result<Self> {
        let mobility = DARCY / schedule.fluid.viscosity;
        let faces = compute_transmissibilities(grid, perm)
            .into_iter()
            .map(|f| Face {
                trans: f.trans * mobility,
                ..f
            })
            .collect();
        let pv = grid.cell_volume() * schedule.fluid.porosity / FT3_PER_BBL;
        let storage = vec![pv * schedule.fluid.compressibility; grid.n_cells()];
        let wells = schedule
            .wells
            .iter()
            .map(|w| {
                Ok(connection_indices(grid, w, perm)?
                    .into_iter()
                    .map(|(c, wi)| (c, wi * mobility))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_cells: grid.n_cells(),
            faces,
            storage,
            wells,
        })
    }
}

/// Result of one implicit step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub pressure: Vec<f64>,
    /// signed well rates, production positive (rb/day)
    pub rates: Vec<f64>,
    pub bhp: Vec<f64>,
    /// Σ storage·(p_new − p_old)/dt over all cells (rb/day)
    pub accumulation: f64,
    pub iterations: usize,
    /// solved increments, cells first then free well nodes
    pub increment: Vec<f64>,
    pub residual: f64,
    pub rhs_norm: f64,
}

impl StepOutcome {
    /// |accumulation + Σ rates| relative to the gross volume moved.
    pub fn mass_balance_error(&self) -> f64 {
        let net: f64 = self.accumulation + self.rates.iter().sum::<f64>();
        let gross = self.accumulation.abs() + self.rates.iter().map(|q| q.abs()).sum::<f64>();
        if gross == 0.0 {
            net.abs()
        } else {
            net.abs() / gross
        }
    }
}

/// Advances pressure by one backward-Euler step of length `dt` days.
///
/// Unknowns are the pressure increments of every cell plus the BHP of every
/// open rate-controlled well. The residual
/// `storage·(p − p_old)/dt + Σ T (p_i − p_j) + q_wells` is affine in the
/// unknowns, so a single SPD solve gives the exact new state.
pub fn step_pressure(
    sys: &FlowSystem,
    p_old: &[f64],
    dt: f64,
    controls: &[ActiveControl],
    cg_settings: &CgSettings,
    guess: &[f64],
) -> Result<StepOutcome> {
    let n = sys.n_cells;
    if p_old.len() != n {
        return Err(Error::shape("pressure", n, p_old.len()));
    }
    if controls.len() != sys.wells.len() {
        return Err(Error::shape("well controls", sys.wells.len(), controls.len()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }

    // free well nodes: open rate-controlled wells
    let mut node_of_well = vec![None; controls.len()];
    let mut n_unknowns = n;
    for (w, ctrl) in controls.iter().enumerate() {
        let open = sys.wells[w].iter().any(|&(_, t)| t > 0.0);
        if matches!(ctrl, ActiveControl::Rate(_)) && open {
            node_of_well[w] = Some(n_unknowns);
            n_unknowns += 1;
        }
    }

    // initial guess p0 for the free well nodes
    let mut p0 = p_old.to_vec();
    for (w, node) in node_of_well.iter().enumerate() {
        if node.is_some() {
            p0.push(p_old[sys.wells[w][0].0]);
        }
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(7); n_unknowns];
    let mut rhs = vec![0.0; n_unknowns];
    for c in 0..n {
        rows[c].push((c, sys.storage[c] / dt));
    }
    for f in &sys.faces {
        if f.trans == 0.0 {
            continue;
        }
        rows[f.a].push((f.a, f.trans));
        rows[f.a].push((f.b, -f.trans));
        rows[f.b].push((f.b, f.trans));
        rows[f.b].push((f.a, -f.trans));
        let flux = f.trans * (p0[f.a] - p0[f.b]);
        rhs[f.a] -= flux;
        rhs[f.b] += flux;
    }
    for (w, ctrl) in controls.iter().enumerate() {
        match (ctrl, node_of_well[w]) {
            (ActiveControl::Bhp(bhp), _) => {
                for &(c, t) in &sys.wells[w] {
                    rows[c].push((c, t));
                    rhs[c] -= t * (p0[c] - bhp);
                }
            }
            (ActiveControl::Rate(q), Some(node)) => {
                let mut wsum = 0.0;
                for &(c, t) in &sys.wells[w] {
                    if t == 0.0 {
                        continue;
                    }
                    rows[c].push((c, t));
                    rows[c].push((node, -t));
                    rows[node].push((c, -t));
                    wsum += t;
                    rhs[c] -= t * (p0[c] - p0[node]);
                    rhs[node] -= t * (p0[node] - p0[c]);
                }
                rows[node].push((node, wsum));
                rhs[node] -= q;
            }
            (ActiveControl::Rate(_), None) => {}
        }
    }

    let matrix = CsrMatrix::from_rows(rows);
    let mut dx = vec![0.0; n_unknowns];
    if guess.len() == n_unknowns {
        dx.copy_from_slice(guess);
    }
    let stats = cg::solve(&matrix, &rhs, &mut dx, cg_settings).map_err(|s| Error::Simulation {
        step: 0,
        reason: format!("conjugate gradient did not converge in {} iterations", s.iterations),
        residual: s.residual,
    })?;

    let p_all: Vec<f64> = p0.iter().zip(&dx).map(|(a, b)| a + b).collect();
    let increment = dx;
    if p_all.iter().any(|p| !p.is_finite()) {
        return Err(Error::Simulation {
            step: 0,
            reason: "non-finite pressure".into(),
            residual: stats.residual,
        });
    }

    let mut rates = Vec::with_capacity(controls.len());
    let mut bhp = Vec::with_capacity(controls.len());
    for (w, ctrl) in controls.iter().enumerate() {
        let conns = &sys.wells[w];
        let pw = match (ctrl, node_of_well[w]) {
            (ActiveControl::Bhp(b), _) => *b,
            (ActiveControl::Rate(_), Some(node)) => p_all[node],
            // shut well: report the pressure of its first completion
            (ActiveControl::Rate(_), None) => p_all[conns[0].0],
        };
        let q: f64 = conns.iter().map(|&(c, t)| t * (p_all[c] - pw)).sum();
        rates.push(q);
        bhp.push(pw);
    }
    let accumulation = (0..n)
        .map(|c| sys.storage[c] / dt * (p_all[c] - p_old[c]))
        .sum();

    let mut pressure = p_all;
    pressure.truncate(n);
    Ok(StepOutcome {
        pressure,
        rates,
        bhp,
        accumulation,
        iterations: stats.iterations,
        increment,
        residual: stats.residual,
        rhs_norm: stats.rhs_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::well::{FluidProps, ObservedQuantity, WellControl, WellKind, WellSpec};

    fn unit_grid(nx: usize) -> GridSpec {
        GridSpec::new(nx, 1, 1, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn equal_permeability_face() {
        let g = unit_grid(2);
        let p = PermeabilityField::uniform(&g, 7.5, 1.0, 1.0);
        let f = compute_transmissibilities(&g, &p);
        assert_eq!(f.len(), 1);
        assert!((f[0].trans - 7.5).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_face() {
        let g = unit_grid(2);
        let p = PermeabilityField {
            kx: vec![2.0, 6.0],
            ky: vec![1.0; 2],
            kz: vec![1.0; 2],
        };
        assert!((compute_transmissibilities(&g, &p)[0].trans - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_permeability_blocks_face() {
        let g = unit_grid(2);
        let p = PermeabilityField {
            kx: vec![0.0, 6.0],
            ky: vec![1.0; 2],
            kz: vec![1.0; 2],
        };
        assert_eq!(compute_transmissibilities(&g, &p)[0].trans, 0.0);
    }

    #[test]
    fn face_count_and_geometry() {
        let g = GridSpec::new(3, 2, 2, 2.0, 4.0, 5.0).unwrap();
        let p = PermeabilityField::uniform(&g, 1.0, 1.0, 1.0);
        let f = compute_transmissibilities(&g, &p);
        assert_eq!(f.len(), 2 * 2 * 2 + 3 * 2 + 3 * 2);
        // x-face area dy*dz = 20, distance 2
        assert!((f[0].trans - 10.0).abs() < 1e-12);
    }

    fn schedule(wells: Vec<WellSpec>) -> WellSchedule {
        WellSchedule {
            wells,
            dt: 10.0,
            n_steps: 1,
            initial_pressure: 3000.0,
            fluid: FluidProps {
                viscosity: 1.0,
                compressibility: 1e-5,
                reference_density: 50.0,
                porosity: 0.2,
            },
            observed: vec![ObservedQuantity::FieldProductionRate],
        }
    }

    #[test]
    fn no_wells_stays_in_equilibrium() {
        let g = GridSpec::new(4, 3, 2, 100.0, 100.0, 10.0).unwrap();
        let p = PermeabilityField::uniform(&g, 50.0, 50.0, 5.0);
        let sched = schedule(vec![]);
        let sys = FlowSystem::new(&g, &p, &sched).unwrap();
        let p0 = vec![3000.0; g.n_cells()];
        for dt in [0.1, 10.0, 1e5] {
            let out = step_pressure(&sys, &p0, dt, &[], &CgSettings::default(), &[]).unwrap();
            assert_eq!(out.pressure, p0);
        }
    }

    #[test]
    fn rate_well_with_zero_index_is_shut() {
        let g = GridSpec::new(2, 1, 1, 100.0, 100.0, 10.0).unwrap();
        let p = PermeabilityField {
            kx: vec![0.0, 10.0],
            ky: vec![0.0, 10.0],
            kz: vec![0.0, 10.0],
        };
        let sched = schedule(vec![WellSpec {
            name: "P".into(),
            i: 0,
            j: 0,
            k: 0,
            kind: WellKind::Producer,
            control: WellControl::Rate {
                rate: 100.0,
                bhp_limit: 500.0,
            },
            radius: 0.25,
            completions: vec![],
        }]);
        let sys = FlowSystem::new(&g, &p, &sched).unwrap();
        let out = step_pressure(
            &sys,
            &[3000.0, 3000.0],
            1.0,
            &[ActiveControl::Rate(100.0)],
            &CgSettings::default(),
            &[],
        )
        .unwrap();
        assert_eq!(out.rates, vec![0.0]);
        assert_eq!(out.bhp, vec![3000.0]);
        assert!(out.pressure.iter().all(|p| p.is_finite()));
    }
}
