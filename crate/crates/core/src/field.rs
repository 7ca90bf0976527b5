//! Grids, permeability fields, and the flat parameter vector the agent acts on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular Cartesian grid. Cells are ordered x-fastest, then y, then z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let g = Self {
            nx,
            ny,
            nz,
            dx,
            dy,
            dz,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Config(format!(
                "grid dimensions must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0)
            || !(self.dx.is_finite() && self.dy.is_finite() && self.dz.is_finite())
        {
            return Err(Error::Config("cell sizes must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Length of the stacked parameter vector (three permeability blocks).
    pub fn n_params(&self) -> usize {
        3 * self.n_cells()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.nx && j < self.ny && k < self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }
}

/// Per-cell directional permeabilities in millidarcy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityField {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub kz: Vec<f64>,
}

impl PermeabilityField {
    pub fn uniform(grid: &GridSpec, kx: f64, ky: f64, kz: f64) -> Self {
        let n = grid.n_cells();
        Self {
            kx: vec![kx; n],
            ky: vec![ky; n],
            kz: vec![kz; n],
        }
    }

    /// Layer-cake field: one (kx, ky, kz) triple per z-layer.
    pub fn layered(grid: &GridSpec, layers: &[(f64, f64, f64)]) -> Result<Self> {
        if layers.len() != grid.nz {
            return Err(Error::shape("layer properties", grid.nz, layers.len()));
        }
        let n = grid.n_cells();
        let mut f = Self {
            kx: Vec::with_capacity(n),
            ky: Vec::with_capacity(n),
            kz: Vec::with_capacity(n),
        };
        for &(kx, ky, kz) in layers {
            for _ in 0..grid.nx * grid.ny {
                f.kx.push(kx);
                f.ky.push(ky);
                f.kz.push(kz);
            }
        }
        Ok(f)
    }

    pub fn n_cells(&self) -> usize {
        self.kx.len()
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let n = grid.n_cells();
        for (what, arr) in [("kx", &self.kx), ("ky", &self.ky), ("kz", &self.kz)] {
            if arr.len() != n {
                return Err(Error::shape(what, n, arr.len()));
            }
            if arr.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
                return Err(Error::Config(format!(
                    "{what} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// The MDP state and simulator input: `[all kx | all ky | all kz]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Which permeability block (0 = x, 1 = y, 2 = z) an entry belongs to.
    pub fn block_of(&self, idx: usize) -> usize {
        idx / (self.0.len() / 3).max(1)
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn stack_parameters(field: &PermeabilityField) -> Result<ParameterVector> {
    let n = field.kx.len();
    if field.ky.len() != n {
        return Err(Error::shape("ky", n, field.ky.len()));
    }
    if field.kz.len() != n {
        return Err(Error::shape("kz", n, field.kz.len()));
    }
    let mut v = Vec::with_capacity(3 * n);
    v.extend_from_slice(&field.kx);
    v.extend_from_slice(&field.ky);
    v.extend_from_slice(&field.kz);
    Ok(ParameterVector(v))
}

pub fn unstack_parameters(v: &[f64], grid: &GridSpec) -> Result<PermeabilityField> {
    let n = grid.n_cells();
    if v.len() != 3 * n {
        return Err(Error::shape("parameter vector", 3 * n, v.len()));
    }
    Ok(PermeabilityField {
        kx: v[..n].to_vec(),
        ky: v[n..2 * n].to_vec(),
        kz: v[2 * n..].to_vec(),
    })
}

/// Amplitude and per-axis correlation lengths (in cells) of a noise field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub correlation_length: [f64; 3],
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config("noise amplitude must be >= 0".into()));
        }
        if self
            .correlation_length
            .iter()
            .any(|&l| !(l >= 0.0) || !l.is_finite())
        {
            return Err(Error::Config("correlation lengths must be >= 0".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent sub-seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Truncated Gaussian weights for every output position along one axis,
/// each row scaled to unit L2 norm so the smoothed field keeps unit variance.
fn axis_kernel(n: usize, length: f64) -> Vec<Vec<(usize, f64)>> {
    (0..n)
        .map(|out| {
            if length <= 0.0 {
                return vec![(out, 1.0)];
            }
            let reach = (3.0 * length).ceil() as usize;
            let lo = out.saturating_sub(reach);
            let hi = (out + reach).min(n - 1);
            let mut row: Vec<(usize, f64)> = (lo..=hi)
                .map(|src| {
                    let d = src as f64 - out as f64;
                    (src, (-0.5 * (d / length).powi(2)).exp())
                })
                .collect();
            let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            for (_, w) in &mut row {
                *w /= norm;
            }
            row
        })
        .collect()
}

fn smooth_axis(
    grid: &GridSpec,
    input: &[f64],
    axis: usize,
    kernel: &[Vec<(usize, f64)>],
) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (pos, idx) = (
                    [i, j, k][axis],
                    grid.index(i, j, k),
                );
                let mut acc = 0.0;
                for &(src, w) in &kernel[pos] {
                    let s = match axis {
                        0 => grid.index(src, j, k),
                        1 => grid.index(i, src, k),
                        _ => grid.index(i, j, src),
                    };
                    acc += w * input[s];
                }
                out[idx] = acc;
            }
        }
    }
    out
}

/// Gaussian white noise smoothed by a separable Gaussian kernel. Every cell
/// has an exact N(0, amplitude²) marginal; neighbours are correlated over the
/// configured per-axis lengths.
pub fn sample_correlated_field(grid: &GridSpec, spec: &NoiseSpec) -> Result<Vec<f64>> {
    grid.validate()?;
    spec.validate()?;
    let n = grid.n_cells();
    if spec.amplitude == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut field: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let dims = [grid.nx, grid.ny, grid.nz];
    for axis in 0..3 {
        let length = spec.correlation_length[axis];
        if length > 0.0 && dims[axis] > 1 {
            let kernel = axis_kernel(dims[axis], length);
            field = smooth_axis(grid, &field, axis, &kernel);
        }
    }
    for x in &mut field {
        *x *= spec.amplitude;
    }
    Ok(field)
}

/// Perturbs `truth` with independent correlated noise per permeability block
/// and clips at zero. Returns the scrambled start vector.
pub fn scramble(truth: &PermeabilityField, grid: &GridSpec, noise: &NoiseSpec) -> Result<ParameterVector> {
    truth.check(grid)?;
    let mut start = stack_parameters(truth)?.into_inner();
    let n = grid.n_cells();
    for block in 0..3 {
        let spec = NoiseSpec {
            seed: derive_seed(noise.seed, block as u64),
            ..noise.clone()
        };
        let eps = sample_correlated_field(grid, &spec)?;
        for (v, e) in start[block * n..(block + 1) * n].iter_mut().zip(eps) {
            *v = (*v + e).max(0.0);
        }
    }
    Ok(ParameterVector(start))
}
