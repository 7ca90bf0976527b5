//! Adam optimizer over [`AgentParams`].

use serde::{Deserialize, Serialize};

use super::AgentParams;
use crate::parallel::Executor;

/// Elements per block of a parallel Adam step.
const ADAM_BLOCK: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step on flat slices; `t` is the 1-based step count.
/// Returns whether every updated parameter is finite.
pub fn adam_update(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: u64, lr: f64, cfg: &AdamConfig) -> bool {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let mut finite = true;
    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        finite &= p.is_finite();
    }
    finite
}

/// `(params, m, v, grads)` slices of one block.
type AdamBlock<'a> = (&'a mut [f64], &'a mut [f64], &'a mut [f64], &'a [f64]);

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: AgentParams,
    pub v: AgentParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &AgentParams) -> Self {
        Self {
            m: shape.zeros_like(),
            v: shape.zeros_like(),
            t: 0,
        }
    }

    /// `θ ← θ − lr · m̂ / (√v̂ + eps)` over every tensor. Returns whether the
    /// updated parameters are all finite.
    pub fn step(&mut self, params: &mut AgentParams, grads: &AgentParams, lr: f64, cfg: &AdamConfig) -> bool {
        self.step_in(params, grads, lr, cfg, None)
    }

    /// [`AdamState::step`] over fixed element blocks spread across `exec`.
    pub fn step_in(
        &mut self,
        params: &mut AgentParams,
        grads: &AgentParams,
        lr: f64,
        cfg: &AdamConfig,
        exec: Option<&Executor>,
    ) -> bool {
        self.t += 1;
        let t = self.t;
        let mut blocks: Vec<AdamBlock<'_>> = Vec::new();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.tensors());
        for (((p, m), v), g) in tensors {
            let parts = p
                .chunks_mut(ADAM_BLOCK)
                .zip(m.chunks_mut(ADAM_BLOCK))
                .zip(v.chunks_mut(ADAM_BLOCK))
                .zip(g.chunks(ADAM_BLOCK));
            blocks.extend(parts.map(|(((p, m), v), g)| (p, m, v, g)));
        }
        let update = |b: &mut (&mut [f64], &mut [f64], &mut [f64], &[f64])| adam_update(b.0, b.1, b.2, b.3, t, lr, cfg);
        match exec {
            Some(e) => e.map_mut(&mut blocks, update).into_iter().all(|ok| ok),
            None => blocks.iter_mut().map(update).fold(true, |a, b| a & b),
        }
    }
}
