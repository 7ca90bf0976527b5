//! Actor-critic agent: a Gaussian policy whose mean is an MLP of the state,
//! a state-independent learned log standard deviation, and an MLP critic.

pub mod adam;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod returns;

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::rng::{self, RngState};

pub use adam::{adam_update, AdamConfig, AdamState};
pub use mlp::{Dense, Mlp};
pub use policy::{action_log_prob, gaussian_log_prob, sample_action};
pub use ppo::{ppo_loss_and_grad, ppo_update, LossOutput, PpoConfig, RolloutBatch, UpdateMetrics};
pub use returns::{discounted_returns, returns_and_advantages, standardize};

/// Every trainable tensor of the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub actor: Mlp,
    pub log_std: Array1<f64>,
    pub critic: Mlp,
}

impl AgentParams {
    /// `[d, h, h, d]` actor and `[d, h, h, 1]` critic.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let gain = std::f64::consts::SQRT_2;
        Self {
            actor: Mlp::init(&[dim, hidden, hidden, dim], gain, 0.01, rng),
            log_std: Array1::zeros(dim),
            critic: Mlp::init(&[dim, hidden, hidden, 1], gain, 1.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            actor: self.actor.zeros_like(),
            log_std: Array1::zeros(self.log_std.len()),
            critic: self.critic.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn hidden(&self) -> usize {
        self.actor.layers[0].output_dim()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.actor.tensors();
        t.push(self.log_std.as_slice().expect("standard layout"));
        t.extend(self.critic.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.actor.tensors_mut();
        t.push(self.log_std.as_slice_mut().expect("standard layout"));
        t.extend(self.critic.tensors_mut());
        t
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut n = self.actor.tensor_names("actor");
        n.push("log_std".into());
        n.extend(self.critic.tensor_names("critic"));
        n
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &AgentParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Copies values from named tensors, checking every name and length.
    pub fn load_tensors(&mut self, source: &[(String, Vec<f64>)]) -> Result<()> {
        let names = self.tensor_names();
        if source.len() != names.len() {
            return Err(Error::shape("parameter tensor count", names.len(), source.len()));
        }
        for ((name, dst), (src_name, src)) in names.iter().zip(self.tensors_mut()).zip(source) {
            if name != src_name {
                return Err(Error::Config(format!("expected tensor {name}, found {src_name}")));
            }
            if dst.len() != src.len() {
                return Err(Error::shape("parameter tensor", dst.len(), src.len()));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<f64>)> {
        self.tensor_names()
            .into_iter()
            .zip(self.tensors())
            .map(|(n, t)| (n, t.to_vec()))
            .collect()
    }
}

/// Parameters, optimizer state and the minibatch-shuffling RNG.
#[derive(Clone, Debug)]
pub struct Agent {
    pub params: AgentParams,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Agent {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let params = AgentParams::init(dim, hidden, &mut rng);
        let adam = AdamState::new(&params);
        Self {
            params,
            adam,
            rng,
            updates: 0,
        }
    }

    pub fn from_parts(params: AgentParams, adam: AdamState, rng: &RngState, updates: u64) -> Self {
        Self {
            params,
            adam,
            rng: rng::restore(rng),
            updates,
        }
    }

    pub fn rng_state(&self) -> RngState {
        rng::capture(&self.rng)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Samples an action with the caller's RNG and reports its log-probability
    /// and the critic value of `state`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64, f64)> {
        let (action, log_prob) = sample_action(&self.params, state, rng)?;
        let value = policy::value(&self.params, state)?;
        Ok((action, log_prob, value))
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        policy::value(&self.params, state)
    }

    pub fn update(&mut self, batch: &RolloutBatch, cfg: &PpoConfig, exec: &Executor) -> Result<UpdateMetrics> {
        let metrics = ppo_update(&mut self.params, &mut self.adam, batch, cfg, exec, &mut self.rng)?;
        self.updates += 1;
        Ok(metrics)
    }
}
