//! Diagonal Gaussian policy.

use rand::Rng;
use rand_distr::StandardNormal;

use super::AgentParams;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// `log N(a; μ, diag(exp(log_std))²)`
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&a, &m), &ls)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

fn check_state(params: &AgentParams, state: &[f64]) -> Result<()> {
    if state.len() != params.dim() {
        return Err(Error::shape("state", params.dim(), state.len()));
    }
    Ok(())
}

pub fn sample_action<R: Rng + ?Sized>(params: &AgentParams, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
    check_state(params, state)?;
    let mean = params.actor.forward_one(state)?;
    let action: Vec<f64> = mean
        .iter()
        .zip(params.log_std.iter())
        .map(|(&m, &ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = gaussian_log_prob(&action, &mean, params.log_std.as_slice().expect("standard layout"));
    Ok((action, lp))
}

pub fn action_log_prob(params: &AgentParams, state: &[f64], action: &[f64]) -> Result<f64> {
    check_state(params, state)?;
    if action.len() != params.dim() {
        return Err(Error::shape("action", params.dim(), action.len()));
    }
    let mean = params.actor.forward_one(state)?;
    Ok(gaussian_log_prob(action, &mean, params.log_std.as_slice().expect("standard layout")))
}

pub fn value(params: &AgentParams, state: &[f64]) -> Result<f64> {
    check_state(params, state)?;
    Ok(params.critic.forward_one(state)?[0])
}
