//! Clipped-surrogate PPO with an MSE critic.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::policy::LN_2PI;
use super::returns::{returns_and_advantages, standardize};
use super::AgentParams;
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::parallel::Executor;

/// Rows per gradient work item. Fixed so results do not depend on the thread
/// count.
const CHUNK_ROWS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_range: f64,
    pub value_coef: f64,
    pub epochs: usize,
    /// minibatches per epoch
    pub minibatches: usize,
    pub hidden: usize,
    /// global L2 gradient clip
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_true")]
    pub standardize_advantages: bool,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_true() -> bool {
    true
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 9e-4,
            gamma: 0.99,
            clip_range: 0.2,
            value_coef: 0.5,
            epochs: 10,
            minibatches: 4,
            hidden: 128,
            max_grad_norm: None,
            standardize_advantages: true,
            adam: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.clip_range > 0.0) {
            return bad("clip_range must be positive");
        }
        if !(self.value_coef >= 0.0) {
            return bad("value_coef must be non-negative");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.hidden == 0 {
            return bad("epochs, minibatches and hidden must be >= 1");
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// A batch of experience. Rows of `states` and `actions` are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBatch {
    /// Concatenates per-environment trajectories. Each segment comes with the
    /// critic value used to bootstrap past its last transition when that
    /// transition is not terminal. A transition's `terminal_value` is
    /// discounted into its reward.
    pub fn from_segments(segments: &[(Vec<Transition>, f64)], gamma: f64) -> Result<Self> {
        let n: usize = segments.iter().map(|(s, _)| s.len()).sum();
        let dim = segments
            .iter()
            .find_map(|(s, _)| s.first().map(|t| t.state.len()))
            .ok_or_else(|| Error::Config("empty rollout batch".into()))?;
        let mut states = Array2::zeros((n, dim));
        let mut actions = Array2::zeros((n, dim));
        let mut log_probs = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        let mut advantages = Vec::with_capacity(n);
        let mut row = 0;
        for (seg, bootstrap) in segments {
            let rewards: Vec<f64> = seg.iter().map(|t| t.reward + gamma * t.terminal_value).collect();
            let dones: Vec<bool> = seg.iter().map(Transition::done).collect();
            let vals: Vec<f64> = seg.iter().map(|t| t.value).collect();
            let (g, a) = returns_and_advantages(&rewards, &dones, &vals, *bootstrap, gamma);
            for t in seg {
                if t.state.len() != dim || t.action.len() != dim {
                    return Err(Error::shape("transition", dim, t.state.len().max(t.action.len())));
                }
                states.row_mut(row).assign(&ndarray::ArrayView1::from(&t.state));
                actions.row_mut(row).assign(&ndarray::ArrayView1::from(&t.action));
                log_probs.push(t.log_prob);
                row += 1;
            }
            values.extend(vals);
            returns.extend(g);
            advantages.extend(a);
        }
        Ok(Self {
            states,
            actions,
            log_probs,
            values,
            returns,
            advantages,
        })
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            states: self.states.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            log_probs: pick(&self.log_probs),
            values: pick(&self.values),
            returns: pick(&self.returns),
            advantages: pick(&self.advantages),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Config("empty rollout batch".into()));
        }
        for (what, len) in [
            ("batch states", self.states.nrows()),
            ("batch actions", self.actions.nrows()),
            ("batch values", self.values.len()),
            ("batch returns", self.returns.len()),
            ("batch advantages", self.advantages.len()),
        ] {
            if len != n {
                return Err(Error::shape(what, n, len));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// `−L_clip + c1 · L_V`
    pub loss: f64,
    /// mean clipped surrogate `L_clip`
    pub surrogate: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grads: AgentParams,
}

struct ChunkOut {
    surrogate: f64,
    value_sq: f64,
    clipped: usize,
    kl: f64,
    grads: AgentParams,
}

fn chunk_loss(params: &AgentParams, mb: &RolloutBatch, rows: Range<usize>, m: f64, cfg: &PpoConfig, exec: &Executor) -> Result<ChunkOut> {
    let s = mb.states.slice(s![rows.clone(), ..]);
    let a = mb.actions.slice(s![rows.clone(), ..]);
    let d = params.dim();
    let (mu, actor_cache) = params.actor.forward_in(s, Some(exec))?;
    let inv_var: Vec<f64> = params.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let log_std_sum: f64 = params.log_std.sum();
    let eps = cfg.clip_range;

    let mut g_log_std = Array1::zeros(d);
    let mut g_mu = Array2::zeros(mu.raw_dim());
    let (mut surrogate, mut clipped, mut kl) = (0.0, 0, 0.0);
    for (r, i) in rows.clone().enumerate() {
        let mut quad = 0.0;
        for j in 0..d {
            let diff = a[[r, j]] - mu[[r, j]];
            quad += diff * diff * inv_var[j];
        }
        let logp = -0.5 * quad - log_std_sum - 0.5 * d as f64 * LN_2PI;
        let adv = mb.advantages[i];
        let ratio = (logp - mb.log_probs[i]).exp();
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        surrogate += surr1.min(surr2);
        kl += mb.log_probs[i] - logp;
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        // d loss / d logp; the clipped branch is flat
        let g = if surr1 <= surr2 { -ratio * adv / m } else { 0.0 };
        if g != 0.0 {
            for j in 0..d {
                let diff = a[[r, j]] - mu[[r, j]];
                g_mu[[r, j]] = g * diff * inv_var[j];
                g_log_std[j] += g * (diff * diff * inv_var[j] - 1.0);
            }
        }
    }
    let actor = params.actor.param_grads(&actor_cache, g_mu.view(), Some(exec));

    let (v, critic_cache) = params.critic.forward_in(s, Some(exec))?;
    let mut g_v = Array2::zeros(v.raw_dim());
    let mut value_sq = 0.0;
    for (r, i) in rows.enumerate() {
        let e = v[[r, 0]] - mb.returns[i];
        value_sq += e * e;
        g_v[[r, 0]] = cfg.value_coef * 2.0 * e / m;
    }
    let critic = params.critic.param_grads(&critic_cache, g_v.view(), Some(exec));
    Ok(ChunkOut {
        surrogate,
        value_sq,
        clipped,
        kl,
        grads: AgentParams {
            actor,
            log_std: g_log_std,
            critic,
        },
    })
}

/// Loss and analytic gradient on one minibatch. Advantages are used as given.
pub fn ppo_loss_and_grad(params: &AgentParams, mb: &RolloutBatch, cfg: &PpoConfig, exec: &Executor) -> Result<LossOutput> {
    mb.check()?;
    if mb.dim() != params.dim() {
        return Err(Error::shape("batch width", params.dim(), mb.dim()));
    }
    let n = mb.len();
    let m = n as f64;
    let ranges: Vec<Range<usize>> = (0..n).step_by(CHUNK_ROWS).map(|lo| lo..(lo + CHUNK_ROWS).min(n)).collect();
    let parts: Vec<Result<ChunkOut>> = ranges.iter().map(|r| chunk_loss(params, mb, r.clone(), m, cfg, exec)).collect();
    let mut grads: Option<AgentParams> = None;
    let (mut surrogate, mut value_sq, mut clipped, mut kl) = (0.0, 0.0, 0, 0.0);
    for p in parts {
        let p = p?;
        surrogate += p.surrogate;
        value_sq += p.value_sq;
        clipped += p.clipped;
        kl += p.kl;
        match &mut grads {
            None => grads = Some(p.grads),
            Some(acc) => acc.add_scaled(&p.grads, 1.0),
        }
    }
    let grads = grads.unwrap_or_else(|| params.zeros_like());
    let surrogate = surrogate / m;
    let value_loss = value_sq / m;
    Ok(LossOutput {
        loss: -surrogate + cfg.value_coef * value_loss,
        surrogate,
        value_loss,
        clip_fraction: clipped as f64 / m,
        approx_kl: kl / m,
        grads,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    /// mean of `−L_clip` over minibatches
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
    /// a non-finite loss or parameter was met; parameters were restored
    pub aborted: bool,
}

/// `epochs` passes of shuffled minibatch Adam steps.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut AgentParams,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    exec: &Executor,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    cfg.validate()?;
    batch.check()?;
    let mut work = batch.clone();
    if cfg.standardize_advantages {
        standardize(&mut work.advantages);
    }
    let n = work.len();
    let mb_size = n.div_ceil(cfg.minibatches.min(n));
    let backup = (params.clone(), adam.clone());
    let mut metrics = UpdateMetrics::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb_size) {
            let mb = work.select(idx);
            let mut out = ppo_loss_and_grad(params, &mb, cfg, exec)?;
            if !out.loss.is_finite() {
                (*params, *adam) = backup;
                return Ok(UpdateMetrics {
                    aborted: true,
                    ..metrics
                });
            }
            if let Some(max) = cfg.max_grad_norm {
                let norm = out.grads.global_norm();
                if norm > max {
                    out.grads.scale(max / norm);
                }
            }
            if !adam.step_in(params, &out.grads, cfg.learning_rate, &cfg.adam, Some(exec)) {
                (*params, *adam) = backup;
                return Ok(UpdateMetrics {
                    aborted: true,
                    ..metrics
                });
            }
            metrics.policy_loss += -out.surrogate;
            metrics.value_loss += out.value_loss;
            metrics.clip_fraction += out.clip_fraction;
            metrics.approx_kl += out.approx_kl;
            metrics.minibatches += 1;
        }
    }
    let k = metrics.minibatches as f64;
    metrics.policy_loss /= k;
    metrics.value_loss /= k;
    metrics.clip_fraction /= k;
    metrics.approx_kl /= k;
    Ok(metrics)
}
