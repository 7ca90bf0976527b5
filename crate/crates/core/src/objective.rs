//! Regularized weighted least-squares mismatch and the per-step reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ParameterVector;

/// `F(u) = α [ (q − q̂)ᵀ C_q (q − q̂) + λ (u − u_prior)ᵀ C_u (u − u_prior) ]`
/// with diagonal weight matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub lambda: f64,
    /// diagonal of C_q
    pub c_q: Vec<f64>,
    /// diagonal of C_u
    pub c_u: Vec<f64>,
    pub u_prior: ParameterVector,
    pub epsilon: f64,
    /// historical observations q, step-major
    pub observations: Vec<f64>,
}

impl ObjectiveSpec {
    /// Identity weights.
    pub fn identity(
        alpha: f64,
        lambda: f64,
        epsilon: f64,
        observations: Vec<f64>,
        u_prior: ParameterVector,
    ) -> Self {
        Self {
            alpha,
            lambda,
            c_q: vec![1.0; observations.len()],
            c_u: vec![1.0; u_prior.len()],
            u_prior,
            epsilon,
            observations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.lambda >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("objective needs alpha > 0, lambda >= 0, epsilon > 0".into()));
        }
        if self.c_q.len() != self.observations.len() {
            return Err(Error::shape("c_q", self.observations.len(), self.c_q.len()));
        }
        if self.c_u.len() != self.u_prior.len() {
            return Err(Error::shape("c_u", self.u_prior.len(), self.c_u.len()));
        }
        if self.c_q.iter().chain(&self.c_u).any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("objective weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Unscaled weighted data mismatch `(q − q̂)ᵀ C_q (q − q̂)`.
    pub fn data_term(&self, q_hat: &[f64]) -> Result<f64> {
        if q_hat.len() != self.observations.len() {
            return Err(Error::shape("simulated observations", self.observations.len(), q_hat.len()));
        }
        Ok(self
            .observations
            .iter()
            .zip(q_hat)
            .zip(&self.c_q)
            .map(|((q, qh), w)| w * (q - qh) * (q - qh))
            .sum())
    }

    /// Unscaled regularization `(u − u_prior)ᵀ C_u (u − u_prior)`.
    pub fn regularization_term(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.u_prior.len() {
            return Err(Error::shape("parameter vector", self.u_prior.len(), u.len()));
        }
        Ok(u
            .iter()
            .zip(self.u_prior.as_slice())
            .zip(&self.c_u)
            .map(|((x, p), w)| w * (x - p) * (x - p))
            .sum())
    }
}

pub fn evaluate_objective(u: &[f64], q_hat: &[f64], spec: &ObjectiveSpec) -> Result<f64> {
    let data = spec.data_term(q_hat)?;
    let reg = spec.regularization_term(u)?;
    Ok(spec.alpha * (data + spec.lambda * reg))
}

/// `r = F_prev − F_new`: positive when the action reduced the mismatch.
pub fn step_reward(f_prev: f64, f_new: f64) -> f64 {
    f_prev - f_new
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationOutcome {
    Running,
    Solved,
    Diverged,
    TimedOut,
}

impl TerminationOutcome {
    pub fn is_terminal(self) -> bool {
        self != TerminationOutcome::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminationOutcome::Running => "running",
            TerminationOutcome::Solved => "solved",
            TerminationOutcome::Diverged => "diverged",
            TerminationOutcome::TimedOut => "timed_out",
        }
    }
}

/// Signed terminal bonuses added to the final transition of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub solved: f64,
    pub diverged: f64,
    pub timed_out: f64,
}

impl RewardConfig {
    /// Small-case defaults (the 10×10×3 two-well model).
    pub fn small_case() -> Self {
        Self {
            solved: 1e4,
            diverged: -1e4,
            timed_out: -1e4,
        }
    }

    /// Large-case defaults (the 24×25×15 multi-well model).
    pub fn large_case() -> Self {
        Self {
            solved: 2.5e6,
            diverged: -2.5e6,
            timed_out: -1.25e6,
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::small_case()
    }
}

pub fn terminal_reward(outcome: TerminationOutcome, cfg: &RewardConfig) -> f64 {
    match outcome {
        TerminationOutcome::Running => 0.0,
        TerminationOutcome::Solved => cfg.solved,
        TerminationOutcome::Diverged => cfg.diverged,
        TerminationOutcome::TimedOut => cfg.timed_out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(q: Vec<f64>, prior: Vec<f64>, alpha: f64, lambda: f64) -> ObjectiveSpec {
        ObjectiveSpec::identity(alpha, lambda, 1.0, q, ParameterVector::new(prior))
    }

    #[test]
    fn exact_match_is_zero() {
        let s = spec(vec![3.0, 4.0], vec![1.0, 2.0, 3.0], 1e-3, 1.0);
        assert_eq!(evaluate_objective(&[1.0, 2.0, 3.0], &[3.0, 4.0], &s).unwrap(), 0.0);
    }

    #[test]
    fn scaled_data_mismatch() {
        let s = spec(vec![10.0, 0.0], vec![0.0; 3], 1e-3, 1.0);
        let f = evaluate_objective(&[0.0; 3], &[0.0, 0.0], &s).unwrap();
        assert!((f - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let s = spec(vec![1.0, 2.0], vec![0.0; 3], 1.0, 1.0);
        assert!(matches!(evaluate_objective(&[0.0; 3], &[1.0], &s), Err(Error::Shape { .. })));
        assert!(matches!(evaluate_objective(&[0.0; 2], &[1.0, 2.0], &s), Err(Error::Shape { .. })));
    }

    #[test]
    fn rewards() {
        assert_eq!(step_reward(100.0, 60.0), 40.0);
        assert_eq!(step_reward(7.0, 7.0), 0.0);
        assert_eq!(step_reward(50.0, 80.0), -30.0);
        assert_eq!(terminal_reward(TerminationOutcome::Solved, &RewardConfig::large_case()), 2.5e6);
        assert_eq!(terminal_reward(TerminationOutcome::Diverged, &RewardConfig::small_case()), -1e4);
        assert_eq!(terminal_reward(TerminationOutcome::Running, &RewardConfig::small_case()), 0.0);
        assert_eq!(terminal_reward(TerminationOutcome::TimedOut, &RewardConfig::large_case()), -1.25e6);
    }

    fn random_spec(rng: &mut ChaCha8Rng, nq: usize, nu: usize) -> (ObjectiveSpec, Vec<f64>, Vec<f64>) {
        let s = ObjectiveSpec {
            alpha: rng.random_range(1e-4..1.0),
            lambda: rng.random_range(0.0..2.0),
            c_q: (0..nq).map(|_| rng.random_range(0.0..3.0)).collect(),
            c_u: (0..nu).map(|_| rng.random_range(0.0..3.0)).collect(),
            u_prior: ParameterVector::new((0..nu).map(|_| rng.random_range(0.0..100.0)).collect()),
            epsilon: 1.0,
            observations: (0..nq).map(|_| rng.random_range(-50.0..50.0)).collect(),
        };
        let u = (0..nu).map(|_| rng.random_range(0.0..100.0)).collect();
        let qh = (0..nq).map(|_| rng.random_range(-50.0..50.0)).collect();
        (s, u, qh)
    }

    proptest! {
        #[test]
        fn permuting_observations_with_weights_is_invariant(seed in any::<u64>(), shift in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, u, qh) = random_spec(&mut rng, 8, 5);
            let f = evaluate_objective(&u, &qh, &s).unwrap();
            let rot = |v: &Vec<f64>| { let mut r = v.clone(); r.rotate_left(shift); r };
            let s2 = ObjectiveSpec { c_q: rot(&s.c_q), observations: rot(&s.observations), ..s.clone() };
            let f2 = evaluate_objective(&u, &rot(&qh), &s2).unwrap();
            prop_assert!((f - f2).abs() <= 1e-12 * f.abs().max(1.0));
        }

        #[test]
        fn alpha_scales_objective_and_reward(seed in any::<u64>(), c in 0.5f64..8.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, u, qh) = random_spec(&mut rng, 6, 4);
            let (_, u2, qh2) = random_spec(&mut rng, 6, 4);
            let scaled = ObjectiveSpec { alpha: s.alpha * c, ..s.clone() };
            let f1 = evaluate_objective(&u, &qh, &s).unwrap();
            let f2 = evaluate_objective(&u2, &qh2, &s).unwrap();
            let g1 = evaluate_objective(&u, &qh, &scaled).unwrap();
            let g2 = evaluate_objective(&u2, &qh2, &scaled).unwrap();
            prop_assert!((g1 - c * f1).abs() <= 1e-12 * g1.abs().max(1e-300));
            let r = step_reward(f1, f2);
            let rs = step_reward(g1, g2);
            prop_assert!((rs - c * r).abs() <= 1e-10 * (g1.abs() + g2.abs()));
        }

        #[test]
        fn objective_is_non_negative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, u, qh) = random_spec(&mut rng, 5, 5);
            prop_assert!(evaluate_objective(&u, &qh, &s).unwrap() >= 0.0);
        }
    }
}
