use hmrl_core::case::{build_case, Tolerance};
use hmrl_core::field::{stack_parameters, ParameterVector};
use hmrl_core::harness::Preset;
use hmrl_core::objective::{evaluate_objective, step_reward, ObjectiveSpec};
use hmrl_core::sim::ForwardModel;
use proptest::prelude::*;

/// Dense weight matrices built from the diagonals, multiplied out in full.
#[allow(clippy::needless_range_loop)]
fn brute_force(u: &[f64], q_hat: &[f64], s: &ObjectiveSpec) -> f64 {
    let quad = |x: &[f64], w: &[f64]| {
        let n = x.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let c = if i == j { w[i] } else { 0.0 };
                row += c * x[j];
            }
            total += x[i] * row;
        }
        total
    };
    let dq: Vec<f64> = s.observations.iter().zip(q_hat).map(|(a, b)| a - b).collect();
    let du: Vec<f64> = u.iter().zip(s.u_prior.as_slice()).map(|(a, b)| a - b).collect();
    s.alpha * (quad(&dq, &s.c_q) + s.lambda * quad(&du, &s.c_u))
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, ObjectiveSpec)> {
    (1usize..12, 1usize..12).prop_flat_map(|(nq, nu)| {
        (
            prop::collection::vec(-1e3..1e3f64, nu),
            prop::collection::vec(-1e3..1e3f64, nq),
            prop::collection::vec(-1e3..1e3f64, nq),
            prop::collection::vec(-1e3..1e3f64, nu),
            prop::collection::vec(0.0..10.0f64, nq),
            prop::collection::vec(0.0..10.0f64, nu),
            1e-6..10.0f64,
            0.0..5.0f64,
        )
            .prop_map(|(u, q_hat, q, prior, c_q, c_u, alpha, lambda)| {
                let spec = ObjectiveSpec {
                    alpha,
                    lambda,
                    c_q,
                    c_u,
                    u_prior: ParameterVector::new(prior),
                    epsilon: 1.0,
                    observations: q,
                };
                (u, q_hat, spec)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_dense_brute_force((u, q_hat, spec) in instance()) {
        let f = evaluate_objective(&u, &q_hat, &spec).unwrap();
        let g = brute_force(&u, &q_hat, &spec);
        prop_assert!((f - g).abs() <= 1e-12 * g.abs().max(f64::MIN_POSITIVE), "{f} vs {g}");
        prop_assert!(f >= 0.0);
    }

    #[test]
    fn rewards_telescope(fs in prop::collection::vec(0.0..1e6f64, 2..50)) {
        let total: f64 = fs.windows(2).map(|w| step_reward(w[0], w[1])).sum();
        let direct = fs[0] - fs[fs.len() - 1];
        prop_assert!((total - direct).abs() <= 1e-12 * fs.iter().cloned().fold(0.0, f64::max).max(1.0));
    }
}

#[test]
fn truth_scores_zero_without_noise() {
    let mut recipe = Preset::Spe1Analog.recipe().unwrap();
    recipe.noise.amplitude = 0.0;
    recipe.tolerance = Tolerance::Absolute(1.0);
    let case = build_case(&recipe).unwrap();
    let truth = stack_parameters(&recipe.truth).unwrap();
    assert_eq!(case.start, truth);
    let q = case.simulator().simulate(truth.as_slice(), &case.schedule).unwrap();
    assert_eq!(evaluate_objective(truth.as_slice(), &q.observations, &case.objective).unwrap(), 0.0);
    assert_eq!(case.initial_objective, 0.0);
}

#[test]
fn shipped_tolerance_is_a_large_reduction() {
    let case = build_case(&Preset::Spe1Analog.recipe().unwrap()).unwrap();
    assert!(case.objective.epsilon <= 0.05 * case.initial_objective);
}
