//! Discounted returns and advantages.

/// `G_t = r_t + γ (1 − done_t) G_{t+1}`, seeded with `bootstrap` after the last
/// step. A done flag cuts the recursion.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len());
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    out
}

/// Returns `(G, G − V)`.
pub fn returns_and_advantages(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let g = discounted_returns(rewards, dones, bootstrap, gamma);
    let adv = g.iter().zip(values).map(|(g, v)| g - v).collect();
    (g, adv)
}

/// Zero mean, unit (population) standard deviation. Constant input maps to
/// zeros.
pub fn standardize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in x.iter_mut() {
        *v = if sd > 1e-12 { (*v - mean) / sd } else { 0.0 };
    }
}
