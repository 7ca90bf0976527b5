//! Dense tanh networks with hand-written backpropagation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::parallel::Executor;

/// Output columns per block in [`blocked_dot`].
const COL_BLOCK: usize = 256;

/// `a · b` computed in fixed column blocks of `b`, optionally spread over
/// `exec`. The block layout never depends on the worker count.
pub fn blocked_dot(a: ArrayView2<f64>, b: ArrayView2<f64>, exec: Option<&Executor>) -> Array2<f64> {
    let n = b.ncols();
    if n <= COL_BLOCK {
        let p = a.dot(&b);
        return if p.is_standard_layout() { p } else { p.as_standard_layout().into_owned() };
    }
    let ranges: Vec<(usize, usize)> = (0..n).step_by(COL_BLOCK).map(|lo| (lo, (lo + COL_BLOCK).min(n))).collect();
    let block = |&(lo, hi): &(usize, usize)| a.dot(&b.slice(s![.., lo..hi]));
    let parts = match exec {
        Some(e) => e.map(&ranges, block),
        None => ranges.iter().map(block).collect(),
    };
    let mut out = Array2::zeros((a.nrows(), n));
    for (&(lo, hi), p) in ranges.iter().zip(parts) {
        out.slice_mut(s![.., lo..hi]).assign(&p);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// `[in, h1, ..., out]`; tanh on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs retained by the forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    activations: Vec<Array2<f64>>,
}

/// Orthogonal rows (or columns, whichever is the shorter side) scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let transpose = rows > cols;
    let (n, len) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            vecs.push(v);
        }
    }
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        gain * if transpose { vecs[c][r] } else { vecs[r][c] }
    })
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Orthogonal initialization; hidden layers use `hidden_gain`, the output
    /// layer `output_gain`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let last = sizes.len() - 2;
        Self {
            layers: sizes
                .windows(2)
                .enumerate()
                .map(|(l, w)| Dense {
                    w: orthogonal(w[1], w[0], if l == last { output_gain } else { hidden_gain }, rng),
                    b: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::output_dim));
        s
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.forward_in(x, None)
    }

    /// [`Mlp::forward`] with the matrix products spread over `exec`.
    pub fn forward_in(&self, x: ArrayView2<f64>, exec: Option<&Executor>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), x.ncols()));
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = blocked_dot(h.view(), layer.w.t(), exec);
            z += &layer.b;
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(h);
            h = z;
        }
        Ok((h, MlpCache { activations }))
    }

    /// Single-sample convenience wrapper.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous");
        Ok(self.forward(view)?.0.iter().copied().collect())
    }

    /// Gradients of `Σ output ⊙ grad_output` with respect to every weight and
    /// bias, plus the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_output: ArrayView2<f64>) -> (Mlp, Array2<f64>) {
        let (grads, g) = self.backward_impl(cache, grad_output, true, None);
        (grads, g.expect("input gradient requested"))
    }

    /// [`Mlp::backward`] without the input gradient.
    pub fn param_grads(&self, cache: &MlpCache, grad_output: ArrayView2<f64>, exec: Option<&Executor>) -> Mlp {
        self.backward_impl(cache, grad_output, false, exec).0
    }

    fn backward_impl(
        &self,
        cache: &MlpCache,
        grad_output: ArrayView2<f64>,
        want_input: bool,
        exec: Option<&Executor>,
    ) -> (Mlp, Option<Array2<f64>>) {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &cache.activations[l];
            let gw = blocked_dot(g.t(), a.view(), exec);
            let gb = g.sum_axis(Axis(0));
            grads.push(Dense { w: gw, b: gb });
            if l == 0 && !want_input {
                grads.reverse();
                return (Mlp { layers: grads }, None);
            }
            let mut g_prev = blocked_dot(g.view(), layer.w.view(), exec);
            if l > 0 {
                // a is the tanh output of the previous layer
                g_prev.zip_mut_with(a, |gp, &av| *gp *= 1.0 - av * av);
            }
            g = g_prev;
        }
        grads.reverse();
        (Mlp { layers: grads }, Some(g))
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|d| {
                [
                    d.w.as_slice().expect("standard layout"),
                    d.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|d| {
                [
                    d.w.as_slice_mut().expect("standard layout"),
                    d.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("{prefix}.{l}.w"), format!("{prefix}.{l}.b")])
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blocked_dot_matches_plain_product() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((5, 40), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((40, 2 * COL_BLOCK + 17), |_| rng.random_range(-1.0..1.0));
        let plain = a.dot(&b);
        let exec = Executor::new(crate::parallel::ExecMode::Parallel, 3).unwrap();
        let seq = blocked_dot(a.view(), b.view(), None);
        let par = blocked_dot(a.view(), b.view(), Some(&exec));
        assert_eq!(seq, par);
        assert!(seq.is_standard_layout());
        for (x, y) in seq.iter().zip(&plain) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        let t = blocked_dot(b.t().slice(s![..8, ..]), a.t(), None);
        assert!(t.is_standard_layout());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 4, 2]);
        let (y, _) = net.forward(array![[1.0, -2.0, 5.0], [0.3, 0.2, 0.1]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_chain_is_tanh_of_tanh() {
        let mut net = Mlp::zeros(&[1, 1, 1, 1]);
        for l in &mut net.layers {
            l.w.fill(1.0);
        }
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let y = net.forward_one(&[x]).unwrap()[0];
            assert!((y - f64::tanh(f64::tanh(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let net = Mlp::zeros(&[3, 4, 2]);
        assert!(net.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[3, 5, 5, 2], 1.0, 1.0, &mut rng);
        let (_, cache) = net.forward(array![[0.1, 0.2, 0.3]].view()).unwrap();
        let (g, gx) = net.backward(&cache, Array2::zeros((1, 2)).view());
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[3, 2], 1.0, 1.0, &mut rng);
        let x = array![[0.5, -1.0, 2.0]];
        let go = array![[3.0, -0.5]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, go.view());
        for o in 0..2 {
            for i in 0..3 {
                assert!((g.layers[0].w[[o, i]] - go[[0, o]] * x[[0, i]]).abs() < 1e-15);
            }
        }
        assert_eq!(g.layers[0].b, array![3.0, -0.5]);
    }

    #[test]
    fn orthogonal_init_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = orthogonal(4, 9, 1.0, &mut rng);
        let gram = w.dot(&w.t());
        for r in 0..4 {
            for c in 0..4 {
                let target = if r == c { 1.0 } else { 0.0 };
                assert!((gram[[r, c]] - target).abs() < 1e-10);
            }
        }
        let tall = orthogonal(9, 4, 2.0, &mut rng);
        let gram = tall.t().dot(&tall);
        assert!((gram[[1, 1]] - 4.0).abs() < 1e-10);
    }

    fn random_dot(net: &Mlp, x: &Array2<f64>, dir: &Array2<f64>) -> f64 {
        let (y, _) = net.forward(x.view()).unwrap();
        (&y * dir).sum()
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[4, 6, 6, 3], 1.3, 0.7, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let dir = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, dir.view());
        let h = 1e-6;
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
        for (t, gt) in grads.iter().enumerate() {
            for idx in (0..gt.len()).step_by(3) {
                let mut plus = net.clone();
                plus.tensors_mut()[t][idx] += h;
                let mut minus = net.clone();
                minus.tensors_mut()[t][idx] -= h;
                let fd = (random_dot(&plus, &x, &dir) - random_dot(&minus, &x, &dir)) / (2.0 * h);
                let rel = (fd - gt[idx]).abs() / fd.abs().max(gt[idx].abs()).max(1e-6);
                assert!(rel < 1e-5, "tensor {t} idx {idx}: fd {fd} vs {}", gt[idx]);
            }
        }
    }
}
