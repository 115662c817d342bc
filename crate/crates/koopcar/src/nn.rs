//! Minimal feed-forward network with exact reverse-mode gradients,
//! steepest-descent updates, and Min-Max normalization.
//!
//! Forward/backward operate on matrices whose columns are samples, so a
//! whole mini-batch goes through one GEMM per layer. The single-vector
//! entry points are thin wrappers around the batched path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply_in_place(self, m: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            m.apply(|v| *v = v.tanh());
        }
    }
}

/// One dense layer: `out = act(W x + b)`, weight is `out x in`.
#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations recorded by a forward pass: `acts[0]` is the input batch,
/// `acts[i]` the post-activation output of layer `i-1`.
pub struct ForwardCache {
    pub acts: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("cache from a forward pass")
    }
}

/// One gradient array per trainable parameter array, shape-matched.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<Option<DVector<f64>>>,
}

impl GradBuffer {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradBuffer {
            d_weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            d_biases: net
                .layers
                .iter()
                .map(|l| l.bias.as_ref().map(|b| DVector::zeros(b.len())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            *w *= s;
        }
        for b in self.d_biases.iter_mut().flatten() {
            *b *= s;
        }
    }
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Mlp {
    /// Feed-forward net: tanh hidden layers with bias, identity output layer with bias.
    pub fn feedforward<R: Rng>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Mlp {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Tanh
            };
            layers.push(Layer {
                weight: random_weight(dims[i + 1], dims[i], rng),
                bias: Some(DVector::zeros(dims[i + 1])),
                activation: act,
            });
        }
        Mlp { layers }
    }

    /// Single linear layer without activation or bias; its weight matrix is
    /// the represented linear map, readable verbatim.
    pub fn linear_no_bias<R: Rng>(input: usize, output: usize, rng: &mut R) -> Mlp {
        Mlp {
            layers: vec![Layer {
                weight: random_weight(output, input, rng),
                bias: None,
                activation: Activation::Identity,
            }],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    /// Batched forward pass; columns of `x` are samples.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        if x.nrows() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("input dim {}", self.input_dim()),
                got: format!("{}", x.nrows()),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let mut z = &layer.weight * acts.last().unwrap();
            if let Some(b) = &layer.bias {
                for mut col in z.column_iter_mut() {
                    col += b;
                }
            }
            layer.activation.apply_in_place(&mut z);
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<(DVector<f64>, ForwardCache)> {
        let cache = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok((cache.output().column(0).into_owned(), cache))
    }

    /// Reverse-mode gradients of `<cotangent, output>` w.r.t. every parameter
    /// and the input, given the cache of the matching forward pass.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        cotangent: &DMatrix<f64>,
    ) -> Result<(GradBuffer, DMatrix<f64>)> {
        let out = cache.output();
        if cotangent.shape() != out.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", out.nrows(), out.ncols()),
                got: format!("{}x{}", cotangent.nrows(), cotangent.ncols()),
            });
        }
        let mut grads = GradBuffer::zeros_like(self);
        let mut cot = cotangent.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Tanh {
                let a = &cache.acts[i + 1];
                cot.zip_apply(a, |c, a| *c *= 1.0 - a * a);
            }
            grads.d_weights[i] = &cot * cache.acts[i].transpose();
            if let Some(db) = grads.d_biases[i].as_mut() {
                for col in cot.column_iter() {
                    *db += col;
                }
            }
            cot = layer.weight.transpose() * cot;
        }
        Ok((grads, cot))
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        cotangent: &DVector<f64>,
    ) -> Result<(GradBuffer, DVector<f64>)> {
        let (grads, dx) = self.backward_batch(
            cache,
            &DMatrix::from_column_slice(cotangent.len(), 1, cotangent.as_slice()),
        )?;
        Ok((grads, dx.column(0).into_owned()))
    }

    /// Plain steepest descent: `p -= lr * g` elementwise.
    pub fn sgd_step(&mut self, grads: &GradBuffer, lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.weight.zip_apply(&grads.d_weights[i], |p, g| *p -= lr * g);
            if let (Some(b), Some(g)) = (layer.bias.as_mut(), grads.d_biases[i].as_ref()) {
                b.zip_apply(g, |p, g| *p -= lr * g);
            }
        }
    }

    /// Flat view of all parameters, used by finite-difference checks.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let (l, off) = self.locate(idx);
        let layer = &self.layers[l];
        if off < layer.weight.len() {
            layer.weight[off]
        } else {
            layer.bias.as_ref().unwrap()[off - layer.weight.len()]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let (l, off) = self.locate(idx);
        let layer = &mut self.layers[l];
        if off < layer.weight.len() {
            layer.weight[off] = v;
        } else {
            let wlen = layer.weight.len();
            layer.bias.as_mut().unwrap()[off - wlen] = v;
        }
    }

    pub fn grad_param(grads: &GradBuffer, net: &Mlp, idx: usize) -> f64 {
        let (l, off) = net.locate(idx);
        if off < grads.d_weights[l].len() {
            grads.d_weights[l][off]
        } else {
            grads.d_biases[l].as_ref().unwrap()[off - grads.d_weights[l].len()]
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.weight.len() + layer.bias.as_ref().map_or(0, |b| b.len());
            if idx < n {
                return (l, idx);
            }
            idx -= n;
        }
        panic!("parameter index out of range");
    }
}

fn random_weight<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let lim = glorot_limit(cols, rows);
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-lim..lim))
}

/// Momentum accumulator for the optional heavy-ball variant of steepest descent.
pub struct Momentum {
    pub coeff: f64,
    velocity: GradBuffer,
}

impl Momentum {
    pub fn new(net: &Mlp, coeff: f64) -> Self {
        Momentum {
            coeff,
            velocity: GradBuffer::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &GradBuffer, lr: f64) {
        self.velocity.scale(self.coeff);
        self.velocity.add_assign(grads);
        net.sgd_step(&self.velocity, lr);
    }
}

const DEGENERATE_WIDENING: f64 = 1e-6;

/// Per-dimension Min-Max normalizer: affine map sending the fitted minimum
/// to -1 and the fitted maximum to +1, with no clamping outside the range.
#[derive(Clone, Debug)]
pub struct MinMaxScaler {
    pub min: DVector<f64>,
    pub max: DVector<f64>,
}

impl MinMaxScaler {
    /// Fit on columns of `data`; dimensions with max == min are widened by 1e-6.
    pub fn fit(data: &DMatrix<f64>) -> Result<MinMaxScaler> {
        if data.ncols() < 2 {
            return Err(Error::EmptyData(format!(
                "scaler fit needs at least 2 samples, got {}",
                data.ncols()
            )));
        }
        let dim = data.nrows();
        let mut min = DVector::from_element(dim, f64::INFINITY);
        let mut max = DVector::from_element(dim, f64::NEG_INFINITY);
        for col in data.column_iter() {
            for i in 0..dim {
                min[i] = min[i].min(col[i]);
                max[i] = max[i].max(col[i]);
            }
        }
        for i in 0..dim {
            if max[i] <= min[i] {
                min[i] -= 0.5 * DEGENERATE_WIDENING;
                max[i] += 0.5 * DEGENERATE_WIDENING;
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Symmetric variant about zero: range [-h, h] with h = max(|min|, |max|).
    /// The affine offset vanishes, so the map is purely linear.
    pub fn symmetrized(&self) -> MinMaxScaler {
        let h = self.min.zip_map(&self.max, |lo, hi| lo.abs().max(hi.abs()).max(0.5 * DEGENERATE_WIDENING));
        MinMaxScaler {
            min: -h.clone(),
            max: h,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            2.0 * (x[i] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0
        })
    }

    pub fn apply_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            2.0 * (x[(i, j)] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0
        })
    }

    pub fn invert(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            (y[i] + 1.0) * 0.5 * (self.max[i] - self.min[i]) + self.min[i]
        })
    }

    /// Per-dimension scale factor of the linear part: d(apply)/dx.
    pub fn gain(&self, i: usize) -> f64 {
        2.0 / (self.max[i] - self.min[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_layer(n: usize) -> Mlp {
        Mlp {
            layers: vec![Layer {
                weight: DMatrix::identity(n, n),
                bias: Some(DVector::zeros(n)),
                activation: Activation::Identity,
            }],
        }
    }

    #[test]
    fn forward_identity_layer_passes_input_through() {
        let net = identity_layer(3);
        let x = DVector::from_vec(vec![0.4, -1.2, 2.0]);
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forward_zero_weights_tanh_gives_tanh_bias() {
        let bias = DVector::from_vec(vec![0.5, -0.25]);
        let net = Mlp {
            layers: vec![Layer {
                weight: DMatrix::zeros(2, 3),
                bias: Some(bias.clone()),
                activation: Activation::Tanh,
            }],
        };
        let (y, _) = net.forward(&DVector::from_vec(vec![9.0, -3.0, 1.0])).unwrap();
        for i in 0..2 {
            assert_relative_eq!(y[i], bias[i].tanh(), max_relative = 1e-15);
        }
    }

    #[test]
    fn forward_two_layer_hand_composition() {
        // W1=[[0.5,-0.3],[0.2,0.8]], b1=[0.1,-0.2], tanh;
        // W2=[[1.0,0.5],[-0.7,0.3]], b2=[0.0,0.25], identity; x=[0.3,-0.6].
        let net = Mlp {
            layers: vec![
                Layer {
                    weight: DMatrix::from_row_slice(2, 2, &[0.5, -0.3, 0.2, 0.8]),
                    bias: Some(DVector::from_vec(vec![0.1, -0.2])),
                    activation: Activation::Tanh,
                },
                Layer {
                    weight: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.7, 0.3]),
                    bias: Some(DVector::from_vec(vec![0.0, 0.25])),
                    activation: Activation::Identity,
                },
            ],
        };
        let (y, _) = net.forward(&DVector::from_vec(vec![0.3, -0.6])).unwrap();
        assert_relative_eq!(y[0], 0.12975729442038947, epsilon = 1e-12);
        assert_relative_eq!(y[1], -0.19906332464406812, epsilon = 1e-12);
    }

    #[test]
    fn forward_shape_mismatch_is_an_error() {
        let net = identity_layer(3);
        assert!(net.forward(&DVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn backward_identity_layer_weight_grad_is_outer_product() {
        let net = identity_layer(3);
        let x = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let (_, cache) = net.forward(&x).unwrap();
        let e1 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let (grads, dx) = net.backward(&cache, &e1).unwrap();
        // d<e_j, Wx>/dW = e_j x^T
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == 1 { x[c] } else { 0.0 };
                assert_relative_eq!(grads.d_weights[0][(r, c)], expect, epsilon = 1e-15);
            }
        }
        assert_eq!(dx, e1);
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_grads() {
        let mut r = rng(7);
        let net = Mlp::feedforward(3, &[5], 2, &mut r);
        let (_, cache) = net.forward(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        let (grads, dx) = net.backward(&cache, &DVector::zeros(2)).unwrap();
        assert!(grads.d_weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    /// Central finite differences of <c, f(x; p)> w.r.t. every parameter.
    fn fd_check(net: &Mlp, x: &DVector<f64>, cot: &DVector<f64>, tol: f64) {
        let (_, cache) = net.forward(x).unwrap();
        let (grads, _) = net.backward(&cache, cot).unwrap();
        let h = 1e-5;
        let mut probe = net.clone();
        for idx in 0..net.param_count() {
            let orig = probe.get_param(idx);
            probe.set_param(idx, orig + h);
            let (yp, _) = probe.forward(x).unwrap();
            probe.set_param(idx, orig - h);
            let (ym, _) = probe.forward(x).unwrap();
            probe.set_param(idx, orig);
            let num = (cot.dot(&yp) - cot.dot(&ym)) / (2.0 * h);
            let ana = Mlp::grad_param(&grads, net, idx);
            let denom = num.abs().max(ana.abs()).max(1e-6);
            assert!(
                ((num - ana) / denom).abs() < tol,
                "param {idx}: numeric {num} vs analytic {ana}"
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_random_nets() {
        let mut r = rng(42);
        for arch in 0..10 {
            let hidden: Vec<usize> = match arch % 3 {
                0 => vec![4, 4, 4],
                1 => vec![8],
                _ => vec![6, 3],
            };
            let net = Mlp::feedforward(3, &hidden, 2, &mut r);
            for _ in 0..10 {
                let x = DVector::from_fn(3, |_, _| r.gen_range(-1.0..1.0));
                let cot = DVector::from_fn(2, |_, _| r.gen_range(-1.0..1.0));
                fd_check(&net, &x, &cot, 1e-4);
            }
        }
    }

    #[test]
    fn backward_input_cotangent_matches_finite_differences() {
        let mut r = rng(3);
        let net = Mlp::feedforward(4, &[6, 6], 3, &mut r);
        let x = DVector::from_fn(4, |_, _| r.gen_range(-1.0..1.0));
        let cot = DVector::from_fn(3, |_, _| r.gen_range(-1.0..1.0));
        let (_, cache) = net.forward(&x).unwrap();
        let (_, dx) = net.backward(&cache, &cot).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (cot.dot(&net.forward(&xp).unwrap().0) - cot.dot(&net.forward(&xm).unwrap().0)) / (2.0 * h);
            assert_relative_eq!(dx[i], num, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn sgd_zero_grad_leaves_params_unchanged() {
        let mut r = rng(1);
        let mut net = Mlp::feedforward(2, &[3], 1, &mut r);
        let before = net.layers[0].weight.clone();
        let grads = GradBuffer::zeros_like(&net);
        net.sgd_step(&grads, 0.5);
        assert_eq!(net.layers[0].weight, before);
    }

    #[test]
    fn sgd_single_step_arithmetic() {
        // lr = 1, p = 1, g = 0.25 -> p' = 0.75
        let mut net = Mlp {
            layers: vec![Layer {
                weight: DMatrix::from_element(1, 1, 1.0),
                bias: None,
                activation: Activation::Identity,
            }],
        };
        let mut grads = GradBuffer::zeros_like(&net);
        grads.d_weights[0][(0, 0)] = 0.25;
        net.sgd_step(&grads, 1.0);
        assert_eq!(net.layers[0].weight[(0, 0)], 0.75);
    }

    #[test]
    fn sgd_two_half_steps_equal_one_full_step() {
        let mut r = rng(11);
        let net0 = Mlp::feedforward(2, &[3], 2, &mut r);
        let mut grads = GradBuffer::zeros_like(&net0);
        for w in &mut grads.d_weights {
            *w = DMatrix::from_fn(w.nrows(), w.ncols(), |_, _| r.gen_range(-1.0..1.0));
        }
        let mut half = net0.clone();
        half.sgd_step(&grads, 0.05);
        half.sgd_step(&grads, 0.05);
        let mut full = net0.clone();
        full.sgd_step(&grads, 0.1);
        for (a, b) in half.layers.iter().zip(&full.layers) {
            assert_relative_eq!(a.weight, b.weight, epsilon = 1e-15);
        }
    }

    #[test]
    fn seeded_init_is_bit_identical() {
        let a = Mlp::feedforward(3, &[16, 16], 5, &mut rng(99));
        let b = Mlp::feedforward(3, &[16, 16], 5, &mut rng(99));
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weight, lb.weight);
        }
    }

    #[test]
    fn scaler_midpoint_maps_to_zero() {
        let data = DMatrix::from_row_slice(1, 2, &[0.0, 10.0]);
        let s = MinMaxScaler::fit(&data).unwrap();
        let y = s.apply(&DVector::from_vec(vec![5.0]));
        assert_relative_eq!(y[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.apply(&DVector::from_vec(vec![0.0]))[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(s.apply(&DVector::from_vec(vec![10.0]))[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn scaler_roundtrip_identity() {
        let mut r = rng(5);
        let data = DMatrix::from_fn(3, 50, |_, _| r.gen_range(-4.0..7.0));
        let s = MinMaxScaler::fit(&data).unwrap();
        for _ in 0..1000 {
            let x = DVector::from_fn(3, |_, _| r.gen_range(-10.0..10.0));
            let back = s.invert(&s.apply(&x));
            for i in 0..3 {
                assert_relative_eq!(back[i], x[i], epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn scaler_constant_dimension_widened() {
        let data = DMatrix::from_row_slice(1, 3, &[2.5, 2.5, 2.5]);
        let s = MinMaxScaler::fit(&data).unwrap();
        assert_relative_eq!(s.max[0] - s.min[0], 1e-6, max_relative = 1e-12);
        let y = s.apply(&DVector::from_vec(vec![2.5]));
        assert_relative_eq!(y[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn scaler_fit_needs_two_samples() {
        let data = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(MinMaxScaler::fit(&data).is_err());
    }

    #[test]
    fn symmetrized_scaler_is_linear() {
        let data = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 4.0, -3.0, 0.5, 1.0]);
        let s = MinMaxScaler::fit(&data).unwrap().symmetrized();
        let zero = s.apply(&DVector::zeros(2));
        assert_relative_eq!(zero[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(zero[1], 0.0, epsilon = 1e-15);
        // apply is x/h with h = max(|min|,|max|)
        let y = s.apply(&DVector::from_vec(vec![4.0, -3.0]));
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(y[1], -1.0, epsilon = 1e-15);
    }
}
