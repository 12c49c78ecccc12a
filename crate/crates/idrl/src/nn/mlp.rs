//! Fully connected networks with ReLU hidden layers over the tape engine.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Arr, Tape, Var};

/// MLP parameters: 64-bit weights and biases, ReLU on hidden layers,
/// linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub weights: Vec<Arr>,
    pub biases: Vec<Arr>,
}

/// Tape handles for one registration of an MLP's parameters.
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Canonical flat order: w0, b0, w1, b1, ...
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for i in 0..self.weights.len() {
            out.push(self.weights[i]);
            out.push(self.biases[i]);
        }
        out
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, deterministic under the rng.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
            weights.push(w);
            biases.push(Array2::zeros((1, fan_out)));
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// Assemble from explicit matrices; shapes must chain.
    pub fn from_parts(weights: Vec<Arr>, biases: Vec<Arr>) -> Self {
        assert_eq!(weights.len(), biases.len());
        assert!(!weights.is_empty());
        let mut sizes = vec![weights[0].nrows()];
        for (w, b) in weights.iter().zip(&biases) {
            assert_eq!(w.nrows(), *sizes.last().unwrap());
            assert_eq!(b.dim(), (1, w.ncols()));
            sizes.push(w.ncols());
        }
        Mlp {
            sizes,
            weights,
            biases,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            weights.push(Array2::zeros((pair[0], pair[1])));
            biases.push(Array2::zeros((1, pair[1])));
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters in the canonical flat order (w0, b0, w1, b1, ...).
    pub fn param_arrays(&self) -> Vec<&Arr> {
        let mut out = Vec::new();
        for i in 0..self.weights.len() {
            out.push(&self.weights[i]);
            out.push(&self.biases[i]);
        }
        out
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Arr> {
        let mut out: Vec<&mut Arr> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Plain evaluation without a tape; rows are batch entries.
    pub fn forward(&self, x: &Arr) -> Arr {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension");
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn forward_row(&self, x: &[f64]) -> Vec<f64> {
        let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        self.forward(&input).row(0).to_vec()
    }

    /// Register parameters as differentiable leaves.
    pub fn vars(&self, t: &mut Tape) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| t.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| t.leaf(b.clone())).collect(),
        }
    }

    /// Register parameters as constants (frozen network).
    pub fn const_vars(&self, t: &mut Tape) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| t.constant(w.clone())).collect(),
            biases: self.biases.iter().map(|b| t.constant(b.clone())).collect(),
        }
    }

    /// Forward pass building tape nodes from registered parameters.
    pub fn forward_var(&self, t: &mut Tape, vars: &MlpVars, x: Var) -> Var {
        let last = vars.weights.len() - 1;
        let mut h = x;
        for i in 0..vars.weights.len() {
            h = t.affine(h, vars.weights[i], vars.biases[i]);
            if i < last {
                h = t.relu(h);
            }
        }
        h
    }

    /// Overwrite parameters from arrays in canonical flat order.
    pub fn load_params(&mut self, arrays: &[Arr]) {
        let mut it = arrays.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let src = it.next().expect("missing weight array");
            assert_eq!(src.dim(), w.dim());
            w.assign(src);
            let src = it.next().expect("missing bias array");
            assert_eq!(src.dim(), b.dim());
            b.assign(src);
        }
        assert!(it.next().is_none(), "extra parameter arrays");
    }
}

/// Gradient of a scalar built on `t` with respect to the registered
/// parameters, returned as plain arrays in canonical order.
pub fn grad_params(t: &mut Tape, loss: Var, vars: &MlpVars) -> Vec<Arr> {
    let handles = t.backward(loss, &vars.all());
    handles.into_iter().map(|g| t.value(g).clone()).collect()
}

/// Batched input-gradient penalty with parameter gradients via a second
/// differentiation pass.
///
/// For each row of `points` this computes g = grad of the scalar network
/// output with respect to its input and the two-sided penalty
/// (||g||_2 - 1)^2. Rows whose gradient norm is exactly zero switch to the
/// one-sided form ||g||_2^2, avoiding the square root's kink at zero.
/// Returns the mean penalty and its gradient with respect to parameters.
pub fn grad_input_penalty_batch(net: &Mlp, points: &Arr) -> (f64, Vec<Arr>) {
    let mut t = Tape::new();
    let vars = net.vars(&mut t);
    let (penalty, _) = grad_input_penalty_on(&mut t, net, &vars, points);
    let grads = grad_params(&mut t, penalty, &vars);
    (t.scalar_value(penalty), grads)
}

/// Tape-level version: builds the mean penalty node from registered
/// parameters so it can be combined with other loss terms. Also returns the
/// per-row squared-norm node for diagnostics.
pub fn grad_input_penalty_on(
    t: &mut Tape,
    net: &Mlp,
    vars: &MlpVars,
    points: &Arr,
) -> (Var, Var) {
    assert_eq!(net.output_dim(), 1, "penalty needs a scalar-output network");
    let x = t.leaf(points.clone());
    let out = net.forward_var(t, vars, x);
    let total = t.sum_all(out);
    // rows are independent, so the input gradient of the summed output is
    // the per-row gradient
    let g = t.backward(total, &[x])[0];
    let g2 = t.square(g);
    let norm_sq = t.sum_axis1(g2);

    let m = points.nrows();
    let mut mask_zero = Arr::zeros((m, 1));
    for i in 0..m {
        if t.value(norm_sq)[(i, 0)] == 0.0 {
            mask_zero[(i, 0)] = 1.0;
        }
    }
    let mask_pos_arr = mask_zero.mapv(|z| 1.0 - z);
    let mask_zero_c = t.constant(mask_zero);
    let mask_pos = t.constant(mask_pos_arr);

    // guard: add the zero mask inside the sqrt so fully dead rows see
    // sqrt(1) with a finite derivative, then mask the branch away
    let guarded = t.add(norm_sq, mask_zero_c);
    let norm = t.sqrt(guarded);
    let shifted = t.offset(norm, -1.0);
    let two_sided = t.square(shifted);
    let pos_part = t.mul(mask_pos, two_sided);
    let zero_part = t.mul(mask_zero_c, norm_sq);
    let per_row = t.add(pos_part, zero_part);
    let penalty = t.mean_all(per_row);
    (penalty, norm_sq)
}

/// Single-point convenience wrapper.
pub fn grad_input_penalty(net: &Mlp, point: &[f64]) -> (f64, Vec<Arr>) {
    let p = Array2::from_shape_vec((1, point.len()), point.to_vec()).unwrap();
    grad_input_penalty_batch(net, &p)
}
