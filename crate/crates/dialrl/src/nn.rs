//! Dense feed-forward networks on flat `f64` parameter vectors.
//!
//! Two head types cover every model in the crate: a softmax head for
//! stochastic policies (its pre-softmax logits double as Q-values for the
//! value-based baseline) and a scalar head for state-value functions.
//! All gradients are exact analytic backpropagation; there is no autodiff.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Result};

/// Output head of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    /// Probability distribution over `actions` discrete actions.
    Softmax { actions: usize },
    /// Single real-valued output.
    Scalar,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derive(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Immutable architecture description. Layer `l` maps `dims[l]` inputs to
/// `dims[l+1]` outputs through weights stored row-major by output unit,
/// followed by the biases of that layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output: OutputHead,
    pub activation: Activation,
    pub init_seed: u64,
}

impl NetworkSpec {
    /// Policy network with the default two hidden layers of 130 and 50 units.
    pub fn policy(input_dim: usize, actions: usize, init_seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![130, 50],
            output: OutputHead::Softmax { actions },
            activation: Activation::Relu,
            init_seed,
        }
    }

    /// Value network with the default two hidden layers of 130 and 50 units.
    pub fn value(input_dim: usize, init_seed: u64) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![130, 50],
            output: OutputHead::Scalar,
            activation: Activation::Relu,
            init_seed,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.output {
            OutputHead::Softmax { actions } => actions,
            OutputHead::Scalar => 1,
        }
    }

    /// Layer widths from input to output, e.g. `[37, 130, 50, 14]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim());
        dims
    }

    /// Total parameter count: Σ (fan_in + 1) · fan_out over layers.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Flat-vector extents of each layer's weight and bias blocks.
    pub fn layer_offsets(&self) -> Vec<LayerOffsets> {
        let dims = self.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut pos = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = pos..pos + fan_in * fan_out;
            pos += fan_in * fan_out;
            let biases = pos..pos + fan_out;
            pos += fan_out;
            offsets.push(LayerOffsets {
                fan_in,
                fan_out,
                weights,
                biases,
            });
        }
        offsets
    }

    /// True when two specs describe the same function shape (the init seed
    /// may differ).
    pub fn same_architecture(&self, other: &NetworkSpec) -> bool {
        self.input_dim == other.input_dim
            && self.hidden_dims == other.hidden_dims
            && self.output == other.output
            && self.activation == other.activation
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidSpec(
                "hidden layer widths must be positive".into(),
            ));
        }
        if self.output_dim() == 0 {
            return Err(Error::InvalidSpec("output dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Extent of one layer inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct LayerOffsets {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: std::ops::Range<usize>,
    pub biases: std::ops::Range<usize>,
}

impl LayerOffsets {
    /// Index of weight (out_unit `j`, in_unit `i`) in the flat vector.
    #[inline]
    pub fn weight(&self, j: usize, i: usize) -> usize {
        self.weights.start + j * self.fan_in + i
    }

    /// Index of the bias of out_unit `j`.
    #[inline]
    pub fn bias(&self, j: usize) -> usize {
        self.biases.start + j
    }
}

/// A network: spec plus flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    spec: NetworkSpec,
    values: Vec<f64>,
}

/// Gradient with the same layout as the parameter vector it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += c · other
    pub fn add_scaled(&mut self, other: &Gradient, c: f64) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Cached activations from a forward pass, retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer inputs: `activations[0]` is the network input, `activations[l]`
    /// the post-nonlinearity output of layer `l-1`.
    activations: Vec<Vec<f64>>,
    /// Pre-activations per layer (the final entry holds the output logits
    /// or the raw scalar).
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Output-layer pre-activations (softmax logits / raw scalar).
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("trace has at least one layer")
    }
}

/// Softmax probabilities and the trace that produced them.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub probs: Vec<f64>,
    pub trace: ForwardTrace,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl NetworkParams {
    /// Initialize a network: weights uniform in ±√(6/(fan_in+fan_out)),
    /// biases zero, deterministic in `spec.init_seed`.
    pub fn init(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = crate::rng::stream_rng(spec.init_seed, 0x6e65_7473);
        let mut values = vec![0.0; spec.param_count()];
        for layer in spec.layer_offsets() {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for idx in layer.weights.clone() {
                values[idx] = rng.gen_range(-bound..=bound);
            }
            // bias block stays zero
        }
        Ok(NetworkParams { spec, values })
    }

    /// Wrap an existing flat vector (length must match the spec).
    pub fn from_values(spec: NetworkSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_count() {
            return Err(Error::DimMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        Ok(NetworkParams { spec, values })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(Error::DimMismatch {
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass retaining all activations.
    fn forward_trace(&self, input: &[f64]) -> ForwardTrace {
        let offsets = self.spec.layer_offsets();
        let n_layers = offsets.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        activations.push(input.to_vec());
        for (l, layer) in offsets.iter().enumerate() {
            let x = &activations[l];
            let mut z = vec![0.0; layer.fan_out];
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &self.values[layer.weights.start + j * layer.fan_in
                    ..layer.weights.start + (j + 1) * layer.fan_in];
                let mut acc = self.values[layer.bias(j)];
                for (w, xi) in row.iter().zip(x.iter()) {
                    acc += w * xi;
                }
                *zj = acc;
            }
            let is_output = l == n_layers - 1;
            if is_output {
                pre.push(z);
                activations.push(Vec::new()); // output nonlinearity handled by head
            } else {
                let a: Vec<f64> = z.iter().map(|&v| self.spec.activation.apply(v)).collect();
                pre.push(z);
                activations.push(a);
            }
        }
        ForwardTrace { activations, pre }
    }

    /// Backpropagate `out_grad` (gradient w.r.t. output pre-activations)
    /// through a cached trace, producing a full parameter gradient.
    fn backprop(&self, trace: &ForwardTrace, out_grad: &[f64]) -> Gradient {
        let offsets = self.spec.layer_offsets();
        let mut grad = Gradient::zeros(self.values.len());
        let mut delta = out_grad.to_vec();
        for (l, layer) in offsets.iter().enumerate().rev() {
            let x = &trace.activations[l];
            // accumulate weight and bias gradients
            for (j, &dj) in delta.iter().enumerate() {
                let row = &mut grad.values[layer.weights.start + j * layer.fan_in
                    ..layer.weights.start + (j + 1) * layer.fan_in];
                for (g, xi) in row.iter_mut().zip(x.iter()) {
                    *g += dj * xi;
                }
                grad.values[layer.bias(j)] += dj;
            }
            if l == 0 {
                break;
            }
            // propagate to previous layer through Wᵀ and the nonlinearity
            let prev_pre = &trace.pre[l - 1];
            let mut prev_delta = vec![0.0; layer.fan_in];
            for (j, &dj) in delta.iter().enumerate() {
                let row = &self.values[layer.weights.start + j * layer.fan_in
                    ..layer.weights.start + (j + 1) * layer.fan_in];
                for (pd, w) in prev_delta.iter_mut().zip(row.iter()) {
                    *pd += dj * w;
                }
            }
            for (pd, &z) in prev_delta.iter_mut().zip(prev_pre.iter()) {
                *pd *= self.spec.activation.derive(z);
            }
            delta = prev_delta;
        }
        grad
    }

    /// Action distribution π(·|b) with cached trace. Softmax head only.
    pub fn policy_forward(&self, belief: &[f64]) -> Result<PolicyEval> {
        match self.spec.output {
            OutputHead::Softmax { .. } => {}
            OutputHead::Scalar => {
                return Err(Error::InvalidSpec(
                    "policy_forward requires a softmax head".into(),
                ))
            }
        }
        self.check_input(belief)?;
        let trace = self.forward_trace(belief);
        let probs = softmax(trace.logits());
        Ok(PolicyEval { probs, trace })
    }

    /// State value V(b). Scalar head only.
    pub fn value_forward(&self, belief: &[f64]) -> Result<f64> {
        Ok(self.value_forward_traced(belief)?.0)
    }

    /// State value plus trace for backprop.
    pub fn value_forward_traced(&self, belief: &[f64]) -> Result<(f64, ForwardTrace)> {
        match self.spec.output {
            OutputHead::Scalar => {}
            OutputHead::Softmax { .. } => {
                return Err(Error::InvalidSpec(
                    "value_forward requires a scalar head".into(),
                ))
            }
        }
        self.check_input(belief)?;
        let trace = self.forward_trace(belief);
        let v = trace.logits()[0];
        Ok((v, trace))
    }

    /// Raw output-layer activations of a softmax-head network, read as
    /// action values Q(b,·).
    pub fn q_forward(&self, belief: &[f64]) -> Result<Vec<f64>> {
        Ok(self.q_forward_traced(belief)?.0)
    }

    pub fn q_forward_traced(&self, belief: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        match self.spec.output {
            OutputHead::Softmax { .. } => {}
            OutputHead::Scalar => {
                return Err(Error::InvalidSpec(
                    "q_forward requires a vector output head".into(),
                ))
            }
        }
        self.check_input(belief)?;
        let trace = self.forward_trace(belief);
        Ok((trace.logits().to_vec(), trace))
    }

    /// ∇_θ log π_θ(a|b).
    pub fn grad_log_prob(&self, belief: &[f64], action: usize) -> Result<Gradient> {
        let eval = self.policy_forward(belief)?;
        self.grad_log_prob_traced(&eval, action)
    }

    /// ∇_θ log π_θ(a|b) from a cached evaluation.
    pub fn grad_log_prob_traced(&self, eval: &PolicyEval, action: usize) -> Result<Gradient> {
        let n = eval.probs.len();
        if action >= n {
            return Err(Error::ActionOutOfRange { action, count: n });
        }
        // d log π_a / d z_j = 1[j=a] − π_j
        let mut dz: Vec<f64> = eval.probs.iter().map(|&p| -p).collect();
        dz[action] += 1.0;
        Ok(self.backprop(&eval.trace, &dz))
    }

    /// ∇_w V_w(b).
    pub fn grad_scalar_output(&self, belief: &[f64]) -> Result<Gradient> {
        let (_, trace) = self.value_forward_traced(belief)?;
        Ok(self.grad_scalar_output_traced(&trace))
    }

    pub fn grad_scalar_output_traced(&self, trace: &ForwardTrace) -> Gradient {
        self.backprop(trace, &[1.0])
    }

    /// ∇_θ of output unit `action` (a single Q-value).
    pub fn grad_logit_traced(&self, trace: &ForwardTrace, action: usize) -> Result<Gradient> {
        let n = trace.logits().len();
        if action >= n {
            return Err(Error::ActionOutOfRange { action, count: n });
        }
        let mut dz = vec![0.0; n];
        dz[action] = 1.0;
        Ok(self.backprop(trace, &dz))
    }

    /// Backpropagate an arbitrary gradient w.r.t. the output logits.
    /// Shared by the cross-entropy and KL losses.
    pub(crate) fn backprop_logits(&self, trace: &ForwardTrace, dz: &[f64]) -> Gradient {
        self.backprop(trace, dz)
    }
}

/// Mean KL divergence D_KL(π_avg(b) ‖ π_cur(b)) over a belief batch and its
/// gradient w.r.t. the current network's parameters, the average network
/// held constant.
pub fn kl_and_grad(
    avg: &NetworkParams,
    cur: &NetworkParams,
    beliefs: &[Vec<f64>],
) -> Result<(f64, Gradient)> {
    if !avg.spec().same_architecture(cur.spec()) {
        return Err(Error::SpecMismatch);
    }
    let mut kl_sum = 0.0;
    let mut grad = Gradient::zeros(cur.len());
    let n = beliefs.len().max(1) as f64;
    for b in beliefs {
        let pa = avg.policy_forward(b)?;
        let pc = cur.policy_forward(b)?;
        let mut kl = 0.0;
        for (p, q) in pa.probs.iter().zip(&pc.probs) {
            if *p > 0.0 {
                kl += p * (p.ln() - q.ln());
            }
        }
        kl_sum += kl;
        // d KL / d z_j of the current net = π_cur(j) − π_avg(j)
        let dz: Vec<f64> = pc
            .probs
            .iter()
            .zip(&pa.probs)
            .map(|(q, p)| (q - p) / n)
            .collect();
        let g = cur.backprop_logits(&pc.trace, &dz);
        grad.add_scaled(&g, 1.0);
    }
    Ok((kl_sum / n, grad))
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update. With `maximize` the gradient is negated, giving
    /// ascent on the objective it came from. Non-finite gradients are
    /// rejected and the parameters left untouched.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        grad: &Gradient,
        maximize: bool,
    ) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::DimMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.t += 1;
        let sign = if maximize { -1.0 } else { 1.0 };
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grad.len() {
            let g = sign * grad.values[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params.values_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Versioned checkpoint container: spec plus flat vector, exact round trip.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    spec: NetworkSpec,
    values: Vec<f64>,
}

pub fn save_checkpoint<P: AsRef<Path>>(params: &NetworkParams, path: P) -> Result<()> {
    let ckpt = Checkpoint {
        version: 1,
        spec: params.spec().clone(),
        values: params.values().to_vec(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<NetworkParams> {
    let file = std::fs::File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if ckpt.version != 1 {
        return Err(Error::InvalidSpec(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    NetworkParams::from_values(ckpt.spec, ckpt.values)
}
