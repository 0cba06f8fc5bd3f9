//! Forward model mapping an action to its predicted behavior and quality.
//!
//! A single fully connected network with one ReLU hidden layer and a tanh
//! output layer, trained online with Adam on mini-batches drawn from the
//! repertoire. Outputs live in a normalized `[-1, 1]` space: the first `m`
//! components are the behavior coordinates rescaled from the task bounds,
//! the last one is quality rescaled from the repertoire's quality range.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Behavior, Rect};
use crate::error::{Error, Result};
use crate::repertoire::Repertoire;

pub const BEHAVIOR_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub batches_per_generation: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Step of the forward-difference Jacobian.
    pub fd_step: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_units: 32,
            learning_rate: 1e-3,
            batch_size: 16,
            batches_per_generation: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            fd_step: 1e-4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units < 1 {
            return Err(Error::Config("hidden_units must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// One-hidden-layer network. Parameters are stored flat as
/// `[w1 (hidden x inputs) | b1 | w2 (outputs x hidden) | b2]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateNet {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Activations {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl SurrogateNet {
    pub fn param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + outputs * hidden + outputs
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        SurrogateNet {
            inputs,
            hidden,
            outputs,
            params: vec![0.0; Self::param_count(inputs, hidden, outputs)],
        }
    }

    /// Every weight and bias uniform in `±1/sqrt(fan_in)` of its layer.
    pub fn random<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(inputs, hidden, outputs);
        let a1 = 1.0 / (inputs as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let split = hidden * inputs + hidden;
        for (i, p) in net.params.iter_mut().enumerate() {
            let a = if i < split { a1 } else { a2 };
            *p = rng.random_range(-a..=a);
        }
        net
    }

    pub fn from_parts(w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>, inputs: usize) -> Result<Self> {
        let hidden = b1.len();
        let outputs = b2.len();
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Format(format!("{what} has {got} entries, expected {want}")))
            }
        };
        check("w1", w1.len(), hidden * inputs)?;
        check("w2", w2.len(), outputs * hidden)?;
        let mut params = w1;
        params.extend(b1);
        params.extend(w2);
        params.extend(b2);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite network weight".into()));
        }
        Ok(SurrogateNet {
            inputs,
            hidden,
            outputs,
            params,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, _, _] = self.offsets();
        &self.params[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.offsets();
        &self.params[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.offsets();
        &self.params[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [_, _, _, b2] = self.offsets();
        &self.params[b2..]
    }

    pub fn scale_output_weights(&mut self, factor: f64) {
        let [_, _, w2, b2] = self.offsets();
        for p in &mut self.params[w2..b2] {
            *p *= factor;
        }
    }

    pub fn activations(&self, x: &[f64]) -> Result<Activations> {
        if x.len() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                actual: x.len(),
            });
        }
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let pre_hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &w1[h * self.inputs..(h + 1) * self.inputs];
                b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = pre_hidden.iter().map(|&z| z.max(0.0)).collect();
        let output = (0..self.outputs)
            .map(|o| {
                let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                (b2[o] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        Ok(Activations {
            pre_hidden,
            hidden,
            output,
        })
    }

    /// `tanh(W2 relu(W1 x + b1) + b2)`; every component lies in `(-1, 1)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.output)
    }

    /// Adds the gradient of `scale * sum((y - target)^2)` for one sample to
    /// `grad` and returns the unscaled squared error.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64> {
        if target.len() != self.outputs {
            return Err(Error::DimensionMismatch {
                expected: self.outputs,
                actual: target.len(),
            });
        }
        let act = self.activations(x)?;
        let [gw1, gb1, gw2, gb2] = self.offsets();
        let w2 = self.w2();
        let mut sq = 0.0;
        let mut d_hidden = vec![0.0; self.hidden];
        for o in 0..self.outputs {
            let y = act.output[o];
            let err = y - target[o];
            sq += err * err;
            let dz = scale * 2.0 * err * (1.0 - y * y);
            grad[gb2 + o] += dz;
            let row = gw2 + o * self.hidden;
            for h in 0..self.hidden {
                grad[row + h] += dz * act.hidden[h];
                d_hidden[h] += dz * w2[o * self.hidden + h];
            }
        }
        for h in 0..self.hidden {
            if act.pre_hidden[h] <= 0.0 {
                continue;
            }
            let dz = d_hidden[h];
            grad[gb1 + h] += dz;
            let row = gw1 + h * self.inputs;
            for (i, xi) in x.iter().enumerate() {
                grad[row + i] += dz * xi;
            }
        }
        Ok(sq)
    }

    /// Mean squared error over samples and output dimensions.
    pub fn mse(&self, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, t) in data {
            let y = self.forward(x)?;
            total += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total / (data.len() * self.outputs) as f64)
    }

    /// Gradient of [`SurrogateNet::mse`] over `data`, plus the loss itself.
    pub fn mse_gradient(&self, data: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / (data.len() * self.outputs) as f64;
        let mut total = 0.0;
        for (x, t) in data {
            total += self.accumulate_gradient(x, t, scale, &mut grad)?;
        }
        Ok((total * scale, grad))
    }
}

/// Bias-corrected first and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: usize) -> Self {
        AdamState {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &ModelConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let t = self.t as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Affine maps between task units and the network's `[-1, 1]` outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub behavior_bounds: Rect,
    pub quality_min: f64,
    pub quality_max: f64,
}

impl Normalizer {
    pub fn new(behavior_bounds: Rect) -> Self {
        Normalizer {
            behavior_bounds,
            quality_min: 0.0,
            quality_max: 1.0,
        }
    }

    fn to_unit(v: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            2.0 * (v - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    fn from_unit(u: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            lo + (u + 1.0) * 0.5 * (hi - lo)
        } else {
            lo
        }
    }

    pub fn behavior_scale(&self, axis: usize) -> f64 {
        0.5 * (self.behavior_bounds.max[axis] - self.behavior_bounds.min[axis])
    }

    pub fn normalize_behavior(&self, b: &Behavior) -> [f64; 2] {
        let r = &self.behavior_bounds;
        [
            Self::to_unit(b.x(), r.min[0], r.max[0]),
            Self::to_unit(b.y(), r.min[1], r.max[1]),
        ]
    }

    pub fn denormalize_behavior(&self, u: &[f64]) -> Behavior {
        let r = &self.behavior_bounds;
        Behavior::new(
            Self::from_unit(u[0], r.min[0], r.max[0]),
            Self::from_unit(u[1], r.min[1], r.max[1]),
        )
    }

    pub fn normalize_quality(&self, q: f64) -> f64 {
        Self::to_unit(q, self.quality_min, self.quality_max)
    }

    pub fn denormalize_quality(&self, u: f64) -> f64 {
        Self::from_unit(u, self.quality_min, self.quality_max)
    }

    /// Resets the quality range to the repertoire's current min and max.
    pub fn refresh_quality(&mut self, rep: &Repertoire) {
        let (lo, hi) = rep.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.quality), hi.max(s.quality))
        });
        if lo.is_finite() {
            self.quality_min = lo;
            self.quality_max = hi;
        }
    }

    /// Network target for a skill: normalized behavior then quality.
    pub fn target(&self, b: &Behavior, q: f64) -> [f64; 3] {
        let nb = self.normalize_behavior(b);
        [nb[0], nb[1], self.normalize_quality(q)]
    }
}

/// The forward model together with its optimizer state and output scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub net: SurrogateNet,
    pub adam: AdamState,
    pub norm: Normalizer,
}

impl Surrogate {
    pub fn new<R: Rng + ?Sized>(action_dim: usize, bounds: Rect, cfg: &ModelConfig, rng: &mut R) -> Self {
        let net = SurrogateNet::random(action_dim, cfg.hidden_units, BEHAVIOR_DIM + 1, rng);
        let adam = AdamState::new(net.params.len());
        Surrogate {
            net,
            adam,
            norm: Normalizer::new(bounds),
        }
    }

    pub fn from_net(net: SurrogateNet, norm: Normalizer) -> Self {
        let adam = AdamState::new(net.params.len());
        Surrogate { net, adam, norm }
    }

    /// Predicted behavior and quality in task units.
    pub fn predict(&self, action: &Action) -> Result<(Behavior, f64)> {
        let y = self.net.forward(action.genes())?;
        Ok((
            self.norm.denormalize_behavior(&y[..BEHAVIOR_DIM]),
            self.norm.denormalize_quality(y[BEHAVIOR_DIM]),
        ))
    }

    /// Runs one generation's training schedule; see [`train`].
    pub fn train<R: Rng + ?Sized>(&mut self, rep: &Repertoire, cfg: &ModelConfig, rng: &mut R) -> Result<f64> {
        train(&mut self.net, &mut self.adam, rep, &mut self.norm, cfg, rng)
    }

    pub fn jacobian(&self, action: &Action) -> Result<Jacobian> {
        jacobian_analytic(&self.net, action, &self.norm)
    }
}

/// `batches_per_generation` Adam steps on the MSE between the network's
/// outputs and the normalized (behavior, quality) of skills drawn uniformly
/// with replacement. Returns the mean pre-step batch loss.
pub fn train<R: Rng + ?Sized>(
    net: &mut SurrogateNet,
    adam: &mut AdamState,
    rep: &Repertoire,
    norm: &mut Normalizer,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<f64> {
    if rep.is_empty() {
        return Err(Error::EmptyRepertoire);
    }
    norm.refresh_quality(rep);
    let skills = rep.skills();
    let scale = 1.0 / (cfg.batch_size * net.outputs) as f64;
    let mut grad = vec![0.0; net.params.len()];
    let mut total = 0.0;
    for _ in 0..cfg.batches_per_generation {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let s = &skills[rng.random_range(0..skills.len())];
            let target = norm.target(&s.behavior, s.quality);
            loss += net.accumulate_gradient(s.action.genes(), &target, scale, &mut grad)?;
        }
        total += loss * scale;
        adam.step(&mut net.params, &grad, cfg);
    }
    Ok(total / cfg.batches_per_generation.max(1) as f64)
}

/// Mean distance from a predicted behavior to the `K` repertoire behaviors
/// nearest to it.
pub fn predicted_novelty(rep: &Repertoire, predicted: &Behavior) -> Result<f64> {
    rep.novelty(predicted)
}

/// Mean of `predicted_quality - q_nn` over the `K` skills nearest to the
/// predicted behavior.
pub fn predicted_quality_improvement(rep: &Repertoire, predicted_quality: f64, predicted: &Behavior) -> Result<f64> {
    let nn = rep.knn(predicted, rep.k())?;
    Ok(nn.iter().map(|s| predicted_quality - s.quality).sum::<f64>() / nn.len() as f64)
}

/// Behavior-by-action derivative matrix, `rows x cols` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Jacobian {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_matrix(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut j = Jacobian::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                j.set(r, c, m[(r, c)]);
            }
        }
        j
    }
}

/// Exact derivative of the denormalized behavior prediction with respect to
/// the action. The ReLU derivative at exactly 0 is taken as 0.
pub fn jacobian_analytic(net: &SurrogateNet, action: &Action, norm: &Normalizer) -> Result<Jacobian> {
    let act = net.activations(action.genes())?;
    let (n, hid) = (net.inputs, net.hidden);
    let (w1, w2) = (net.w1(), net.w2());
    let mut jac = Jacobian::zeros(BEHAVIOR_DIM, n);
    for o in 0..BEHAVIOR_DIM {
        let y = act.output[o];
        let outer = norm.behavior_scale(o) * (1.0 - y * y);
        for h in 0..hid {
            if act.pre_hidden[h] <= 0.0 {
                continue;
            }
            let g = outer * w2[o * hid + h];
            for j in 0..n {
                jac.data[o * n + j] += g * w1[h * n + j];
            }
        }
    }
    Ok(jac)
}

/// Forward-difference estimate `(phi(a + h e_j) - phi(a)) / h` of the
/// denormalized behavior Jacobian.
pub fn jacobian_fd(net: &SurrogateNet, action: &Action, norm: &Normalizer, h: f64) -> Result<Jacobian> {
    if !(h > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let base = net.forward(action.genes())?;
    let b0 = norm.denormalize_behavior(&base);
    let n = net.inputs;
    let mut jac = Jacobian::zeros(BEHAVIOR_DIM, n);
    let mut x = action.genes().to_vec();
    for j in 0..n {
        let keep = x[j];
        x[j] = keep + h;
        let b = norm.denormalize_behavior(&net.forward(&x)?);
        x[j] = keep;
        jac.set(0, j, (b.x() - b0.x()) / h);
        jac.set(1, j, (b.y() - b0.y()) / h);
    }
    Ok(jac)
}
