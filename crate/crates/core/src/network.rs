//! Stack of variational layers with one private linear head per task.
//!
//! The objective is `Σ_l γ_l Σ log(1 + μ²/σ²) + L_scale · CE`, with CE the mean
//! cross-entropy of the task head over the batch. Weight gradients are masked by
//! `1 − M_all` before the Adam update, and the Adam moments at frozen positions are
//! held at zero so frozen weights stay bit-identical across any number of steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};
use crate::mask::{freeze_gradients, CumulativeMask, TaskArtifact};
use crate::tensor::{gaussian_sample, Matrix, SeededRng};
use crate::vib::{Activation, ForwardCache, LayerGrads, NoiseMode, VibLayer};

/// Coefficient on the data-fit term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScale {
    /// The number of maskable layers.
    #[default]
    Layers,
    One,
}

/// Task-private classifier on top of the backbone: `logits = h · Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn init(width: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let weight = gaussian_sample(rng, classes, width, 0.0, 1.0 / (width as f64).sqrt())
            .expect("positive stddev");
        Self {
            weight,
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, h: &Matrix) -> Result<Matrix> {
        let mut z = h.matmul_nt(&self.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
    pub head: HeadGrads,
}

/// Everything a backward pass needs from one forward evaluation of the loss.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub caches: Vec<ForwardCache>,
    pub hidden: Matrix,
    pub probs: Matrix,
    pub loss: f64,
    pub data_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<VibLayer>,
    pub heads: BTreeMap<usize, Head>,
    pub loss_scale: LossScale,
}

impl Network {
    /// Fresh backbone `input → hidden[0] → … → hidden[L-1]`, ReLU everywhere, no heads.
    pub fn new(
        input: usize,
        hidden: &[usize],
        gamma: f64,
        loss_scale: LossScale,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if input == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(IbmError::Config(format!(
                "invalid layer widths: input {input}, hidden {hidden:?}"
            )));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for &width in hidden {
            layers.push(VibLayer::init(fan_in, width, Activation::Relu, gamma, rng));
            fan_in = width;
        }
        Ok(Self {
            layers,
            heads: BTreeMap::new(),
            loss_scale,
        })
    }

    /// Assembles a network from explicit layers, checking that adjacent shapes compose.
    pub fn from_layers(layers: Vec<VibLayer>, loss_scale: LossScale) -> Result<Self> {
        if layers.is_empty() {
            return Err(IbmError::Empty("network layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(IbmError::ShapeMismatch {
                    context: "adjacent layers",
                    expected: (pair[1].outputs(), pair[0].outputs()),
                    found: pair[1].shape(),
                });
            }
        }
        Ok(Self {
            layers,
            heads: BTreeMap::new(),
            loss_scale,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, VibLayer::outputs)
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(VibLayer::outputs))
            .collect()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(VibLayer::shape).collect()
    }

    pub fn loss_scale_value(&self) -> f64 {
        match self.loss_scale {
            LossScale::Layers => self.layers.len() as f64,
            LossScale::One => 1.0,
        }
    }

    /// Adds a freshly initialized head for `task`, replacing nothing.
    pub fn add_head(&mut self, task: usize, classes: usize, rng: &mut SeededRng) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(IbmError::DuplicateTask(task));
        }
        if classes == 0 {
            return Err(IbmError::Config("a head needs at least one class".into()));
        }
        self.heads
            .insert(task, Head::init(self.output_width(), classes, rng));
        Ok(())
    }

    pub fn head(&self, task: usize) -> Result<&Head> {
        self.heads.get(&task).ok_or(IbmError::UnknownTask(task))
    }

    pub fn set_gammas(&mut self, gammas: &[f64]) {
        for (layer, &g) in self.layers.iter_mut().zip(gammas) {
            layer.gamma = g;
        }
    }

    pub fn kl_total(&self) -> f64 {
        self.layers.iter().map(VibLayer::kl_regularizer).sum()
    }

    /// Total loss with a fresh ε per layer.
    pub fn total_loss(
        &self,
        x: &Matrix,
        y: &[usize],
        task: usize,
        rng: &mut SeededRng,
    ) -> Result<ForwardPass> {
        let eps = self
            .layers
            .iter()
            .map(|l| gaussian_sample(rng, l.outputs(), l.inputs(), 0.0, 1.0))
            .collect::<Result<Vec<_>>>()?;
        self.total_loss_with_eps(x, y, task, eps)
    }

    /// Total loss with caller-fixed ε, one matrix per layer.
    pub fn total_loss_with_eps(
        &self,
        x: &Matrix,
        y: &[usize],
        task: usize,
        eps: Vec<Matrix>,
    ) -> Result<ForwardPass> {
        if x.rows() == 0 {
            return Err(IbmError::Empty("batch"));
        }
        if y.len() != x.rows() {
            return Err(IbmError::ShapeMismatch {
                context: "labels",
                expected: (x.rows(), 1),
                found: (y.len(), 1),
            });
        }
        if eps.len() != self.layers.len() {
            return Err(IbmError::StaleCache(format!(
                "{} noise matrices for {} layers",
                eps.len(),
                self.layers.len()
            )));
        }
        let head = self.head(task)?;

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, e) in self.layers.iter().zip(eps) {
            let (next, cache) = layer.forward_with_eps(&h, e)?;
            caches.push(cache);
            h = next;
        }
        let logits = head.logits(&h)?;
        let (probs, ce) = softmax_cross_entropy(&logits, y)?;
        let data_loss = self.loss_scale_value() * ce;
        Ok(ForwardPass {
            caches,
            hidden: h,
            probs,
            loss: self.kl_total() + data_loss,
            data_loss,
        })
    }

    /// Exact gradients of the total loss for the ε realized in `pass`.
    pub fn gradients(&self, pass: &ForwardPass, y: &[usize], task: usize) -> Result<NetGrads> {
        let head = self.head(task)?;
        let batch = pass.probs.rows();
        let coef = self.loss_scale_value() / batch as f64;
        let mut grad_logits = pass.probs.clone();
        for (r, &label) in y.iter().enumerate() {
            grad_logits[(r, label)] -= 1.0;
        }
        let grad_logits = grad_logits.scale(coef);

        let head_grads = HeadGrads {
            weight: grad_logits.matmul_tn(&pass.hidden)?,
            bias: (0..head.classes())
                .map(|c| (0..batch).map(|r| grad_logits[(r, c)]).sum())
                .collect(),
        };
        let mut grad_h = grad_logits.matmul(&head.weight)?;

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(&pass.caches).rev() {
            let (mut g, grad_prev) = layer.backward(cache, &grad_h)?;
            let (kl_mu, kl_ls) = layer.kl_regularizer_grads();
            g.mu = g.mu.add(&kl_mu)?;
            g.log_sigma = g.log_sigma.add(&kl_ls)?;
            layer_grads.push(g);
            grad_h = grad_prev;
        }
        layer_grads.reverse();
        Ok(NetGrads {
            layers: layer_grads,
            head: head_grads,
        })
    }

    /// One optimizer step on a mini-batch. Weight gradients are multiplied by
    /// `1 − M_all`; μ, log σ and the task head are updated unmasked.
    pub fn train_step(
        &mut self,
        adam: &mut AdamState,
        x: &Matrix,
        y: &[usize],
        task: usize,
        frozen: &CumulativeMask,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        frozen.ensure_shapes(&self.layer_shapes())?;
        let pass = self.total_loss(x, y, task, rng)?;
        let grads = self.gradients(&pass, y, task)?;
        self.apply_gradients(adam, grads, task, frozen)?;
        Ok(pass.loss)
    }

    pub fn apply_gradients(
        &mut self,
        adam: &mut AdamState,
        grads: NetGrads,
        task: usize,
        frozen: &CumulativeMask,
    ) -> Result<()> {
        let weight_grads: Vec<Matrix> = grads.layers.iter().map(|g| g.weight.clone()).collect();
        let weight_grads = freeze_gradients(&weight_grads, frozen)?;

        adam.begin_step();
        for (l, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            adam.update(
                Slot::Weight(l),
                layer.weight.data_mut(),
                weight_grads[l].data(),
                Some(frozen.layers[l].data()),
            );
            adam.update(Slot::Mu(l), layer.mu.data_mut(), g.mu.data(), None);
            adam.update(
                Slot::LogSigma(l),
                layer.log_sigma.data_mut(),
                g.log_sigma.data(),
                None,
            );
            layer.clamp_log_sigma();
        }
        let head = self
            .heads
            .get_mut(&task)
            .ok_or(IbmError::UnknownTask(task))?;
        adam.update(
            Slot::HeadWeight,
            head.weight.data_mut(),
            grads.head.weight.data(),
            None,
        );
        adam.update(Slot::HeadBias, &mut head.bias, &grads.head.bias, None);
        Ok(())
    }

    /// Post-activation representation of every layer with ε = 0 and the current μ.
    pub fn deterministic_hidden(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let ones = Matrix::ones(layer.outputs(), layer.inputs());
            h = layer.masked_forward(&ones, &h, &layer.va_params(), NoiseMode::Zero)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Class predictions for `task` through its stored sub-network (ε = 0).
    pub fn predict(&self, x: &Matrix, task: usize, artifact: &TaskArtifact) -> Result<Vec<usize>> {
        if artifact.task_id != task {
            return Err(IbmError::UnknownTask(task));
        }
        artifact.check_against(&self.layer_shapes())?;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.masked_forward(
                &artifact.masks.layers[l],
                &h,
                &artifact.va_params[l],
                NoiseMode::Zero,
            )?;
        }
        let logits = artifact.head.logits(&h)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax and the mean cross-entropy against `labels`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(Matrix, f64)> {
    let classes = logits.cols();
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(IbmError::LabelOutOfRange { label, classes });
        }
        let row = probs.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut norm = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            norm += *v;
        }
        total += norm.ln() - (logits[(r, label)] - max);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok((probs, total / labels.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Parameter groups tracked by [`AdamState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Weight(usize),
    Mu(usize),
    LogSigma(usize),
    HeadWeight,
    HeadBias,
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<Slot, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected Adam update of one parameter group. Entries with `frozen == 1`
    /// keep zero moments and are left untouched.
    pub fn update(&mut self, slot: Slot, params: &mut [f64], grads: &[f64], frozen: Option<&[f64]>) {
        assert!(self.step > 0, "begin_step must precede update");
        assert_eq!(params.len(), grads.len());
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let m = self.moments.entry(slot).or_default();
        if m.first.len() != params.len() {
            m.first = vec![0.0; params.len()];
            m.second = vec![0.0; params.len()];
        }
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            if frozen.is_some_and(|f| f[i] != 0.0) {
                m.first[i] = 0.0;
                m.second[i] = 0.0;
                continue;
            }
            let g = grads[i];
            m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g;
            m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g * g;
            let m_hat = m.first[i] / c1;
            let v_hat = m.second[i] / c2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
