//! A fully-connected layer whose weights are gated by per-weight variational
//! parameters: the effective weight is `(μ + ε ⊙ σ) ⊙ W` with `ε ~ N(0, I)`.
//!
//! σ is stored as `log σ`, so positivity holds by construction. One ε matrix is
//! drawn per forward call and shared across the batch. Layers carry no bias.

use serde::{Deserialize, Serialize};

use crate::error::{IbmError, Result};
use crate::tensor::{gaussian_sample, Matrix, SeededRng};

pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;

/// Initialization distribution of the variational parameters.
pub const INIT_MU_MEAN: f64 = 1.0;
pub const INIT_MU_STDDEV: f64 = 0.1;
pub const INIT_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// How ε is realized when re-creating a stored sub-network.
pub enum NoiseMode<'a> {
    /// ε = 0: deterministic mean weights.
    Zero,
    Sample(&'a mut SeededRng),
}

/// Frozen variational parameters of one layer, as stored per task.
#[derive(Clone, Debug, PartialEq)]
pub struct VaParams {
    pub mu: Matrix,
    pub log_sigma: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VibLayer {
    pub weight: Matrix,
    pub mu: Matrix,
    pub log_sigma: Matrix,
    pub gamma: f64,
    pub activation: Activation,
}

/// What `backward` needs from the matching forward call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub eps: Matrix,
    pub h_prev: Matrix,
    pub z: Matrix,
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub mu: Matrix,
    pub log_sigma: Matrix,
}

impl LayerGrads {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Matrix::zeros(out, inp),
            mu: Matrix::zeros(out, inp),
            log_sigma: Matrix::zeros(out, inp),
        }
    }
}

impl VibLayer {
    pub fn new(
        weight: Matrix,
        mu: Matrix,
        log_sigma: Matrix,
        gamma: f64,
        activation: Activation,
    ) -> Result<Self> {
        mu.ensure_shape("VibLayer mu", weight.shape())?;
        log_sigma.ensure_shape("VibLayer log_sigma", weight.shape())?;
        if gamma.is_nan() || gamma < 0.0 {
            return Err(IbmError::Config(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self {
            weight,
            mu,
            log_sigma,
            gamma,
            activation,
        })
    }

    /// W ~ N(0, 1/fan_in), μ ~ N(1, 0.1²), σ = 0.1.
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        gamma: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = gaussian_sample(rng, outputs, inputs, 0.0, 1.0 / (inputs as f64).sqrt())
            .expect("positive stddev");
        let (mu, log_sigma) = init_va_params(outputs, inputs, rng);
        Self {
            weight,
            mu,
            log_sigma,
            gamma,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weight.shape()
    }

    pub fn sigma(&self) -> Matrix {
        self.log_sigma.map(f64::exp)
    }

    pub fn va_params(&self) -> VaParams {
        VaParams {
            mu: self.mu.clone(),
            log_sigma: self.log_sigma.clone(),
        }
    }

    pub fn clamp_log_sigma(&mut self) {
        for v in self.log_sigma.data_mut() {
            *v = v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        }
    }

    fn check_input(&self, h_prev: &Matrix) -> Result<()> {
        if h_prev.cols() != self.inputs() {
            return Err(IbmError::ShapeMismatch {
                context: "layer input",
                expected: (h_prev.rows(), self.inputs()),
                found: h_prev.shape(),
            });
        }
        Ok(())
    }

    /// Reparameterized forward pass with a fresh ε.
    pub fn forward_reparam(
        &self,
        h_prev: &Matrix,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, ForwardCache)> {
        let eps = gaussian_sample(rng, self.outputs(), self.inputs(), 0.0, 1.0)?;
        self.forward_with_eps(h_prev, eps)
    }

    /// Reparameterized forward pass with a caller-supplied ε.
    pub fn forward_with_eps(&self, h_prev: &Matrix, eps: Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(h_prev)?;
        eps.ensure_shape("forward eps", self.shape())?;
        let w_eff = self.effective_weight(&self.mu, &self.log_sigma, Some(&eps), None);
        let z = h_prev.matmul_nt(&w_eff)?;
        let h = z.map(|v| self.activation.apply(v));
        Ok((
            h,
            ForwardCache {
                eps,
                h_prev: h_prev.clone(),
                z,
            },
        ))
    }

    /// Re-creates the hidden representation of a stored sub-network:
    /// `T = (μ_snap + ε ⊙ σ_snap) ⊙ M`, `h = f(h_prev · (T ⊙ W)ᵀ)`.
    pub fn masked_forward(
        &self,
        mask: &Matrix,
        h_prev: &Matrix,
        snapshot: &VaParams,
        noise: NoiseMode<'_>,
    ) -> Result<Matrix> {
        self.check_input(h_prev)?;
        mask.ensure_shape("masked_forward mask", self.shape())?;
        snapshot.mu.ensure_shape("masked_forward mu snapshot", self.shape())?;
        snapshot
            .log_sigma
            .ensure_shape("masked_forward log_sigma snapshot", self.shape())?;
        let eps = match noise {
            NoiseMode::Zero => None,
            NoiseMode::Sample(rng) => {
                Some(gaussian_sample(rng, self.outputs(), self.inputs(), 0.0, 1.0)?)
            }
        };
        let w_eff = self.effective_weight(&snapshot.mu, &snapshot.log_sigma, eps.as_ref(), Some(mask));
        let z = h_prev.matmul_nt(&w_eff)?;
        Ok(z.map(|v| self.activation.apply(v)))
    }

    /// `(μ + ε ⊙ σ) [⊙ M] ⊙ W`; a missing ε means ε = 0.
    fn effective_weight(
        &self,
        mu: &Matrix,
        log_sigma: &Matrix,
        eps: Option<&Matrix>,
        mask: Option<&Matrix>,
    ) -> Matrix {
        let mut out = self.weight.clone();
        let data = out.data_mut();
        for (i, w) in data.iter_mut().enumerate() {
            let mut gate = mu.data()[i];
            if let Some(eps) = eps {
                gate += eps.data()[i] * log_sigma.data()[i].exp();
            }
            if let Some(mask) = mask {
                gate *= mask.data()[i];
            }
            *w *= gate;
        }
        out
    }

    /// Gradients of a downstream scalar with respect to W, μ, log σ and the layer input,
    /// using the ε realized in the forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_h: &Matrix) -> Result<(LayerGrads, Matrix)> {
        if cache.eps.shape() != self.shape() {
            return Err(IbmError::StaleCache(format!(
                "eps is {:?}, layer is {:?}",
                cache.eps.shape(),
                self.shape()
            )));
        }
        if cache.h_prev.cols() != self.inputs()
            || cache.z.cols() != self.outputs()
            || cache.z.rows() != cache.h_prev.rows()
        {
            return Err(IbmError::StaleCache(format!(
                "cached input {:?} / pre-activation {:?} do not fit layer {:?}",
                cache.h_prev.shape(),
                cache.z.shape(),
                self.shape()
            )));
        }
        grad_h.ensure_shape("backward grad_h", cache.z.shape())?;

        let grad_z = cache
            .z
            .zip_map(grad_h, |z, g| g * self.activation.derivative(z))?;
        let grad_w_eff = grad_z.matmul_tn(&cache.h_prev)?;

        let n = self.weight.len();
        let (mut gw, mut gmu, mut gls) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut w_eff = self.weight.clone();
        for i in 0..n {
            let w = self.weight.data()[i];
            let sigma = self.log_sigma.data()[i].exp();
            let eps = cache.eps.data()[i];
            let gate = self.mu.data()[i] + eps * sigma;
            let g = grad_w_eff.data()[i];
            gw[i] = g * gate;
            gmu[i] = g * w;
            gls[i] = g * w * eps * sigma;
            w_eff.data_mut()[i] = gate * w;
        }
        let grad_h_prev = grad_z.matmul(&w_eff)?;
        let (out, inp) = self.shape();
        Ok((
            LayerGrads {
                weight: Matrix::new(out, inp, gw)?,
                mu: Matrix::new(out, inp, gmu)?,
                log_sigma: Matrix::new(out, inp, gls)?,
            },
            grad_h_prev,
        ))
    }

    /// `γ · Σ log(1 + μ²/σ²)`
    pub fn kl_regularizer(&self) -> f64 {
        if self.gamma == 0.0 {
            return 0.0;
        }
        let total: f64 = self
            .mu
            .data()
            .iter()
            .zip(self.log_sigma.data())
            .map(|(&mu, &ls)| (mu * mu * (-2.0 * ls).exp()).ln_1p())
            .sum();
        self.gamma * total
    }

    /// Analytic gradients of [`Self::kl_regularizer`] with respect to μ and log σ.
    pub fn kl_regularizer_grads(&self) -> (Matrix, Matrix) {
        let (out, inp) = self.shape();
        let mut gmu = Matrix::zeros(out, inp);
        let mut gls = Matrix::zeros(out, inp);
        if self.gamma == 0.0 {
            return (gmu, gls);
        }
        for i in 0..self.mu.len() {
            let mu = self.mu.data()[i];
            let var = (2.0 * self.log_sigma.data()[i]).exp();
            let denom = var + mu * mu;
            gmu.data_mut()[i] = self.gamma * 2.0 * mu / denom;
            gls.data_mut()[i] = -self.gamma * 2.0 * mu * mu / denom;
        }
        (gmu, gls)
    }
}

/// Draws μ ~ N(1, 0.1²) and sets σ = 0.1.
pub fn init_va_params(outputs: usize, inputs: usize, rng: &mut SeededRng) -> (Matrix, Matrix) {
    let mu = gaussian_sample(rng, outputs, inputs, INIT_MU_MEAN, INIT_MU_STDDEV)
        .expect("positive stddev");
    let log_sigma = Matrix::filled(outputs, inputs, INIT_SIGMA.ln());
    (mu, log_sigma)
}
