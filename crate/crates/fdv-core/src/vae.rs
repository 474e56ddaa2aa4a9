//! Variational autoencoder: encoder/decoder MLPs, the evidence-lower-bound
//! loss with hand-derived gradients, and stochastic feature extraction.
//!
//! The encoder maps a flattened normalized image through ReLU hidden layers
//! into two affine heads producing the posterior mean and log-variance; the
//! decoder mirrors the hidden stack and ends in a sigmoid so reconstructions
//! live in (0,1). Training minimizes the negative lower bound: Bernoulli
//! cross-entropy reconstruction plus the closed-form KL divergence to the
//! standard normal prior. Gradients flow through the sampling step via
//! z = mu + sigma * eps.
//!
//! A trained model is immutable and safe to share across threads; each
//! worker must own its RNG stream for feature extraction.

use crate::error::{Error, Result};
use crate::numeric::{affine_forward, relu_backward, relu_forward, DenseMatrix};
use crate::scalar::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Network geometry and loss weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    /// Flattened input length (side_h * side_w).
    pub input_dim: usize,
    /// Hidden layer widths for the encoder; the decoder mirrors them.
    pub hidden_dims: Vec<usize>,
    /// Latent dimensionality.
    pub latent_dim: usize,
    /// Weight on the KL term of the loss.
    pub kl_weight: f64,
}

impl VaeConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, latent_dim: usize) -> Self {
        VaeConfig {
            input_dim,
            hidden_dims,
            latent_dim,
            kl_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "input_dim and latent_dim must be nonzero".into(),
            ));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "hidden_dims must be nonempty with nonzero widths".into(),
            ));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config("kl_weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            input_dim: 64 * 64,
            hidden_dims: vec![200, 200, 200],
            latent_dim: 400,
            kl_weight: 1.0,
        }
    }
}

/// One affine layer's parameters (weights `in x out`, bias `1 x out`).
/// Also reused as the gradient holder with identical shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub w: DenseMatrix<F>,
    pub b: DenseMatrix<F>,
}

impl<F: Real> Dense<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: DenseMatrix::zeros(fan_in, fan_out),
            b: DenseMatrix::zeros(1, fan_out),
        }
    }

    /// Uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)); biases zero.
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            w: DenseMatrix::from_fn(fan_in, fan_out, |_, _| F::cast(rng.random_range(-a..a))),
            b: DenseMatrix::zeros(1, fan_out),
        }
    }
}

/// Diagonal Gaussian over the latent space; sigma strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian<F> {
    mu: Vec<F>,
    sigma: Vec<F>,
}

impl<F: Real> LatentGaussian<F> {
    pub fn new(mu: Vec<F>, sigma: Vec<F>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimMismatch {
                context: "LatentGaussian::new",
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if !mu.iter().all(|v| v.is_finite()) || !sigma.iter().all(|v| v.is_finite() && *v > F::zero())
        {
            return Err(Error::Numeric(
                "latent Gaussian needs finite mu and strictly positive finite sigma".into(),
            ));
        }
        Ok(LatentGaussian { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[F] {
        &self.mu
    }

    pub fn sigma(&self) -> &[F] {
        &self.sigma
    }
}

/// One stochastic draw z = mu + sigma * eps with eps ~ N(0, I).
pub fn reparameterize<F: Real, R: Rng + ?Sized>(lg: &LatentGaussian<F>, rng: &mut R) -> Vec<F> {
    lg.mu
        .iter()
        .zip(&lg.sigma)
        .map(|(&m, &s)| m + s * F::sample_standard_normal(rng))
        .collect()
}

/// Closed-form KL(q || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - ln sigma^2).
pub fn kl_divergence<F: Real>(lg: &LatentGaussian<F>) -> F {
    let half = F::cast(0.5);
    lg.mu
        .iter()
        .zip(&lg.sigma)
        .map(|(&m, &s)| half * (m * m + s * s - F::one() - (s * s).ln()))
        .fold(F::zero(), |a, b| a + b)
}

/// Clamp bounds for reconstruction probabilities before taking logs. The
/// nominal bound is 1e-7, widened to machine epsilon when the scalar type
/// cannot represent 1 - 1e-7 (f32).
fn clamp_bounds<F: Real>() -> (F, F) {
    let lo = F::cast(1e-7).max(F::epsilon());
    (lo, F::one() - lo)
}

/// Summed Bernoulli cross-entropy -sum(x ln xhat + (1-x) ln(1-xhat)),
/// with xhat clamped away from {0,1} before the logs.
pub fn recon_loss<F: Real>(x: &[F], xhat: &[F]) -> Result<F> {
    if x.len() != xhat.len() {
        return Err(Error::DimMismatch {
            context: "recon_loss",
            expected: x.len(),
            got: xhat.len(),
        });
    }
    let (lo, hi) = clamp_bounds::<F>();
    let mut acc = F::zero();
    for (&xi, &pi) in x.iter().zip(xhat) {
        let p = pi.max(lo).min(hi);
        acc -= xi * p.ln() + (F::one() - xi) * (F::one() - p).ln();
    }
    Ok(acc)
}

#[inline]
fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Encoder/decoder parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<F> {
    pub cfg: VaeConfig,
    pub enc: Vec<Dense<F>>,
    pub mu_head: Dense<F>,
    pub logvar_head: Dense<F>,
    pub dec: Vec<Dense<F>>,
    pub out: Dense<F>,
}

/// Gradients shaped like a [`VaeModel`]'s parameters.
pub type ModelGrads<F> = VaeModel<F>;

impl<F: Real> VaeModel<F> {
    /// Seeded random initialization.
    pub fn init<R: Rng + ?Sized>(cfg: VaeConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut enc = Vec::new();
        let mut prev = cfg.input_dim;
        for &h in &cfg.hidden_dims {
            enc.push(Dense::glorot(prev, h, rng));
            prev = h;
        }
        let mu_head = Dense::glorot(prev, cfg.latent_dim, rng);
        let logvar_head = Dense::glorot(prev, cfg.latent_dim, rng);
        let mut dec = Vec::new();
        let mut dprev = cfg.latent_dim;
        for &h in cfg.hidden_dims.iter().rev() {
            dec.push(Dense::glorot(dprev, h, rng));
            dprev = h;
        }
        let out = Dense::glorot(dprev, cfg.input_dim, rng);
        Ok(VaeModel {
            cfg,
            enc,
            mu_head,
            logvar_head,
            dec,
            out,
        })
    }

    /// All-zero model, e.g. as a target for [`Self::load_flat_params`].
    pub fn zeros(cfg: VaeConfig) -> Result<Self> {
        cfg.validate()?;
        let mut enc = Vec::new();
        let mut prev = cfg.input_dim;
        for &h in &cfg.hidden_dims {
            enc.push(Dense::zeros(prev, h));
            prev = h;
        }
        let mu_head = Dense::zeros(prev, cfg.latent_dim);
        let logvar_head = Dense::zeros(prev, cfg.latent_dim);
        let mut dec = Vec::new();
        let mut dprev = cfg.latent_dim;
        for &h in cfg.hidden_dims.iter().rev() {
            dec.push(Dense::zeros(dprev, h));
            dprev = h;
        }
        let out = Dense::zeros(dprev, cfg.input_dim);
        Ok(VaeModel {
            cfg,
            enc,
            mu_head,
            logvar_head,
            dec,
            out,
        })
    }

    /// All-zero gradient holder congruent with this model.
    pub fn zeros_like(&self) -> ModelGrads<F> {
        let enc = self
            .enc
            .iter()
            .map(|l| Dense::zeros(l.w.rows(), l.w.cols()))
            .collect();
        let dec = self
            .dec
            .iter()
            .map(|l| Dense::zeros(l.w.rows(), l.w.cols()))
            .collect();
        VaeModel {
            cfg: self.cfg.clone(),
            enc,
            mu_head: Dense::zeros(self.mu_head.w.rows(), self.mu_head.w.cols()),
            logvar_head: Dense::zeros(self.logvar_head.w.rows(), self.logvar_head.w.cols()),
            dec,
            out: Dense::zeros(self.out.w.rows(), self.out.w.cols()),
        }
    }

    /// Parameter matrices in the canonical (persistence) order:
    /// encoder layers (W, b)..., mu head, logvar head, decoder layers, output.
    pub fn param_views(&self) -> Vec<&DenseMatrix<F>> {
        let mut v = Vec::new();
        for l in &self.enc {
            v.push(&l.w);
            v.push(&l.b);
        }
        v.push(&self.mu_head.w);
        v.push(&self.mu_head.b);
        v.push(&self.logvar_head.w);
        v.push(&self.logvar_head.b);
        for l in &self.dec {
            v.push(&l.w);
            v.push(&l.b);
        }
        v.push(&self.out.w);
        v.push(&self.out.b);
        v
    }

    pub fn param_views_mut(&mut self) -> Vec<&mut DenseMatrix<F>> {
        let mut v = Vec::new();
        for l in &mut self.enc {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v.push(&mut self.mu_head.w);
        v.push(&mut self.mu_head.b);
        v.push(&mut self.logvar_head.w);
        v.push(&mut self.logvar_head.b);
        for l in &mut self.dec {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }

    pub fn n_params(&self) -> usize {
        self.param_views().iter().map(|m| m.data().len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<F> {
        let mut flat = Vec::with_capacity(self.n_params());
        for m in self.param_views() {
            flat.extend_from_slice(m.data());
        }
        flat
    }

    pub fn load_flat_params(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimMismatch {
                context: "load_flat_params",
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for m in self.param_views_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.param_views().iter().all(|m| m.all_finite())
    }

    /// Forward pass through the encoder for a batch (rows = samples).
    pub fn encode_batch(&self, x: &DenseMatrix<F>) -> Result<EncodeCache<F>> {
        if x.cols() != self.cfg.input_dim {
            return Err(Error::DimMismatch {
                context: "encode_batch input width",
                expected: self.cfg.input_dim,
                got: x.cols(),
            });
        }
        let mut pres = Vec::with_capacity(self.enc.len());
        let mut acts = Vec::with_capacity(self.enc.len());
        let mut a = x.clone();
        for layer in &self.enc {
            let pre = affine_forward(&a, &layer.w, &layer.b)?;
            a = relu_forward(&pre);
            pres.push(pre);
            acts.push(a.clone());
        }
        let mu = affine_forward(&a, &self.mu_head.w, &self.mu_head.b)?;
        let logvar = affine_forward(&a, &self.logvar_head.w, &self.logvar_head.b)?;
        Ok(EncodeCache {
            x: x.clone(),
            pres,
            acts,
            mu,
            logvar,
        })
    }

    /// Deterministic single-image encode.
    pub fn encode(&self, values: &[F]) -> Result<LatentGaussian<F>> {
        let x = DenseMatrix::from_vec(1, values.len(), values.to_vec()).map_err(|_| {
            Error::DimMismatch {
                context: "encode input",
                expected: self.cfg.input_dim,
                got: values.len(),
            }
        })?;
        let cache = self.encode_batch(&x)?;
        let half = F::cast(0.5);
        let sigma: Vec<F> = cache.logvar.row(0).iter().map(|&lv| (half * lv).exp()).collect();
        LatentGaussian::new(cache.mu.row(0).to_vec(), sigma)
    }

    /// Forward pass through the decoder for a batch of latent rows.
    pub fn decode_batch(&self, z: &DenseMatrix<F>) -> Result<DecodeCache<F>> {
        if z.cols() != self.cfg.latent_dim {
            return Err(Error::DimMismatch {
                context: "decode_batch latent width",
                expected: self.cfg.latent_dim,
                got: z.cols(),
            });
        }
        let mut pres = Vec::with_capacity(self.dec.len());
        let mut acts = Vec::with_capacity(self.dec.len());
        let mut a = z.clone();
        for layer in &self.dec {
            let pre = affine_forward(&a, &layer.w, &layer.b)?;
            a = relu_forward(&pre);
            pres.push(pre);
            acts.push(a.clone());
        }
        let out_pre = affine_forward(&a, &self.out.w, &self.out.b)?;
        let xhat = out_pre.map(sigmoid);
        Ok(DecodeCache {
            z: z.clone(),
            pres,
            acts,
            out_pre,
            xhat,
        })
    }

    /// Single-latent decode; outputs lie in (0,1).
    pub fn decode(&self, z: &[F]) -> Result<Vec<F>> {
        let zm = DenseMatrix::from_vec(1, z.len(), z.to_vec()).map_err(|_| Error::DimMismatch {
            context: "decode input",
            expected: self.cfg.latent_dim,
            got: z.len(),
        })?;
        Ok(self.decode_batch(&zm)?.xhat.row(0).to_vec())
    }

    /// Encode then draw once: the stochastic feature vector used downstream.
    pub fn extract_features<R: Rng + ?Sized>(&self, values: &[F], rng: &mut R) -> Result<Vec<F>> {
        let lg = self.encode(values)?;
        Ok(reparameterize(&lg, rng))
    }

    /// Backward through the mu/logvar heads and the encoder stack,
    /// accumulating into `grads`. Returns nothing useful about the input
    /// gradient (images are constants).
    pub fn encoder_backward(
        &self,
        cache: &EncodeCache<F>,
        d_mu: &DenseMatrix<F>,
        d_logvar: &DenseMatrix<F>,
        grads: &mut ModelGrads<F>,
    ) -> Result<()> {
        let top_act = cache.acts.last().expect("at least one hidden layer");
        grads.mu_head.w.scaled_add(F::one(), &top_act.matmul_tn(d_mu)?)?;
        grads.mu_head.b.scaled_add(F::one(), &d_mu.column_sums())?;
        grads
            .logvar_head
            .w
            .scaled_add(F::one(), &top_act.matmul_tn(d_logvar)?)?;
        grads
            .logvar_head
            .b
            .scaled_add(F::one(), &d_logvar.column_sums())?;

        let mut d_act = d_mu.matmul_nt(&self.mu_head.w)?;
        d_act.scaled_add(F::one(), &d_logvar.matmul_nt(&self.logvar_head.w)?)?;

        for i in (0..self.enc.len()).rev() {
            let d_pre = relu_backward(&cache.pres[i], &d_act)?;
            let below: &DenseMatrix<F> = if i == 0 { &cache.x } else { &cache.acts[i - 1] };
            grads.enc[i].w.scaled_add(F::one(), &below.matmul_tn(&d_pre)?)?;
            grads.enc[i].b.scaled_add(F::one(), &d_pre.column_sums())?;
            if i > 0 {
                d_act = d_pre.matmul_nt(&self.enc[i].w)?;
            }
        }
        Ok(())
    }

    /// Backward through the output layer and decoder stack from the gradient
    /// at the pre-sigmoid output; accumulates into `grads` and returns dz.
    pub fn decoder_backward(
        &self,
        cache: &DecodeCache<F>,
        d_out_pre: &DenseMatrix<F>,
        grads: &mut ModelGrads<F>,
    ) -> Result<DenseMatrix<F>> {
        let top_act = cache.acts.last().expect("at least one hidden layer");
        grads.out.w.scaled_add(F::one(), &top_act.matmul_tn(d_out_pre)?)?;
        grads.out.b.scaled_add(F::one(), &d_out_pre.column_sums())?;

        let mut d_act = d_out_pre.matmul_nt(&self.out.w)?;
        for i in (0..self.dec.len()).rev() {
            let d_pre = relu_backward(&cache.pres[i], &d_act)?;
            let below: &DenseMatrix<F> = if i == 0 { &cache.z } else { &cache.acts[i - 1] };
            grads.dec[i].w.scaled_add(F::one(), &below.matmul_tn(&d_pre)?)?;
            grads.dec[i].b.scaled_add(F::one(), &d_pre.column_sums())?;
            d_act = d_pre.matmul_nt(&self.dec[i].w)?;
        }
        Ok(d_act)
    }
}

/// Encoder forward-pass intermediates kept for the backward pass.
pub struct EncodeCache<F> {
    pub x: DenseMatrix<F>,
    pub pres: Vec<DenseMatrix<F>>,
    pub acts: Vec<DenseMatrix<F>>,
    pub mu: DenseMatrix<F>,
    pub logvar: DenseMatrix<F>,
}

impl<F: Real> EncodeCache<F> {
    /// sigma = exp(logvar / 2), elementwise over the batch.
    pub fn sigma(&self) -> DenseMatrix<F> {
        let half = F::cast(0.5);
        self.logvar.map(|lv| (half * lv).exp())
    }
}

/// Decoder forward-pass intermediates kept for the backward pass.
pub struct DecodeCache<F> {
    pub z: DenseMatrix<F>,
    pub pres: Vec<DenseMatrix<F>>,
    pub acts: Vec<DenseMatrix<F>>,
    pub out_pre: DenseMatrix<F>,
    pub xhat: DenseMatrix<F>,
}

/// Loss value and gradient of one reparameterized lower-bound estimate.
pub struct VaeBatchLoss<F> {
    /// Mean negative lower bound per image in the batch.
    pub loss: F,
    /// Mean reconstruction term.
    pub recon: F,
    /// Mean KL term (unweighted).
    pub kl: F,
    pub grads: ModelGrads<F>,
}

/// Negative lower bound (reconstruction + weighted KL), averaged over the
/// batch rows, with gradients for every parameter. `eps` supplies the
/// standard-normal draws (rows x latent_dim), fixed by the caller so the
/// estimate is reproducible and finite-difference checkable.
pub fn vae_batch_loss<F: Real>(
    model: &VaeModel<F>,
    x: &DenseMatrix<F>,
    eps: &DenseMatrix<F>,
) -> Result<VaeBatchLoss<F>> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::Empty("vae_batch_loss batch"));
    }
    if eps.rows() != n || eps.cols() != model.cfg.latent_dim {
        return Err(Error::DimMismatch {
            context: "vae_batch_loss eps shape",
            expected: n * model.cfg.latent_dim,
            got: eps.rows() * eps.cols(),
        });
    }

    let enc = model.encode_batch(x)?;
    let sigma = enc.sigma();
    // z = mu + sigma * eps
    let z = enc.mu.zip_map(&sigma.zip_map(eps, |s, e| s * e)?, |m, se| m + se)?;
    let dec = model.decode_batch(&z)?;

    let (lo, hi) = clamp_bounds::<F>();
    let inv_n = F::one() / F::cast(n as f64);
    let kw = F::cast(model.cfg.kl_weight);
    let half = F::cast(0.5);

    // Reconstruction: loss and gradient at the pre-sigmoid output. Where the
    // clamp is active the loss is locally constant in the logits, so the
    // gradient there is exactly zero; elsewhere it collapses to (xhat - x).
    let mut recon_sum = F::zero();
    let mut d_out_pre = DenseMatrix::zeros(n, model.cfg.input_dim);
    for r in 0..n {
        let xr = x.row(r);
        let pr = dec.xhat.row(r);
        let dr = d_out_pre.row_mut(r);
        for c in 0..xr.len() {
            let xi = xr[c];
            let p = pr[c].max(lo).min(hi);
            recon_sum -= xi * p.ln() + (F::one() - xi) * (F::one() - p).ln();
            dr[c] = if pr[c] > lo && pr[c] < hi {
                (pr[c] - xi) * inv_n
            } else {
                F::zero()
            };
        }
    }

    // KL: loss and gradients wrt mu and logvar.
    let mut kl_sum = F::zero();
    for r in 0..n {
        let mr = enc.mu.row(r);
        let lr = enc.logvar.row(r);
        for c in 0..mr.len() {
            let s2 = lr[c].exp();
            kl_sum += half * (mr[c] * mr[c] + s2 - F::one() - lr[c]);
        }
    }

    let mut grads = model.zeros_like();
    let dz = model.decoder_backward(&dec, &d_out_pre, &mut grads)?;

    // Through the sampling step: dz/dmu = 1, dz/dlogvar = eps * sigma / 2.
    let mut d_mu = dz.clone();
    let mut d_logvar = dz.zip_map(&eps.zip_map(&sigma, |e, s| e * s)?, |g, es| g * es * half)?;
    // KL contributions: d/dmu = mu, d/dlogvar = (exp(logvar) - 1)/2.
    let klw = kw * inv_n;
    d_mu.scaled_add(klw, &enc.mu)?;
    d_logvar.scaled_add(klw, &enc.logvar.map(|lv| (lv.exp() - F::one()) * half))?;

    model.encoder_backward(&enc, &d_mu, &d_logvar, &mut grads)?;

    let recon = recon_sum * inv_n;
    let kl = kl_sum * inv_n;
    let loss = recon + kw * kl;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite lower-bound estimate: recon={recon} kl={kl}"
        )));
    }
    Ok(VaeBatchLoss {
        loss,
        recon,
        kl,
        grads,
    })
}

/// Single-image convenience wrapper drawing eps from `rng`.
pub fn vae_loss<F: Real, R: Rng + ?Sized>(
    model: &VaeModel<F>,
    values: &[F],
    rng: &mut R,
) -> Result<VaeBatchLoss<F>> {
    let x = DenseMatrix::from_vec(1, values.len(), values.to_vec())?;
    let eps = DenseMatrix::from_fn(1, model.cfg.latent_dim, |_, _| F::sample_standard_normal(rng));
    vae_batch_loss(model, &x, &eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, GradCheckOpts};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_model(seed: u64) -> VaeModel<f64> {
        let cfg = VaeConfig::new(9, vec![5], 2);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        VaeModel::init(cfg, &mut rng).unwrap()
    }

    #[test]
    fn kl_tabulated_cases() {
        let prior = LatentGaussian::<f64>::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(kl_divergence(&prior), 0.0);
        let shifted = LatentGaussian::<f64>::new(vec![1.0], vec![1.0]).unwrap();
        assert!((kl_divergence(&shifted) - 0.5).abs() <= 1e-12);
        let wide = LatentGaussian::<f64>::new(vec![0.0], vec![2.0]).unwrap();
        assert!((kl_divergence(&wide) - 0.80685281944005471).abs() <= 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[ln q - ln p] estimated with 1e5 draws, 3 standard errors.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..10 {
            let d = 3;
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
            let lg = LatentGaussian::new(mu.clone(), sigma.clone()).unwrap();
            let closed = kl_divergence(&lg);

            let n = 100_000;
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let z = reparameterize(&lg, &mut rng);
                // ln q(z) - ln p(z) for diagonal Gaussians
                let mut v = 0.0;
                for k in 0..d {
                    let zq = (z[k] - mu[k]) / sigma[k];
                    let ln_q = -0.5 * zq * zq - sigma[k].ln();
                    let ln_p = -0.5 * z[k] * z[k];
                    v += ln_q - ln_p;
                }
                samples.push(v);
            }
            let mean: f64 = samples.iter().sum::<f64>() / n as f64;
            let var: f64 =
                samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - closed).abs() <= 3.0 * se.max(1e-9),
                "closed {closed} vs mc {mean} (se {se})"
            );
        }
    }

    #[test]
    fn recon_loss_uniform_half_is_dim_times_ln2() {
        let d = 17;
        let x = vec![0.5; d];
        let got = recon_loss(&x, &x).unwrap();
        assert!((got - d as f64 * 0.69314718055994529).abs() <= 1e-12);
    }

    #[test]
    fn recon_loss_perfect_zero_reconstruction_tends_to_zero() {
        let x = vec![0.0; 4];
        let xhat = vec![1e-9; 4]; // clamps to 1e-7
        let got = recon_loss(&x, &xhat).unwrap();
        assert!(got >= 0.0 && got < 1e-5, "{got}");
    }

    #[test]
    fn recon_loss_matches_scalar_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
        let xhat: Vec<f64> = (0..32).map(|_| rng.random_range(0.001..0.999)).collect();
        let got = recon_loss(&x, &xhat).unwrap();
        let mut want = 0.0;
        for i in 0..32 {
            want -= x[i] * xhat[i].ln() + (1.0 - x[i]) * (1.0 - xhat[i]).ln();
        }
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn encode_matches_hand_computation_on_one_hidden_layer() {
        let cfg = VaeConfig::new(2, vec![2], 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut m = VaeModel::<f64>::init(cfg, &mut rng).unwrap();
        m.enc[0].w = DenseMatrix::from_vec(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        m.enc[0].b = DenseMatrix::row_vector(&[0.05, -0.05]);
        m.mu_head.w = DenseMatrix::from_vec(2, 1, vec![0.5, -1.0]).unwrap();
        m.mu_head.b = DenseMatrix::row_vector(&[0.2]);
        m.logvar_head.w = DenseMatrix::from_vec(2, 1, vec![-0.4, 0.6]).unwrap();
        m.logvar_head.b = DenseMatrix::row_vector(&[0.1]);

        let lg = m.encode(&[1.0, 0.5]).unwrap();
        assert!((lg.mu()[0] - 0.35).abs() <= 1e-15);
        assert!((lg.sigma()[0] - 0.99004983374916811).abs() <= 1e-15);
    }

    #[test]
    fn decode_matches_hand_computation_on_one_hidden_layer() {
        let cfg = VaeConfig::new(2, vec![2], 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut m = VaeModel::<f64>::init(cfg, &mut rng).unwrap();
        m.dec[0].w = DenseMatrix::from_vec(1, 2, vec![0.2, -0.3]).unwrap();
        m.dec[0].b = DenseMatrix::row_vector(&[0.1, 0.2]);
        m.out.w = DenseMatrix::from_vec(2, 2, vec![0.3, -0.1, 0.05, 0.6]).unwrap();
        m.out.b = DenseMatrix::row_vector(&[0.0, 0.1]);

        let xhat = m.decode(&[0.5]).unwrap();
        assert!((xhat[0] - 0.51561991572301558).abs() <= 1e-15);
        assert!((xhat[1] - 0.52747230434459369).abs() <= 1e-15);
        assert!(xhat.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn encode_is_deterministic_and_sigma_positive() {
        let m = tiny_model(5);
        let x: Vec<f64> = (0..9).map(|i| (i as f64) / 10.0).collect();
        let a = m.encode(&x).unwrap();
        let b = m.encode(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn encode_rejects_wrong_dimension() {
        let m = tiny_model(5);
        assert!(m.encode(&[0.0; 4]).is_err());
        assert!(m.decode(&[0.0; 3]).is_err());
    }

    #[test]
    fn reparameterize_degenerate_sigma_returns_mu() {
        let lg = LatentGaussian::<f64>::new(vec![0.7, -0.2], vec![1e-300, 1e-300]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let z = reparameterize(&lg, &mut rng);
        assert!((z[0] - 0.7).abs() < 1e-295 && (z[1] + 0.2).abs() < 1e-295);
    }

    #[test]
    fn reparameterize_is_seed_reproducible_and_unbiased() {
        let lg = LatentGaussian::new(vec![0.4, -1.1], vec![0.8, 1.3]).unwrap();
        let mut r1 = ChaCha12Rng::seed_from_u64(99);
        let mut r2 = ChaCha12Rng::seed_from_u64(99);
        assert_eq!(reparameterize(&lg, &mut r1), reparameterize(&lg, &mut r2));

        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..n {
            let z = reparameterize(&lg, &mut rng);
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let band = 4.0 * lg.sigma()[k] / (n as f64).sqrt();
            assert!((mean - lg.mu()[k]).abs() <= band, "k={k} mean {mean}");
        }
    }

    #[test]
    fn extract_features_deterministic_under_fixed_seed() {
        let m = tiny_model(7);
        let x: Vec<f64> = (0..9).map(|i| ((i * 13) % 7) as f64 / 7.0).collect();
        let mut r1 = ChaCha12Rng::seed_from_u64(2024);
        let mut r2 = ChaCha12Rng::seed_from_u64(2024);
        assert_eq!(
            m.extract_features(&x, &mut r1).unwrap(),
            m.extract_features(&x, &mut r2).unwrap()
        );
    }

    #[test]
    fn extract_features_expectation_is_mu() {
        let m = tiny_model(8);
        let x: Vec<f64> = (0..9).map(|i| (i % 3) as f64 / 3.0).collect();
        let lg = m.encode(&x).unwrap();
        let n = 100_000;
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        let mut sums = vec![0.0f64; lg.dim()];
        for _ in 0..n {
            let f = m.extract_features(&x, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(&f) {
                *s += v;
            }
        }
        for k in 0..lg.dim() {
            let mean = sums[k] / n as f64;
            let band = 4.0 * lg.sigma()[k] / (n as f64).sqrt();
            assert!((mean - lg.mu()[k]).abs() <= band, "k={k}");
        }
    }

    #[test]
    fn batch_loss_is_nonnegative_and_km_zero_when_posterior_is_prior() {
        // Force mu = 0, logvar = 0 by zeroing the heads: KL must vanish.
        let mut m = tiny_model(21);
        m.mu_head.w.scale(0.0);
        m.mu_head.b.scale(0.0);
        m.logvar_head.w.scale(0.0);
        m.logvar_head.b.scale(0.0);
        let x = DenseMatrix::from_fn(3, 9, |r, c| ((r + c) % 2) as f64 * 0.5);
        let eps = DenseMatrix::zeros(3, 2);
        let out = vae_batch_loss(&m, &x, &eps).unwrap();
        assert!(out.loss >= 0.0);
        assert!(out.kl.abs() <= 1e-15, "kl {}", out.kl);
        assert!((out.loss - out.recon).abs() <= 1e-15);
    }

    /// Loss as a pure function of flattened parameters with eps held fixed.
    fn loss_of_params(
        template: &VaeModel<f64>,
        x: &DenseMatrix<f64>,
        eps: &DenseMatrix<f64>,
        p: &[f64],
    ) -> crate::error::Result<f64> {
        let mut m = template.clone();
        m.load_flat_params(p)?;
        Ok(vae_batch_loss(&m, x, eps)?.loss)
    }

    #[test]
    fn batch_loss_gradient_passes_finite_difference_check() {
        let m = tiny_model(31);
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let x = DenseMatrix::from_fn(4, 9, |_, _| rng.random_range(0.0..1.0));
        let eps = DenseMatrix::from_fn(4, 2, |_, _| {
            f64::sample_standard_normal(&mut rng)
        });
        let out = vae_batch_loss(&m, &x, &eps).unwrap();
        let analytic = out.grads.flatten_params();
        let params = m.flatten_params();
        let worst = grad_check(
            |p| loss_of_params(&m, &x, &eps, p),
            &params,
            &analytic,
            &GradCheckOpts {
                eps: 1e-5,
                max_coords: 300,
                seed: 4,
            },
        )
        .unwrap();
        assert!(worst <= 1e-5, "rel err {worst}");
    }

    #[test]
    fn param_flatten_round_trips() {
        let m = tiny_model(41);
        let flat = m.flatten_params();
        let mut m2 = tiny_model(42);
        assert_ne!(m2.flatten_params(), flat);
        m2.load_flat_params(&flat).unwrap();
        assert_eq!(m2.flatten_params(), flat);
        assert_eq!(m2, m);
    }
}
