//! Per-writer training loop: interleaved reconstruction and disentangling
//! updates, then a kernel classifier on the learned features.
//!
//! Each round performs exactly two parameter updates. The first uses a
//! genuine–genuine pair batch, the second a genuine–forgery pair batch; both
//! apply `theta <- theta - eta1 * grad(vae) - eta2 * grad(fd)`, where the
//! reconstruction gradient is taken over the union of the batch's images and
//! the disentangling gradient over its pairs. With the Adam optimizer the
//! combined gradient `(eta1 * g_vae + eta2 * g_fd) / eta_max` is fed to a
//! standard Adam step with learning rate `eta_max = max(eta1, eta2)`, which
//! reduces to Adam on the plain sum when the two rates are equal.

use crate::disentangle::{fd_batch_loss, Margin, PairBatch, PairKind};
use crate::error::{Error, Result};
use crate::image::Sample;
use crate::numeric::DenseMatrix;
use crate::scalar::Real;
use crate::seeds;
use crate::svm::{smo_train, SvmConfig, SvmModel};
use crate::vae::{vae_batch_loss, ModelGrads, VaeConfig, VaeModel};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gradient-step rule applied each update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain stochastic gradient descent.
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
}

/// Training-loop hyperparameters.
///
/// `seed` is not part of the config-file schema (it is supplied at the run
/// level) and is skipped during (de)serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Step size on the reconstruction objective.
    pub eta1: f64,
    /// Step size on the disentangling objective.
    pub eta2: f64,
    /// Margin for the disentangling loss.
    pub margin: f64,
    /// Number of training rounds (two updates each).
    pub rounds: usize,
    /// Pairs per batch.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Run seed; every stream consumed during training derives from it.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta1: 1e-3,
            eta2: 1e-3,
            margin: 1.0,
            rounds: 2000,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "margin must be finite and > 0, got {}",
                self.margin
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One writer's data, already preprocessed, split into the roles used by
/// training and evaluation. `genuine_train` and `random_forgeries` drive
/// training; the test pools may be empty when only a model is needed.
/// Callers are responsible for keeping train and test pools disjoint and for
/// sourcing both forgery pools (`random_forgeries`, `random_test`) from
/// other writers' genuine signatures, never this writer's.
#[derive(Clone, Debug)]
pub struct WriterSplit<F> {
    pub writer_id: String,
    pub genuine_train: Vec<Sample<F>>,
    /// Other writers' genuine signatures used as training negatives.
    pub random_forgeries: Vec<Sample<F>>,
    pub genuine_test: Vec<Sample<F>>,
    pub skilled_test: Vec<Sample<F>>,
    /// Other writers' held-out genuine signatures scored as test forgeries.
    pub random_test: Vec<Sample<F>>,
}

impl<F: Real> WriterSplit<F> {
    pub fn validate(&self) -> Result<()> {
        if self.writer_id.is_empty() {
            return Err(Error::InvalidArgument("writer_id must be nonempty".into()));
        }
        if self.genuine_train.is_empty() {
            return Err(Error::Empty("genuine_train pool"));
        }
        if self.random_forgeries.is_empty() {
            return Err(Error::Empty("random_forgeries pool"));
        }
        let first = &self.genuine_train[0].image;
        let (h, w) = (first.side_h(), first.side_w());
        let pools = [
            &self.genuine_train,
            &self.random_forgeries,
            &self.genuine_test,
            &self.skilled_test,
            &self.random_test,
        ];
        for pool in pools {
            if pool
                .iter()
                .any(|s| s.image.side_h() != h || s.image.side_w() != w)
            {
                return Err(Error::Data(format!(
                    "writer {}: images in a split must share dimensions {h}x{w}",
                    self.writer_id
                )));
            }
        }
        Ok(())
    }

    /// Flattened input length of the split's images.
    pub fn input_dim(&self) -> usize {
        self.genuine_train[0].image.len()
    }
}

/// Draw a pair batch with replacement. For genuine–genuine batches the two
/// sides are distinct indices whenever the pool has more than one element;
/// for genuine–forgery batches side `a` is genuine and side `b` a forgery.
/// Each pair consumes its draws in order (a then b).
pub fn sample_pair_batch<F: Real, R: Rng + ?Sized>(
    split: &WriterSplit<F>,
    kind: PairKind,
    batch_size: usize,
    rng: &mut R,
) -> Result<PairBatch<F>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    split.validate()?;
    let pool_a = &split.genuine_train;
    let pool_b = match kind {
        PairKind::Gg => &split.genuine_train,
        PairKind::Gf => &split.random_forgeries,
    };
    let d = split.input_dim();
    let mut a = DenseMatrix::zeros(batch_size, d);
    let mut b = DenseMatrix::zeros(batch_size, d);
    for r in 0..batch_size {
        let i = rng.random_range(0..pool_a.len());
        let j = match kind {
            PairKind::Gg if pool_a.len() > 1 => loop {
                let j = rng.random_range(0..pool_a.len());
                if j != i {
                    break j;
                }
            },
            PairKind::Gg => i,
            PairKind::Gf => rng.random_range(0..pool_b.len()),
        };
        a.row_mut(r).copy_from_slice(pool_a[i].image.values());
        b.row_mut(r).copy_from_slice(pool_b[j].image.values());
    }
    PairBatch::new(kind, a, b)
}

/// First and second moment accumulators for Adam; inert under SGD.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            t: 0,
        }
    }
}

/// Per-round losses, recorded before each update is applied. The headline
/// `loss_vae` / `loss_fd` average the genuine–genuine and genuine–forgery
/// halves; the suffixed fields keep the halves separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoundTelemetry {
    pub round: usize,
    pub loss_vae: f64,
    pub loss_fd: f64,
    pub loss_vae_gg: f64,
    pub loss_fd_gg: f64,
    pub loss_vae_gf: f64,
    pub loss_fd_gf: f64,
}

fn stack_pairs<F: Real>(batch: &PairBatch<F>) -> DenseMatrix<F> {
    let n = batch.a.rows();
    DenseMatrix::from_fn(2 * n, batch.a.cols(), |r, c| {
        if r < n {
            batch.a.get(r, c)
        } else {
            batch.b.get(r - n, c)
        }
    })
}

fn apply_update<F: Real>(
    model: &mut VaeModel<F>,
    opt: &mut OptimizerState<F>,
    cfg: &TrainConfig,
    g_vae: &ModelGrads<F>,
    g_fd: &ModelGrads<F>,
) -> Result<()> {
    if cfg.eta1 == 0.0 && cfg.eta2 == 0.0 {
        return Ok(());
    }
    let eta1 = F::cast(cfg.eta1);
    let eta2 = F::cast(cfg.eta2);
    let mut p = model.flatten_params();
    let gv = g_vae.flatten_params();
    let gf = g_fd.flatten_params();
    match cfg.optimizer {
        Optimizer::Sgd => {
            for i in 0..p.len() {
                p[i] = p[i] - (eta1 * gv[i] + eta2 * gf[i]);
            }
        }
        Optimizer::Adam => {
            let eta_max = if cfg.eta1 >= cfg.eta2 { eta1 } else { eta2 };
            let b1 = F::cast(0.9);
            let b2 = F::cast(0.999);
            let eps = F::cast(1e-8);
            opt.t += 1;
            let c1 = F::one() - b1.powi(opt.t as i32);
            let c2 = F::one() - b2.powi(opt.t as i32);
            for i in 0..p.len() {
                let g = (eta1 * gv[i] + eta2 * gf[i]) / eta_max;
                opt.m[i] = b1 * opt.m[i] + (F::one() - b1) * g;
                opt.v[i] = b2 * opt.v[i] + (F::one() - b2) * g * g;
                let m_hat = opt.m[i] / c1;
                let v_hat = opt.v[i] / c2;
                p[i] = p[i] - eta_max * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    model.load_flat_params(&p)
}

/// One training round: a genuine–genuine update followed by a
/// genuine–forgery update, each combining the reconstruction gradient (over
/// the batch's stacked images, `a` rows then `b` rows) with the
/// disentangling gradient (over its pairs). Per update the stream is
/// consumed in order: pair indices, then one standard-normal noise matrix
/// (row-major) for the stacked images.
pub fn train_round<F: Real, R: Rng + ?Sized>(
    model: &mut VaeModel<F>,
    opt: &mut OptimizerState<F>,
    split: &WriterSplit<F>,
    cfg: &TrainConfig,
    round: usize,
    rng: &mut R,
) -> Result<RoundTelemetry> {
    cfg.validate()?;
    let margin = Margin::new(F::cast(cfg.margin))?;
    let mut halves = [(0.0, 0.0); 2];
    for (slot, kind) in [PairKind::Gg, PairKind::Gf].into_iter().enumerate() {
        let batch = sample_pair_batch(split, kind, cfg.batch_size, rng)?;
        let x = stack_pairs(&batch);
        let eps = DenseMatrix::from_fn(x.rows(), model.cfg.latent_dim, |_, _| {
            F::sample_standard_normal(rng)
        });
        let vae = vae_batch_loss(model, &x, &eps)?;
        let fd = fd_batch_loss(model, &batch, margin)?;
        if !vae.loss.is_finite() || !fd.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at round {round}: vae={:e} fd={:e}",
                vae.loss.to_f64_lossy(),
                fd.loss.to_f64_lossy()
            )));
        }
        apply_update(model, opt, cfg, &vae.grads, &fd.grads)?;
        if !model.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameters after round {round}"
            )));
        }
        halves[slot] = (vae.loss.to_f64_lossy(), fd.loss.to_f64_lossy());
    }
    Ok(RoundTelemetry {
        round,
        loss_vae: (halves[0].0 + halves[1].0) / 2.0,
        loss_fd: (halves[0].1 + halves[1].1) / 2.0,
        loss_vae_gg: halves[0].0,
        loss_fd_gg: halves[0].1,
        loss_vae_gf: halves[1].0,
        loss_fd_gf: halves[1].1,
    })
}

/// A writer's trained verifier: the feature model, the classifier over its
/// features, and the loss history.
#[derive(Clone, Debug)]
pub struct TrainedWriter<F> {
    pub writer_id: String,
    pub vae: VaeModel<F>,
    pub svm: SvmModel<F>,
    /// Optimization sweeps the classifier used.
    pub svm_passes: usize,
    pub telemetry: Vec<RoundTelemetry>,
}

/// Train one writer end to end: seeded model init, `rounds` training
/// rounds, feature extraction for every training image (genuine labeled +1,
/// random forgeries -1), and classifier fitting on those features.
///
/// All randomness derives from `train_cfg.seed` through named streams keyed
/// by the writer id, except feature-extraction noise, which is keyed by
/// image content so any later scoring of the same image reproduces the same
/// feature vector.
pub fn train_writer<F: Real>(
    split: &WriterSplit<F>,
    vae_cfg: &VaeConfig,
    train_cfg: &TrainConfig,
    svm_cfg: &SvmConfig,
) -> Result<TrainedWriter<F>> {
    vae_cfg.validate()?;
    train_cfg.validate()?;
    svm_cfg.validate()?;
    split.validate()?;
    if split.input_dim() != vae_cfg.input_dim {
        return Err(Error::DimMismatch {
            context: "train_writer image size vs model input_dim",
            expected: vae_cfg.input_dim,
            got: split.input_dim(),
        });
    }

    let mut init_rng = seeds::init_stream(train_cfg.seed, &split.writer_id);
    let mut model = VaeModel::init(vae_cfg.clone(), &mut init_rng)?;
    let mut opt = OptimizerState::new(model.n_params());
    let mut rng = seeds::train_stream(train_cfg.seed, &split.writer_id);
    let mut telemetry = Vec::with_capacity(train_cfg.rounds);
    for round in 0..train_cfg.rounds {
        telemetry.push(train_round(&mut model, &mut opt, split, train_cfg, round, &mut rng)?);
    }

    let n_pos = split.genuine_train.len();
    let n = n_pos + split.random_forgeries.len();
    let mut features = DenseMatrix::zeros(n, vae_cfg.latent_dim);
    let mut labels = Vec::with_capacity(n);
    let images = split.genuine_train.iter().chain(split.random_forgeries.iter());
    for (r, sample) in images.enumerate() {
        let values = sample.image.values();
        let mut frng = seeds::feature_stream(train_cfg.seed, values);
        let f = model.extract_features(values, &mut frng)?;
        features.row_mut(r).copy_from_slice(&f);
        labels.push(if r < n_pos { 1 } else { -1 });
    }

    let mut scfg = svm_cfg.clone();
    scfg.seed = seeds::stream("svm", train_cfg.seed, split.writer_id.as_bytes()).random();
    let smo = smo_train(&features, &labels, &scfg)?;
    Ok(TrainedWriter {
        writer_id: split.writer_id.clone(),
        vae: model,
        svm: smo.model,
        svm_passes: smo.passes,
        telemetry,
    })
}
