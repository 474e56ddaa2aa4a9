//! Feature-disentangling loss over pairs of encoded signatures: pulls
//! same-writer latent Gaussians together and pushes different-writer ones
//! apart up to a margin, beyond which the pair contributes a constant with
//! exactly zero gradient.
//!
//! Pure given a model snapshot; reductions use a fixed summation order so
//! results are reproducible.

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;
use crate::scalar::Real;
use crate::vae::{LatentGaussian, ModelGrads, VaeModel};

/// Positive margin for different-label pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margin<F>(F);

impl<F: Real> Margin<F> {
    pub fn new(m: F) -> Result<Self> {
        if !(m > F::zero() && m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "margin must be a positive finite real, got {m}"
            )));
        }
        Ok(Margin(m))
    }

    pub fn get(&self) -> F {
        self.0
    }
}

/// Batch flavor: genuine-genuine or genuine-forgery.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Both sides drawn from the writer's genuine pool; same label.
    Gg,
    /// Left side genuine, right side a random forgery; different labels.
    Gf,
}

impl PairKind {
    pub fn same_label(self) -> bool {
        matches!(self, PairKind::Gg)
    }
}

/// A batch of image pairs presented to the disentangling loss. Rows of `a`
/// pair with the corresponding rows of `b`.
#[derive(Clone, Debug)]
pub struct PairBatch<F> {
    pub kind: PairKind,
    pub a: DenseMatrix<F>,
    pub b: DenseMatrix<F>,
}

impl<F: Real> PairBatch<F> {
    pub fn new(kind: PairKind, a: DenseMatrix<F>, b: DenseMatrix<F>) -> Result<Self> {
        if a.rows() == 0 {
            return Err(Error::Empty("pair batch"));
        }
        if a.shape() != b.shape() {
            return Err(Error::DimMismatch {
                context: "PairBatch sides",
                expected: a.rows() * a.cols(),
                got: b.rows() * b.cols(),
            });
        }
        Ok(PairBatch { kind, a, b })
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.rows() == 0
    }
}

/// Squared distance between two diagonal Gaussians:
/// sum_k (mu_a - mu_b)^2 + sum_k (sigma_a - sigma_b)^2.
pub fn gauss_distance<F: Real>(a: &LatentGaussian<F>, b: &LatentGaussian<F>) -> Result<F> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            context: "gauss_distance",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut acc = F::zero();
    for k in 0..a.dim() {
        let dm = a.mu()[k] - b.mu()[k];
        let ds = a.sigma()[k] - b.sigma()[k];
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}

/// Piecewise pair loss: same label -> d; different and d < m -> m - d;
/// different and d >= m -> the constant m (gradient exactly zero there).
pub fn fd_pair_loss<F: Real>(d: F, same_label: bool, m: Margin<F>) -> F {
    if same_label {
        d
    } else if d < m.get() {
        m.get() - d
    } else {
        m.get()
    }
}

/// d(loss)/d(d) of [`fd_pair_loss`]: 1 / -1 / 0 by branch, with the kink
/// d = m resolved to the zero-gradient branch.
fn fd_pair_weight<F: Real>(d: F, same_label: bool, m: Margin<F>) -> F {
    if same_label {
        F::one()
    } else if d < m.get() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Batch loss value, telemetry, and parameter gradients.
pub struct FdBatchLoss<F> {
    /// Mean pair loss over the batch.
    pub loss: F,
    /// Per-pair Gaussian distances (diagnostics and tests).
    pub distances: Vec<F>,
    pub grads: ModelGrads<F>,
}

/// Mean disentangling loss over a pair batch with gradients through both
/// encodings (mu and sigma heads); the decoder receives no gradient.
pub fn fd_batch_loss<F: Real>(
    model: &VaeModel<F>,
    batch: &PairBatch<F>,
    m: Margin<F>,
) -> Result<FdBatchLoss<F>> {
    let n = batch.len();
    let enc_a = model.encode_batch(&batch.a)?;
    let enc_b = model.encode_batch(&batch.b)?;
    let sig_a = enc_a.sigma();
    let sig_b = enc_b.sigma();
    let d_lat = model.cfg.latent_dim;
    let same = batch.kind.same_label();

    let mut distances = Vec::with_capacity(n);
    let mut loss_sum = F::zero();
    let inv_n = F::one() / F::cast(n as f64);
    let two = F::cast(2.0);
    let half = F::cast(0.5);

    let mut d_mu_a = DenseMatrix::zeros(n, d_lat);
    let mut d_mu_b = DenseMatrix::zeros(n, d_lat);
    let mut d_lv_a = DenseMatrix::zeros(n, d_lat);
    let mut d_lv_b = DenseMatrix::zeros(n, d_lat);

    for i in 0..n {
        let mut d = F::zero();
        for k in 0..d_lat {
            let dm = enc_a.mu.get(i, k) - enc_b.mu.get(i, k);
            let ds = sig_a.get(i, k) - sig_b.get(i, k);
            d += dm * dm + ds * ds;
        }
        distances.push(d);
        loss_sum += fd_pair_loss(d, same, m);

        // chain rule: d(dist)/d(mu_a) = 2(mu_a - mu_b);
        // d(dist)/d(logvar_a) = 2(sigma_a - sigma_b) * sigma_a/2.
        let w = fd_pair_weight(d, same, m) * inv_n;
        if w != F::zero() {
            for k in 0..d_lat {
                let dm = enc_a.mu.get(i, k) - enc_b.mu.get(i, k);
                let ds = sig_a.get(i, k) - sig_b.get(i, k);
                d_mu_a.set(i, k, w * two * dm);
                d_mu_b.set(i, k, -(w * two * dm));
                d_lv_a.set(i, k, w * two * ds * sig_a.get(i, k) * half);
                d_lv_b.set(i, k, -(w * two * ds * sig_b.get(i, k) * half));
            }
        }
    }

    let mut grads = model.zeros_like();
    model.encoder_backward(&enc_a, &d_mu_a, &d_lv_a, &mut grads)?;
    model.encoder_backward(&enc_b, &d_mu_b, &d_lv_b, &mut grads)?;

    let loss = loss_sum * inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite disentangling loss".into()));
    }
    Ok(FdBatchLoss {
        loss,
        distances,
        grads,
    })
}
