//! Soft-margin RBF-kernel support vector machine trained by sequential
//! minimal optimization on the dual, plus the signed decision function
//! used for score thresholding.
//!
//! Training is single-threaded per model; a trained model is immutable and
//! safe to share across threads for scoring.

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Kernel and optimizer settings. All writers share one config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    /// RBF width; `None` selects 1/(feature_dim * feature_variance),
    /// falling back to 1/feature_dim for constant features.
    pub gamma: Option<f64>,
    /// Box constraint for the positive class.
    pub c: f64,
    /// KKT tolerance.
    pub tol: f64,
    /// Upper bound on full optimization sweeps.
    pub max_passes: usize,
    /// Multiplier on `c` for negative samples; `None` selects n_pos/n_neg
    /// so both classes exert comparable total box mass under imbalance.
    pub class_weight_neg: Option<f64>,
    /// Seed for the randomized second-index choice in SMO.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            gamma: None,
            c: 1.0,
            tol: 1e-3,
            max_passes: 200,
            class_weight_neg: None,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("svm gamma must be > 0, got {g}")));
            }
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svm c must be > 0, got {}", self.c)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("svm tol must be > 0, got {}", self.tol)));
        }
        if let Some(w) = self.class_weight_neg {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "svm class_weight_neg must be > 0, got {w}"
                )));
            }
        }
        if self.max_passes == 0 {
            return Err(Error::Config("svm max_passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// exp(-gamma * ||x - y||^2); in (0, 1] for gamma > 0.
pub fn rbf_kernel<F: Real>(x: &[F], y: &[F], gamma: F) -> F {
    debug_assert_eq!(x.len(), y.len());
    let mut sq = F::zero();
    for (&a, &b) in x.iter().zip(y) {
        let d = a - b;
        sq += d * d;
    }
    (-gamma * sq).exp()
}

/// Trained classifier: only samples with nonzero dual weight are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel<F> {
    /// One support vector per row.
    support_vectors: DenseMatrix<F>,
    /// y_k * alpha_k per support vector.
    dual_coeffs: Vec<F>,
    bias: F,
    gamma: F,
    converged: bool,
}

impl<F: Real> SvmModel<F> {
    pub fn from_parts(
        support_vectors: DenseMatrix<F>,
        dual_coeffs: Vec<F>,
        bias: F,
        gamma: F,
        converged: bool,
    ) -> Result<Self> {
        if support_vectors.rows() != dual_coeffs.len() {
            return Err(Error::DimMismatch {
                context: "SvmModel::from_parts",
                expected: support_vectors.rows(),
                got: dual_coeffs.len(),
            });
        }
        if !(gamma > F::zero() && gamma.is_finite()) {
            return Err(Error::Numeric("svm model gamma must be > 0".into()));
        }
        Ok(SvmModel {
            support_vectors,
            dual_coeffs,
            bias,
            gamma,
            converged,
        })
    }

    pub fn support_vectors(&self) -> &DenseMatrix<F> {
        &self.support_vectors
    }

    pub fn dual_coeffs(&self) -> &[F] {
        &self.dual_coeffs
    }

    pub fn bias(&self) -> F {
        self.bias
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// f(x) = sum_k y_k alpha_k K(x, s_k) + b. Prediction is its sign; the
    /// raw value is the score used for threshold sweeps.
    pub fn decision_value(&self, x: &[F]) -> Result<F> {
        if self.support_vectors.rows() > 0 && x.len() != self.support_vectors.cols() {
            return Err(Error::DimMismatch {
                context: "decision_value",
                expected: self.support_vectors.cols(),
                got: x.len(),
            });
        }
        let mut f = self.bias;
        for k in 0..self.support_vectors.rows() {
            f += self.dual_coeffs[k] * rbf_kernel(x, self.support_vectors.row(k), self.gamma);
        }
        Ok(f)
    }
}

/// Full SMO output: the pruned model plus the complete dual state, which
/// optimality checks need.
#[derive(Clone, Debug)]
pub struct SmoResult<F> {
    pub model: SvmModel<F>,
    /// All training alphas (not just support vectors).
    pub alphas: Vec<F>,
    /// Per-sample box constraints C_i (class-weighted).
    pub boxes: Vec<F>,
    /// Resolved kernel width actually used.
    pub gamma: F,
    pub converged: bool,
    pub passes: usize,
}

/// Default kernel width: 1/(d * population variance of all feature entries),
/// or 1/d when the features are constant.
pub fn default_gamma<F: Real>(features: &DenseMatrix<F>) -> F {
    let d = features.cols().max(1);
    let n = features.data().len();
    if n == 0 {
        return F::one() / F::cast(d as f64);
    }
    let nf = F::cast(n as f64);
    let mean = features.data().iter().fold(F::zero(), |a, &b| a + b) / nf;
    let var = features
        .data()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .fold(F::zero(), |a, b| a + b)
        / nf;
    if var > F::zero() {
        F::one() / (F::cast(d as f64) * var)
    } else {
        F::one() / F::cast(d as f64)
    }
}

/// Sequential minimal optimization over the soft-margin dual.
///
/// Sweeps all samples for KKT violators; the partner index is chosen at
/// random from a seeded stream, falling back to a seeded-random scan of all
/// partners when the first choice makes no progress. Convergence means a
/// full sweep found no violator. A sweep with violators but no successful
/// update, or exhausting `max_passes`, returns the best iterate flagged
/// non-converged.
pub fn smo_train<F: Real>(
    features: &DenseMatrix<F>,
    labels: &[i8],
    cfg: &SvmConfig,
) -> Result<SmoResult<F>> {
    cfg.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::Empty("svm training set"));
    }
    if labels.len() != n {
        return Err(Error::DimMismatch {
            context: "smo_train labels",
            expected: n,
            got: labels.len(),
        });
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::Data("svm labels must be +1 or -1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(
            "svm training needs both classes present".into(),
        ));
    }

    let gamma = match cfg.gamma {
        Some(g) => F::cast(g),
        None => default_gamma(features),
    };
    let w_neg = cfg
        .class_weight_neg
        .unwrap_or(n_pos as f64 / n_neg as f64);
    let boxes: Vec<F> = labels
        .iter()
        .map(|&l| {
            if l == 1 {
                F::cast(cfg.c)
            } else {
                F::cast(cfg.c * w_neg)
            }
        })
        .collect();
    let y: Vec<F> = labels.iter().map(|&l| F::cast(l as f64)).collect();
    let tol = F::cast(cfg.tol);

    // Gram matrix; training sets are small (tens to hundreds of samples).
    let mut gram = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = rbf_kernel(features.row(i), features.row(j), gamma);
            gram.set(i, j, k);
            gram.set(j, i, k);
        }
    }

    let mut alphas = vec![F::zero(); n];
    let mut b = F::zero();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // Round-off from pair updates leaves ulp-scale dust on alphas that
    // should sit exactly at 0 or at the box. Activity tests must ignore it,
    // otherwise a dust variable looks like a violator whose only legal step
    // is dust-sized and the sweep stalls.
    let dust = F::cast(1e-9);
    let at_zero = move |a: F| a <= dust;
    let at_box = move |a: F, c: F| a >= c - dust;

    let f_of = |alphas: &[F], b: F, i: usize| -> F {
        let mut f = b;
        for k in 0..n {
            if alphas[k] != F::zero() {
                f += alphas[k] * y[k] * gram.get(k, i);
            }
        }
        f
    };

    // One two-variable analytic step; returns whether alpha moved.
    let try_step = |alphas: &mut Vec<F>, b: &mut F, i: usize, j: usize| -> bool {
        if i == j {
            return false;
        }
        let e_i = f_of(alphas, *b, i) - y[i];
        let e_j = f_of(alphas, *b, j) - y[j];
        let (a_i_old, a_j_old) = (alphas[i], alphas[j]);
        let (l, h) = if y[i] != y[j] {
            (
                F::zero().max(a_j_old - a_i_old),
                boxes[j].min(boxes[i] + a_j_old - a_i_old),
            )
        } else {
            (
                F::zero().max(a_i_old + a_j_old - boxes[i]),
                boxes[j].min(a_i_old + a_j_old),
            )
        };
        if h - l < F::cast(1e-12) {
            return false;
        }
        let eta = F::cast(2.0) * gram.get(i, j) - gram.get(i, i) - gram.get(j, j);
        if eta >= F::zero() {
            return false;
        }
        let mut a_j = a_j_old - y[j] * (e_i - e_j) / eta;
        a_j = a_j.max(l).min(h);
        if (a_j - a_j_old).abs() < F::cast(1e-7) {
            return false;
        }
        let a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j);
        let d_i = a_i - a_i_old;
        let d_j = a_j - a_j_old;
        let b1 = *b - e_i - y[i] * d_i * gram.get(i, i) - y[j] * d_j * gram.get(i, j);
        let b2 = *b - e_j - y[i] * d_i * gram.get(i, j) - y[j] * d_j * gram.get(j, j);
        *b = if a_i > F::zero() && a_i < boxes[i] {
            b1
        } else if a_j > F::zero() && a_j < boxes[j] {
            b2
        } else {
            (b1 + b2) * F::cast(0.5)
        };
        alphas[i] = a_i;
        alphas[j] = a_j;
        true
    };

    // The tightest bias interval [b_up, b_lo] compatible with the current
    // alphas: every sample bounds the feasible b from one side (interior
    // samples from both). When the interval collapses to within 2*tol the
    // iterate satisfies the optimality conditions with b at its midpoint.
    let bias_interval = |alphas: &[F]| -> (F, F) {
        let mut b_lo = F::infinity(); // min upper bound
        let mut b_hi = F::neg_infinity(); // max lower bound
        for i in 0..n {
            let mut f_raw = F::zero();
            for k in 0..n {
                if alphas[k] != F::zero() {
                    f_raw += alphas[k] * y[k] * gram.get(k, i);
                }
            }
            let r = y[i] - f_raw;
            let lower = (y[i] > F::zero() && !at_box(alphas[i], boxes[i]))
                || (y[i] < F::zero() && !at_zero(alphas[i]));
            let upper = (y[i] > F::zero() && !at_zero(alphas[i]))
                || (y[i] < F::zero() && !at_box(alphas[i], boxes[i]));
            if lower && r > b_hi {
                b_hi = r;
            }
            if upper && r < b_lo {
                b_lo = r;
            }
        }
        (b_hi, b_lo)
    };

    let mut converged = false;
    let mut passes = 0;
    while passes < cfg.max_passes {
        passes += 1;
        // Recenter the bias inside its feasible interval so the violation
        // sweep is judged against the best achievable b for these alphas.
        let (b_hi, b_lo) = bias_interval(&alphas);
        if b_hi.is_finite() && b_lo.is_finite() {
            b = (b_hi + b_lo) * F::cast(0.5);
            if b_hi - b_lo <= F::cast(2.0) * tol {
                converged = true;
                break;
            }
        }
        let mut violators = 0usize;
        let mut updates = 0usize;
        for i in 0..n {
            let e_i = f_of(&alphas, b, i) - y[i];
            let r = y[i] * e_i;
            let violated = (r < -tol && !at_box(alphas[i], boxes[i]))
                || (r > tol && !at_zero(alphas[i]));
            if !violated {
                continue;
            }
            violators += 1;
            // random partner first, then a seeded-random full scan
            let first = rng.random_range(0..n);
            if try_step(&mut alphas, &mut b, i, first) {
                updates += 1;
                continue;
            }
            let offset = rng.random_range(0..n);
            for step in 0..n {
                let j = (offset + step) % n;
                if try_step(&mut alphas, &mut b, i, j) {
                    updates += 1;
                    break;
                }
            }
        }
        if violators == 0 {
            converged = true;
            break;
        }
        if updates == 0 {
            break; // stalled: no productive pair anywhere
        }
    }
    if !converged {
        // best-iterate bias for the returned model
        let (b_hi, b_lo) = bias_interval(&alphas);
        if b_hi.is_finite() && b_lo.is_finite() {
            b = (b_hi + b_lo) * F::cast(0.5);
        }
    }

    // Snap dust to the exact bound it represents. The values moved are
    // ulp-scale, so the equality constraint stays intact to ~1e-12.
    for (a, &c) in alphas.iter_mut().zip(&boxes) {
        if at_zero(*a) {
            *a = F::zero();
        } else if at_box(*a, c) {
            *a = c;
        }
    }

    // Keep only samples with nonzero dual weight.
    let mut sv_rows = Vec::new();
    let mut coeffs = Vec::new();
    for i in 0..n {
        if alphas[i] > F::zero() {
            sv_rows.extend_from_slice(features.row(i));
            coeffs.push(y[i] * alphas[i]);
        }
    }
    let sv = DenseMatrix::from_vec(coeffs.len(), features.cols(), sv_rows)?;
    let model = SvmModel::from_parts(sv, coeffs, b, gamma, converged)?;
    Ok(SmoResult {
        model,
        alphas,
        boxes,
        gamma,
        converged,
        passes,
    })
}
