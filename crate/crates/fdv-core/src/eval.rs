//! Verification metrics (FRR, FAR, EER) and the multi-writer evaluation
//! protocol.
//!
//! A sample is accepted when its score is at or above the threshold, so the
//! false rejection rate FRR(t) = #{genuine < t}/#genuine is nondecreasing in
//! t and the false acceptance rate FAR(t) = #{forgery >= t}/#forgery is
//! nonincreasing. The equal error rate is found by sweeping every distinct
//! score and the midpoints between adjacent ones (plus sentinels beyond both
//! ends) and either returning the first exact FRR = FAR tie or linearly
//! interpolating across the sign change of FRR - FAR.

use crate::error::{Error, Result};
use crate::image::Sample;
use crate::scalar::Real;
use crate::seeds;
use crate::svm::SvmConfig;
use crate::trainer::{train_writer, TrainConfig, WriterSplit};
use crate::vae::VaeConfig;
use rayon::prelude::*;
use serde::Serialize;

/// Provenance of a forgery score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ForgeryKind {
    /// Imitation of the target writer's signature.
    Skilled,
    /// Genuine signature of a different writer.
    Random,
}

/// Genuine and forgery decision scores for one classifier.
#[derive(Clone, Debug)]
pub struct ScoreSet<F> {
    genuine: Vec<F>,
    forgery: Vec<(F, ForgeryKind)>,
}

impl<F: Real> ScoreSet<F> {
    pub fn new(genuine: Vec<F>, forgery: Vec<(F, ForgeryKind)>) -> Result<Self> {
        if genuine.iter().any(|s| !s.is_finite())
            || forgery.iter().any(|(s, _)| !s.is_finite())
        {
            return Err(Error::Numeric("scores must be finite".into()));
        }
        Ok(ScoreSet { genuine, forgery })
    }

    pub fn genuine(&self) -> &[F] {
        &self.genuine
    }

    pub fn forgery(&self) -> &[(F, ForgeryKind)] {
        &self.forgery
    }

    /// Same genuine scores, forgeries restricted to one kind.
    pub fn restricted_to(&self, kind: ForgeryKind) -> ScoreSet<F> {
        ScoreSet {
            genuine: self.genuine.clone(),
            forgery: self
                .forgery
                .iter()
                .copied()
                .filter(|&(_, k)| k == kind)
                .collect(),
        }
    }
}

fn require_nonempty<F: Real>(set: &ScoreSet<F>) -> Result<()> {
    if set.genuine.is_empty() {
        return Err(Error::Empty("genuine scores"));
    }
    if set.forgery.is_empty() {
        return Err(Error::Empty("forgery scores"));
    }
    Ok(())
}

/// False rejection and false acceptance rates at threshold `t` under the
/// accept rule `score >= t`.
pub fn frr_far<F: Real>(set: &ScoreSet<F>, t: F) -> Result<(F, F)> {
    require_nonempty(set)?;
    let ng = F::cast(set.genuine.len() as f64);
    let nf = F::cast(set.forgery.len() as f64);
    let rejected = set.genuine.iter().filter(|&&s| s < t).count();
    let accepted = set.forgery.iter().filter(|&&(s, _)| s >= t).count();
    Ok((F::cast(rejected as f64) / ng, F::cast(accepted as f64) / nf))
}

/// The operating point where FRR equals FAR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerPoint<F> {
    pub eer: F,
    pub threshold: F,
}

/// All distinct scores, the midpoints between adjacent distinct scores, and
/// one sentinel beyond each end, in ascending order.
fn candidate_thresholds<F: Real>(set: &ScoreSet<F>) -> Vec<F> {
    let mut all: Vec<F> = set
        .genuine
        .iter()
        .copied()
        .chain(set.forgery.iter().map(|&(s, _)| s))
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    all.dedup();
    let mut cands = Vec::with_capacity(2 * all.len() + 1);
    cands.push(all[0] - F::one());
    for k in 0..all.len() {
        if k > 0 {
            cands.push((all[k - 1] + all[k]) / F::cast(2.0));
        }
        cands.push(all[k]);
    }
    cands.push(*all.last().expect("nonempty") + F::one());
    cands
}

/// Equal error rate and its threshold. Sweeps the candidate thresholds in
/// ascending order; an exact FRR = FAR tie returns the smallest such
/// threshold, otherwise the crossing of FRR - FAR is linearly interpolated
/// between the two adjacent candidates where its sign changes.
pub fn eer<F: Real>(set: &ScoreSet<F>) -> Result<EerPoint<F>> {
    require_nonempty(set)?;
    let cands = candidate_thresholds(set);
    let mut prev: Option<(F, F, F)> = None; // (t, frr, far)
    for &t in &cands {
        let (frr, far) = frr_far(set, t)?;
        if let Some((pt, pfrr, pfar)) = prev {
            debug_assert!(frr >= pfrr && far <= pfar, "rate monotonicity violated");
            if frr >= far {
                if frr == far {
                    return Ok(EerPoint { eer: frr, threshold: t });
                }
                let d0 = pfrr - pfar;
                let d1 = frr - far;
                let s = -d0 / (d1 - d0);
                return Ok(EerPoint {
                    eer: pfrr + s * (frr - pfrr),
                    threshold: pt + s * (t - pt),
                });
            }
        }
        prev = Some((t, frr, far));
    }
    // Below the low sentinel FRR - FAR = -1 and above the high sentinel it
    // is +1, so the sweep always crosses.
    unreachable!("threshold sweep found no crossing")
}

/// Ratio of the smallest inter-centroid distance to the largest intra-group
/// RMS spread. Larger is better; returns +inf when every group collapses to
/// its centroid.
pub fn separation_score<F: Real>(groups: &[Vec<Vec<F>>]) -> Result<F> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "separation_score needs at least two groups".into(),
        ));
    }
    let dim = groups
        .first()
        .and_then(|g| g.first())
        .map(|p| p.len())
        .ok_or(Error::Empty("separation group"))?;
    for g in groups {
        if g.is_empty() {
            return Err(Error::Empty("separation group"));
        }
        if g.iter().any(|p| p.len() != dim) {
            return Err(Error::DimMismatch {
                context: "separation_score point dimension",
                expected: dim,
                got: g.iter().map(|p| p.len()).find(|&l| l != dim).unwrap_or(dim),
            });
        }
    }
    let centroids: Vec<Vec<F>> = groups
        .iter()
        .map(|g| {
            let inv = F::one() / F::cast(g.len() as f64);
            (0..dim)
                .map(|c| g.iter().map(|p| p[c]).sum::<F>() * inv)
                .collect()
        })
        .collect();
    let mut min_inter = F::infinity();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let d2: F = (0..dim)
                .map(|c| (centroids[i][c] - centroids[j][c]) * (centroids[i][c] - centroids[j][c]))
                .sum();
            min_inter = min_inter.min(d2.sqrt());
        }
    }
    let mut max_spread = F::zero();
    for (g, c) in groups.iter().zip(&centroids) {
        let mean_sq: F = g
            .iter()
            .map(|p| (0..dim).map(|k| (p[k] - c[k]) * (p[k] - c[k])).sum::<F>())
            .sum::<F>()
            / F::cast(g.len() as f64);
        max_spread = max_spread.max(mean_sq.sqrt());
    }
    if max_spread == F::zero() {
        return Ok(F::infinity());
    }
    Ok(min_inter / max_spread)
}

/// Class of a scored test sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreClass {
    Genuine,
    Skilled,
    Random,
}

/// One scored test sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub writer_id: String,
    pub image_id: String,
    pub class: ScoreClass,
    pub score: f64,
}

/// An equal-error operating point together with the step-function rates at
/// its threshold (which bracket the interpolated EER).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub eer: f64,
    pub threshold: f64,
    pub frr_at_threshold: f64,
    pub far_at_threshold: f64,
}

fn rate_point<F: Real>(set: &ScoreSet<F>) -> Result<RatePoint> {
    let p = eer(set)?;
    let (frr, far) = frr_far(set, p.threshold)?;
    Ok(RatePoint {
        eer: p.eer.to_f64_lossy(),
        threshold: p.threshold.to_f64_lossy(),
        frr_at_threshold: frr.to_f64_lossy(),
        far_at_threshold: far.to_f64_lossy(),
    })
}

/// Per-writer outcome: split sizes, classifier diagnostics, and equal-error
/// points against all forgeries, skilled only, and random only (absent when
/// the corresponding test pools are empty).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WriterReport {
    pub writer_id: String,
    pub n_train_genuine: usize,
    pub n_train_random: usize,
    pub n_test_genuine: usize,
    pub n_test_skilled: usize,
    pub n_test_random: usize,
    pub svm_converged: bool,
    pub svm_passes: usize,
    pub all: Option<RatePoint>,
    pub skilled: Option<RatePoint>,
    pub random: Option<RatePoint>,
}

/// A writer excluded from the run, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedWriter {
    pub writer_id: String,
    pub reason: String,
}

/// Mean and population standard deviation over `n` writers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
}

fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Aggregate { mean, stddev: var.sqrt(), n: values.len() })
}

/// Full evaluation outcome. Two aggregation conventions are reported and
/// labeled: `per_writer_mean_*` averages each writer's own equal error rate,
/// while `pooled_*` sweeps a single global threshold over every writer's
/// scores at once.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Sorted by writer id.
    pub writers: Vec<WriterReport>,
    pub skipped: Vec<SkippedWriter>,
    pub per_writer_mean_all: Option<Aggregate>,
    pub per_writer_mean_skilled: Option<Aggregate>,
    pub per_writer_mean_random: Option<Aggregate>,
    pub pooled_all: Option<RatePoint>,
    pub pooled_skilled: Option<RatePoint>,
    pub pooled_random: Option<RatePoint>,
    /// Every scored test sample, ordered by writer id then class
    /// (genuine, skilled, random) then pool order.
    pub scores: Vec<ScoreRow>,
}

struct WriterEvalData<F> {
    report: WriterReport,
    rows: Vec<ScoreRow>,
    genuine: Vec<F>,
    skilled: Vec<F>,
    random: Vec<F>,
}

fn evaluate_writer<F: Real>(
    split: &WriterSplit<F>,
    vae_cfg: &VaeConfig,
    train_cfg: &TrainConfig,
    svm_cfg: &SvmConfig,
) -> Result<WriterEvalData<F>> {
    let trained = train_writer(split, vae_cfg, train_cfg, svm_cfg)?;
    let score_pool = |samples: &[Sample<F>]| -> Result<Vec<F>> {
        samples
            .iter()
            .map(|s| {
                let values = s.image.values();
                let mut frng = seeds::feature_stream(train_cfg.seed, values);
                let f = trained.vae.extract_features(values, &mut frng)?;
                trained.svm.decision_value(&f)
            })
            .collect()
    };
    let genuine = score_pool(&split.genuine_test)?;
    let skilled = score_pool(&split.skilled_test)?;
    let random = score_pool(&split.random_test)?;

    let mut rows = Vec::with_capacity(genuine.len() + skilled.len() + random.len());
    let pools = [
        (ScoreClass::Genuine, &split.genuine_test, &genuine),
        (ScoreClass::Skilled, &split.skilled_test, &skilled),
        (ScoreClass::Random, &split.random_test, &random),
    ];
    for (class, samples, scores) in pools {
        for (s, &v) in samples.iter().zip(scores) {
            rows.push(ScoreRow {
                writer_id: split.writer_id.clone(),
                image_id: s.id.clone(),
                class,
                score: v.to_f64_lossy(),
            });
        }
    }

    let forgery: Vec<(F, ForgeryKind)> = skilled
        .iter()
        .map(|&s| (s, ForgeryKind::Skilled))
        .chain(random.iter().map(|&s| (s, ForgeryKind::Random)))
        .collect();
    let set = ScoreSet::new(genuine.clone(), forgery)?;
    let have_genuine = !set.genuine().is_empty();
    let all = (have_genuine && !set.forgery().is_empty())
        .then(|| rate_point(&set))
        .transpose()?;
    let skilled_pt = (have_genuine && !skilled.is_empty())
        .then(|| rate_point(&set.restricted_to(ForgeryKind::Skilled)))
        .transpose()?;
    let random_pt = (have_genuine && !random.is_empty())
        .then(|| rate_point(&set.restricted_to(ForgeryKind::Random)))
        .transpose()?;

    Ok(WriterEvalData {
        report: WriterReport {
            writer_id: split.writer_id.clone(),
            n_train_genuine: split.genuine_train.len(),
            n_train_random: split.random_forgeries.len(),
            n_test_genuine: split.genuine_test.len(),
            n_test_skilled: split.skilled_test.len(),
            n_test_random: split.random_test.len(),
            svm_converged: trained.svm.converged(),
            svm_passes: trained.svm_passes,
            all,
            skilled: skilled_pt,
            random: random_pt,
        },
        rows,
        genuine,
        skilled,
        random,
    })
}

/// Train and score every writer, then assemble the report. Writers are
/// processed in parallel (rayon's current pool); every stream is keyed by
/// writer or image content, so the result is identical at any thread count.
/// `skipped` records writers the caller excluded during split planning.
pub fn run_protocol<F: Real>(
    splits: &[WriterSplit<F>],
    skipped: Vec<SkippedWriter>,
    vae_cfg: &VaeConfig,
    train_cfg: &TrainConfig,
    svm_cfg: &SvmConfig,
) -> Result<EvalReport> {
    let mut ids: Vec<&str> = splits.iter().map(|s| s.writer_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate writer_id in splits".into()));
    }

    let mut data: Vec<WriterEvalData<F>> = splits
        .par_iter()
        .map(|split| evaluate_writer(split, vae_cfg, train_cfg, svm_cfg))
        .collect::<Result<Vec<_>>>()?;
    data.sort_by(|a, b| a.report.writer_id.cmp(&b.report.writer_id));

    let collect_eers = |pick: fn(&WriterReport) -> Option<RatePoint>| -> Vec<f64> {
        data.iter().filter_map(|d| pick(&d.report).map(|p| p.eer)).collect()
    };
    let per_writer_mean_all = aggregate(&collect_eers(|r| r.all));
    let per_writer_mean_skilled = aggregate(&collect_eers(|r| r.skilled));
    let per_writer_mean_random = aggregate(&collect_eers(|r| r.random));

    let pooled_genuine: Vec<F> = data.iter().flat_map(|d| d.genuine.iter().copied()).collect();
    let pooled_forgery: Vec<(F, ForgeryKind)> = data
        .iter()
        .flat_map(|d| {
            d.skilled
                .iter()
                .map(|&s| (s, ForgeryKind::Skilled))
                .chain(d.random.iter().map(|&s| (s, ForgeryKind::Random)))
                .collect::<Vec<_>>()
        })
        .collect();
    let pooled = ScoreSet::new(pooled_genuine, pooled_forgery)?;
    let pooled_rate = |set: &ScoreSet<F>| -> Result<Option<RatePoint>> {
        if set.genuine().is_empty() || set.forgery().is_empty() {
            Ok(None)
        } else {
            rate_point(set).map(Some)
        }
    };
    let pooled_all = pooled_rate(&pooled)?;
    let pooled_skilled = pooled_rate(&pooled.restricted_to(ForgeryKind::Skilled))?;
    let pooled_random = pooled_rate(&pooled.restricted_to(ForgeryKind::Random))?;

    let mut writers = Vec::with_capacity(data.len());
    let mut scores = Vec::new();
    for d in data {
        writers.push(d.report);
        scores.extend(d.rows);
    }
    Ok(EvalReport {
        writers,
        skipped,
        per_writer_mean_all,
        per_writer_mean_skilled,
        per_writer_mean_random,
        pooled_all,
        pooled_skilled,
        pooled_random,
        scores,
    })
}
