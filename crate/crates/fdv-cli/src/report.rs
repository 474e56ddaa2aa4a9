//! Deterministic text outputs for the evaluation and training commands.
//!
//! Every byte written here is a pure function of the evaluation result, so
//! identical runs produce identical files regardless of worker count.

use fdv_core::eval::{Aggregate, EvalReport, RatePoint, ScoreClass};
use fdv_core::trainer::RoundTelemetry;
use fdv_core::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Write via a temp file plus rename so concurrent readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn class_label(class: ScoreClass) -> &'static str {
    match class {
        ScoreClass::Genuine => "genuine",
        ScoreClass::Skilled => "skilled",
        ScoreClass::Random => "random",
    }
}

/// Per-round loss history as CSV.
pub fn telemetry_csv(rows: &[RoundTelemetry]) -> String {
    let mut s =
        String::from("round,loss_vae,loss_fd,loss_vae_gg,loss_fd_gg,loss_vae_gf,loss_fd_gf\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.round, r.loss_vae, r.loss_fd, r.loss_vae_gg, r.loss_fd_gg, r.loss_vae_gf, r.loss_fd_gf
        );
    }
    s
}

fn push_rate_cells(s: &mut String, point: &Option<RatePoint>) {
    match point {
        Some(p) => {
            let _ = write!(
                s,
                ",{},{},{},{}",
                p.eer, p.threshold, p.frr_at_threshold, p.far_at_threshold
            );
        }
        None => s.push_str(",,,,"),
    }
}

/// One row per evaluated writer: split sizes, classifier diagnostics, and
/// the equal-error operating points. Empty cells mean the corresponding
/// test pool was empty.
pub fn writers_csv(report: &EvalReport) -> String {
    let mut s = String::from(
        "writer_id,n_train_genuine,n_train_random,n_test_genuine,n_test_skilled,n_test_random,\
         svm_converged,svm_passes,\
         eer_all,threshold_all,frr_all,far_all,\
         eer_skilled,threshold_skilled,frr_skilled,far_skilled,\
         eer_random,threshold_random,frr_random,far_random\n",
    );
    for w in &report.writers {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            w.writer_id,
            w.n_train_genuine,
            w.n_train_random,
            w.n_test_genuine,
            w.n_test_skilled,
            w.n_test_random,
            w.svm_converged,
            w.svm_passes
        );
        push_rate_cells(&mut s, &w.all);
        push_rate_cells(&mut s, &w.skilled);
        push_rate_cells(&mut s, &w.random);
        s.push('\n');
    }
    s
}

/// Every scored test sample, one row each.
pub fn scores_csv(report: &EvalReport) -> String {
    let mut s = String::from("writer_id,image_id,class,score\n");
    for row in &report.scores {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            row.writer_id,
            row.image_id,
            class_label(row.class),
            row.score
        );
    }
    s
}

fn write_aggregate_line(s: &mut String, label: &str, agg: &Option<Aggregate>) {
    match agg {
        Some(a) => {
            let _ = writeln!(
                s,
                "  {label:<18} mean {:8.4}%  stddev {:7.4}%  (n={})",
                100.0 * a.mean,
                100.0 * a.stddev,
                a.n
            );
        }
        None => {
            let _ = writeln!(s, "  {label:<18} (no scored samples)");
        }
    }
}

fn write_pooled_line(s: &mut String, label: &str, point: &Option<RatePoint>) {
    match point {
        Some(p) => {
            let _ = writeln!(
                s,
                "  {label:<18} EER {:8.4}%  at threshold {:+.6}  (FRR {:.4}%, FAR {:.4}%)",
                100.0 * p.eer,
                p.threshold,
                100.0 * p.frr_at_threshold,
                100.0 * p.far_at_threshold
            );
        }
        None => {
            let _ = writeln!(s, "  {label:<18} (no scored samples)");
        }
    }
}

/// Human-readable run summary.
pub fn summary_text(seed: u64, seed_source: &str, report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "signature verification evaluation");
    let _ = writeln!(s, "=================================");
    let _ = writeln!(s, "seed: {seed} (from {seed_source})");
    let _ = writeln!(s, "writers evaluated: {}", report.writers.len());
    let _ = writeln!(s, "writers skipped:   {}", report.skipped.len());
    s.push('\n');

    let _ = writeln!(s, "per-writer mean EER (each writer at its own threshold)");
    write_aggregate_line(&mut s, "all forgeries:", &report.per_writer_mean_all);
    write_aggregate_line(&mut s, "skilled only:", &report.per_writer_mean_skilled);
    write_aggregate_line(&mut s, "random only:", &report.per_writer_mean_random);
    s.push('\n');

    let _ = writeln!(s, "per-writer mean FRR/FAR at the writer's EER threshold");
    for (label, pick) in [
        ("all forgeries:", 0usize),
        ("skilled only:", 1),
        ("random only:", 2),
    ] {
        let points: Vec<&RatePoint> = report
            .writers
            .iter()
            .filter_map(|w| match pick {
                0 => w.all.as_ref(),
                1 => w.skilled.as_ref(),
                _ => w.random.as_ref(),
            })
            .collect();
        if points.is_empty() {
            let _ = writeln!(s, "  {label:<18} (no scored samples)");
        } else {
            let n = points.len() as f64;
            let frr = points.iter().map(|p| p.frr_at_threshold).sum::<f64>() / n;
            let far = points.iter().map(|p| p.far_at_threshold).sum::<f64>() / n;
            let _ = writeln!(
                s,
                "  {label:<18} FRR {:8.4}%  FAR {:8.4}%  (n={})",
                100.0 * frr,
                100.0 * far,
                points.len()
            );
        }
    }
    s.push('\n');

    let _ = writeln!(s, "pooled rates (one global threshold over all writers)");
    write_pooled_line(&mut s, "all forgeries:", &report.pooled_all);
    write_pooled_line(&mut s, "skilled only:", &report.pooled_skilled);
    write_pooled_line(&mut s, "random only:", &report.pooled_random);

    if !report.skipped.is_empty() {
        s.push('\n');
        let _ = writeln!(s, "skipped writers");
        for sk in &report.skipped {
            let _ = writeln!(s, "  {}: {}", sk.writer_id, sk.reason);
        }
    }
    s
}
