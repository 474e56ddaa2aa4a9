//! Dataset layout scanning, protocol split planning, and image loading.
//!
//! A dataset lives under `<root>/writers/<id>/genuine/*.{png,pgm}` and
//! `<root>/writers/<id>/skilled/*.{png,pgm}`. Writer ids are the directory
//! names; image ids are the forward-slash relative paths from the root, so
//! they are unique and stable across machines.
//!
//! Split planning is fully deterministic: pools are filled from
//! lexicographically sorted file names, and forgery pools draw from the
//! other enrolled writers in sorted order — the writer's own signatures
//! never appear in them.

use crate::error::{Error, Result};
use crate::eval::SkippedWriter;
use crate::image::{GrayImage, Sample};
use crate::preprocess::{preprocess, PreprocessConfig};
use crate::scalar::Real;
use crate::trainer::WriterSplit;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// One writer's directory listing (relative paths, sorted).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WriterDir {
    pub id: String,
    pub genuine: Vec<String>,
    pub skilled: Vec<String>,
}

/// Scanned dataset: writers sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub writers: Vec<WriterDir>,
    /// Present when the dataset ships a split manifest (`splits.json` at
    /// the root); recorded for provenance.
    pub manifest: Option<PathBuf>,
}

fn is_image_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".png") || lower.ends_with(".pgm")
}

fn list_images(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir.to_path_buf(), e))? {
        let entry = entry.map_err(|e| Error::io(dir.to_path_buf(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && is_image_name(&name) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Scan `<root>/writers/*` for writer directories and their image files.
/// Directory ids are unique by construction; an empty or missing `writers`
/// directory is a data error.
pub fn scan(root: &Path) -> Result<DatasetLayout> {
    let writers_dir = root.join("writers");
    if !writers_dir.is_dir() {
        return Err(Error::Data(format!(
            "{} has no writers/ directory; expected writers/<id>/genuine/*.png",
            root.display()
        )));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&writers_dir).map_err(|e| Error::io(writers_dir.clone(), e))? {
        let entry = entry.map_err(|e| Error::io(writers_dir.clone(), e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no writer directories",
            writers_dir.display()
        )));
    }
    let mut writers = Vec::with_capacity(ids.len());
    for id in ids {
        let genuine = list_images(&writers_dir.join(&id).join("genuine"))?
            .into_iter()
            .map(|n| format!("writers/{id}/genuine/{n}"))
            .collect();
        let skilled = list_images(&writers_dir.join(&id).join("skilled"))?
            .into_iter()
            .map(|n| format!("writers/{id}/skilled/{n}"))
            .collect();
        writers.push(WriterDir { id, genuine, skilled });
    }
    let manifest_path = root.join("splits.json");
    Ok(DatasetLayout {
        root: root.to_path_buf(),
        writers,
        manifest: manifest_path.is_file().then_some(manifest_path),
    })
}

/// How the evaluation protocol splits each writer's data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Genuine signatures used to train each writer's model.
    pub train_genuine_per_writer: usize,
    /// Genuine signatures held out for testing; `None` takes all remaining.
    pub test_genuine_per_writer: Option<usize>,
    /// Skilled forgeries scored at test time; `None` takes all available.
    pub test_skilled_per_writer: Option<usize>,
    /// Training negatives contributed by each other enrolled writer, taken
    /// from that donor's training genuines.
    pub random_train_per_donor: usize,
    /// Test random forgeries contributed by each other enrolled writer,
    /// taken from that donor's held-out genuines.
    pub random_test_per_donor: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            train_genuine_per_writer: 10,
            test_genuine_per_writer: None,
            test_skilled_per_writer: None,
            random_train_per_donor: 1,
            random_test_per_donor: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_genuine_per_writer == 0 {
            return Err(Error::InvalidArgument(
                "train_genuine_per_writer must be >= 1".into(),
            ));
        }
        if self.random_train_per_donor == 0 {
            return Err(Error::InvalidArgument(
                "random_train_per_donor must be >= 1 (training needs negatives)".into(),
            ));
        }
        if self.test_genuine_per_writer == Some(0) {
            return Err(Error::InvalidArgument(
                "test_genuine_per_writer must be >= 1 when set".into(),
            ));
        }
        Ok(())
    }
}

/// Planned pools for one writer, as relative paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitPlan {
    pub writer_id: String,
    pub genuine_train: Vec<String>,
    pub genuine_test: Vec<String>,
    pub skilled_test: Vec<String>,
    pub random_train: Vec<String>,
    pub random_test: Vec<String>,
}

/// Outcome of planning: per-writer plans plus the writers that had to be
/// skipped, with reasons.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanOutcome {
    pub plans: Vec<SplitPlan>,
    pub skipped: Vec<SkippedWriter>,
}

struct Enrolled<'a> {
    dir: &'a WriterDir,
    genuine_train: Vec<String>,
    genuine_test: Vec<String>,
}

/// Deterministically partition every writer's images per the protocol.
/// Writers without enough images are skipped with a reason; forgery pools
/// for each writer draw from every other enrolled writer (the target writer
/// is always excluded from its own forgery pools).
pub fn plan_splits(layout: &DatasetLayout, cfg: &ProtocolConfig) -> Result<PlanOutcome> {
    cfg.validate()?;
    let mut skipped = Vec::new();
    let mut enrolled: Vec<Enrolled> = Vec::new();

    for dir in &layout.writers {
        let n_train = cfg.train_genuine_per_writer;
        let min_test = cfg.test_genuine_per_writer.unwrap_or(1);
        if dir.genuine.len() < n_train + min_test {
            skipped.push(SkippedWriter {
                writer_id: dir.id.clone(),
                reason: format!(
                    "{} genuine signatures; protocol needs {} train + {} test",
                    dir.genuine.len(),
                    n_train,
                    min_test
                ),
            });
            continue;
        }
        if let Some(k) = cfg.test_skilled_per_writer {
            if dir.skilled.len() < k {
                skipped.push(SkippedWriter {
                    writer_id: dir.id.clone(),
                    reason: format!(
                        "{} skilled forgeries; protocol needs {k}",
                        dir.skilled.len()
                    ),
                });
                continue;
            }
        }
        let genuine_train = dir.genuine[..n_train].to_vec();
        let genuine_test = match cfg.test_genuine_per_writer {
            Some(k) => dir.genuine[n_train..n_train + k].to_vec(),
            None => dir.genuine[n_train..].to_vec(),
        };
        enrolled.push(Enrolled { dir, genuine_train, genuine_test });
    }

    if enrolled.len() < 2 {
        for e in &enrolled {
            skipped.push(SkippedWriter {
                writer_id: e.dir.id.clone(),
                reason: "no donor writers enrolled to draw random forgeries from".into(),
            });
        }
        return Ok(PlanOutcome { plans: Vec::new(), skipped });
    }

    let mut plans = Vec::with_capacity(enrolled.len());
    for target in &enrolled {
        let mut random_train = Vec::new();
        let mut random_test = Vec::new();
        for donor in &enrolled {
            if donor.dir.id == target.dir.id {
                continue;
            }
            let k = cfg.random_train_per_donor.min(donor.genuine_train.len());
            random_train.extend_from_slice(&donor.genuine_train[..k]);
            let k = cfg.random_test_per_donor.min(donor.genuine_test.len());
            random_test.extend_from_slice(&donor.genuine_test[..k]);
        }
        let skilled_test = match cfg.test_skilled_per_writer {
            Some(k) => target.dir.skilled[..k].to_vec(),
            None => target.dir.skilled.clone(),
        };
        plans.push(SplitPlan {
            writer_id: target.dir.id.clone(),
            genuine_train: target.genuine_train.clone(),
            genuine_test: target.genuine_test.clone(),
            skilled_test,
            random_train,
            random_test,
        });
    }
    Ok(PlanOutcome { plans, skipped })
}

/// Load and preprocess every image referenced by the plans (each file is
/// read once, in parallel) and assemble per-writer splits. Sample ids are
/// the relative paths.
pub fn load_splits<F: Real>(
    root: &Path,
    plans: &[SplitPlan],
    pre: &PreprocessConfig,
) -> Result<Vec<WriterSplit<F>>> {
    let mut unique: Vec<&String> = plans
        .iter()
        .flat_map(|p| {
            p.genuine_train
                .iter()
                .chain(&p.genuine_test)
                .chain(&p.skilled_test)
                .chain(&p.random_train)
                .chain(&p.random_test)
        })
        .collect();
    unique.sort();
    unique.dedup();

    let loaded: BTreeMap<String, Sample<F>> = unique
        .par_iter()
        .map(|rel| {
            let full = root.join(rel);
            let gray = GrayImage::load(&full)?;
            let norm = preprocess::<F>(&gray, pre)?;
            Ok(((*rel).clone(), Sample::new((*rel).clone(), norm)))
        })
        .collect::<Result<_>>()?;

    let pick = |rels: &[String]| -> Vec<Sample<F>> {
        rels.iter()
            .map(|r| loaded.get(r).expect("loaded all referenced paths").clone())
            .collect()
    };
    let splits = plans
        .iter()
        .map(|p| {
            let split = WriterSplit {
                writer_id: p.writer_id.clone(),
                genuine_train: pick(&p.genuine_train),
                random_forgeries: pick(&p.random_train),
                genuine_test: pick(&p.genuine_test),
                skilled_test: pick(&p.skilled_test),
                random_test: pick(&p.random_test),
            };
            split.validate()?;
            Ok(split)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(splits)
}

/// Per-writer inventory row for the dataset report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InventoryRow {
    pub writer_id: String,
    pub n_genuine: usize,
    pub n_skilled: usize,
}

/// Outcome of a full dataset check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetCheck {
    pub inventory: Vec<InventoryRow>,
    /// Writers that would be skipped under the given protocol.
    pub warnings: Vec<String>,
}

/// Verify every image is readable 8-bit grayscale and report per-writer
/// counts plus protocol warnings. An unreadable file is a hard error naming
/// the file.
pub fn check_dataset(
    layout: &DatasetLayout,
    protocol: &ProtocolConfig,
) -> Result<DatasetCheck> {
    let all: Vec<&String> = layout
        .writers
        .iter()
        .flat_map(|w| w.genuine.iter().chain(&w.skilled))
        .collect();
    all.par_iter().try_for_each(|rel| -> Result<()> {
        GrayImage::load(&layout.root.join(rel)).map(|_| ())
    })?;

    let inventory = layout
        .writers
        .iter()
        .map(|w| InventoryRow {
            writer_id: w.id.clone(),
            n_genuine: w.genuine.len(),
            n_skilled: w.skilled.len(),
        })
        .collect();
    let outcome = plan_splits(layout, protocol)?;
    let warnings = outcome
        .skipped
        .iter()
        .map(|s| format!("writer {} would be skipped: {}", s.writer_id, s.reason))
        .collect();
    Ok(DatasetCheck { inventory, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_corpus, CorpusSpec};
    use tempfile::tempdir;

    fn synth_root(dir: &Path) -> PathBuf {
        let root = dir.join("corpus");
        let spec = CorpusSpec {
            n_writers: 4,
            genuine_per_writer: 5,
            skilled_per_writer: 3,
            canvas_w: 48,
            canvas_h: 32,
            seed: 2,
            ..CorpusSpec::default()
        };
        gen_corpus(&spec, &root, false).unwrap();
        root
    }

    #[test]
    fn scan_lists_writers_and_sorted_images() {
        let dir = tempdir().unwrap();
        let root = synth_root(dir.path());
        let layout = scan(&root).unwrap();
        assert_eq!(layout.writers.len(), 4);
        assert!(layout.manifest.is_none());
        let w = &layout.writers[0];
        assert_eq!(w.id, "w001");
        assert_eq!(w.genuine.len(), 5);
        assert_eq!(w.skilled.len(), 3);
        assert_eq!(w.genuine[0], "writers/w001/genuine/g00.png");
        assert!(w.genuine.windows(2).all(|p| p[0] < p[1]));
        assert!(scan(dir.path()).is_err());
    }

    fn fake_layout(n_writers: usize, genuine: usize, skilled: usize) -> DatasetLayout {
        let writers = (0..n_writers)
            .map(|w| {
                let id = format!("w{:03}", w + 1);
                WriterDir {
                    genuine: (0..genuine)
                        .map(|k| format!("writers/{id}/genuine/g{k:02}.png"))
                        .collect(),
                    skilled: (0..skilled)
                        .map(|k| format!("writers/{id}/skilled/s{k:02}.png"))
                        .collect(),
                    id,
                }
            })
            .collect();
        DatasetLayout { root: PathBuf::from("/nowhere"), writers, manifest: None }
    }

    #[test]
    fn default_protocol_reproduces_reference_splits_on_75x15_layout() {
        // 75 writers with 15 genuine + 15 skilled each must split into
        // 10 train / 5 genuine + 15 skilled test, with a 74-donor random
        // pool that excludes the target writer.
        let layout = fake_layout(75, 15, 15);
        let outcome = plan_splits(&layout, &ProtocolConfig::default()).unwrap();
        assert_eq!(outcome.plans.len(), 75);
        assert!(outcome.skipped.is_empty());
        for plan in &outcome.plans {
            assert_eq!(plan.genuine_train.len(), 10);
            assert_eq!(plan.genuine_test.len(), 5);
            assert_eq!(plan.skilled_test.len(), 15);
            assert_eq!(plan.random_train.len(), 74);
            assert_eq!(plan.random_test.len(), 74);
            let own = format!("writers/{}/", plan.writer_id);
            assert!(plan.random_train.iter().all(|p| !p.starts_with(&own)));
            assert!(plan.random_test.iter().all(|p| !p.starts_with(&own)));
            // Train and test pools never share an image.
            for p in &plan.genuine_train {
                assert!(!plan.genuine_test.contains(p));
                assert!(!plan.random_test.contains(p));
            }
            for p in &plan.random_train {
                assert!(!plan.random_test.contains(p));
            }
        }
    }

    #[test]
    fn writers_with_too_few_images_are_skipped_with_reasons() {
        let mut layout = fake_layout(3, 15, 15);
        layout.writers[1].genuine.truncate(1);
        let outcome = plan_splits(&layout, &ProtocolConfig::default()).unwrap();
        assert_eq!(outcome.plans.len(), 2);
        assert_eq!(outcome.skipped.len(), 1);
        assert_eq!(outcome.skipped[0].writer_id, "w002");
        assert!(outcome.skipped[0].reason.contains("1 genuine"));

        // Requiring more skilled forgeries than exist also skips.
        let cfg = ProtocolConfig {
            test_skilled_per_writer: Some(20),
            ..ProtocolConfig::default()
        };
        let outcome = plan_splits(&fake_layout(2, 15, 15), &cfg).unwrap();
        assert!(outcome.plans.is_empty());
        assert_eq!(outcome.skipped.len(), 2);
    }

    #[test]
    fn a_lone_enrolled_writer_cannot_be_planned() {
        let mut layout = fake_layout(2, 15, 0);
        layout.writers[1].genuine.truncate(2);
        let outcome = plan_splits(&layout, &ProtocolConfig::default()).unwrap();
        assert!(outcome.plans.is_empty());
        assert_eq!(outcome.skipped.len(), 2);
        assert!(outcome.skipped.iter().any(|s| s.reason.contains("donor")));
    }

    #[test]
    fn protocol_validation_rejects_degenerate_counts() {
        let mut cfg = ProtocolConfig::default();
        cfg.train_genuine_per_writer = 0;
        assert!(cfg.validate().is_err());
        cfg = ProtocolConfig::default();
        cfg.random_train_per_donor = 0;
        assert!(cfg.validate().is_err());
        cfg = ProtocolConfig::default();
        cfg.test_genuine_per_writer = Some(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn load_splits_assembles_preprocessed_pools() {
        let dir = tempdir().unwrap();
        let root = synth_root(dir.path());
        let layout = scan(&root).unwrap();
        let cfg = ProtocolConfig {
            train_genuine_per_writer: 3,
            test_genuine_per_writer: Some(2),
            test_skilled_per_writer: None,
            random_train_per_donor: 2,
            random_test_per_donor: 1,
        };
        let outcome = plan_splits(&layout, &cfg).unwrap();
        assert_eq!(outcome.plans.len(), 4);
        let pre = PreprocessConfig { side_h: 16, side_w: 16, strict_binary: false };
        let splits = load_splits::<f64>(&root, &outcome.plans, &pre).unwrap();
        assert_eq!(splits.len(), 4);
        for s in &splits {
            assert_eq!(s.genuine_train.len(), 3);
            assert_eq!(s.genuine_test.len(), 2);
            assert_eq!(s.skilled_test.len(), 3);
            assert_eq!(s.random_forgeries.len(), 3 * 2);
            assert_eq!(s.random_test.len(), 3);
            assert_eq!(s.input_dim(), 256);
            let own = format!("writers/{}/", s.writer_id);
            assert!(s.random_forgeries.iter().all(|x| !x.id.starts_with(&own)));
            assert!(s.genuine_train.iter().all(|x| x.id.starts_with(&own)));
        }
    }

    #[test]
    fn check_dataset_reports_inventory_and_flags_corruption() {
        let dir = tempdir().unwrap();
        let root = synth_root(dir.path());
        let layout = scan(&root).unwrap();
        let check = check_dataset(&layout, &ProtocolConfig::default()).unwrap();
        assert_eq!(check.inventory.len(), 4);
        assert_eq!(check.inventory[0].n_genuine, 5);
        // 5 genuine < 10 train + 1 test, so every writer is warned about.
        assert_eq!(check.warnings.len(), 4);

        std::fs::write(root.join("writers/w001/genuine/g00.png"), b"not a png").unwrap();
        let err = check_dataset(&layout, &ProtocolConfig::default()).unwrap_err();
        assert!(err.to_string().contains("g00.png"), "{err}");
    }
}
