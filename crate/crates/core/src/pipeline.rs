//! File-level workflows behind the command line tool: training from a
//! config file, evaluation, sampling, constraint generation and embedding
//! export. Every artifact goes to a caller-chosen output directory under a
//! fixed file name and is written atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::constraints::{build_weights, flip_noise, sample_constraints};
use crate::data::{load_dataset, save_dataset, split_indices, write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{score, Scores};
use crate::model::{assign_latent, generate};
use crate::prior::PairwiseWeights;
use crate::trainer::{fit, ConstraintSettings, RunConfig, TestSplit};

pub const CHECKPOINT_FILE: &str = "checkpoint.dcgm";
pub const FINAL_CHECKPOINT_FILE: &str = "final.dcgm";
pub const TRAIN_LOG_FILE: &str = "trainlog.csv";
pub const CONSTRAINTS_FILE: &str = "constraints.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SAMPLES_FILE: &str = "samples.dcds";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

/// Stream of the seeded generator used for drawing constraints; training
/// uses stream 0.
const CONSTRAINT_STREAM: u64 = 1;

/// Training job description. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: PathBuf,
    /// Treat the last CSV column as the label (CSV datasets only).
    #[serde(default)]
    pub csv_labelled: bool,
    /// Held-out set. When absent the dataset is split.
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Constraint CSV indexing rows of the training split. When absent,
    /// constraints are drawn from the training labels per `run.constraints`.
    #[serde(default)]
    pub constraints: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfigFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset);
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.test_dataset.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.constraints.as_mut() {
            resolve(p);
        }
        cfg.run.validate()?;
        Ok(cfg)
    }
}

/// What a training job produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_constraints: usize,
    pub best_epoch: Option<usize>,
    pub best_test: Option<Scores>,
    pub final_test: Option<Scores>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Draws constraints from `labels` according to `settings`.
pub fn draw_constraints(labels: &[usize], settings: &ConstraintSettings, seed: u64) -> Result<PairwiseWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CONSTRAINT_STREAM);
    let cs = sample_constraints(labels, settings.count, settings.weight_magnitude()?, &mut rng)?;
    let cs = flip_noise(&cs, settings.noise, &mut rng)?;
    build_weights(&cs, labels.len())
}

fn require_labels<'a>(ds: &'a Dataset, what: &str) -> Result<&'a [usize]> {
    ds.labels
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{what} needs a labelled dataset")))
}

/// Runs a full training job and writes the best checkpoint, the final
/// checkpoint, the train log, the constraints used and a summary.
pub fn run_training(cfg: &RunConfigFile) -> Result<TrainSummary> {
    let ds = load_dataset(&cfg.dataset, cfg.csv_labelled)?;
    let (train, test) = match &cfg.test_dataset {
        Some(p) => (ds, Some(load_dataset(p, cfg.csv_labelled)?)),
        None if ds.labels.is_some() => {
            let (tr, te) = split_indices(ds.n(), cfg.train_fraction, cfg.split_seed)?;
            (ds.select(&tr)?, Some(ds.select(&te)?))
        }
        None => (ds, None),
    };
    if let Some(t) = &test {
        if t.dim() != train.dim() {
            return Err(Error::shape("run_training", &[train.dim()], &[t.dim()]));
        }
    }
    let w = match &cfg.constraints {
        Some(p) => PairwiseWeights::read_csv(p, train.n())?,
        None if cfg.run.constraints.count == 0 => PairwiseWeights::new(train.n()),
        None => draw_constraints(require_labels(&train, "drawing constraints")?, &cfg.run.constraints, cfg.run.seed)?,
    };

    ensure_dir(&cfg.output_dir)?;
    let test_split = match &test {
        Some(t) => Some(TestSplit {
            x: &t.x,
            labels: require_labels(t, "evaluation")?,
        }),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let out = fit(&train.x, &w, test_split, &cfg.run, &mut rng)?;

    let last_epoch = out.log.epochs.last().map(|r| r.epoch);
    let final_test = out.log.epochs.last().and_then(|r| r.test);
    let best = Checkpoint {
        model: out.chosen().0.clone(),
        mixture: out.chosen().1.clone(),
        meta: CheckpointMeta {
            epoch: out.best.as_ref().map(|b| b.epoch).or(last_epoch),
            test_scores: out.best.as_ref().map(|b| b.scores).or(final_test),
        },
    };
    let last = Checkpoint {
        model: out.model.clone(),
        mixture: out.mixture.clone(),
        meta: CheckpointMeta {
            epoch: last_epoch,
            test_scores: final_test,
        },
    };
    best.save(&cfg.output_dir.join(CHECKPOINT_FILE))?;
    last.save(&cfg.output_dir.join(FINAL_CHECKPOINT_FILE))?;
    write_atomic(&cfg.output_dir.join(TRAIN_LOG_FILE), out.log.to_csv().as_bytes())?;
    let mut csv = Vec::new();
    w.write_csv(&mut csv)?;
    write_atomic(&cfg.output_dir.join(CONSTRAINTS_FILE), &csv)?;
    let summary = TrainSummary {
        seed: cfg.run.seed,
        n_train: train.n(),
        n_test: test.as_ref().map_or(0, Dataset::n),
        n_constraints: w.len(),
        best_epoch: out.best.as_ref().map(|b| b.epoch),
        best_test: out.best.as_ref().map(|b| b.scores),
        final_test,
    };
    write_atomic(&cfg.output_dir.join(SUMMARY_FILE), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Cluster assignments of a checkpoint on `ds`, scored against its labels.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset) -> Result<Scores> {
    let labels = require_labels(ds, "evaluate")?;
    let z = ck.model.encode(&ds.x)?.mean;
    score(&assign_latent(&ck.mixture, &z)?, labels)
}

/// `per_cluster` decoded samples from every component, labelled by
/// component, written to `out_dir`.
pub fn write_samples(ck: &Checkpoint, per_cluster: usize, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for k in 0..ck.mixture.k() {
        let x = generate(&ck.model, &ck.mixture, k, per_cluster, &mut rng)?;
        rows.extend_from_slice(x.data());
        labels.extend(std::iter::repeat_n(k, per_cluster));
    }
    let ds = Dataset::new(Tensor::matrix(labels.len(), ck.model.spec().input_dim, rows)?, Some(labels))?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(SAMPLES_FILE);
    save_dataset(&path, &ds)?;
    Ok(path)
}

/// Draws constraints from the labels of `ds` and writes them to `out_dir`.
pub fn write_constraints(ds: &Dataset, settings: &ConstraintSettings, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let w = draw_constraints(require_labels(ds, "make-constraints")?, settings, seed)?;
    let mut csv = Vec::new();
    w.write_csv(&mut csv)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(CONSTRAINTS_FILE);
    write_atomic(&path, &csv)?;
    Ok(path)
}

/// CSV of latent means, assigned cluster and true label (blank if absent).
pub fn embeddings_csv(ck: &Checkpoint, ds: &Dataset) -> Result<String> {
    let z = ck.model.encode(&ds.x)?.mean;
    let assigned = assign_latent(&ck.mixture, &z)?;
    let d = z.cols();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "z{j},");
    }
    out.push_str("cluster,label\n");
    for (i, c) in assigned.iter().enumerate() {
        for v in z.row_slice(i) {
            let _ = write!(out, "{v},");
        }
        let label = ds.labels.as_ref().map_or(String::new(), |l| l[i].to_string());
        let _ = writeln!(out, "{c},{label}");
    }
    Ok(out)
}

pub fn write_embeddings(ck: &Checkpoint, ds: &Dataset, out_dir: &Path) -> Result<PathBuf> {
    let csv = embeddings_csv(ck, ds)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(EMBEDDINGS_FILE);
    write_atomic(&path, csv.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_rejects_unknown_keys_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"dataset": "d.dcds", "output_dir": "out", "extra": 1}"#).unwrap();
        assert!(matches!(RunConfigFile::load(&p), Err(Error::Config(_))));
        fs::write(&p, r#"{"dataset": "d.dcds", "output_dir": "out", "run": {"k": 4}}"#).unwrap();
        let cfg = RunConfigFile::load(&p).unwrap();
        assert_eq!(cfg.dataset, dir.path().join("d.dcds"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.run.k, 4);
        assert_eq!(cfg.run.hidden, vec![500, 500, 2000]);
    }

    #[test]
    fn constraint_draws_are_reproducible() {
        let labels = [0, 1, 0, 1, 2, 2, 0];
        let s = ConstraintSettings {
            count: 10,
            ..ConstraintSettings::default()
        };
        let a = draw_constraints(&labels, &s, 4).unwrap();
        let b = draw_constraints(&labels, &s, 4).unwrap();
        assert_eq!(a, b);
        for (i, j, w) in a.pairs() {
            assert_eq!(w > 0.0, labels[i] == labels[j]);
        }
    }
}
