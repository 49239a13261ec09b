//! Optimization, the training loop with checkpoints, and evaluation reports.

mod optim;
mod report;

pub use optim::{adamw_step, AdamWConfig, OptState};
pub use report::{evaluate, evaluate_predictions, CategoryRow, Report};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::FrameStack;
use crate::model::{bce_loss, frames_to_tensor, tensor_to_probs, voxels_to_tensor, E2VModel, ModelConfig, ModelError};
use crate::tensor::{read_checkpoint, write_checkpoint, Mode, TensorError};
use crate::voxel::{iou, VoxelGrid, DEFAULT_IOU_THRESHOLD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("inconsistent sample shapes: {0}")]
    ShapeInconsistency(String),
    #[error("optimizer state does not match the model: {0}")]
    StateShapeMismatch(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Save every this many epochs; the final epoch is always saved. 0 saves only the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_threshold")]
    pub iou_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

impl TrainRun {
    pub fn paper() -> Self {
        Self {
            epochs: 100,
            batch_size: 5,
            seed: 0,
            checkpoint_every: 10,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.iou_threshold) {
            return Err(TrainError::Config(format!("iou_threshold {} outside [0, 1)", self.iou_threshold)));
        }
        Ok(())
    }

    fn saves_after(&self, epoch: usize) -> bool {
        epoch == self.epochs || (self.checkpoint_every > 0 && epoch % self.checkpoint_every == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub iou: f64,
}

/// Comma-separated `epoch,loss,iou` rows with a header line.
pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch,loss,iou\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.epoch, r.loss, r.iou).unwrap();
    }
    s
}

pub fn parse_log(text: &str) -> Option<Vec<LogRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',');
            let row = LogRow {
                epoch: it.next()?.parse().ok()?,
                loss: it.next()?.parse().ok()?,
                iou: it.next()?.parse().ok()?,
            };
            it.next().is_none().then_some(row)
        })
        .collect()
}

/// Visit order for one epoch: a permutation seeded by `(seed, epoch)` only,
/// so a resumed run reproduces it.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Hex SHA-256 of the model config's JSON; checkpoints are only loaded into
/// models with the same hash.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(cfg).expect("config serializes"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: E2VModel<f32>,
    pub opt: OptState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<LogRow>,
}

impl TrainState {
    pub fn new(config: &ModelConfig) -> Result<Self, TrainError> {
        let mut model = E2VModel::build(config)?;
        let opt = OptState::new(&mut model);
        Ok(Self {
            model,
            opt,
            epoch: 0,
            log: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub model: ModelConfig,
    pub run: TrainRun,
    pub optimizer: AdamWConfig,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
}

/// Paths of one saved training state: `<stem>.ckp`, `<stem>.opt.ckp`, `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPaths {
    pub model: PathBuf,
    pub optimizer: PathBuf,
    pub sidecar: PathBuf,
}

impl CheckpointPaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            model: dir.join(format!("{stem}.ckp")),
            optimizer: dir.join(format!("{stem}.opt.ckp")),
            sidecar: dir.join(format!("{stem}.json")),
        }
    }

    /// Resolves any of the three files (or the bare stem) to the full set.
    pub fn from_any(path: &Path) -> Self {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let stem = [".opt.ckp", ".ckp", ".json"]
            .iter()
            .find_map(|ext| name.strip_suffix(ext))
            .unwrap_or(name);
        Self::new(path.parent().unwrap_or(Path::new(".")), stem)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ckp_err(path: &Path, e: TensorError) -> TrainError {
    match e {
        TensorError::Io(source) => TrainError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => TrainError::CheckpointMismatch(format!("{}: {other}", path.display())),
    }
}

pub fn save_state(
    state: &mut TrainState,
    paths: &CheckpointPaths,
    run: &TrainRun,
    optimizer: &AdamWConfig,
) -> Result<(), TrainError> {
    let cfg = state.model.config().clone();
    write_checkpoint(&paths.model, &state.model.to_checkpoint()).map_err(|e| ckp_err(&paths.model, e))?;
    write_checkpoint(&paths.optimizer, &state.opt.to_entries()).map_err(|e| ckp_err(&paths.optimizer, e))?;
    let sidecar = Sidecar {
        config_hash: config_hash(&cfg),
        seed: cfg.seed,
        model: cfg,
        run: run.clone(),
        optimizer: *optimizer,
        epoch: state.epoch,
        step: state.opt.step,
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    std::fs::write(&paths.sidecar, json).map_err(io_err(&paths.sidecar))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, TrainError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| TrainError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads model weights (and, when present, optimizer state) saved by
/// [`save_state`]. The sidecar's config hash must match `config`.
pub fn load_state(paths: &CheckpointPaths, config: &ModelConfig, with_optimizer: bool) -> Result<(TrainState, Sidecar), TrainError> {
    let sidecar = read_sidecar(&paths.sidecar)?;
    let want = config_hash(config);
    if sidecar.config_hash != want {
        return Err(TrainError::CheckpointMismatch(format!(
            "{} was written for config {}, current config is {want}",
            paths.sidecar.display(),
            sidecar.config_hash
        )));
    }
    let mut state = TrainState::new(config)?;
    let entries = read_checkpoint(&paths.model).map_err(|e| ckp_err(&paths.model, e))?;
    state.model.load_checkpoint(&entries).map_err(|e| match e {
        ModelError::CheckpointMismatch(m) => TrainError::CheckpointMismatch(m),
        other => other.into(),
    })?;
    if with_optimizer {
        let entries = read_checkpoint(&paths.optimizer).map_err(|e| ckp_err(&paths.optimizer, e))?;
        state.opt.load_entries(&entries, sidecar.step)?;
    }
    state.epoch = sidecar.epoch;
    Ok((state, sidecar))
}

fn check_dataset(data: &[(&FrameStack, &VoxelGrid)], resolution: usize) -> Result<(), TrainError> {
    let (f0, _) = data.first().ok_or(TrainError::EmptyDataset)?;
    for (i, (f, v)) in data.iter().enumerate() {
        if (f.depth(), f.height(), f.width()) != (f0.depth(), f0.height(), f0.width()) {
            return Err(TrainError::ShapeInconsistency(format!(
                "sample {i} frames {}x{}x{} vs {}x{}x{}",
                f.depth(),
                f.height(),
                f.width(),
                f0.depth(),
                f0.height(),
                f0.width()
            )));
        }
        if v.resolution() != resolution {
            return Err(TrainError::ShapeInconsistency(format!(
                "sample {i} label resolution {} but the model predicts {resolution}",
                v.resolution()
            )));
        }
    }
    Ok(())
}

/// Runs epochs `state.epoch + 1 ..= run.epochs`. After each epoch the log row
/// is appended and `on_epoch` is called; it decides what to persist.
pub fn train(
    data: &[(&FrameStack, &VoxelGrid)],
    state: &mut TrainState,
    run: &TrainRun,
    optimizer: &AdamWConfig,
    mut on_epoch: impl FnMut(&mut TrainState, bool) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    run.validate()?;
    optimizer.validate()?;
    check_dataset(data, state.model.config().output_resolution())?;
    while state.epoch < run.epochs {
        let epoch = state.epoch + 1;
        let order = epoch_order(data.len(), run.seed, epoch);
        let (mut loss_sum, mut iou_sum) = (0.0, 0.0);
        for batch in order.chunks(run.batch_size) {
            let frames: Vec<&FrameStack> = batch.iter().map(|&i| data[i].0).collect();
            let labels: Vec<&VoxelGrid> = batch.iter().map(|&i| data[i].1).collect();
            let x = frames_to_tensor::<f32>(&frames)?;
            let target = voxels_to_tensor::<f32>(&labels)?;
            let pred = state.model.predict(&x, Mode::Train)?;
            let (loss, grad) = bce_loss(&pred, &target)?;
            state.model.backward_from_output(&grad)?;
            adamw_step(&mut state.model, &mut state.opt, optimizer)?;
            loss_sum += loss * batch.len() as f64;
            for (p, label) in tensor_to_probs(&pred)?.iter().zip(&labels) {
                iou_sum += iou(p, label, run.iou_threshold).map_err(|e| TrainError::Config(e.to_string()))?;
            }
        }
        state.epoch = epoch;
        state.log.push(LogRow {
            epoch,
            loss: loss_sum / data.len() as f64,
            iou: iou_sum / data.len() as f64,
        });
        on_epoch(state, run.saves_after(epoch))?;
    }
    Ok(())
}

/// [`train`] with the standard persistence layout in `dir`: `epoch_NNNN.*`
/// on schedule, `last.*` after every epoch and `metrics.csv`. `progress`
/// sees each new log row.
pub fn train_to_dir(
    data: &[(&FrameStack, &VoxelGrid)],
    state: &mut TrainState,
    run: &TrainRun,
    optimizer: &AdamWConfig,
    dir: &Path,
    mut progress: impl FnMut(&LogRow),
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    train(data, state, run, optimizer, |state, scheduled| {
        if let Some(row) = state.log.last() {
            progress(row);
        }
        if scheduled {
            save_state(state, &CheckpointPaths::new(dir, &format!("epoch_{:04}", state.epoch)), run, optimizer)?;
        }
        save_state(state, &CheckpointPaths::new(dir, "last"), run, optimizer)?;
        let log_path = dir.join("metrics.csv");
        std::fs::write(&log_path, format_log(&state.log)).map_err(io_err(&log_path))
    })
}

/// Restores the `last.*` state and metric log from `dir`.
pub fn resume_from_dir(dir: &Path, config: &ModelConfig) -> Result<TrainState, TrainError> {
    let (mut state, _) = load_state(&CheckpointPaths::new(dir, "last"), config, true)?;
    let log_path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
    let mut log = parse_log(&text).ok_or_else(|| TrainError::CheckpointMismatch(format!("{} is malformed", log_path.display())))?;
    log.truncate(state.epoch);
    state.log = log;
    Ok(state)
}
