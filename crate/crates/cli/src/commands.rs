use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use e2v_core::events::{bin_to_frames, downscale_frames, read_events, read_frames, write_events, write_frames, FrameStack};
use e2v_core::model::{frames_to_tensor, tensor_to_probs};
use e2v_core::sim::{generate_sample, random_scene, Scene, SceneSpec};
use e2v_core::tensor::Mode;
use e2v_core::train::{evaluate, load_state, resume_from_dir, train_to_dir, CheckpointPaths, TrainState};
use e2v_core::voxel::{binarize, cubes_to_obj, read_voxels, write_voxels, VoxelGrid};
use serde::{Deserialize, Serialize};

use crate::config::{BinningSettings, RunConfig};
use crate::error::CliError;
use crate::manifest::{assign_splits, hash_u64, Entry, Manifest, Split};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

/// Per-sample record of everything that produced it.
#[derive(Debug, Serialize)]
struct SampleSidecar<'a> {
    id: &'a str,
    category: &'a str,
    scene_seed: Option<u64>,
    scene: &'a SceneSpec,
    sim: &'a e2v_core::sim::SimConfig,
    video_frames: usize,
    events: usize,
    occupied_voxels: usize,
}

pub struct GenerateArgs {
    pub out: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub scenes: Vec<PathBuf>,
}

pub fn generate(cfg: &RunConfig, args: &GenerateArgs) -> Result<Manifest, CliError> {
    let scenes = args
        .scenes
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let spec: SceneSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}:{}:{}: {e}", p.display(), e.line(), e.column())))?;
            let base = p.parent().unwrap_or(Path::new("."));
            Ok((Scene::from_spec(&spec, base)?, spec))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let samples_dir = args.out.join("samples");
    create_dir(&samples_dir)?;
    write_json(&args.out.join("config.json"), cfg)?;
    let ids: Vec<String> = (0..args.count).map(|i| format!("s{i:05}")).collect();
    let splits = assign_splits(&ids, args.seed, cfg.split);
    let mut entries = Vec::with_capacity(args.count);
    for (i, (id, split)) in ids.iter().zip(splits).enumerate() {
        let (scene, spec, scene_seed) = if scenes.is_empty() {
            let s = hash_u64(&[b"scene", &args.seed.to_le_bytes(), id.as_bytes()]);
            let spec = random_scene(s);
            (Scene::from_spec(&spec, Path::new("."))?, spec, Some(s))
        } else {
            let (scene, spec) = scenes[i % scenes.len()].clone();
            (scene, spec, None)
        };
        let sample = generate_sample(&scene, &cfg.sim)?;
        let category = spec.category.clone().unwrap_or_else(|| "scene".into());
        let events = format!("samples/{id}.evt");
        let label = format!("samples/{id}.vox");
        let p = args.out.join(&events);
        write_events(&sample.events, create(&p)?).map_err(|e| CliError::io(&p, e))?;
        let p = args.out.join(&label);
        write_voxels(&sample.label, create(&p)?).map_err(|e| CliError::io(&p, e))?;
        write_json(
            &samples_dir.join(format!("{id}.json")),
            &SampleSidecar {
                id,
                category: &category,
                scene_seed,
                scene: &spec,
                sim: &cfg.sim,
                video_frames: sample.video_frames,
                events: sample.events.len(),
                occupied_voxels: sample.label.count(),
            },
        )?;
        eprintln!("{id} {category:<9} {split:?}: {} events, {} voxels", sample.events.len(), sample.label.count());
        entries.push(Entry {
            id: id.clone(),
            category,
            events,
            label,
            split,
        });
    }
    let manifest = Manifest {
        seed: args.seed,
        entries,
        root: args.out.clone(),
    };
    manifest.save(&args.out.join("manifest.json"))?;
    Ok(manifest)
}

/// Frame cache layout: `<dir>/<id>.frm` plus the binning settings used.
fn cache_dir(manifest: &Manifest) -> PathBuf {
    manifest.root.join("frames")
}

fn bin_entry(manifest: &Manifest, entry: &Entry, binning: &BinningSettings) -> Result<FrameStack, CliError> {
    let path = manifest.path_of(&entry.events);
    let stream = read_events(open(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let frames = bin_to_frames(&stream, &binning.config()?);
    downscale_frames(&frames, binning.downscale).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn preprocess(cfg: &RunConfig, manifest: &Manifest, out: Option<&Path>) -> Result<usize, CliError> {
    let dir = out.map_or_else(|| cache_dir(manifest), Path::to_path_buf);
    create_dir(&dir)?;
    for entry in &manifest.entries {
        let frames = bin_entry(manifest, entry, &cfg.binning)?;
        let p = dir.join(format!("{}.frm", entry.id));
        write_frames(&frames, create(&p)?).map_err(|e| CliError::io(&p, e))?;
    }
    write_json(&dir.join("binning.json"), &cfg.binning)?;
    Ok(manifest.entries.len())
}

/// Frames for `entries`, from the preprocess cache when it was built with
/// the same binning settings, otherwise binned from the event files.
fn load_frames(cfg: &RunConfig, manifest: &Manifest, entries: &[&Entry]) -> Result<Vec<FrameStack>, CliError> {
    let dir = cache_dir(manifest);
    let cached = std::fs::read_to_string(dir.join("binning.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<BinningSettings>(&t).ok())
        .is_some_and(|b| b == cfg.binning);
    entries
        .iter()
        .map(|e| {
            let p = dir.join(format!("{}.frm", e.id));
            if cached && p.is_file() {
                read_frames(open(&p)?).map_err(|err| CliError::Data(format!("{}: {err}", p.display())))
            } else {
                bin_entry(manifest, e, &cfg.binning)
            }
        })
        .collect()
}

fn load_labels(manifest: &Manifest, entries: &[&Entry]) -> Result<Vec<VoxelGrid>, CliError> {
    entries
        .iter()
        .map(|e| {
            let p = manifest.path_of(&e.label);
            read_voxels(open(&p)?).map_err(|err| CliError::Data(format!("{}: {err}", p.display())))
        })
        .collect()
}

#[derive(Debug, Deserialize, Serialize)]
struct RunRecord {
    config: RunConfig,
    split: Option<Split>,
}

pub fn train(cfg: &RunConfig, manifest: &Manifest, split: Option<Split>, out: &Path) -> Result<TrainState, CliError> {
    let entries = manifest.select(split);
    if entries.is_empty() {
        return Err(CliError::Data(format!("no samples in split {split:?}")));
    }
    let frames = load_frames(cfg, manifest, &entries)?;
    let labels = load_labels(manifest, &entries)?;
    let data: Vec<_> = frames.iter().zip(&labels).collect();
    create_dir(out)?;
    let mut state = if out.join("last.json").is_file() {
        let s = resume_from_dir(out, &cfg.model)?;
        eprintln!("resuming after epoch {}", s.epoch);
        s
    } else {
        TrainState::new(&cfg.model)?
    };
    write_json(&out.join("config.json"), &RunRecord { config: cfg.clone(), split })?;
    train_to_dir(&data, &mut state, &cfg.train, &cfg.optimizer, out, |row| {
        println!("epoch {:>4}  loss {:.6}  iou {:.4}", row.epoch, row.loss, row.iou);
    })?;
    Ok(state)
}

/// Accepts a run directory (uses `last`) or any file of a checkpoint set.
fn checkpoint_paths(path: &Path) -> CheckpointPaths {
    if path.is_dir() {
        CheckpointPaths::new(path, "last")
    } else {
        CheckpointPaths::from_any(path)
    }
}

pub fn eval(
    cfg: &RunConfig,
    manifest: &Manifest,
    checkpoint: &Path,
    split: Option<Split>,
    out: Option<&Path>,
) -> Result<e2v_core::train::Report, CliError> {
    let (mut state, _) = load_state(&checkpoint_paths(checkpoint), &cfg.model, false)?;
    let entries = manifest.select(split);
    if entries.is_empty() {
        return Err(CliError::Data(format!("no samples in split {split:?}")));
    }
    let frames = load_frames(cfg, manifest, &entries)?;
    let labels = load_labels(manifest, &entries)?;
    let samples: Vec<_> = entries
        .iter()
        .zip(frames.iter().zip(&labels))
        .map(|(e, (f, l))| (e.category.as_str(), f, l))
        .collect();
    let report = evaluate(
        &mut state.model,
        &samples,
        cfg.metrics.threshold,
        cfg.metrics.distance,
        cfg.train.batch_size,
    )?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let p = dir.join("report.csv");
        std::fs::write(&p, report.to_csv()).map_err(|e| CliError::io(&p, e))?;
        let p = dir.join("report.txt");
        std::fs::write(&p, report.to_table()).map_err(|e| CliError::io(&p, e))?;
    }
    Ok(report)
}

pub enum ExportSource<'a> {
    Voxels(&'a Path),
    Prediction {
        checkpoint: &'a Path,
        manifest: &'a Manifest,
        sample: &'a str,
    },
}

pub fn export(cfg: &RunConfig, source: ExportSource<'_>, out: &Path) -> Result<usize, CliError> {
    let grid = match source {
        ExportSource::Voxels(p) => read_voxels(open(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        ExportSource::Prediction {
            checkpoint,
            manifest,
            sample,
        } => {
            let entry = manifest
                .entries
                .iter()
                .find(|e| e.id == sample)
                .ok_or_else(|| CliError::Data(format!("sample {sample} not in manifest")))?;
            let (mut state, _) = load_state(&checkpoint_paths(checkpoint), &cfg.model, false)?;
            let frames = load_frames(cfg, manifest, &[entry])?;
            let pred = state
                .model
                .predict(&frames_to_tensor(&[&frames[0]]).map_err(CliError::from)?, Mode::Eval)?;
            let probs = tensor_to_probs(&pred)?;
            binarize(&probs[0], cfg.metrics.threshold)?
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(out, cubes_to_obj(&grid)).map_err(|e| CliError::io(out, e))?;
    Ok(grid.count())
}
