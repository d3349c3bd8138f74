//! The generational loop: train on real data, then retrain each generation on
//! its predecessor's samples, scoring every generation against the original.

mod config;
mod manifest;

pub use config::{
    default_keys, ClassifierSettings, DatasetConfig, DatasetKind, DiffusionConfig,
    ExperimentConfig, FeaturizerPolicy, GuidanceSettings, LoopConfig, MetricsConfig, ModelConfig,
    SamplerConfig, SamplerName, TrainSettings,
};
pub use manifest::{FileEntry, GenerationEntry, Manifest, MANIFEST_FILE};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::classifier::{train_classifier, Classifier};
use crate::datasets::{encode_gld1, read_gld1, Dataset, Provenance};
use crate::diffusion::{sample, train_diffusion, DiffusionModel, LabelPlan, TrainReport};
use crate::error::{Error, Result};
use crate::metrics::{metrics_csv, per_class_csv, Evaluator, MetricReport};
use crate::rng::{derive_seed, Philox};

const SEED_DATA: u64 = 1;
const SEED_CLASSIFIER: u64 = 2;
const SEED_INIT: u64 = 3;
const SEED_TRAIN: u64 = 4;
const SEED_SAMPLE: u64 = 5;
const SEED_MIX: u64 = 6;

pub const CLASSIFIER_FILE: &str = "classifier.clnn";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";

/// Everything persisted and measured for one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: u32,
    pub model_path: PathBuf,
    pub data_path: PathBuf,
    pub report: MetricReport,
    /// Mean loss over the final training epoch.
    pub train_loss: f64,
    pub train_seconds: f64,
    pub sample_seconds: f64,
}

/// Result of one loop body step.
#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub model: DiffusionModel,
    pub samples: Dataset,
    pub training: TrainReport,
    pub train_seconds: f64,
    pub sample_seconds: f64,
}

/// Knobs that do not change results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop after completing this generation, as if interrupted.
    pub stop_after: Option<usize>,
    /// Called once per completed generation.
    pub on_generation: Option<&'a mut dyn FnMut(&GenerationRecord)>,
}

/// The original dataset `D0` for a config.
pub fn original_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    config.build_dataset(derive_seed(config.seed, &[SEED_DATA]))
}

/// Training set for generation `g`: `D0` at `g = 0`, otherwise a
/// `synthetic_fraction` share of `prev` topped up from `original`.
pub fn training_set(
    prev: &Dataset,
    original: &Dataset,
    config: &ExperimentConfig,
    g: usize,
) -> Result<Dataset> {
    if g == 0 {
        return Ok(original.clone());
    }
    if prev.is_empty() {
        return Err(Error::usage("previous generation has no samples"));
    }
    let n = original.len();
    let n_syn = (config.looping.synthetic_fraction * n as f64).round() as usize;
    let real = if prev.is_labeled() {
        original.clone()
    } else {
        original.clone().without_labels()
    };
    if n_syn == 0 {
        return Ok(real);
    }
    if n_syn == n && prev.len() == n {
        return Ok(prev.clone());
    }
    let mut rng = Philox::new(derive_seed(config.seed, &[SEED_MIX, g as u64]));
    let syn_idx = rng.permutation(prev.len());
    let real_idx = rng.permutation(n);
    let syn = prev.subset(&syn_idx[..n_syn.min(prev.len())]);
    let mixed = syn.concat(&real.subset(&real_idx[..n - n_syn.min(prev.len())]))?;
    if mixed.is_labeled() {
        mixed.with_num_classes(original.num_classes())
    } else {
        Ok(mixed)
    }
}

/// One loop body step: fresh model, trained on the generation's training set,
/// then sampled `|original|` times. Samples are rounded through `f32` so they
/// equal what GLD1 stores.
pub fn next_generation(
    prev: &Dataset,
    original: &Dataset,
    config: &ExperimentConfig,
    g: usize,
) -> Result<GenerationOutput> {
    let guided = config.guidance.enabled;
    if guided && !original.is_labeled() {
        return Err(Error::config("guidance needs a labeled dataset"));
    }
    let data = training_set(prev, original, config, g)?;
    let k = original.num_classes();
    let seed = config.seed;
    let spec = config.network_spec(original.dim(), k);
    let mut model = DiffusionModel::new(
        spec,
        config.schedule(),
        derive_seed(seed, &[SEED_INIT, g as u64]),
    )?;
    let schedule = config.schedule().build()?;

    let started = Instant::now();
    let training = train_diffusion(
        &mut model.network,
        &data,
        &schedule,
        &config.guidance_config(),
        &config.train_config(),
        derive_seed(seed, &[SEED_TRAIN, g as u64]),
    )?;
    let train_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let (scale, plan) = if guided {
        (Some(config.guidance.scale), LabelPlan::BalancedAuto)
    } else {
        (None, LabelPlan::Null)
    };
    let mut samples = sample(
        &model.network,
        original.len(),
        &schedule,
        config.sampler_kind(),
        scale,
        &plan,
        derive_seed(seed, &[SEED_SAMPLE, g as u64]),
    )?;
    let sample_seconds = started.elapsed().as_secs_f64();
    samples.round_to_f32();
    samples.provenance = Provenance::Generation(g as u32);
    samples.normalization = original.normalization.clone();
    Ok(GenerationOutput {
        model,
        samples,
        training,
        train_seconds,
        sample_seconds,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_reports(dir: &Path, manifest: &Manifest) -> Result<()> {
    let reports: Vec<MetricReport> = manifest.completed().map(|e| e.metrics.clone()).collect();
    write_file(&dir.join(METRICS_FILE), metrics_csv(&reports).as_bytes())?;
    write_file(
        &dir.join(PER_CLASS_FILE),
        per_class_csv(&reports).as_bytes(),
    )
}

fn record_of(dir: &Path, e: &GenerationEntry) -> GenerationRecord {
    GenerationRecord {
        generation: e.generation,
        model_path: dir.join(&e.model.path),
        data_path: dir.join(&e.data.path),
        report: e.metrics.clone(),
        train_loss: e.train_loss,
        train_seconds: e.train_seconds,
        sample_seconds: e.sample_seconds,
    }
}

/// Trains (or loads from a verified snapshot) the experiment classifier.
fn prepare_classifier(
    config: &ExperimentConfig,
    original: &Dataset,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<Option<Classifier>> {
    if !config.needs_classifier() {
        return Ok(None);
    }
    if !original.is_labeled() {
        return Err(Error::config(
            "classifier features or guidance need a labeled dataset",
        ));
    }
    if let Some(entry) = &manifest.classifier {
        let bytes = entry.read_verified(dir)?;
        return Classifier::from_snapshot(&bytes).map(Some);
    }
    let clf = train_classifier(
        original,
        &config.classifier_config(),
        derive_seed(config.seed, &[SEED_CLASSIFIER]),
    )?;
    // Round trip through the snapshot so a resumed run sees the same weights.
    let bytes = {
        let mut net = clf.network().clone();
        net.round_to_f32();
        Classifier::from_network(net, clf.heldout_accuracy(), clf.train_accuracy())?.to_snapshot()
    };
    write_file(&dir.join(CLASSIFIER_FILE), &bytes)?;
    manifest.classifier = Some(FileEntry::new(CLASSIFIER_FILE, &bytes));
    manifest.save(dir)?;
    Classifier::from_snapshot(&bytes).map(Some)
}

fn drive(
    config: &ExperimentConfig,
    mut manifest: Manifest,
    options: RunOptions<'_>,
) -> Result<Vec<GenerationRecord>> {
    let dir = config.output_dir.clone();
    let generations = config.looping.generations;
    let RunOptions {
        stop_after,
        mut on_generation,
    } = options;

    let mut records: Vec<GenerationRecord> =
        manifest.completed().map(|e| record_of(&dir, e)).collect();
    let start = records.len();
    if start >= generations {
        return Ok(records);
    }

    let original = original_dataset(config)?;
    let k = original.num_classes();
    let reload = |path: &Path, bytes: &[u8]| -> Result<Dataset> {
        let ds = crate::datasets::decode_gld1(bytes)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if ds.is_labeled() {
            ds.with_num_classes(k)
        } else {
            Ok(ds)
        }
    };
    let mut prev = if start == 0 {
        original.clone()
    } else {
        let entry = &manifest.generations[start - 1];
        let bytes = entry.data.read_verified(&dir)?;
        let mut ds = reload(&dir.join(&entry.data.path), &bytes)?;
        ds.provenance = Provenance::Generation(entry.generation);
        ds.normalization = original.normalization.clone();
        ds
    };

    let classifier = prepare_classifier(config, &original, &dir, &mut manifest)?;
    let evaluator = Evaluator::new(
        &original,
        config.feature_space(),
        classifier,
        config.metrics.k,
    )?;

    for g in start..generations {
        let out = next_generation(&prev, &original, config, g)?;
        let gen_dir = format!("gen_{g}");
        fs::create_dir_all(dir.join(&gen_dir)).map_err(|e| Error::io(dir.join(&gen_dir), e))?;
        let model_rel = format!("{gen_dir}/model.clnn");
        let data_rel = format!("{gen_dir}/data.gld1");
        let model_bytes = out.model.to_snapshot();
        let data_bytes = encode_gld1(&out.samples);
        write_file(&dir.join(&model_rel), &model_bytes)?;
        write_file(&dir.join(&data_rel), &data_bytes)?;

        let report = evaluator.evaluate(&out.samples, g as u32)?;
        report.check_ranges()?;
        let entry = GenerationEntry {
            generation: g as u32,
            complete: true,
            model: FileEntry::new(&model_rel, &model_bytes),
            data: FileEntry::new(&data_rel, &data_bytes),
            metrics: report,
            train_loss: out.training.final_loss(),
            train_seconds: out.train_seconds,
            sample_seconds: out.sample_seconds,
        };
        manifest.generations.truncate(g);
        manifest.generations.push(entry);
        manifest.save(&dir)?;
        write_reports(&dir, &manifest)?;

        let record = record_of(&dir, manifest.generations.last().expect("just pushed"));
        if let Some(cb) = on_generation.as_mut() {
            cb(&record);
        }
        records.push(record);
        prev = out.samples;
        if stop_after == Some(g) {
            break;
        }
    }
    Ok(records)
}

/// Runs a fresh experiment into `config.output_dir`, which must not already
/// hold a manifest.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    options: RunOptions<'_>,
) -> Result<Vec<GenerationRecord>> {
    config.validate()?;
    let dir = &config.output_dir;
    if dir.join(MANIFEST_FILE).exists() {
        return Err(Error::config(format!(
            "{} already holds a run; resume it or choose another output_dir",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest::new(config);
    manifest.save(dir)?;
    write_reports(dir, &manifest)?;
    drive(config, manifest, options)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<GenerationRecord>> {
    run_experiment_with(config, RunOptions::default())
}

/// Continues the run stored in `dir` from its first incomplete generation.
/// `generations` may extend the run's generation count.
pub fn resume_with(
    dir: impl AsRef<Path>,
    generations: Option<usize>,
    options: RunOptions<'_>,
) -> Result<Vec<GenerationRecord>> {
    let dir = dir.as_ref();
    let mut manifest = Manifest::load(dir)?;
    let mut config = ExperimentConfig::from_flat(&manifest.config)
        .map_err(|e| Error::Integrity(format!("manifest config: {e}")))?;
    config.output_dir = dir.to_path_buf();
    for entry in manifest.completed() {
        entry.model.verify(dir)?;
        entry.data.verify(dir)?;
    }
    if let Some(entry) = &manifest.classifier {
        entry.verify(dir)?;
    }
    if let Some(g) = generations {
        if g == 0 {
            return Err(Error::config("generations must be >= 1"));
        }
        if g != config.looping.generations {
            config.looping.generations = g;
            let mut flat = manifest.config.clone();
            flat.insert("loop.generations".into(), g.into());
            manifest.config = flat;
            manifest.save(dir)?;
        }
    }
    let first_incomplete = manifest.completed().count();
    manifest.generations.truncate(first_incomplete);
    drive(&config, manifest, options)
}

pub fn resume(dir: impl AsRef<Path>) -> Result<Vec<GenerationRecord>> {
    resume_with(dir, None, RunOptions::default())
}

/// Reads a generation's dataset back, checking its recorded hash.
pub fn load_generation_data(dir: impl AsRef<Path>, generation: usize) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir)?;
    let entry = manifest
        .generations
        .get(generation)
        .filter(|e| e.complete)
        .ok_or_else(|| Error::usage(format!("generation {generation} is not complete")))?;
    entry.data.verify(dir)?;
    read_gld1(dir.join(&entry.data.path))
}
