//! Experiment configuration, read from a flat JSON object with dotted keys
//! such as `"diffusion.T": 400`.

// Negated comparisons below also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::classifier::ClassifierConfig;
use crate::datasets::{
    circle_means, gaussian_mixture, glyph_dataset, load_idx, Dataset, GlyphOptions,
};
use crate::diffusion::{GuidanceConfig, SamplerKind, ScheduleSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::FeatureSpace;
use crate::nn::{AdamConfig, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianMixture,
    Glyphs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Mixture components.
    pub classes: usize,
    pub n_per_class: usize,
    pub radius: f64,
    pub sigma: f64,
    pub jitter: f64,
    pub translate: bool,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Keep only the first `idx_limit` IDX samples; 0 keeps all.
    pub idx_limit: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::GaussianMixture,
            classes: 8,
            n_per_class: 250,
            radius: 4.0,
            sigma: 0.3,
            jitter: 0.1,
            translate: true,
            idx_images: None,
            idx_labels: None,
            idx_limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128, 128],
            time_embed_dim: 32,
            class_embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        let s = ScheduleSpec::default();
        DiffusionConfig {
            steps: s.steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerName {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerName,
    pub ddim_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerName::Ddpm,
            ddim_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSettings {
    /// Class-conditional model with classifier-free guidance; otherwise the
    /// model is unconditional and generated data is unlabeled.
    pub enabled: bool,
    pub scale: f64,
    pub p_uncond: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        let g = GuidanceConfig::default();
        GuidanceSettings {
            enabled: false,
            scale: g.scale,
            p_uncond: g.p_uncond,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSettings {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        ClassifierSettings {
            hidden: c.hidden,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.adam.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub generations: usize,
    /// Share of each later generation's training set drawn from the previous
    /// generation's samples; the rest comes from the original data.
    pub synthetic_fraction: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            generations: 9,
            synthetic_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturizerPolicy {
    /// Identity for mixtures, classifier features for image-like data.
    Auto,
    Identity,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub k: usize,
    pub featurizer: FeaturizerPolicy,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            k: 3,
            featurizer: FeaturizerPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceSettings,
    pub train: TrainSettings,
    pub classifier: ClassifierSettings,
    #[serde(rename = "loop")]
    pub looping: LoopConfig,
    pub metrics: MetricsConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            diffusion: DiffusionConfig::default(),
            sampler: SamplerConfig::default(),
            guidance: GuidanceSettings::default(),
            train: TrainSettings::default(),
            classifier: ClassifierSettings::default(),
            looping: LoopConfig::default(),
            metrics: MetricsConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("collapse-run"),
        }
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &Map<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted prefixes are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

/// Every accepted key with its default value.
pub fn default_keys() -> Map<String, Value> {
    ExperimentConfig::default().to_flat()
}

impl ExperimentConfig {
    /// Flat dotted-key form; this is what manifests echo.
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut out = Map::new();
        flatten_into(
            "",
            &serde_json::to_value(self).expect("config serializes"),
            &mut out,
        );
        out
    }

    /// Builds a config from flat dotted keys; unset keys take their defaults.
    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self> {
        let known = default_keys();
        let mut merged = known.clone();
        for (k, v) in flat {
            if !known.contains_key(k) {
                return Err(Error::config(format!("unknown configuration key `{k}`")));
            }
            merged.insert(k.clone(), v.clone());
        }
        let cfg: ExperimentConfig = serde_json::from_value(unflatten(&merged))
            .map_err(|e| Error::config(format!("invalid configuration value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("configuration is not valid JSON: {e}")))?;
        if !value.is_object() {
            return Err(Error::config("configuration must be a JSON object"));
        }
        let mut flat = Map::new();
        flatten_into("", &value, &mut flat);
        Self::from_flat(&flat)
    }

    /// Applies `key=value` overrides. Values are parsed as JSON, falling back
    /// to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[(S, S)]) -> Result<Self> {
        let mut flat = self.to_flat();
        let known = default_keys();
        for (k, v) in overrides {
            let (k, v) = (k.as_ref(), v.as_ref());
            if !known.contains_key(k) {
                return Err(Error::config(format!("unknown configuration key `{k}`")));
            }
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            flat.insert(k.to_string(), value);
        }
        Self::from_flat(&flat)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::GaussianMixture => {
                if d.classes == 0 || d.n_per_class == 0 {
                    return Err(Error::config(
                        "dataset.classes and dataset.n_per_class must be >= 1",
                    ));
                }
                if !(d.sigma > 0.0) || !(d.radius >= 0.0) {
                    return Err(Error::config(
                        "dataset.sigma must be > 0 and dataset.radius >= 0",
                    ));
                }
            }
            DatasetKind::Glyphs => {
                if d.n_per_class == 0 {
                    return Err(Error::config("dataset.n_per_class must be >= 1"));
                }
                if !(0.0..=0.5).contains(&d.jitter) {
                    return Err(Error::config("dataset.jitter must lie in [0, 0.5]"));
                }
            }
            DatasetKind::Idx => {
                if d.idx_images.is_none() || d.idx_labels.is_none() {
                    return Err(Error::config(
                        "dataset.idx_images and dataset.idx_labels are required for idx data",
                    ));
                }
            }
        }
        if self.model.hidden.contains(&0) || self.classifier.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.classifier.hidden.is_empty() {
            return Err(Error::config("classifier.hidden needs at least one layer"));
        }
        if self.model.time_embed_dim == 0 || !self.model.time_embed_dim.is_multiple_of(2) {
            return Err(Error::config(
                "model.time_embed_dim must be even and positive",
            ));
        }
        if self.guidance.enabled && self.model.class_embed_dim == 0 {
            return Err(Error::config("guidance needs model.class_embed_dim >= 1"));
        }
        self.schedule().build()?;
        self.guidance_config().validate()?;
        if !(self.guidance.scale >= 0.0 && self.guidance.scale.is_finite()) {
            return Err(Error::config("guidance.scale must be finite and >= 0"));
        }
        if self.sampler.kind == SamplerName::Ddim
            && (self.sampler.ddim_steps == 0 || self.sampler.ddim_steps > self.diffusion.steps)
        {
            return Err(Error::config(
                "sampler.ddim_steps must lie in [1, diffusion.T]",
            ));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::config(
                "train.epochs and train.batch_size must be >= 1",
            ));
        }
        if !(t.lr > 0.0)
            || !(0.0..1.0).contains(&t.beta1)
            || !(0.0..1.0).contains(&t.beta2)
            || !(t.eps > 0.0)
        {
            return Err(Error::config(
                "train.lr, train.beta1, train.beta2, train.eps out of range",
            ));
        }
        let c = &self.classifier;
        if c.epochs == 0 || c.batch_size == 0 || !(c.lr > 0.0) {
            return Err(Error::config(
                "classifier.epochs, batch_size and lr must be positive",
            ));
        }
        if self.looping.generations == 0 {
            return Err(Error::config("loop.generations must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.looping.synthetic_fraction) {
            return Err(Error::config("loop.synthetic_fraction must lie in [0, 1]"));
        }
        if self.metrics.k == 0 {
            return Err(Error::config("metrics.k must be >= 1"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.diffusion.steps,
            beta_start: self.diffusion.beta_start,
            beta_end: self.diffusion.beta_end,
        }
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        match self.sampler.kind {
            SamplerName::Ddpm => SamplerKind::Ddpm,
            SamplerName::Ddim => SamplerKind::Ddim {
                steps: self.sampler.ddim_steps,
            },
        }
    }

    /// Training-time guidance: label dropout applies only to guided models.
    pub fn guidance_config(&self) -> GuidanceConfig {
        GuidanceConfig {
            scale: self.guidance.scale,
            p_uncond: if self.guidance.enabled {
                self.guidance.p_uncond
            } else {
                0.0
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            adam: AdamConfig {
                lr: self.train.lr,
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.eps,
            },
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            hidden: self.classifier.hidden.clone(),
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            adam: AdamConfig {
                lr: self.classifier.lr,
                ..AdamConfig::default()
            },
        }
    }

    /// Feature space for distribution metrics after resolving `auto`.
    pub fn feature_space(&self) -> FeatureSpace {
        match self.metrics.featurizer {
            FeaturizerPolicy::Identity => FeatureSpace::Identity,
            FeaturizerPolicy::Classifier => FeatureSpace::Classifier,
            FeaturizerPolicy::Auto => match self.dataset.kind {
                DatasetKind::GaussianMixture => FeatureSpace::Identity,
                DatasetKind::Glyphs | DatasetKind::Idx => FeatureSpace::Classifier,
            },
        }
    }

    /// A classifier is trained when it provides the feature space or when
    /// guided samples carry labels to score.
    pub fn needs_classifier(&self) -> bool {
        self.feature_space() == FeatureSpace::Classifier || self.guidance.enabled
    }

    /// Denoiser architecture for data of dimension `dim` with `k` classes.
    pub fn network_spec(&self, dim: usize, k: usize) -> NetworkSpec {
        let guided = self.guidance.enabled;
        NetworkSpec {
            time_embed_dim: self.model.time_embed_dim,
            max_timestep: self.diffusion.steps,
            num_classes: if guided { k } else { 0 },
            class_embed_dim: if guided {
                self.model.class_embed_dim
            } else {
                0
            },
            ..NetworkSpec::plain(dim, self.model.hidden.clone(), dim)
        }
    }

    /// Builds the original dataset from its seed.
    pub fn build_dataset(&self, seed: u64) -> Result<Dataset> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::GaussianMixture => gaussian_mixture(
                &circle_means(d.classes, d.radius),
                d.n_per_class,
                d.sigma,
                seed,
            ),
            DatasetKind::Glyphs => glyph_dataset(
                GlyphOptions {
                    n_per_class: d.n_per_class,
                    jitter: d.jitter,
                    translate: d.translate,
                },
                seed,
            ),
            DatasetKind::Idx => {
                let images = d.idx_images.as_ref().expect("validated");
                let labels = d.idx_labels.as_ref().expect("validated");
                let full = load_idx(images, labels)?;
                if d.idx_limit == 0 || d.idx_limit >= full.len() {
                    Ok(full)
                } else {
                    let keep: Vec<usize> = (0..d.idx_limit).collect();
                    let k = full.num_classes();
                    full.subset(&keep).with_num_classes(k)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_flat_form() {
        let cfg = ExperimentConfig::default();
        let flat = cfg.to_flat();
        assert_eq!(flat["diffusion.T"], 400);
        assert_eq!(flat["loop.generations"], 9);
        assert_eq!(flat["metrics.k"], 3);
        assert_eq!(ExperimentConfig::from_flat(&flat).unwrap(), cfg);
    }

    #[test]
    fn parses_dotted_keys_and_rejects_unknown() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"diffusion.T": 100, "model.hidden": [32], "sampler.kind": "ddim", "seed": 5}"#,
        )
        .unwrap();
        assert_eq!(cfg.diffusion.steps, 100);
        assert_eq!(cfg.model.hidden, vec![32]);
        assert_eq!(cfg.sampler_kind(), SamplerKind::Ddim { steps: 50 });
        assert_eq!(cfg.seed, 5);
        let err = ExperimentConfig::from_json_str(r#"{"diffusion.TT": 3}"#).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("diffusion.TT")));
        assert!(ExperimentConfig::from_json_str(r#"{"diffusion": 3}"#).is_err());
        assert!(ExperimentConfig::from_json_str("[1]").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::from_json_str(r#"{"loop.generations": 7}"#).unwrap();
        let over = cfg
            .with_overrides(&[("loop.generations", "3"), ("dataset.kind", "glyphs")])
            .unwrap();
        assert_eq!(over.looping.generations, 3);
        assert_eq!(over.dataset.kind, DatasetKind::Glyphs);
        assert!(cfg.with_overrides(&[("nope", "1")]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for bad in [
            r#"{"loop.generations": 0}"#,
            r#"{"loop.synthetic_fraction": 1.5}"#,
            r#"{"metrics.k": 0}"#,
            r#"{"dataset.kind": "idx"}"#,
            r#"{"sampler.kind": "euler"}"#,
            r#"{"train.epochs": "many"}"#,
        ] {
            let err = ExperimentConfig::from_json_str(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn featurizer_policy() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.feature_space(), FeatureSpace::Identity);
        assert!(!cfg.needs_classifier());
        cfg.dataset.kind = DatasetKind::Glyphs;
        assert_eq!(cfg.feature_space(), FeatureSpace::Classifier);
        cfg.metrics.featurizer = FeaturizerPolicy::Identity;
        assert_eq!(cfg.feature_space(), FeatureSpace::Identity);
    }
}
