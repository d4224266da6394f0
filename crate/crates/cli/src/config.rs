//! Experiment configuration: one TOML file, every key optional.

use deskbc::augment::AugmentConfig;
use deskbc::evalsuite::ClosedLoopConfig;
use deskbc::expert::ExpertConfig;
use deskbc::models::{Arch, AutoBcConfig, AutoencoderConfig, HeadVariant, SpatialConfig, VitConfig};
use deskbc::simworld::{CameraConfig, TrackKind, VehicleParams};
use deskbc::trainer::TrainConfig;
use deskbc::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Model sizes. `full` is the full-width architecture; `desk` shrinks
/// widths and input resolution so a CPU run finishes in minutes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub camera: CameraConfig,
    pub vehicle: VehicleParams,
    /// Track files replacing the built-in geometry, keyed by map name.
    pub tracks: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Ellipse frames recorded for training (split into train/val).
    pub frames: usize,
    /// Frames per evaluation recording (held-out ellipse, O, S).
    pub eval_frames: usize,
    pub val_fraction: f64,
    pub masks: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            frames: 5000,
            eval_frames: 1000,
            val_fraction: 0.2,
            masks: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSection {
    pub autoencoder: AutoencoderConfig,
    pub autobc: AutoBcConfig,
    pub autobc_spatial: SpatialConfig,
    pub vit: VitConfig,
}

impl ModelSection {
    fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Full => ModelSection {
                autoencoder: AutoencoderConfig::default(),
                autobc: AutoBcConfig::default(),
                autobc_spatial: SpatialConfig::default(),
                vit: VitConfig::default(),
            },
            Profile::Desk => ModelSection {
                autoencoder: AutoencoderConfig::desk(),
                autobc: AutoBcConfig::desk(),
                autobc_spatial: SpatialConfig::desk(),
                vit: VitConfig::desk(),
            },
        }
    }
}

/// Per-stage overrides of the shared training settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOverride {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub early_stop_patience: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Applied to every stage unless the stage table says otherwise.
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    pub autoencoder: StageOverride,
    pub autobc: StageOverride,
    pub autobc_spatial: StageOverride,
    pub vit_pretrain: StageOverride,
    pub vit: StageOverride,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::for_arch(Arch::Autobc);
        TrainSection {
            epochs: None,
            batch_size: None,
            learning_rate: base.learning_rate,
            beta1: base.beta1,
            beta2: base.beta2,
            epsilon: base.epsilon,
            early_stop_patience: base.early_stop_patience,
            autoencoder: StageOverride::default(),
            autobc: StageOverride::default(),
            autobc_spatial: StageOverride::default(),
            vit_pretrain: StageOverride::default(),
            vit: StageOverride::default(),
        }
    }
}

/// Training stages, each with its own schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Autoencoder,
    Autobc,
    AutobcSpatial,
    VitPretrain,
    Vit,
}

impl Stage {
    pub fn arch(self) -> Arch {
        match self {
            Stage::Autoencoder => Arch::Autoencoder,
            Stage::Autobc => Arch::Autobc,
            Stage::AutobcSpatial => Arch::AutobcSpatial,
            Stage::VitPretrain | Stage::Vit => Arch::Vit,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Stage::Autoencoder => "autoencoder",
            Stage::Autobc => "autobc",
            Stage::AutobcSpatial => "autobc_spatial",
            Stage::VitPretrain => "vit_pretrain",
            Stage::Vit => "vit",
        }
    }

    const ALL: [Stage; 5] = [
        Stage::Autoencoder,
        Stage::Autobc,
        Stage::AutobcSpatial,
        Stage::VitPretrain,
        Stage::Vit,
    ];
}

/// The four compared methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Autobc,
    AutobcSpatial,
    VitMlp,
    VitLinear,
    VitMlpScratch,
    VitLinearScratch,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Autobc,
        Method::AutobcSpatial,
        Method::VitMlp,
        Method::VitLinear,
        Method::VitMlpScratch,
        Method::VitLinearScratch,
    ];

    /// Display name, matching the reference rows.
    pub fn label(self) -> &'static str {
        match self {
            Method::Autobc => "AutoBC",
            Method::AutobcSpatial => "AutoBC spatial attention",
            Method::VitMlp => "ViT with MLP",
            Method::VitLinear => "ViT without MLP",
            Method::VitMlpScratch => "ViT with MLP without pre-training",
            Method::VitLinearScratch => "ViT without MLP without pre-training",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Method::Autobc => "autobc",
            Method::AutobcSpatial => "autobc_spatial",
            Method::VitMlp => "vit_mlp",
            Method::VitLinear => "vit_linear",
            Method::VitMlpScratch => "vit_mlp_scratch",
            Method::VitLinearScratch => "vit_linear_scratch",
        }
    }

    pub fn head(self) -> Option<HeadVariant> {
        match self {
            Method::VitMlp | Method::VitMlpScratch => Some(HeadVariant::Mlp),
            Method::VitLinear | Method::VitLinearScratch => Some(HeadVariant::Linear),
            _ => None,
        }
    }

    /// Transformer methods that start from the masked-reconstruction encoder.
    pub fn pretrained(self) -> bool {
        matches!(self, Method::VitMlp | Method::VitLinear)
    }

    pub fn vit(head: HeadVariant, pretrained: bool) -> Method {
        match (head, pretrained) {
            (HeadVariant::Mlp, true) => Method::VitMlp,
            (HeadVariant::Linear, true) => Method::VitLinear,
            (HeadVariant::Mlp, false) => Method::VitMlpScratch,
            (HeadVariant::Linear, false) => Method::VitLinearScratch,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}` (expected autobc, autobc_spatial, vit_mlp, vit_linear, vit_mlp_scratch or vit_linear_scratch)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub methods: Vec<Method>,
    /// Maps used for offline and closed-loop evaluation.
    pub maps: Vec<TrackKind>,
    pub closed_loop: bool,
    pub max_steps: usize,
    pub dt: f64,
    pub throttle: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let cl = ClosedLoopConfig::default();
        EvalSection {
            methods: Method::ALL.to_vec(),
            maps: TrackKind::BUILTIN.to_vec(),
            closed_loop: true,
            max_steps: cl.max_steps,
            dt: cl.dt,
            throttle: cl.throttle,
        }
    }
}

impl EvalSection {
    pub fn closed_loop_config(&self) -> ClosedLoopConfig {
        ClosedLoopConfig {
            max_steps: self.max_steps,
            dt: self.dt,
            throttle: self.throttle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub profile: Profile,
    /// Root of every random stream in a run.
    pub seed: u64,
    pub world: WorldSection,
    pub expert: ExpertConfig,
    pub dataset: DatasetSection,
    pub augment: AugmentConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Config::for_profile(Profile::Desk)
    }
}

/// Raw file shape; `model` stays unparsed until the profile is known so
/// that its defaults come from the right size.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    profile: Profile,
    seed: u64,
    world: WorldSection,
    expert: ExpertConfig,
    dataset: DatasetSection,
    augment: AugmentConfig,
    model: RawModel,
    train: TrainSection,
    eval: EvalSection,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    autoencoder: Option<toml::Table>,
    autobc: Option<toml::Table>,
    autobc_spatial: Option<toml::Table>,
    vit: Option<toml::Table>,
}

impl Config {
    pub fn for_profile(profile: Profile) -> Self {
        Config {
            profile,
            seed: 0,
            world: WorldSection::default(),
            expert: ExpertConfig::default(),
            dataset: DatasetSection::default(),
            augment: AugmentConfig::default(),
            model: ModelSection::for_profile(profile),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }

    /// Effective schedule for one stage. Stage tables beat the shared
    /// `train.*` keys, which beat the per-architecture defaults.
    pub fn train_config(&self, stage: Stage, seed: u64, augment: bool) -> TrainConfig {
        let t = &self.train;
        let o = self.stage_override(stage);
        let base = TrainConfig::for_arch(stage.arch());
        TrainConfig {
            epochs: o.epochs.or(t.epochs).unwrap_or(base.epochs),
            batch_size: o.batch_size.or(t.batch_size).unwrap_or(base.batch_size),
            learning_rate: o.learning_rate.unwrap_or(t.learning_rate),
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            early_stop_patience: o.early_stop_patience.unwrap_or(t.early_stop_patience),
            augment: AugmentConfig {
                enabled: augment,
                ..self.augment
            },
            seed,
            ..base
        }
    }

    fn stage_override(&self, stage: Stage) -> &StageOverride {
        let t = &self.train;
        match stage {
            Stage::Autoencoder => &t.autoencoder,
            Stage::Autobc => &t.autobc,
            Stage::AutobcSpatial => &t.autobc_spatial,
            Stage::VitPretrain => &t.vit_pretrain,
            Stage::Vit => &t.vit,
        }
    }

    pub fn vit_config(&self, head: HeadVariant) -> VitConfig {
        VitConfig {
            head,
            ..self.model.vit.clone()
        }
    }

    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let err = |k: &str, m: &str| Err((k.to_string(), m.to_string()));
        let t = &self.train;
        if t.batch_size == Some(0) {
            return err("train.batch_size", "must be at least 1");
        }
        if t.epochs == Some(0) {
            return err("train.epochs", "must be at least 1");
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return err("train.learning_rate", "must be a finite value >= 0");
        }
        for (k, v) in [("train.beta1", t.beta1), ("train.beta2", t.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return err(k, "must be in [0, 1)");
            }
        }
        if !(t.epsilon > 0.0) {
            return err("train.epsilon", "must be positive");
        }
        for stage in Stage::ALL {
            let o = self.stage_override(stage);
            let key = |f: &str| format!("train.{}.{f}", stage.key());
            if o.batch_size == Some(0) {
                return err(&key("batch_size"), "must be at least 1");
            }
            if o.learning_rate.is_some_and(|lr| !(lr >= 0.0 && lr.is_finite())) {
                return err(&key("learning_rate"), "must be a finite value >= 0");
            }
        }
        let d = &self.dataset;
        if d.frames < 2 {
            return err("dataset.frames", "must be at least 2");
        }
        if d.eval_frames == 0 {
            return err("dataset.eval_frames", "must be at least 1");
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return err("dataset.val_fraction", "must be in (0, 1)");
        }
        let e = &self.expert;
        if !(e.throttle > 0.0 && e.throttle <= 1.0) {
            return err("expert.throttle", "must be in (0, 1]");
        }
        if !(e.lookahead > 0.0) {
            return err("expert.lookahead", "must be positive");
        }
        if !(e.steer_noise_std >= 0.0) {
            return err("expert.steer_noise_std", "must be >= 0");
        }
        if !(e.dt > 0.0) {
            return err("expert.dt", "must be positive");
        }
        for p in ["flip_prob", "shift_prob", "darken_prob"] {
            let v = match p {
                "flip_prob" => self.augment.flip_prob,
                "shift_prob" => self.augment.shift_prob,
                _ => self.augment.darken_prob,
            };
            if !(0.0..=1.0).contains(&v) {
                return err(&format!("augment.{p}"), "must be a probability");
            }
        }
        let a = &self.augment;
        if !(0.0 < a.darken_min_area && a.darken_min_area <= a.darken_max_area && a.darken_max_area <= 1.0) {
            return err(
                "augment.darken_min_area",
                "need 0 < darken_min_area <= darken_max_area <= 1",
            );
        }
        let ev = &self.eval;
        if ev.max_steps == 0 {
            return err("eval.max_steps", "must be at least 1");
        }
        if !(ev.dt > 0.0) {
            return err("eval.dt", "must be positive");
        }
        if ev.methods.is_empty() {
            return err("eval.methods", "must list at least one method");
        }
        if ev.maps.contains(&TrackKind::Custom) {
            return err("eval.maps", "only ellipse, o and s are evaluation maps");
        }
        let m = &self.model;
        let checks: [(&str, Result<()>); 4] = [
            ("model.autoencoder", m.autoencoder.validate()),
            ("model.autobc", m.autobc.validate()),
            ("model.autobc_spatial", m.autobc_spatial.validate()),
            ("model.vit", m.vit.validate()),
        ];
        for (k, r) in checks {
            if let Err(e) = r {
                return err(k, &e.to_string());
            }
        }
        for name in self.world.tracks.keys() {
            if name.parse::<TrackKind>().is_err() {
                return err(&format!("world.tracks.{name}"), "not a map name (ellipse, o, s)");
            }
        }
        Ok(())
    }
}

/// 1-based line of the byte offset.
fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line where `key` (a dotted path) is assigned or its table opens. Falls
/// back to 0 when the key only exists as a default.
fn line_of_key(text: &str, key: &str) -> usize {
    let mut table = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == key {
                return i + 1;
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs
            .split('.')
            .map(|p| p.trim().trim_matches('"'))
            .collect::<Vec<_>>()
            .join(".");
        let full = if table.is_empty() {
            lhs
        } else {
            format!("{table}.{lhs}")
        };
        if full == key || key.starts_with(&format!("{full}.")) {
            return i + 1;
        }
    }
    0
}

fn config_error(key: String, line: usize, message: String) -> Error {
    Error::Config { key, line, message }
}

fn parse_model<T: serde::de::DeserializeOwned + Serialize>(
    text: &str,
    key: &str,
    base: T,
    table: Option<toml::Table>,
) -> Result<T> {
    let Some(overrides) = table else { return Ok(base) };
    let mut merged = toml::Table::try_from(&base).map_err(|e| Error::invalid(e.to_string()))?;
    for (k, v) in overrides {
        merged.insert(k, v);
    }
    serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
        let path = e.path().to_string();
        let full = if path == "." {
            key.to_string()
        } else {
            format!("{key}.{path}")
        };
        let message = e.inner().to_string().trim().to_string();
        // unknown fields are reported on the table itself
        let field = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field"))
            .map(|f| format!("{key}.{f}"));
        let full = field.unwrap_or(full);
        config_error(full.clone(), line_of_key(text, &full), message)
    })
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<Config> {
    let de = toml::Deserializer::parse(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_at(text, s.start));
        config_error("<document>".into(), line, e.message().trim().to_string())
    })?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let line = e
            .inner()
            .span()
            .map_or_else(|| line_of_key(text, &key), |s| line_at(text, s.start));
        config_error(key, line, e.inner().message().trim().to_string())
    })?;
    let defaults = ModelSection::for_profile(raw.profile);
    let model = ModelSection {
        autoencoder: parse_model(text, "model.autoencoder", defaults.autoencoder, raw.model.autoencoder)?,
        autobc: parse_model(text, "model.autobc", defaults.autobc, raw.model.autobc)?,
        autobc_spatial: parse_model(
            text,
            "model.autobc_spatial",
            defaults.autobc_spatial,
            raw.model.autobc_spatial,
        )?,
        vit: parse_model(text, "model.vit", defaults.vit, raw.model.vit)?,
    };
    let cfg = Config {
        profile: raw.profile,
        seed: raw.seed,
        world: raw.world,
        expert: raw.expert,
        dataset: raw.dataset,
        augment: raw.augment,
        model,
        train: raw.train,
        eval: raw.eval,
    };
    cfg.validate().map_err(|(k, m)| {
        let line = line_of_key(text, &k);
        config_error(k, line, m)
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Render the effective configuration as TOML.
pub fn to_toml(cfg: &Config) -> String {
    toml::to_string_pretty(cfg).unwrap_or_default()
}
