//! Building blocks shared by the subcommands and the full reproduction run.

use crate::config::{Config, Method, Stage};
use anyhow::{bail, Context};
use deskbc::datasetio::{
    filter_zero_velocity, load_images, read_dataset, split_train_val, DatasetManifest, LoadedDataset,
};
use deskbc::evalsuite::{
    closed_loop_eval, emit_ablation, emit_report, offline_eval, AblationRow, ClosedLoopEntry, ClosedLoopResult,
    ExpertPolicy, MetricsReport, Policy, PredictionSet, ReportInput, PREDICTIONS_FILE,
};
use deskbc::expert::{drive_and_record, RecordOptions};
use deskbc::models::{HeadVariant, ModelBundle};
use deskbc::seed;
use deskbc::simworld::{build_track, TrackKind, TrackSpec};
use deskbc::trainer::{self, TrainingLog};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CLOSED_LOOP_FILE: &str = "closed_loop.json";

/// Output root for default paths: `DESKBC_OUT`, else `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("DESKBC_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// A built-in map name (honoring `world.tracks` overrides) or a track file.
pub fn resolve_track(cfg: &Config, name: &str) -> anyhow::Result<TrackSpec> {
    match name.parse::<TrackKind>() {
        Ok(TrackKind::Custom) | Err(_) => {
            let p = Path::new(name);
            if !p.is_file() {
                bail!("`{name}` is neither a map name (ellipse, o, s) nor a track file");
            }
            Ok(TrackSpec::load(p)?)
        }
        Ok(kind) => match cfg.world.tracks.get(kind.as_str()) {
            Some(p) => Ok(TrackSpec::load(p)?),
            None => Ok(build_track(kind)?),
        },
    }
}

pub fn record_options(cfg: &Config, masks: bool) -> RecordOptions {
    RecordOptions {
        camera: cfg.world.camera,
        vehicle: cfg.world.vehicle,
        lookahead: Some(cfg.expert.lookahead),
        dt: Some(cfg.expert.dt),
        masks,
    }
}

pub fn gen_data(
    cfg: &Config,
    track: &TrackSpec,
    frames: usize,
    seed: u64,
    out: &Path,
    masks: bool,
) -> anyhow::Result<DatasetManifest> {
    log::info!("recording {frames} frames on {} into {}", track.kind, out.display());
    let m = drive_and_record(
        track,
        frames,
        cfg.expert.throttle,
        cfg.expert.steer_noise_std,
        seed,
        out,
        &record_options(cfg, masks),
    )
    .with_context(|| format!("recording into {}", out.display()))?;
    Ok(m)
}

/// Training/validation halves of a recorded dataset, decoded.
pub struct Split {
    pub train_manifest: DatasetManifest,
    pub val_manifest: DatasetManifest,
    pub train: LoadedDataset,
    pub val: LoadedDataset,
}

pub fn load_split(cfg: &Config, dir: &Path, seed: u64) -> anyhow::Result<Split> {
    let m = filter_zero_velocity(&read_dataset(dir)?);
    let (tm, vm) = split_train_val(&m, cfg.dataset.val_fraction, seed::derive(seed, "split"))?;
    let masks = m.has_masks();
    Ok(Split {
        train: load_images(&tm, masks)?,
        val: load_images(&vm, masks)?,
        train_manifest: tm,
        val_manifest: vm,
    })
}

pub fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

pub fn save_model(bundle: &mut ModelBundle, log: &TrainingLog, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    bundle.save(path)?;
    log.save_csv(&log_path(path))?;
    log::info!("saved {}", path.display());
    Ok(())
}

/// Everything needed to train one stage.
pub struct StageRun<'a> {
    pub cfg: &'a Config,
    pub split: &'a Split,
    pub seed: u64,
    pub augment: bool,
}

impl StageRun<'_> {
    fn train_cfg(&self, stage: Stage) -> deskbc::trainer::TrainConfig {
        self.cfg.train_config(
            stage,
            seed::derive(self.seed, &format!("train/{}", stage.key())),
            self.augment,
        )
    }

    pub fn autoencoder(&self) -> anyhow::Result<(ModelBundle, TrainingLog)> {
        let s = self.split;
        Ok(trainer::train_autoencoder(
            &s.train,
            &s.val,
            &self.train_cfg(Stage::Autoencoder),
            &self.cfg.model.autoencoder,
        )?)
    }

    pub fn autobc(&self, ae: &ModelBundle) -> anyhow::Result<(ModelBundle, TrainingLog)> {
        let s = self.split;
        Ok(trainer::train_autobc(
            &s.train,
            &s.val,
            &self.train_cfg(Stage::Autobc),
            &self.cfg.model.autobc,
            ae,
        )?)
    }

    pub fn spatial(&self) -> anyhow::Result<(ModelBundle, TrainingLog)> {
        let s = self.split;
        if s.train.masks.is_none() {
            bail!("the spatial-attention model needs lane masks; record the dataset with masks enabled");
        }
        Ok(trainer::train_spatial(
            &s.train,
            &s.val,
            &self.train_cfg(Stage::AutobcSpatial),
            &self.cfg.model.autobc_spatial,
        )?)
    }

    pub fn vit_pretrain(&self) -> anyhow::Result<(ModelBundle, TrainingLog)> {
        let s = self.split;
        let v = self.cfg.vit_config(HeadVariant::Mlp);
        Ok(trainer::pretrain_vit(
            &s.train,
            &s.val,
            &self.train_cfg(Stage::VitPretrain),
            &v,
        )?)
    }

    pub fn vit(&self, head: HeadVariant, init: Option<&ModelBundle>) -> anyhow::Result<(ModelBundle, TrainingLog)> {
        let s = self.split;
        let v = self.cfg.vit_config(head);
        let init = match init {
            Some(b) => Some(with_head(b, head)?),
            None => None,
        };
        Ok(trainer::finetune_vit(
            &s.train,
            &s.val,
            &self.train_cfg(Stage::Vit),
            &v,
            init.as_ref(),
        )?)
    }
}

/// A pre-trained transformer with its steering head rebuilt for `head`
/// (encoder weights kept).
pub fn with_head(pre: &ModelBundle, head: HeadVariant) -> anyhow::Result<ModelBundle> {
    use deskbc::models::ModelConfig;
    use deskbc::nn::Parameterized;
    let ModelConfig::Vit(v) = &pre.config else {
        bail!("expected a vit checkpoint, got {}", pre.arch());
    };
    if v.head == head {
        return Ok(pre.clone());
    }
    let cfg = deskbc::models::VitConfig { head, ..v.clone() };
    let mut fresh = ModelBundle::new(ModelConfig::Vit(cfg), seed::derive(pre.seed, "head"))?;
    let mut src: std::collections::HashMap<String, deskbc::nn::Tensor> =
        pre.clone().named_tensors().into_iter().collect();
    fresh.net.visit_params("", &mut |name, p| {
        if !name.starts_with("head.") {
            if let Some(t) = src.remove(name) {
                p.value = t;
            }
        }
    });
    fresh.meta = pre.meta.clone();
    Ok(fresh)
}

/// Label for a checkpoint in reports: the recorded method, else the arch.
pub fn method_label(bundle: &ModelBundle) -> String {
    bundle
        .meta
        .get("method")
        .cloned()
        .unwrap_or_else(|| bundle.arch().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Offline evaluation into `out`: `predictions.csv`, `metrics.json`.
pub fn evaluate(
    bundle: &mut ModelBundle,
    data: &DatasetManifest,
    method: &str,
    out: &Path,
) -> anyhow::Result<(MetricsReport, PredictionSet)> {
    std::fs::create_dir_all(out)?;
    let (report, preds) = offline_eval(bundle, data, method, Some(&out.join(PREDICTIONS_FILE)))?;
    write_json(&out.join(METRICS_FILE), &report)?;
    log::info!(
        "{method} on {}: mae {:.4} rmse {:.4}",
        report.map_kind,
        report.mae,
        report.rmse
    );
    let set = PredictionSet {
        method: method.to_string(),
        map_kind: report.map_kind.clone(),
        predictions: preds,
    };
    Ok((report, set))
}

pub fn drive(cfg: &Config, policy: &mut dyn Policy, track: &TrackSpec) -> anyhow::Result<ClosedLoopResult> {
    Ok(closed_loop_eval(
        policy,
        track,
        &cfg.eval.closed_loop_config(),
        &cfg.world.camera,
        &cfg.world.vehicle,
    )?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub files: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash every file under `root` (paths relative, `/`-separated, sorted).
pub fn hash_tree(root: &Path) -> anyhow::Result<Vec<FileHash>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root)?;
        if rel == Path::new(MANIFEST_FILE) {
            continue;
        }
        files.push(FileHash {
            path: rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/"),
            sha256: sha256_file(entry.path())?,
            bytes: entry.metadata()?.len(),
        });
    }
    Ok(files)
}

pub fn write_manifest(root: &Path, seed: u64) -> anyhow::Result<RunManifest> {
    let m = RunManifest {
        seed,
        files: hash_tree(root)?,
    };
    write_json(&root.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

/// Directory layout of a reproduction run.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.ckpt"))
    }

    pub fn eval(&self, method: &str, map: &str) -> PathBuf {
        self.root.join("eval").join(method).join(map)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Name of the evaluation recording for a map; the ellipse one is held out
/// from training.
pub fn eval_dataset_name(map: TrackKind) -> String {
    match map {
        TrackKind::Ellipse => "ellipse_test".into(),
        k => k.as_str().into(),
    }
}

/// Generate data, train every configured method on ellipse frames, evaluate
/// offline and in closed loop on every map, and write the report plus a
/// hashed manifest of all outputs.
pub fn reproduce(cfg: &Config, out: &Path) -> anyhow::Result<RunManifest> {
    let layout = Layout {
        root: out.to_path_buf(),
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), crate::config::to_toml(cfg))?;
    let root = cfg.seed;

    let ellipse = resolve_track(cfg, "ellipse")?;
    let train_dir = layout.data("ellipse_train");
    gen_data(
        cfg,
        &ellipse,
        cfg.dataset.frames,
        seed::derive(root, "data/ellipse_train"),
        &train_dir,
        cfg.dataset.masks,
    )?;
    let mut eval_sets = Vec::new();
    for &map in &cfg.eval.maps {
        let name = eval_dataset_name(map);
        let track = resolve_track(cfg, map.as_str())?;
        let m = gen_data(
            cfg,
            &track,
            cfg.dataset.eval_frames,
            seed::derive(root, &format!("data/{name}")),
            &layout.data(&name),
            false,
        )?;
        eval_sets.push((map, track, m));
    }

    let split = load_split(cfg, &train_dir, root)?;
    let run = StageRun {
        cfg,
        split: &split,
        seed: root,
        augment: cfg.augment.enabled,
    };
    let methods = &cfg.eval.methods;
    let mut input = ReportInput::default();
    let mut models: Vec<(Method, ModelBundle)> = Vec::new();

    if methods.contains(&Method::Autobc) {
        let (mut ae, log) = run.autoencoder()?;
        save_model(&mut ae, &log, &layout.model("autoencoder"))?;
        input.logs.push(("Autoencoder".into(), log));
        let (mut m, log) = run.autobc(&ae)?;
        finish_method(&mut m, log, Method::Autobc, &layout, &mut input, &mut models)?;
    }
    if methods.contains(&Method::AutobcSpatial) {
        let (mut m, log) = run.spatial()?;
        finish_method(&mut m, log, Method::AutobcSpatial, &layout, &mut input, &mut models)?;
    }
    let vits: Vec<Method> = methods.iter().copied().filter(|m| m.head().is_some()).collect();
    let pre = if vits.iter().any(|m| m.pretrained()) {
        let (mut pre, log) = run.vit_pretrain()?;
        save_model(&mut pre, &log, &layout.model("vit_pretrain"))?;
        input.logs.push(("ViT pre-training".into(), log));
        Some(pre)
    } else {
        None
    };
    for method in vits {
        let init = pre.as_ref().filter(|_| method.pretrained());
        let (mut m, log) = run.vit(method.head().expect("vit method"), init)?;
        finish_method(&mut m, log, method, &layout, &mut input, &mut models)?;
    }

    for (method, bundle) in &mut models {
        for (map, track, data) in &eval_sets {
            let (report, set) = evaluate(bundle, data, method.label(), &layout.eval(method.key(), map.as_str()))?;
            input.metrics.push(report);
            input.predictions.push(set);
            if cfg.eval.closed_loop {
                let result = drive(cfg, bundle, track)?;
                log::info!("{} drives {}: {:?}", method.label(), map, result);
                input.closed_loop.push(ClosedLoopEntry {
                    method: method.label().into(),
                    map_kind: map.to_string(),
                    result,
                });
            }
        }
    }
    if cfg.eval.closed_loop {
        for (map, track, _) in &eval_sets {
            let result = drive(cfg, &mut expert_policy(cfg), track)?;
            input.closed_loop.push(ClosedLoopEntry {
                method: "Expert (pure pursuit)".into(),
                map_kind: map.to_string(),
                result,
            });
        }
    }
    emit_report(&input, &layout.report())?;
    write_manifest(out, root)
}

pub fn expert_policy(cfg: &Config) -> ExpertPolicy {
    ExpertPolicy {
        lookahead: cfg.expert.lookahead,
        wheelbase: cfg.world.vehicle.wheelbase,
    }
}

fn finish_method(
    bundle: &mut ModelBundle,
    log: TrainingLog,
    method: Method,
    layout: &Layout,
    input: &mut ReportInput,
    models: &mut Vec<(Method, ModelBundle)>,
) -> anyhow::Result<()> {
    bundle.meta.insert("method".into(), method.label().into());
    save_model(bundle, &log, &layout.model(method.key()))?;
    input.logs.push((method.label().into(), log));
    models.push((method, bundle.clone()));
    Ok(())
}

/// AutoBC with augmentation off and on at the same budget, from one shared
/// autoencoder; scored on the validation split and every evaluation map.
pub fn ablate_augment(cfg: &Config, data: Option<&Path>, out: &Path) -> anyhow::Result<Vec<AblationRow>> {
    let root = cfg.seed;
    let layout = Layout {
        root: out.to_path_buf(),
    };
    let train_dir = match data {
        Some(d) => d.to_path_buf(),
        None => {
            let d = layout.data("ellipse_train");
            let track = resolve_track(cfg, "ellipse")?;
            gen_data(
                cfg,
                &track,
                cfg.dataset.frames,
                seed::derive(root, "data/ellipse_train"),
                &d,
                false,
            )?;
            d
        }
    };
    let split = load_split(cfg, &train_dir, root)?;
    let mut extra = Vec::new();
    for &map in cfg.eval.maps.iter().filter(|&&m| m != TrackKind::Ellipse) {
        let name = eval_dataset_name(map);
        let track = resolve_track(cfg, map.as_str())?;
        extra.push(gen_data(
            cfg,
            &track,
            cfg.dataset.eval_frames,
            seed::derive(root, &format!("data/{name}")),
            &layout.data(&name),
            false,
        )?);
    }
    let base = StageRun {
        cfg,
        split: &split,
        seed: root,
        augment: false,
    };
    let (mut ae, ae_log) = base.autoencoder()?;
    save_model(&mut ae, &ae_log, &layout.model("autoencoder"))?;
    let mut rows = Vec::new();
    for augment in [false, true] {
        let run = StageRun { augment, ..base };
        let (mut bc, log) = run.autobc(&ae)?;
        let tag = if augment { "augment_on" } else { "augment_off" };
        bc.meta.insert("augment".into(), augment.to_string());
        save_model(&mut bc, &log, &layout.model(&format!("autobc_{tag}")))?;
        let mut metrics = Vec::new();
        let (mut val_report, _) = evaluate(&mut bc, &split.val_manifest, "AutoBC", &layout.eval(tag, "ellipse_val"))?;
        val_report.map_kind = "ellipse (validation)".into();
        metrics.push(val_report);
        for m in &extra {
            metrics.push(evaluate(&mut bc, m, "AutoBC", &layout.eval(tag, m.meta.track_kind.as_str()))?.0);
        }
        let best = log.best().context("empty training log")?;
        rows.push(AblationRow {
            method: "AutoBC".into(),
            augment,
            epochs_run: log.entries.len(),
            best_epoch: best.epoch,
            final_train_loss: log.entries.last().map_or(f64::NAN, |r| r.train_loss),
            best_val_loss: best.val_loss,
            metrics,
        });
    }
    emit_ablation(&rows, out)?;
    write_manifest(out, root)?;
    Ok(rows)
}

impl Clone for StageRun<'_> {
    fn clone(&self) -> Self {
        *self
    }
}

impl Copy for StageRun<'_> {}
