//! Training loops with validation tracking, early stopping and best-epoch
//! weight restoration.

use crate::augment::{AugmentConfig, AugmentStream};
use crate::datasetio::LoadedDataset;
use crate::error::{Error, Result};
use crate::models::vit::VitObjective;
use crate::models::{
    Arch, AutoBcConfig, AutoencoderConfig, ModelBundle, ModelConfig, Network, SpatialConfig, VitConfig,
};
use crate::nn::{Adam, Parameterized, Tensor};
use crate::seed;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl TrainConfig {
    /// Default schedules: autoencoder 80 epochs of 256, regressors 50 epochs
    /// of 64, all at learning rate 1e-3.
    pub fn for_arch(arch: Arch) -> Self {
        let (epochs, batch_size) = match arch {
            Arch::Autoencoder => (80, 256),
            Arch::Autobc | Arch::AutobcSpatial | Arch::Vit => (50, 64),
        };
        TrainConfig {
            arch,
            epochs,
            batch_size,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            augment: AugmentConfig::default(),
            seed: 0,
            early_stop_patience: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        self.validate_allow_zero_epochs()
    }

    fn validate_allow_zero_epochs(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("adam moments must be in [0, 1) and epsilon positive"));
        }
        Ok(())
    }

    fn optimizer(&self) -> Adam {
        let mut a = Adam::new(self.learning_rate);
        a.beta1 = self.beta1;
        a.beta2 = self.beta2;
        a.eps = self.epsilon;
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Epoch with the lowest validation loss (first on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        self.best().map(|r| r.epoch)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.entries
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.entries.iter().map(|r| r.val_loss).collect()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.entries.iter().map(|r| r.train_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.entries {
            s.push_str(&format!(
                "{},{:e},{:e},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.seconds
            ));
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<TrainingLog> {
        let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for row in rd.deserialize::<EpochRecord>() {
            entries.push(row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?);
        }
        Ok(TrainingLog { entries })
    }
}

/// True iff the number of epochs since the best validation loss has reached
/// `patience`.
pub fn early_stop_check(log: &TrainingLog, patience: usize) -> bool {
    let (Some(best), Some(last)) = (log.best_epoch(), log.entries.last()) else {
        return false;
    };
    last.epoch - best >= patience
}

fn snapshot<M: Parameterized + ?Sized>(m: &mut M) -> Vec<Tensor> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.push(p.value.clone()));
    out
}

fn restore<M: Parameterized + ?Sized>(m: &mut M, snap: Vec<Tensor>) {
    let mut it = snap.into_iter();
    m.visit_params("", &mut |_, p| p.value = it.next().expect("snapshot length"));
}

fn check_sets(train: &LoadedDataset, val: &LoadedDataset, masks: bool) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if masks && (train.masks.is_none() || val.masks.is_none()) {
        return Err(Error::invalid(
            "this model needs lane masks; generate data with masks enabled",
        ));
    }
    Ok(())
}

/// The shared loop. Each epoch shuffles and augments the training set,
/// steps the optimizer once per batch, then scores the validation set in
/// evaluation mode. The weights of the best validation epoch are restored.
fn fit(
    net: &mut Network,
    train: &LoadedDataset,
    val: &LoadedDataset,
    cfg: &TrainConfig,
    masks: bool,
) -> Result<TrainingLog> {
    check_sets(train, val, masks)?;
    cfg.validate_allow_zero_epochs()?;
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    let data_seed = seed::derive(cfg.seed, "data");
    let stream = AugmentStream::new(train, cfg.batch_size, cfg.augment, data_seed)?.with_soft_masks(masks);
    let val_stream =
        AugmentStream::new(val, cfg.batch_size, AugmentConfig::default(), data_seed)?.with_soft_masks(masks);
    let mut opt = cfg.optimizer();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let model = net.trainable();
        model.reseed(seed::derive(cfg.seed, &format!("stochastic/{epoch}")));
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in stream.epoch(epoch) {
            model.zero_grad();
            let loss = model.batch_loss(&batch, true)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            opt.step(model);
            sum += loss * batch.steering.len() as f64;
            n += batch.steering.len();
        }
        let train_loss = sum / n as f64;
        let (mut vsum, mut vn) = (0.0, 0usize);
        for batch in val_stream.sequential() {
            vsum += model.eval_loss(&batch)? * batch.steering.len() as f64;
            vn += batch.steering.len();
        }
        let val_loss = vsum / vn as f64;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}/{}: train {train_loss:.6} val {val_loss:.6} ({:.1}s)",
            cfg.arch,
            cfg.epochs,
            rec.seconds
        );
        log.entries.push(rec);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, snapshot(model)));
        }
        if early_stop_check(&log, cfg.early_stop_patience) && epoch < cfg.epochs {
            log::info!("{}: early stop after epoch {epoch}", cfg.arch);
            break;
        }
    }
    if let Some((_, w)) = best {
        restore(net.trainable(), w);
    }
    Ok(log)
}

fn expect_arch(cfg: &TrainConfig, arch: Arch) -> Result<()> {
    if cfg.arch != arch {
        return Err(Error::invalid(format!("config is for {}, expected {arch}", cfg.arch)));
    }
    Ok(())
}

fn finish(mut bundle: ModelBundle, log: &TrainingLog) -> ModelBundle {
    bundle.meta.insert("epochs_run".into(), log.entries.len().to_string());
    if let Some(b) = log.best_epoch() {
        bundle.meta.insert("best_epoch".into(), b.to_string());
    }
    bundle
}

fn init_seed(cfg: &TrainConfig) -> u64 {
    seed::derive(cfg.seed, &format!("model/{}", cfg.arch))
}

/// Fit the autoencoder to reconstruct its inputs.
pub fn train_autoencoder(
    train: &LoadedDataset,
    val: &LoadedDataset,
    cfg: &TrainConfig,
    model: &AutoencoderConfig,
) -> Result<(ModelBundle, TrainingLog)> {
    expect_arch(cfg, Arch::Autoencoder)?;
    let mut bundle = ModelBundle::new(ModelConfig::Autoencoder(model.clone()), init_seed(cfg))?;
    let log = fit(&mut bundle.net, train, val, cfg, false)?;
    Ok((finish(bundle, &log), log))
}

/// Fit the steering regressor, starting from a trained autoencoder's encoder.
pub fn train_autobc(
    train: &LoadedDataset,
    val: &LoadedDataset,
    cfg: &TrainConfig,
    model: &AutoBcConfig,
    encoder_init: &ModelBundle,
) -> Result<(ModelBundle, TrainingLog)> {
    expect_arch(cfg, Arch::Autobc)?;
    let Network::Autoencoder(ae) = &encoder_init.net else {
        return Err(Error::invalid(format!(
            "encoder_init must be an autoencoder bundle, got {}",
            encoder_init.arch()
        )));
    };
    let seed = init_seed(cfg);
    let net = crate::models::AutoBc::from_autoencoder(ae, model.clone(), seed)?;
    let mut bundle = ModelBundle {
        config: ModelConfig::Autobc(net.config.clone()),
        seed,
        meta: Default::default(),
        net: Network::Autobc(net),
    };
    let log = fit(&mut bundle.net, train, val, cfg, false)?;
    Ok((finish(bundle, &log), log))
}

/// Fit the spatial-attention variant on frames with lane masks.
pub fn train_spatial(
    train: &LoadedDataset,
    val: &LoadedDataset,
    cfg: &TrainConfig,
    model: &SpatialConfig,
) -> Result<(ModelBundle, TrainingLog)> {
    expect_arch(cfg, Arch::AutobcSpatial)?;
    let mut bundle = ModelBundle::new(ModelConfig::AutobcSpatial(model.clone()), init_seed(cfg))?;
    let log = fit(&mut bundle.net, train, val, cfg, true)?;
    Ok((finish(bundle, &log), log))
}

fn set_objective(bundle: &mut ModelBundle, objective: VitObjective) {
    if let Network::Vit(v) = &mut bundle.net {
        v.objective = objective;
    }
}

/// Self-supervised masked-image pre-training of the transformer. Only the
/// images are used; the reconstruction head stays in the checkpoint but is
/// not part of the steering path.
pub fn pretrain_vit(
    images: &LoadedDataset,
    val: &LoadedDataset,
    cfg: &TrainConfig,
    model: &VitConfig,
) -> Result<(ModelBundle, TrainingLog)> {
    expect_arch(cfg, Arch::Vit)?;
    let mut bundle = ModelBundle::new(
        ModelConfig::Vit(model.clone()),
        seed::derive(cfg.seed, "model/vit_pretrain"),
    )?;
    set_objective(&mut bundle, VitObjective::Pretrain);
    let log = fit(&mut bundle.net, images, val, cfg, false)?;
    set_objective(&mut bundle, VitObjective::Steering);
    let mut bundle = finish(bundle, &log);
    bundle.meta.insert("objective".into(), "pretrain".into());
    Ok((bundle, log))
}

/// Steering regression for the transformer, from a pre-trained bundle or a
/// fresh initialization.
pub fn finetune_vit(
    train: &LoadedDataset,
    val: &LoadedDataset,
    cfg: &TrainConfig,
    model: &VitConfig,
    init: Option<&ModelBundle>,
) -> Result<(ModelBundle, TrainingLog)> {
    expect_arch(cfg, Arch::Vit)?;
    let mut bundle = match init {
        Some(b) => {
            if b.arch() != Arch::Vit {
                return Err(Error::invalid(format!(
                    "vit init must be a vit bundle, got {}",
                    b.arch()
                )));
            }
            let mut b = b.clone();
            b.meta.clear();
            b.meta.insert("pretrained".into(), "true".into());
            b
        }
        None => {
            let mut b = ModelBundle::new(ModelConfig::Vit(model.clone()), init_seed(cfg))?;
            b.meta.insert("pretrained".into(), "false".into());
            b
        }
    };
    set_objective(&mut bundle, VitObjective::Steering);
    let log = fit(&mut bundle.net, train, val, cfg, false)?;
    Ok((finish(bundle, &log), log))
}
