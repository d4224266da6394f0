//! Command-line front end: data generation, training, evaluation, closed-loop
//! driving, reporting and the end-to-end reproduction run.

pub mod config;
pub mod pipeline;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{load_config, Config, Method, Stage};
use deskbc::evalsuite::{
    emit_report, read_predictions, ClosedLoopEntry, MetricsReport, PredictionSet, ReportInput, PREDICTIONS_FILE,
};
use deskbc::models::{Arch, HeadVariant, ModelBundle};
use deskbc::trainer::TrainingLog;
use pipeline::*;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "deskbc", version, about = "Desk-scale behavior cloning experiments")]
struct Cli {
    /// Experiment config (TOML); missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record expert demonstrations on a track.
    GenData(GenData),
    /// Train one model.
    Train(Train),
    /// Offline evaluation of a checkpoint on a dataset.
    Eval(Eval),
    /// Closed-loop driving of a checkpoint (or the expert) on a track.
    Drive(Drive),
    /// Collect evaluation outputs into tables, plots and a summary.
    Report(Report),
    /// Generate data, train every method, evaluate and report.
    Reproduce(Reproduce),
    /// Compare AutoBC trained with and without augmentation.
    AblateAugment(Ablate),
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Args, Debug)]
struct GenData {
    /// Map name (ellipse, o, s) or a track file.
    #[arg(long)]
    track: String,
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip lane masks even when the config asks for them.
    #[arg(long)]
    no_masks: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Autoencoder,
    Autobc,
    AutobcSpatial,
    Vit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Objective {
    Steering,
    Pretrain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum HeadArg {
    Mlp,
    Linear,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long, value_enum)]
    arch: ArchArg,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the training log goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Autoencoder checkpoint providing the AutoBC encoder. Trained first
    /// when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Pre-trained transformer checkpoint to fine-tune.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "steering")]
    objective: Objective,
    #[arg(long, value_enum, default_value = "mlp")]
    head: HeadArg,
    #[arg(long)]
    epochs: Option<usize>,
    /// Enable on-the-fly augmentation.
    #[arg(long)]
    augment: bool,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label used in the report; defaults to the checkpoint's method.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args, Debug)]
struct Drive {
    #[arg(long, conflicts_with = "expert", required_unless_present = "expert")]
    model: Option<PathBuf>,
    /// Drive the pure-pursuit expert instead of a checkpoint.
    #[arg(long)]
    expert: bool,
    #[arg(long)]
    track: String,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Report {
    /// Directories written by `eval`.
    #[arg(long = "eval", required = true, num_args = 1..)]
    evals: Vec<PathBuf>,
    /// Training logs as `NAME=PATH`.
    #[arg(long = "log", value_parser = parse_named)]
    logs: Vec<(String, PathBuf)>,
    /// Files written by `drive`.
    #[arg(long = "drive")]
    drives: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Reproduce {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subset of methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
}

#[derive(Args, Debug)]
struct Ablate {
    /// Existing ellipse dataset; recorded when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    let (n, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got `{s}`"))?;
    Ok((n.to_string(), PathBuf::from(p)))
}

/// Parse `argv` (including the program name), run, and return the exit code:
/// 0 on success, 1 when the run fails, 2 on usage errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let root = output_root();
    match cli.command {
        Command::GenData(a) => {
            let track = resolve_track(&cfg, &a.track)?;
            let out = a.out.unwrap_or_else(|| root.join("data").join(track.kind.as_str()));
            let masks = cfg.dataset.masks && !a.no_masks;
            let m = gen_data(&cfg, &track, a.frames, cfg.seed, &out, masks)?;
            println!("{} frames -> {}", m.len(), out.display());
        }
        Command::Train(a) => train(&cfg, a, &root)?,
        Command::Eval(a) => {
            let mut bundle = ModelBundle::load(&a.model)?;
            let data = deskbc::datasetio::read_dataset(&a.data)?;
            let method = a.method.unwrap_or_else(|| method_label(&bundle));
            let out = a.out.unwrap_or_else(|| {
                root.join("eval")
                    .join(deskbc::evalsuite::report::slug(&method))
                    .join(data.meta.track_kind.as_str())
            });
            let (report, set) = evaluate(&mut bundle, &data, &method, &out)?;
            emit_report(
                &ReportInput {
                    metrics: vec![report.clone()],
                    predictions: vec![set],
                    ..Default::default()
                },
                &out,
            )?;
            println!(
                "{method} on {}: mae {:.4} mse {:.4} rmse {:.4} variance {:.4} -> {}",
                report.map_kind,
                report.mae,
                report.mse,
                report.rmse,
                report.error_variance,
                out.display()
            );
        }
        Command::Drive(a) => {
            if let Some(n) = a.max_steps {
                cfg.eval.max_steps = n;
            }
            if let Some(dt) = a.dt {
                cfg.eval.dt = dt;
            }
            if cfg.eval.max_steps == 0 || !(cfg.eval.dt > 0.0) {
                bail!("--max-steps must be >= 1 and --dt positive");
            }
            let track = resolve_track(&cfg, &a.track)?;
            let (method, result) = match &a.model {
                Some(p) => {
                    let mut b = ModelBundle::load(p)?;
                    (method_label(&b), drive(&cfg, &mut b, &track)?)
                }
                None => (
                    "Expert (pure pursuit)".to_string(),
                    drive(&cfg, &mut expert_policy(&cfg), &track)?,
                ),
            };
            let entry = ClosedLoopEntry {
                method,
                map_kind: track.kind.to_string(),
                result,
            };
            let out = a.out.unwrap_or_else(|| {
                root.join("drive").join(format!(
                    "{}_{}",
                    deskbc::evalsuite::report::slug(&entry.method),
                    track.kind
                ))
            });
            write_json(&out.join(CLOSED_LOOP_FILE), &entry)?;
            println!("{}", serde_json::to_string(&entry)?);
        }
        Command::Report(a) => {
            let mut input = ReportInput::default();
            for dir in &a.evals {
                let m: MetricsReport = read_json(&dir.join(METRICS_FILE))?;
                let preds = read_predictions(&dir.join(PREDICTIONS_FILE))?;
                input.predictions.push(PredictionSet {
                    method: m.method.clone(),
                    map_kind: m.map_kind.clone(),
                    predictions: preds,
                });
                input.metrics.push(m);
            }
            for (name, p) in a.logs {
                input.logs.push((name, TrainingLog::load_csv(&p)?));
            }
            for p in &a.drives {
                input.closed_loop.push(read_json(p)?);
            }
            let out = a.out.unwrap_or_else(|| root.join("report"));
            let files = emit_report(&input, &out)?;
            println!("{} files -> {}", files.len(), out.display());
        }
        Command::Reproduce(a) => {
            if !a.methods.is_empty() {
                cfg.eval.methods = a
                    .methods
                    .iter()
                    .map(|m| m.parse::<Method>())
                    .collect::<deskbc::Result<_>>()?;
            }
            let out = a
                .out
                .unwrap_or_else(|| root.join(format!("reproduce_seed{}", cfg.seed)));
            let m = reproduce(&cfg, &out)?;
            println!(
                "{} files hashed -> {}",
                m.files.len(),
                out.join(MANIFEST_FILE).display()
            );
        }
        Command::AblateAugment(a) => {
            let out = a.out.unwrap_or_else(|| root.join("ablation"));
            let rows = ablate_augment(&cfg, a.data.as_deref(), &out)?;
            for r in rows {
                let m = &r.metrics[0];
                println!(
                    "augment {}: best val loss {:.5}, validation mae {:.4}",
                    if r.augment { "on" } else { "off" },
                    r.best_val_loss,
                    m.mae
                );
            }
        }
        Command::ShowConfig => print!("{}", config::to_toml(&cfg)),
    }
    Ok(())
}

fn train(cfg: &Config, a: Train, root: &Path) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    if let Some(e) = a.epochs {
        if e == 0 {
            bail!("--epochs must be at least 1");
        }
        cfg.train.epochs = Some(e);
        for s in [
            &mut cfg.train.autoencoder,
            &mut cfg.train.autobc,
            &mut cfg.train.autobc_spatial,
            &mut cfg.train.vit_pretrain,
            &mut cfg.train.vit,
        ] {
            s.epochs = None;
        }
    }
    let split = load_split(&cfg, &a.data, cfg.seed)?;
    let run = StageRun {
        cfg: &cfg,
        split: &split,
        seed: cfg.seed,
        augment: a.augment || cfg.augment.enabled,
    };
    let arch = match a.arch {
        ArchArg::Autoencoder => Arch::Autoencoder,
        ArchArg::Autobc => Arch::Autobc,
        ArchArg::AutobcSpatial => Arch::AutobcSpatial,
        ArchArg::Vit => Arch::Vit,
    };
    let head = match a.head {
        HeadArg::Mlp => HeadVariant::Mlp,
        HeadArg::Linear => HeadVariant::Linear,
    };
    let name = match (arch, a.objective) {
        (Arch::Vit, Objective::Pretrain) => Stage::VitPretrain.key().to_string(),
        (Arch::Vit, _) => Method::vit(head, a.pretrained.is_some()).key().to_string(),
        (a, _) => a.to_string(),
    };
    let out = a
        .out
        .unwrap_or_else(|| root.join("models").join(format!("{name}.ckpt")));
    let (mut bundle, log) = match arch {
        Arch::Autoencoder => run.autoencoder()?,
        Arch::Autobc => {
            let ae = match &a.init {
                Some(p) => ModelBundle::load(p)?,
                None => {
                    log::info!("no --init given; training the autoencoder first");
                    let (mut ae, log) = run.autoencoder()?;
                    save_model(&mut ae, &log, &out.with_extension("autoencoder.ckpt"))?;
                    ae
                }
            };
            let (mut b, log) = run.autobc(&ae)?;
            b.meta.insert("method".into(), Method::Autobc.label().into());
            (b, log)
        }
        Arch::AutobcSpatial => {
            let (mut b, log) = run.spatial()?;
            b.meta.insert("method".into(), Method::AutobcSpatial.label().into());
            (b, log)
        }
        Arch::Vit => match a.objective {
            Objective::Pretrain => run.vit_pretrain()?,
            Objective::Steering => {
                let pre = a.pretrained.as_deref().map(ModelBundle::load).transpose()?;
                let (mut b, log) = run.vit(head, pre.as_ref())?;
                b.meta
                    .insert("method".into(), Method::vit(head, pre.is_some()).label().into());
                (b, log)
            }
        },
    };
    bundle.meta.insert("root_seed".into(), cfg.seed.to_string());
    bundle
        .meta
        .insert("data_seed".into(), split.train_manifest.meta.seed.to_string());
    save_model(&mut bundle, &log, &out).context("saving checkpoint")?;
    let best = log.best().map_or(f64::NAN, |r| r.val_loss);
    println!(
        "{} epochs, best val loss {best:.6} -> {}",
        log.entries.len(),
        out.display()
    );
    Ok(())
}
