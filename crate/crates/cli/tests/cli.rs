use deskbc::datasetio::read_dataset;
use deskbc::evalsuite::{read_predictions, read_summary};
use deskbc::models::{Arch, ModelBundle};
use deskbc::Error;
use deskbc_cli::config::{parse_config, Config, Method, Profile, Stage};
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[dataset]
frames = 60
eval_frames = 12

[train]
epochs = 1
batch_size = 16

[eval]
max_steps = 30
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deskbc"));
    c.env("RUST_LOG", "warn").env_remove("DESKBC_OUT");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workdir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.toml"), TINY).unwrap();
    d
}

#[test]
fn empty_config_is_all_defaults() {
    let cfg = parse_config("").unwrap();
    assert_eq!(cfg, Config::default());
    let ae = cfg.train_config(Stage::Autoencoder, 0, false);
    assert_eq!((ae.epochs, ae.batch_size), (80, 256));
    let bc = cfg.train_config(Stage::Autobc, 0, false);
    assert_eq!((bc.epochs, bc.batch_size, bc.learning_rate), (50, 64, 1e-3));
    assert_eq!(cfg.eval.methods, Method::ALL.to_vec());
    assert_eq!(cfg.dataset.frames, 5000);
}

#[test]
fn zero_batch_size_names_the_key() {
    let err = parse_config("[train]\nbatch_size = 0\n").unwrap_err();
    match err {
        Error::Config { key, line, .. } => assert_eq!((key.as_str(), line), ("train.batch_size", 2)),
        e => panic!("{e}"),
    }
    let err = parse_config("train.batch_size = 0\n").unwrap_err();
    assert!(
        matches!(err, Error::Config { ref key, line: 1, .. } if key == "train.batch_size"),
        "{err}"
    );
}

#[test]
fn unknown_keys_are_rejected_with_their_line() {
    let cases = [
        ("seed = 1\n\n[train]\nbogus = 1\n", "train.bogus", 4),
        ("[model.vit]\npatch = 8\nfoo = 2\n", "model.vit.foo", 3),
        ("[world.camera]\nzoom = 2.0\n", "world.camera.zoom", 2),
        ("colour = \"red\"\n", "colour", 1),
    ];
    for (text, want_key, want_line) in cases {
        match parse_config(text).unwrap_err() {
            Error::Config { key, line, message } => {
                assert_eq!(key, want_key, "{message}");
                assert_eq!(line, want_line, "{message}");
                assert!(message.contains("unknown field"), "{message}");
            }
            e => panic!("{e}"),
        }
    }
}

#[test]
fn malformed_documents_report_a_line() {
    let err = parse_config("seed = 1\n[train\n").unwrap_err();
    assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    let err = parse_config("[model.vit]\n\npatch = \"x\"\n").unwrap_err();
    assert!(
        matches!(err, Error::Config { ref key, line: 3, .. } if key == "model.vit.patch"),
        "{err}"
    );
}

#[test]
fn overrides_layer_over_defaults() {
    let cfg = parse_config(
        "profile = \"full\"\n[model.vit]\ndepth = 3\n[train]\nepochs = 7\n[train.autoencoder]\nepochs = 2\nbatch_size = 8\n",
    )
    .unwrap();
    assert_eq!(cfg.profile, Profile::Full);
    assert_eq!(cfg.model.vit.depth, 3);
    assert_eq!(cfg.model.vit.width, 384);
    let ae = cfg.train_config(Stage::Autoencoder, 1, false);
    assert_eq!((ae.epochs, ae.batch_size), (2, 8));
    let bc = cfg.train_config(Stage::Autobc, 1, true);
    assert_eq!((bc.epochs, bc.batch_size), (7, 64));
    assert!(bc.augment.enabled);
    assert_eq!(bc.arch, Arch::Autobc);
}

#[test]
fn invalid_model_and_eval_values_are_rejected() {
    for (text, key) in [
        ("[model.vit]\nheads = 5\n", "model.vit"),
        ("[eval]\nmax_steps = 0\n", "eval.max_steps"),
        ("[dataset]\nval_fraction = 1.5\n", "dataset.val_fraction"),
        ("[eval]\nmethods = []\n", "eval.methods"),
    ] {
        match parse_config(text).unwrap_err() {
            Error::Config { key: k, .. } => assert_eq!(k, key),
            e => panic!("{e}"),
        }
    }
}

#[test]
fn effective_config_roundtrips() {
    let cfg = parse_config(TINY).unwrap();
    let text = deskbc_cli::config::to_toml(&cfg);
    assert_eq!(parse_config(&text).unwrap(), cfg);
}

#[test]
fn usage_errors_exit_two() {
    let d = workdir();
    for args in [
        &["frobnicate"][..],
        &["gen-data", "--track", "ellipse"],
        &["gen-data", "--track", "ellipse", "--frames", "3", "--bogus"],
        &["train", "--arch", "resnet", "--data", "x"],
    ] {
        let out = run(d.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn failures_exit_one_with_a_single_line() {
    let d = workdir();
    let cases: [&[&str]; 3] = [
        &["eval", "--model", "missing.ckpt", "--data", "nowhere"],
        &["gen-data", "--track", "figure8", "--frames", "3"],
        &["--config", "absent.toml", "show-config"],
    ];
    for args in cases {
        let out = run(d.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error")).collect();
        assert_eq!(lines.len(), 1, "{err}");
    }
    std::fs::write(d.path().join("bad.toml"), "[train]\nbatch_size = 0\n").unwrap();
    let out = run(d.path(), &["--config", "bad.toml", "show-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
}

#[test]
fn gen_data_writes_requested_frames() {
    let d = workdir();
    ok(
        d.path(),
        &[
            "gen-data",
            "--track",
            "ellipse",
            "--frames",
            "25",
            "--seed",
            "7",
            "--out",
            "data/ellipse",
        ],
    );
    let labels = std::fs::read_to_string(d.path().join("data/ellipse/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 26);
    assert!(labels.starts_with("Frame,Throttle,Steering\n"));
    let m = read_dataset(&d.path().join("data/ellipse")).unwrap();
    assert_eq!(m.len(), 25);
    assert_eq!(m.meta.seed, 7);
    assert!(m.has_masks());
}

#[test]
fn output_root_comes_from_the_environment() {
    let d = workdir();
    let root = d.path().join("elsewhere");
    let out = bin()
        .current_dir(d.path())
        .env("DESKBC_OUT", &root)
        .args(["gen-data", "--track", "o", "--frames", "4", "--no-masks"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("data/o/labels.csv").is_file());
    assert!(!root.join("data/o/masks").exists());
}

fn checkpoint_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn train_eval_drive_report() {
    let d = workdir();
    let p = d.path();
    let cfg = ["--config", "tiny.toml"];
    ok(
        p,
        &[
            &cfg[..],
            &[
                "gen-data",
                "--track",
                "ellipse",
                "--frames",
                "60",
                "--out",
                "data/ellipse",
            ],
        ]
        .concat(),
    );
    ok(
        p,
        &[
            &cfg[..],
            &[
                "gen-data",
                "--track",
                "o",
                "--frames",
                "12",
                "--out",
                "data/o",
                "--no-masks",
            ],
        ]
        .concat(),
    );

    ok(
        p,
        &[
            &cfg[..],
            &[
                "train",
                "--arch",
                "autoencoder",
                "--data",
                "data/ellipse",
                "--out",
                "m/ae.ckpt",
            ],
        ]
        .concat(),
    );
    for name in ["a", "b"] {
        let out = format!("m/bc_{name}.ckpt");
        ok(
            p,
            &[
                &cfg[..],
                &[
                    "train",
                    "--arch",
                    "autobc",
                    "--data",
                    "data/ellipse",
                    "--init",
                    "m/ae.ckpt",
                    "--out",
                    &out,
                ],
            ]
            .concat(),
        );
    }
    assert_eq!(
        checkpoint_bytes(&p.join("m/bc_a.ckpt")),
        checkpoint_bytes(&p.join("m/bc_b.ckpt"))
    );
    let log = std::fs::read_to_string(p.join("m/bc_a.log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,seconds\n"));
    let bundle = ModelBundle::load(&p.join("m/bc_a.ckpt")).unwrap();
    assert_eq!(bundle.arch(), Arch::Autobc);
    assert_eq!(bundle.meta.get("method").map(String::as_str), Some("AutoBC"));

    ok(
        p,
        &[
            &cfg[..],
            &["eval", "--model", "m/bc_a.ckpt", "--data", "data/o", "--out", "ev/o"],
        ]
        .concat(),
    );
    let preds = read_predictions(&p.join("ev/o/predictions.csv")).unwrap();
    assert_eq!(preds.len(), 12);
    let summary = read_summary(&p.join("ev/o/summary.json")).unwrap();
    assert_eq!(summary.metrics.len(), 1);
    assert_eq!(summary.metrics[0].map_kind, "o");

    let line = ok(
        p,
        &[
            &cfg[..],
            &["drive", "--expert", "--track", "o", "--max-steps", "50", "--out", "dr"],
        ]
        .concat(),
    );
    let entry: deskbc::evalsuite::ClosedLoopEntry = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(entry.result.steps_survived, 50);
    ok(
        p,
        &[
            &cfg[..],
            &[
                "drive",
                "--model",
                "m/bc_a.ckpt",
                "--track",
                "ellipse",
                "--max-steps",
                "5",
                "--out",
                "dr2",
            ],
        ]
        .concat(),
    );

    ok(
        p,
        &[
            "report",
            "--eval",
            "ev/o",
            "--log",
            "AutoBC=m/bc_a.log.csv",
            "--drive",
            "dr/closed_loop.json",
            "--out",
            "rep",
        ],
    );
    for f in [
        "accuracy.md",
        "margins.md",
        "summary.json",
        "closed_loop.md",
        "plots/errors_autobc_o.svg",
        "plots/loss_autobc.svg",
    ] {
        assert!(std::fs::metadata(p.join("rep").join(f)).unwrap().len() > 0, "{f}");
    }
}

#[test]
fn vit_pretrain_then_finetune_from_the_command_line() {
    let d = workdir();
    let p = d.path();
    let cfg = ["--config", "tiny.toml"];
    ok(
        p,
        &[
            &cfg[..],
            &[
                "gen-data",
                "--track",
                "ellipse",
                "--frames",
                "30",
                "--out",
                "data",
                "--no-masks",
            ],
        ]
        .concat(),
    );
    ok(
        p,
        &[
            &cfg[..],
            &[
                "train",
                "--arch",
                "vit",
                "--objective",
                "pretrain",
                "--data",
                "data",
                "--out",
                "pre.ckpt",
            ],
        ]
        .concat(),
    );
    ok(
        p,
        &[
            &cfg[..],
            &[
                "train",
                "--arch",
                "vit",
                "--head",
                "linear",
                "--pretrained",
                "pre.ckpt",
                "--data",
                "data",
                "--out",
                "lin.ckpt",
            ],
        ]
        .concat(),
    );
    let pre = ModelBundle::load(&p.join("pre.ckpt")).unwrap();
    let mut lin = ModelBundle::load(&p.join("lin.ckpt")).unwrap();
    assert_eq!(pre.meta.get("objective").map(String::as_str), Some("pretrain"));
    assert_eq!(lin.meta.get("pretrained").map(String::as_str), Some("true"));
    assert_eq!(lin.meta.get("method").map(String::as_str), Some("ViT without MLP"));
    // a linear head is a single weight and bias
    assert_eq!(
        lin.named_tensors()
            .iter()
            .filter(|(n, _)| n.starts_with("head."))
            .count(),
        2
    );

    ok(p, &[&cfg[..], &["train", "--arch", "vit", "--data", "data"]].concat());
    let scratch = ModelBundle::load(&p.join("runs/models/vit_mlp_scratch.ckpt")).unwrap();
    assert_eq!(
        scratch.meta.get("method").map(String::as_str),
        Some("ViT with MLP without pre-training")
    );

    // spatial training refuses a dataset recorded without masks
    let out = run(
        p,
        &[&cfg[..], &["train", "--arch", "autobc-spatial", "--data", "data"]].concat(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn method_names_parse() {
    for m in Method::ALL {
        assert_eq!(m.key().parse::<Method>().unwrap(), m);
    }
    assert!("resnet".parse::<Method>().is_err());
}
