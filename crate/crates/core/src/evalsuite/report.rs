use super::closed_loop::ClosedLoopResult;
use super::metrics::{MetricsReport, DEFAULT_MARGINS};
use super::offline::Prediction;
use super::plot::{histogram_chart, line_chart};
use crate::error::{Error, Result};
use crate::trainer::TrainingLog;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const SUMMARY_FILE: &str = "summary.json";

/// Reference results from a physical vehicle; shown next to desk results
/// for context only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub error_variance: Option<f64>,
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    let row = |m: &str, mae, mse, rmse, var| ReferenceRow {
        method: m.into(),
        mae,
        mse,
        rmse,
        error_variance: var,
    };
    vec![
        row("AutoBC", Some(0.0887), Some(0.0119), Some(0.1091), Some(0.0069)),
        row("ViT with MLP", Some(0.0828), Some(0.0136), Some(0.1164), Some(0.0114)),
        row(
            "ViT without MLP",
            Some(0.0795),
            Some(0.0117),
            Some(0.1082),
            Some(0.0098),
        ),
        row("AutoBC spatial attention", None, None, None, Some(0.0108)),
    ]
}

/// Reference share of AutoBC predictions within 0.1 / 0.2 / 0.3 rad.
pub const REFERENCE_MARGINS: [f64; 3] = [61.25, 95.00, 99.64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub method: String,
    pub map_kind: String,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopEntry {
    pub method: String,
    pub map_kind: String,
    pub result: ClosedLoopResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: Vec<MetricsReport>,
    pub closed_loop: Vec<ClosedLoopEntry>,
    pub reference: Vec<ReferenceRow>,
    pub reference_margins: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportInput {
    pub metrics: Vec<MetricsReport>,
    pub logs: Vec<(String, TrainingLog)>,
    pub predictions: Vec<PredictionSet>,
    pub closed_loop: Vec<ClosedLoopEntry>,
}

/// File-name-safe version of a label.
pub fn slug(s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    out.trim_matches('_').to_string()
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn maps_in_order(metrics: &[MetricsReport]) -> Vec<String> {
    let mut maps: Vec<String> = Vec::new();
    for m in metrics {
        if !maps.contains(&m.map_kind) {
            maps.push(m.map_kind.clone());
        }
    }
    maps
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

/// Methods x metrics, one block per map, followed by the reference rows.
pub fn accuracy_markdown(metrics: &[MetricsReport]) -> String {
    let mut s = String::from("# Prediction accuracy\n");
    for map in maps_in_order(metrics) {
        let _ = writeln!(s, "\n## {map} map\n");
        s.push_str("| Method | MAE | MSE | RMSE | Variance | n |\n|---|---|---|---|---|---|\n");
        for m in metrics.iter().filter(|m| m.map_kind == map) {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
                m.method, m.mae, m.mse, m.rmse, m.error_variance, m.n_samples
            );
        }
    }
    s.push_str("\n## Reference (physical vehicle, ellipse map; not reproduced here)\n\n");
    s.push_str("| Method | MAE | MSE | RMSE | Variance |\n|---|---|---|---|---|\n");
    for r in reference_rows() {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.method,
            opt(r.mae),
            opt(r.mse),
            opt(r.rmse),
            opt(r.error_variance)
        );
    }
    s
}

fn margin_label(t: f64) -> String {
    format!("Within {t:.1} radians ({:.2} degrees)", t.to_degrees())
}

/// Margin rows x methods per map, with the reference column.
pub fn margins_markdown(metrics: &[MetricsReport]) -> String {
    let mut s = String::from("# Percentage of predictions within margins\n");
    for map in maps_in_order(metrics) {
        let rows: Vec<&MetricsReport> = metrics.iter().filter(|m| m.map_kind == map).collect();
        let _ = writeln!(s, "\n## {map} map\n");
        s.push_str("| Margin |");
        for m in &rows {
            let _ = write!(s, " {} |", m.method);
        }
        s.push_str(" Reference AutoBC |\n|---|");
        s.push_str(&"---|".repeat(rows.len() + 1));
        s.push('\n');
        for (k, &t) in DEFAULT_MARGINS.iter().enumerate() {
            let _ = write!(s, "| {} |", margin_label(t));
            for m in &rows {
                let _ = write!(s, " {} |", m.margin(t).map_or("n/a".into(), |p| format!("{p:.2}%")));
            }
            let _ = writeln!(s, " {:.2}% |", REFERENCE_MARGINS[k]);
        }
    }
    s
}

pub fn metrics_csv(metrics: &[MetricsReport]) -> String {
    let mut s = String::from("method,map,n,mae,mse,rmse,error_variance,within_0.1,within_0.2,within_0.3\n");
    for m in metrics {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            m.method, m.map_kind, m.n_samples, m.mae, m.mse, m.rmse, m.error_variance
        );
        for &t in &DEFAULT_MARGINS {
            let _ = write!(s, ",{}", m.margin(t).unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}

pub fn closed_loop_markdown(entries: &[ClosedLoopEntry]) -> String {
    let mut s = String::from("# Closed-loop driving\n\n| Method | Map | Lap | Steps | Mean abs CTE (m) | Max abs CTE (m) | Lap time (s) |\n|---|---|---|---|---|---|---|\n");
    for e in entries {
        let r = &e.result;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} | {} |",
            e.method,
            e.map_kind,
            if r.completed_lap { "yes" } else { "no" },
            r.steps_survived,
            r.mean_abs_cte,
            r.max_abs_cte,
            r.lap_time.map_or("-".into(), |t| format!("{t:.2}"))
        );
    }
    s
}

/// Write tables, plots and `summary.json` into `out_dir`; returns every file
/// written.
pub fn emit_report(input: &ReportInput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if input.metrics.is_empty() {
        return Err(Error::invalid("report needs at least one metrics entry"));
    }
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut files = Vec::new();
    write(
        &out_dir.join("accuracy.md"),
        &accuracy_markdown(&input.metrics),
        &mut files,
    )?;
    write(
        &out_dir.join("margins.md"),
        &margins_markdown(&input.metrics),
        &mut files,
    )?;
    write(&out_dir.join("metrics.csv"), &metrics_csv(&input.metrics), &mut files)?;
    if !input.closed_loop.is_empty() {
        write(
            &out_dir.join("closed_loop.md"),
            &closed_loop_markdown(&input.closed_loop),
            &mut files,
        )?;
    }

    for set in &input.predictions {
        let errs: Vec<f64> = set.predictions.iter().map(|p| p.predicted - p.ground_truth).collect();
        let var = if errs.is_empty() {
            f64::NAN
        } else {
            let y: Vec<f64> = set.predictions.iter().map(|p| p.ground_truth).collect();
            let yh: Vec<f64> = set.predictions.iter().map(|p| p.predicted).collect();
            super::metrics::error_variance(&y, &yh)?
        };
        let svg = histogram_chart(
            &format!("Error distribution: {} on {}", set.method, set.map_kind),
            "prediction error (rad)",
            &errs,
            -0.5,
            0.5,
            40,
            &[format!("variance {var:.4}"), format!("n = {}", errs.len())],
        );
        let name = format!("errors_{}_{}.svg", slug(&set.method), slug(&set.map_kind));
        write(&plots.join(name), &svg, &mut files)?;
    }

    let mut maps: Vec<String> = Vec::new();
    for s in &input.predictions {
        if !maps.contains(&s.map_kind) {
            maps.push(s.map_kind.clone());
        }
    }
    for map in maps {
        let sets: Vec<&PredictionSet> = input.predictions.iter().filter(|s| s.map_kind == map).collect();
        let mut series = vec![(
            "ground truth".to_string(),
            sets[0]
                .predictions
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64, p.ground_truth))
                .collect::<Vec<_>>(),
        )];
        for s in &sets {
            series.push((
                s.method.clone(),
                s.predictions
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i as f64, p.predicted))
                    .collect(),
            ));
        }
        let svg = line_chart(
            &format!("Ground truth vs predicted: {map} map"),
            "frame",
            "steering (rad)",
            &series,
        );
        write(&plots.join(format!("overlay_{}.svg", slug(&map))), &svg, &mut files)?;
    }

    for (method, log) in &input.logs {
        let train = log.entries.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
        let val = log.entries.iter().map(|r| (r.epoch as f64, r.val_loss)).collect();
        let svg = line_chart(
            &format!("Training vs validation loss: {method}"),
            "epoch",
            "loss",
            &[("train".into(), train), ("validation".into(), val)],
        );
        write(&plots.join(format!("loss_{}.svg", slug(method))), &svg, &mut files)?;
    }

    let summary = Summary {
        metrics: input.metrics.clone(),
        closed_loop: input.closed_loop.clone(),
        reference: reference_rows(),
        reference_margins: REFERENCE_MARGINS.to_vec(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    write(&out_dir.join(SUMMARY_FILE), &json, &mut files)?;
    Ok(files)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// One arm of the augmentation on/off comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub augment: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub metrics: Vec<MetricsReport>,
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "# Augmentation ablation\n\n| Method | Augment | Epochs | Best epoch | Final train loss | Best val loss | Map | MAE | RMSE | Within 0.3 rad |\n|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        for m in &r.metrics {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.5} | {:.5} | {} | {:.4} | {:.4} | {:.2}% |",
                r.method,
                if r.augment { "on" } else { "off" },
                r.epochs_run,
                r.best_epoch,
                r.final_train_loss,
                r.best_val_loss,
                m.map_kind,
                m.mae,
                m.rmse,
                m.margin(0.3).unwrap_or(f64::NAN)
            );
        }
    }
    s
}

/// Write `ablation.md` and `ablation.json`.
pub fn emit_ablation(rows: &[AblationRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    write(&out_dir.join("ablation.md"), &ablation_markdown(rows), &mut files)?;
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::invalid(e.to_string()))?;
    write(&out_dir.join("ablation.json"), &json, &mut files)?;
    Ok(files)
}
