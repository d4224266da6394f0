use super::metrics::MetricsReport;
use crate::augment::normalize_image;
use crate::datasetio::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::models::ModelBundle;
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const PREDICTIONS_FILE: &str = "predictions.csv";
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "Frame")]
    pub frame: String,
    #[serde(rename = "GroundTruth")]
    pub ground_truth: f64,
    #[serde(rename = "Predicted")]
    pub predicted: f64,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut s = String::from("Frame,GroundTruth,Predicted\n");
    for p in preds {
        s.push_str(&format!("{},{},{}\n", p.frame, p.ground_truth, p.predicted));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let parse = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rd = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => parse(0, e.to_string()),
    })?;
    let headers = rd.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["Frame", "GroundTruth", "Predicted"] {
        return Err(parse(1, "expected header Frame,GroundTruth,Predicted".into()));
    }
    rd.deserialize()
        .map(|r: std::result::Result<Prediction, csv::Error>| {
            r.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))
        })
        .collect()
}

/// Run the bundle over every frame in manifest order (normalization only),
/// score it, and optionally write `predictions.csv`.
pub fn offline_eval(
    bundle: &mut ModelBundle,
    manifest: &DatasetManifest,
    method: &str,
    predictions_csv: Option<&Path>,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    if manifest.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut preds = Vec::with_capacity(manifest.len());
    for chunk in manifest.records.chunks(CHUNK) {
        let imgs = chunk
            .iter()
            .map(|r| ImageU8::load_png(&manifest.frame_path(r)).map(|i| normalize_image(&i)))
            .collect::<Result<Vec<_>>>()?;
        let out = bundle.predict(&Tensor::stack(&imgs)?)?;
        for (r, p) in chunk.iter().zip(out) {
            preds.push(Prediction {
                frame: r.frame_id.clone(),
                ground_truth: r.steering,
                predicted: p,
            });
        }
    }
    let y: Vec<f64> = preds.iter().map(|p| p.ground_truth).collect();
    let y_hat: Vec<f64> = preds.iter().map(|p| p.predicted).collect();
    let map = manifest.meta.track_kind.to_string();
    let report = MetricsReport::compute(method, &map, &y, &y_hat)?;
    if let Some(p) = predictions_csv {
        write_predictions(p, &preds)?;
    }
    Ok((report, preds))
}
