//! Scores completions against pseudo-occlusion ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::bundle::read_bundle_outputs;
use crate::config::{PipelineConfig, SamplerKind};
use crate::dataset::{self, extract_on_black, Difficulty, PseudoOcclusionSample, SampleRecord};
use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, QuerySpec};
use crate::raster::{BinaryMask, ImageBuffer};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Metrics computed in-process.
pub const BUILTIN_METRICS: [&str; 3] = ["iou", "l1", "psnr"];
/// Perceptual metrics delegated to the metric backend (high, mid and low level).
pub const EXTERNAL_METRICS: [&str; 3] = ["clip", "dreamsim", "lpips"];

pub fn default_metrics() -> Vec<String> {
    BUILTIN_METRICS
        .iter()
        .chain(EXTERNAL_METRICS.iter())
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Sampler(SamplerKind),
    /// Completions produced elsewhere, one bundle directory per sample id.
    External { name: String, dir: PathBuf },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Sampler(k) => k.to_string(),
            Method::External { name, .. } => name.clone(),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `mc`, `plain`, `naive`, or `external:<dir>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(dir) = s.strip_prefix("external:") {
            let dir = PathBuf::from(dir);
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "external".into());
            return Ok(Method::External { name, dir });
        }
        s.parse::<SamplerKind>().map(Method::Sampler)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.iou(gt)
}

/// Mean absolute difference over all channels, scaled to [0, 1].
pub fn l1(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    crate::raster::ensure_same(a.dims(), b.dims())?;
    let sum: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(sum as f64 / (255.0 * a.as_raw().len() as f64))
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    crate::raster::ensure_same(a.dims(), b.dims())?;
    let se: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    if se == 0 {
        return Ok(PSNR_CAP);
    }
    let mse = se as f64 / a.as_raw().len() as f64;
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub difficulty: Difficulty,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One `{method, difficulty, metric, mean, n}` line of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub difficulty: Difficulty,
    pub metric: String,
    pub mean: f64,
    pub n: usize,
}

/// Means laid out with one column group per difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasyHardTable {
    pub method: String,
    pub easy: BTreeMap<String, f64>,
    pub hard: BTreeMap<String, f64>,
    /// Same split per pool source, when samples carry one.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_source: BTreeMap<String, EasyHardCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasyHardCells {
    pub easy: BTreeMap<String, f64>,
    pub hard: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub metrics: Vec<String>,
    pub samples: Vec<SampleScore>,
    pub summary: Vec<SummaryRow>,
    pub table: EasyHardTable,
    pub notices: Vec<String>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,difficulty,metric,mean,n\n");
        for r in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                r.difficulty.as_str(),
                r.metric,
                r.mean,
                r.n
            ));
        }
        out
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_vec_pretty(self)?)?;
        std::fs::write(csv, self.to_csv())?;
        Ok(())
    }
}

/// Scores one prediction against a sample's ground truth.
pub fn score_prediction(
    sample: &PseudoOcclusionSample,
    category: &str,
    pred_image: &ImageBuffer,
    pred_mask: &BinaryMask,
    metrics: &[String],
    backends: Option<&Backends>,
) -> Result<(BTreeMap<String, f64>, Vec<String>)> {
    let pred = extract_on_black(pred_image, pred_mask)?;
    let gt = extract_on_black(&sample.base_image, &sample.gt_mask)?;
    let mut scores = BTreeMap::new();
    let mut skipped = Vec::new();
    for m in metrics {
        let v = match m.as_str() {
            "iou" => iou(pred_mask, &sample.gt_mask)?,
            "l1" => l1(&pred, &gt)?,
            "psnr" => psnr(&pred, &gt)?,
            other => match backends.and_then(|b| b.metric_score(other, &pred, &gt, category)) {
                Some(r) => r?,
                None => {
                    skipped.push(other.to_string());
                    continue;
                }
            },
        };
        scores.insert(m.clone(), v);
    }
    Ok((scores, skipped))
}

/// First modal pixel; picks the object out when categories repeat.
fn seed_point(modal: &BinaryMask) -> Option<(u32, u32)> {
    modal.iter_set().next()
}

/// What the evaluation needs from its caller.
pub struct EvalSetup<'a> {
    pub config: &'a PipelineConfig,
    pub seed: u64,
    pub metrics: &'a [String],
    /// Backends for one sample; called per sample so a mock can be built
    /// from its ground truth.
    pub backends_for: &'a (dyn Fn(&SampleRecord, &PseudoOcclusionSample) -> Result<Backends> + Sync),
}

/// Runs `method` over every sample of the dataset at `dataset_dir`.
pub fn evaluate(dataset_dir: &Path, method: &Method, setup: &EvalSetup<'_>) -> Result<EvalReport> {
    let manifest = dataset::load_manifest(dataset_dir)?;
    for m in setup.metrics {
        if !BUILTIN_METRICS.contains(&m.as_str()) && !EXTERNAL_METRICS.contains(&m.as_str()) {
            return Err(Error::Config(format!("unknown metric '{m}'")));
        }
    }
    let results: Vec<(SampleScore, Vec<String>)> = manifest
        .samples
        .par_iter()
        .map(|rec| evaluate_one(dataset_dir, rec, method, setup))
        .collect::<Result<_>>()?;

    let mut notices = Vec::new();
    let mut skipped: Vec<String> = results.iter().flat_map(|(_, s)| s.clone()).collect();
    skipped.sort();
    skipped.dedup();
    for m in skipped {
        notices.push(format!("metric '{m}' skipped: no metric backend configured"));
    }
    let samples: Vec<SampleScore> = results.into_iter().map(|(s, _)| s).collect();
    for s in samples.iter().filter(|s| s.error.is_some()) {
        notices.push(format!("{}: {}", s.id, s.error.as_deref().unwrap_or_default()));
    }
    let name = method.name();
    let summary = summarize(&name, &samples, |_| true);
    let mut by_source = BTreeMap::new();
    let mut sources: Vec<&str> = samples.iter().filter_map(|s| s.source.as_deref()).collect();
    sources.sort();
    sources.dedup();
    for src in sources {
        let rows = summarize(&name, &samples, |s| s.source.as_deref() == Some(src));
        let (easy, hard) = split(&rows);
        by_source.insert(src.to_string(), EasyHardCells { easy, hard });
    }
    let (easy, hard) = split(&summary);
    Ok(EvalReport {
        method: name.clone(),
        metrics: setup.metrics.to_vec(),
        samples,
        summary,
        table: EasyHardTable {
            method: name,
            easy,
            hard,
            by_source,
        },
        notices,
    })
}

fn evaluate_one(
    dataset_dir: &Path,
    rec: &SampleRecord,
    method: &Method,
    setup: &EvalSetup<'_>,
) -> Result<(SampleScore, Vec<String>)> {
    let sample = dataset::load_sample(dataset_dir, rec)?;
    let backends = (setup.backends_for)(rec, &sample)?;
    let mut out = SampleScore {
        id: rec.id.clone(),
        difficulty: rec.difficulty,
        category: rec.category.clone(),
        source: rec.source.clone(),
        scores: BTreeMap::new(),
        iterations: None,
        error: None,
    };
    let prediction = match method {
        Method::Sampler(kind) => {
            let query = QuerySpec::new(rec.category.clone(), seed_point(&sample.modal_mask))?;
            match run_pipeline(&sample.occluded_image, &query, setup.config, &backends, *kind, setup.seed) {
                Ok(b) => {
                    out.iterations = Some(b.iterations.len());
                    Ok((b.image_in_original()?, b.mask_in_original()?))
                }
                Err(e) if e.source.is_transport() => return Err(e.source),
                Err(e) => Err(e.source.to_string()),
            }
        }
        Method::External { dir, .. } => {
            let bundle = dir.join(&rec.id);
            if !bundle.exists() {
                Err(format!("no external result at {}", bundle.display()))
            } else {
                let o = read_bundle_outputs(&bundle)?;
                Ok((o.image_in_original()?, o.mask_in_original()?))
            }
        }
    };
    match prediction {
        Ok((img, mask)) => {
            let (scores, skipped) = score_prediction(&sample, &rec.category, &img, &mask, setup.metrics, Some(&backends))?;
            out.scores = scores;
            Ok((out, skipped))
        }
        Err(e) => {
            out.error = Some(e);
            Ok((out, Vec::new()))
        }
    }
}

fn summarize(method: &str, samples: &[SampleScore], keep: impl Fn(&SampleScore) -> bool) -> Vec<SummaryRow> {
    let mut acc: BTreeMap<(Difficulty, String), (f64, usize)> = BTreeMap::new();
    for s in samples.iter().filter(|s| keep(s)) {
        for (m, v) in &s.scores {
            let e = acc.entry((s.difficulty, m.clone())).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((difficulty, metric), (sum, n))| SummaryRow {
            method: method.to_string(),
            difficulty,
            metric,
            mean: sum / n as f64,
            n,
        })
        .collect()
}

type Cells = BTreeMap<String, f64>;

fn split(rows: &[SummaryRow]) -> (Cells, Cells) {
    let mut easy = BTreeMap::new();
    let mut hard = BTreeMap::new();
    for r in rows {
        match r.difficulty {
            Difficulty::Easy => easy.insert(r.metric.clone(), r.mean),
            Difficulty::Hard => hard.insert(r.metric.clone(), r.mean),
        };
    }
    (easy, hard)
}
