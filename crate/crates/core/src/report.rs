//! Evaluation metrics, expected-gap diagnostics, membrane histograms and
//! run reports (JSON / CSV).

use crate::ann::AnnModel;
use crate::config::AppConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::snn::SnnModel;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const EVAL_CHUNK: usize = 64;

/// Plain argmax accuracy of an ANN on a dataset.
pub fn ann_accuracy(model: &AnnModel, data: &Dataset) -> Result<f64> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let correct: usize = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<usize> {
            let (batch, labels) = data.batch(chunk)?;
            let preds = model.forward(&batch)?.argmax_rows()?;
            Ok(preds.iter().zip(&labels).filter(|(p, l)| p == l).count())
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / data.len() as f64)
}

/// SNN accuracy at each requested timestep. Each sample is simulated once
/// to `max(timesteps)` with the readout sampled along the way; samples are
/// processed in parallel with a deterministic count reduction.
pub fn evaluate(snn: &SnnModel, data: &Dataset, timesteps: &[usize]) -> Result<Vec<f64>> {
    if timesteps.is_empty() {
        return Err(Error::Argument("no timesteps requested".into()));
    }
    if !timesteps.windows(2).all(|w| w[0] < w[1]) || timesteps[0] == 0 {
        return Err(Error::Argument(
            "timesteps must be positive and strictly increasing".into(),
        ));
    }
    let t_max = *timesteps.last().expect("non-empty");
    let indices: Vec<usize> = (0..data.len()).collect();
    let counts: Vec<usize> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<usize>> {
            let (batch, labels) = data.batch(chunk)?;
            let (readouts, _) = snn.simulate(&batch, t_max, false)?;
            let mut counts = vec![0usize; timesteps.len()];
            for (slot, &t) in timesteps.iter().enumerate() {
                let preds = readouts[t - 1].argmax_rows()?;
                counts[slot] += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0usize; timesteps.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    Ok(counts
        .iter()
        .map(|&c| c as f64 / data.len() as f64)
        .collect())
}

/// Dataset-mean per-channel gap between the ANN activation and the SNN's
/// θ-weighted spikes, per (layer, timestep).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedGap {
    /// `gaps[layer][t-1]` is a `[C]` tensor.
    pub gaps: Vec<Vec<Tensor>>,
}

impl ExpectedGap {
    pub fn get(&self, layer: usize, t: usize) -> &Tensor {
        &self.gaps[layer][t - 1]
    }

    /// Mean absolute per-channel gap at `(layer, t)`.
    pub fn norm(&self, layer: usize, t: usize) -> f64 {
        let g = self.get(layer, t);
        g.data().iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64
    }
}

/// Measures the expected gap over a dataset at every t = 1..=T.
pub fn expected_gap(
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    t_max: usize,
) -> Result<ExpectedGap> {
    if t_max < 1 {
        return Err(Error::Argument("expected_gap needs T >= 1".into()));
    }
    let channels = snn.ann().segment_channels()?;
    let layers = channels.len();
    let mut sums: Vec<Vec<Tensor>> = channels
        .iter()
        .map(|&c| (0..t_max).map(|_| Tensor::zeros(vec![c])).collect())
        .collect();
    let indices: Vec<usize> = (0..data.len()).collect();
    let total = data.len() as f64;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, _) = data.batch(chunk)?;
        let (_, captures) = ann.forward_collect(&batch)?;
        let (_, trace) = snn.simulate(&batch, t_max, true)?;
        let trace = trace.expect("recording requested");
        let weight = chunk.len() as f64;
        for layer in 0..layers {
            for t in 0..t_max {
                let gap = captures[layer]
                    .sub(&trace.spikes[layer][t])?
                    .channel_mean()?;
                sums[layer][t].add_assign(&gap.scale(weight))?;
            }
        }
    }
    for per_layer in &mut sums {
        for g in per_layer.iter_mut() {
            *g = g.scale(1.0 / total);
        }
    }
    Ok(ExpectedGap { gaps: sums })
}

/// Histogram of pre-firing membrane potentials at `(layer, t)` for one
/// channel, pooled over samples and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub min: f64,
    pub max: f64,
}

pub fn membrane_histogram(
    snn: &SnnModel,
    data: &Dataset,
    layer: usize,
    t: usize,
    bins: usize,
    channel: usize,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    if layer >= snn.layer_count() {
        return Err(Error::Argument(format!(
            "layer {layer} out of range ({} spiking layers)",
            snn.layer_count()
        )));
    }
    let channels = snn.ann().segment_channels()?[layer];
    if channel >= channels {
        return Err(Error::Argument(format!(
            "channel {channel} out of range ({channels} channels)"
        )));
    }

    let mut values = Vec::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, _) = data.batch(chunk)?;
        let (_, trace) = snn.simulate(&batch, t, true)?;
        let trace = trace.expect("recording requested");
        let v_pre = &trace.pre_firing_potentials[layer][t - 1];
        let b = v_pre.shape()[0];
        let inner: usize = v_pre.shape()[2..].iter().product();
        for bi in 0..b {
            let base = (bi * channels + channel) * inner;
            values.extend_from_slice(&v_pre.data()[base..base + inner]);
        }
    }

    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    if min == max {
        counts[0] = values.len();
        return Ok(Histogram { counts, min, max });
    }
    let width = (max - min) / bins as f64;
    for v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram { counts, min, max })
}

/// Accuracy-vs-timestep results for one method variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    /// Aligned with the report's `timesteps`.
    pub accuracy_per_t: Vec<f64>,
}

/// Per-layer mean absolute expected gap for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStat {
    pub method: String,
    pub layer: usize,
    pub mean_abs_gap: f64,
}

/// A full experiment report, serializable to JSON (all fields) or CSV
/// (the accuracy table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub seed: u64,
    pub timesteps: Vec<usize>,
    pub ann_accuracy: f64,
    pub methods: Vec<MethodResult>,
    pub gap_stats: Vec<GapStat>,
    pub config: AppConfig,
    pub timing_seconds: f64,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        seed: u64,
        timesteps: Vec<usize>,
        ann_accuracy: f64,
        methods: Vec<MethodResult>,
        gap_stats: Vec<GapStat>,
        config: AppConfig,
        timing_seconds: f64,
    ) -> Result<RunReport> {
        if timesteps.is_empty() || !timesteps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Argument(
                "report timesteps must be non-empty and strictly increasing".into(),
            ));
        }
        if !(0.0..=1.0).contains(&ann_accuracy) {
            return Err(Error::Argument(format!(
                "ann_accuracy {ann_accuracy} outside [0,1]"
            )));
        }
        for m in &methods {
            if m.accuracy_per_t.len() != timesteps.len() {
                return Err(Error::Argument(format!(
                    "method {} has {} accuracies for {} timesteps",
                    m.method,
                    m.accuracy_per_t.len(),
                    timesteps.len()
                )));
            }
            if let Some(bad) = m.accuracy_per_t.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(Error::Argument(format!(
                    "method {} accuracy {bad} outside [0,1]",
                    m.method
                )));
            }
        }
        Ok(RunReport {
            format_version: 1,
            seed,
            timesteps,
            ann_accuracy,
            methods,
            gap_stats,
            config,
            timing_seconds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One row of the CSV accuracy table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub method: String,
    pub t: usize,
    pub accuracy: f64,
    pub ann_accuracy: f64,
    pub seed: u64,
}

const CSV_HEADER: &str = "method,T,accuracy,ann_accuracy,seed";

/// Writes a report; the CSV form has one row per (method, timestep).
pub fn emit_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<()> {
    let display = path.display().to_string();
    let text = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)
                .map_err(|e| Error::Format(format!("{display}: {e}")))?;
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let rows = report_csv_rows(report);
            render_csv_rows(&rows)
        }
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(&display, e))
}

pub fn report_csv_rows(report: &RunReport) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for m in &report.methods {
        for (slot, &t) in report.timesteps.iter().enumerate() {
            rows.push(CsvRow {
                method: m.method.clone(),
                t,
                accuracy: m.accuracy_per_t[slot],
                ann_accuracy: report.ann_accuracy,
                seed: report.seed,
            });
        }
    }
    rows
}

pub fn render_csv_rows(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.t, r.accuracy, r.ann_accuracy, r.seed
        ));
    }
    out
}

pub fn read_report_json(path: &Path) -> Result<RunReport> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{display}: {e}")))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "{display}: unexpected header {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "{display}: line {} has {} fields",
                i + 2,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| Error::Format(format!("{display}: line {}: bad {what}", i + 2));
        rows.push(CsvRow {
            method: fields[0].to_string(),
            t: fields[1].parse().map_err(|_| parse_err("T"))?,
            accuracy: fields[2].parse().map_err(|_| parse_err("accuracy"))?,
            ann_accuracy: fields[3].parse().map_err(|_| parse_err("ann_accuracy"))?,
            seed: fields[4].parse().map_err(|_| parse_err("seed"))?,
        });
    }
    Ok(rows)
}

pub fn write_report_csv_rows(rows: &[CsvRow], path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    file.write_all(render_csv_rows(rows).as_bytes())
        .map_err(|e| Error::io(&display, e))
}
