//! Forward-only temporal bias calibration.
//!
//! The calibrator walks the spiking layers in order and, for every sampled
//! batch and timestep, nudges the layer's per-channel bias toward the gap
//! between the ANN's activation and the SNN's θ-weighted spike output at
//! that timestep, applying the same nudge to the in-flight membrane
//! potential immediately. A time-averaged variant (one constant bias per
//! layer, fit against the mean spike rate) serves as the baseline, and a
//! scalar stochastic solver demonstrates the underlying
//! expectation-matching idea in isolation.

use crate::ann::AnnModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::snn::{SnnModel, SnnState};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Direction of the bias update. `TargetMinusObserved` moves the bias so
/// the spike output approaches the ANN activation; the flipped variant
/// reproduces the raw pseudocode ordering for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionSign {
    #[default]
    TargetMinusObserved,
    ObservedMinusTarget,
}

/// Hyperparameters of the calibration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Step size applied to each correction.
    pub alpha: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub batches_per_iter: usize,
    /// Calibrated horizon: biases are learned for t = 1..=T.
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub sign: CorrectionSign,
    /// Samples used for the per-iteration trajectory diagnostics
    /// (0 skips them).
    pub trajectory_samples: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            alpha: 0.5,
            iterations: 10,
            batch_size: 32,
            batches_per_iter: 2,
            t: 32,
            seed: 7,
            sign: CorrectionSign::default(),
            trajectory_samples: 256,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Argument(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if self.iterations < 1 || self.batch_size < 1 || self.batches_per_iter < 1 || self.t < 1 {
            return Err(Error::Argument(
                "iterations, batch_size, batches_per_iter and T must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Accuracy and gap diagnostics recorded after each calibration iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Validation accuracy at t = 1..=T.
    pub accuracy_per_t: Vec<f64>,
    /// Mean absolute per-channel gap per layer, averaged over t.
    pub gap_norm_per_layer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationTrajectory {
    pub iterations: Vec<IterationStats>,
}

impl CalibrationTrajectory {
    /// CSV with columns `iteration,t,accuracy,layer,gap_norm`; accuracy
    /// rows leave the layer columns empty and vice versa.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let mut out = String::from("iteration,t,accuracy,layer,gap_norm\n");
        for it in &self.iterations {
            for (i, acc) in it.accuracy_per_t.iter().enumerate() {
                out.push_str(&format!("{},{},{},,\n", it.iteration, i + 1, acc));
            }
            for (layer, gap) in it.gap_norm_per_layer.iter().enumerate() {
                out.push_str(&format!("{},,,{layer},{gap}\n", it.iteration));
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(&display, e))
    }
}

fn check_indexing(ann: &AnnModel, snn: &SnnModel) -> Result<()> {
    let a = ann.segment_channels()?;
    let b = snn.ann().segment_channels()?;
    if a != b {
        return Err(Error::Structure(format!(
            "ANN and SNN layer indexing disagree: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

fn signed(correction: Tensor, sign: CorrectionSign) -> Tensor {
    match sign {
        CorrectionSign::TargetMinusObserved => correction,
        CorrectionSign::ObservedMinusTarget => correction.scale(-1.0),
    }
}

/// One correction for one (layer, timestep): runs the ANN segment on the
/// captured previous-layer activation, steps the SNN layer on the incoming
/// spikes (applying the layer's current bias for `t`), and returns the
/// channel-wise mean gap under the configured sign.
pub fn bias_corr_step(
    snn: &SnnModel,
    layer: usize,
    t: usize,
    ann_input: &Tensor,
    snn_input_spikes: &Tensor,
    state: &mut SnnState,
    sign: CorrectionSign,
) -> Result<Tensor> {
    let segments = snn.ann().segments()?;
    let target = snn.ann().segment_forward(&segments, layer, ann_input)?;
    let bias = snn.bias().get(layer, t).cloned();
    let spikes = snn.spike_layer_forward(state, layer, snn_input_spikes, bias.as_ref())?;
    let gap = target.sub(&spikes)?;
    let correction = gap.channel_mean()?;
    if correction.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration { layer, t });
    }
    Ok(signed(correction, sign))
}

/// Deterministic cycling batch sampler over a seed-shuffled index order.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchStream {
    fn new(len: usize, batch_size: usize, seed: u64) -> BatchStream {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        BatchStream {
            order,
            cursor: 0,
            batch_size: batch_size.min(len),
        }
    }

    fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            out.push(self.order[self.cursor]);
            self.cursor = (self.cursor + 1) % self.order.len();
        }
        out
    }
}

/// Advances the prefix layers `0..layer` one timestep with their stored
/// biases and returns the spike input arriving at `layer`.
fn prefix_spikes(
    snn: &SnnModel,
    state: &mut SnnState,
    layer: usize,
    input: &Tensor,
    t: usize,
) -> Result<Tensor> {
    let mut carrier = input.clone();
    for prev in 0..layer {
        let bias = snn.bias().get(prev, t).cloned();
        carrier = snn.spike_layer_forward(state, prev, &carrier, bias.as_ref())?;
    }
    Ok(carrier)
}

/// Calibrates one layer on one batch: for t = 1..=T, step the layer,
/// accumulate `alpha * correction` into the bias table, and add the same
/// amount to the live membrane potential before moving to t + 1.
fn ftbc_layer_pass(
    snn: &mut SnnModel,
    layer: usize,
    batch: &Tensor,
    target: &Tensor,
    cfg: &CalibrationConfig,
) -> Result<()> {
    let mut state = snn.init_state(batch.shape()[0])?;
    for t in 1..=cfg.t {
        let carrier = prefix_spikes(snn, &mut state, layer, batch, t)?;
        let bias = snn.bias().get(layer, t).cloned();
        let spikes = snn.spike_layer_forward(&mut state, layer, &carrier, bias.as_ref())?;
        let correction = signed(target.sub(&spikes)?.channel_mean()?, cfg.sign);
        if correction.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Calibration { layer, t });
        }
        snn.bias_mut().add_scaled(layer, t, &correction, cfg.alpha)?;
        state.potentials[layer].add_channel_bias(&correction.scale(cfg.alpha))?;
    }
    Ok(())
}

/// Layer-wise, timestep-wise, channel-wise bias calibration in the forward
/// pass. Each iteration draws `batches_per_iter` batches and sweeps them
/// through every layer in order (earlier layers' biases stay frozen while
/// a later layer is being calibrated); accuracy and gap diagnostics are
/// recorded after every iteration.
pub fn ftbc_calibrate(
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    cfg: &CalibrationConfig,
) -> Result<(SnnModel, CalibrationTrajectory)> {
    cfg.validate()?;
    check_indexing(ann, snn)?;
    if data.is_empty() {
        return Err(Error::Argument("calibration dataset is empty".into()));
    }

    let mut out = snn.clone();
    let channels = out.ann().segment_channels()?;
    out.bias_mut().grow_horizon(cfg.t, &channels);
    let layers = channels.len();

    let mut stream = BatchStream::new(data.len(), cfg.batch_size, cfg.seed);
    let mut trajectory = CalibrationTrajectory::default();

    for iteration in 1..=cfg.iterations {
        // same batches for every layer within the iteration
        let mut batches = Vec::with_capacity(cfg.batches_per_iter);
        for _ in 0..cfg.batches_per_iter {
            let idx = stream.next_indices();
            let (batch, _) = data.batch(&idx)?;
            let (_, captures) = ann.forward_collect(&batch)?;
            batches.push((batch, captures));
        }
        for layer in 0..layers {
            for (batch, captures) in &batches {
                ftbc_layer_pass(&mut out, layer, batch, &captures[layer], cfg)?;
            }
        }
        if cfg.trajectory_samples > 0 {
            trajectory.iterations.push(iteration_stats(
                iteration,
                ann,
                &out,
                data,
                cfg.t,
                cfg.trajectory_samples,
            )?);
        }
    }
    Ok((out, trajectory))
}

/// Baseline calibrator: one time-independent per-channel bias per layer,
/// fit against the time-averaged spike rate and applied identically at
/// every timestep.
pub fn avg_bias_calibrate(
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    cfg: &CalibrationConfig,
) -> Result<SnnModel> {
    cfg.validate()?;
    check_indexing(ann, snn)?;
    if data.is_empty() {
        return Err(Error::Argument("calibration dataset is empty".into()));
    }

    let mut out = snn.clone();
    let channels = out.ann().segment_channels()?;
    out.bias_mut().grow_horizon(cfg.t, &channels);
    let layers = channels.len();

    let mut stream = BatchStream::new(data.len(), cfg.batch_size, cfg.seed);
    for _ in 0..cfg.iterations {
        let mut batches = Vec::with_capacity(cfg.batches_per_iter);
        for _ in 0..cfg.batches_per_iter {
            let idx = stream.next_indices();
            let (batch, _) = data.batch(&idx)?;
            let (_, captures) = ann.forward_collect(&batch)?;
            batches.push((batch, captures));
        }
        for layer in 0..layers {
            for (batch, captures) in &batches {
                let mut state = out.init_state(batch.shape()[0])?;
                let mut spike_sum: Option<Tensor> = None;
                for t in 1..=cfg.t {
                    let carrier = prefix_spikes(&out, &mut state, layer, batch, t)?;
                    let bias = out.bias().get(layer, t).cloned();
                    let spikes =
                        out.spike_layer_forward(&mut state, layer, &carrier, bias.as_ref())?;
                    match spike_sum.as_mut() {
                        Some(acc) => acc.add_assign(&spikes)?,
                        None => spike_sum = Some(spikes),
                    }
                }
                let rate = spike_sum.expect("T >= 1").scale(1.0 / cfg.t as f64);
                let correction = signed(
                    captures[layer].sub(&rate)?.channel_mean()?,
                    cfg.sign,
                );
                if correction.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Calibration { layer, t: cfg.t });
                }
                for t in 1..=cfg.t {
                    out.bias_mut().add_scaled(layer, t, &correction, cfg.alpha)?;
                }
            }
        }
    }
    Ok(out)
}

const EVAL_CHUNK: usize = 64;

/// Accuracy per timestep plus per-layer mean |channel gap| on (up to)
/// `samples` leading samples of the calibration set.
fn iteration_stats(
    iteration: usize,
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    t_max: usize,
    samples: usize,
) -> Result<IterationStats> {
    let n = data.len().min(samples);
    let layers = snn.layer_count();
    let mut correct = vec![0usize; t_max];
    let mut gap_sums = vec![0.0; layers];
    let mut gap_counts = vec![0usize; layers];

    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, labels) = data.batch(chunk)?;
        let (readouts, trace) = snn.simulate(&batch, t_max, true)?;
        let trace = trace.expect("recording requested");
        for (t, readout) in readouts.iter().enumerate() {
            let preds = readout.argmax_rows()?;
            correct[t] += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        let (_, captures) = ann.forward_collect(&batch)?;
        for layer in 0..layers {
            for t in 0..t_max {
                let gap = captures[layer]
                    .sub(&trace.spikes[layer][t])?
                    .channel_mean()?;
                gap_sums[layer] += gap.data().iter().map(|v| v.abs()).sum::<f64>()
                    / gap.len() as f64
                    * chunk.len() as f64;
                gap_counts[layer] += chunk.len();
            }
        }
    }
    Ok(IterationStats {
        iteration,
        accuracy_per_t: correct.iter().map(|&c| c as f64 / n as f64).collect(),
        gap_norm_per_layer: gap_sums
            .iter()
            .zip(&gap_counts)
            .map(|(s, &c)| s / c as f64)
            .collect(),
    })
}

const SOLVER_RESAMPLE: usize = 1024;
const SOLVER_SEED: u64 = 0x5eed;

/// Fraction of `samples` with `x + b - 1 >= 0` (the step function counts
/// equality as firing).
pub fn empirical_expectation(samples: &[f64], b: f64) -> f64 {
    let hits = samples.iter().filter(|&&x| x + b - 1.0 >= 0.0).count();
    hits as f64 / samples.len() as f64
}

/// Stochastic-approximation solver for the scalar bias: starting from
/// b = 0, iterate `b += c * (target - E)` where `E` is the firing fraction
/// over a freshly resampled batch. Realizes the expectation-matching bias
/// this whole crate is built around, one neuron at a time.
pub fn solve_bias_star(samples: &[f64], target: f64, c: f64, iters: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("solve_bias_star needs samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SOLVER_SEED);
    let batch = SOLVER_RESAMPLE.min(samples.len());
    let mut b = 0.0;
    let mut draw = vec![0.0; batch];
    for _ in 0..iters {
        for slot in draw.iter_mut() {
            *slot = samples[rng.gen_range(0..samples.len())];
        }
        let e = empirical_expectation(&draw, b);
        b += c * (target - e);
    }
    Ok(b)
}

/// Continuous distributions on [0,1] for the scalar-solver sweep, sampled
/// by inverse CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleDistribution {
    Uniform,
    /// pdf 2x on [0,1].
    LinearRamp,
    /// Symmetric triangular on [0,1] peaking at 1/2.
    Triangular,
}

impl SampleDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            SampleDistribution::Uniform => "uniform",
            SampleDistribution::LinearRamp => "linear_ramp",
            SampleDistribution::Triangular => "triangular",
        }
    }

    fn inverse_cdf(&self, q: f64) -> f64 {
        match self {
            SampleDistribution::Uniform => q,
            SampleDistribution::LinearRamp => q.sqrt(),
            SampleDistribution::Triangular => {
                if q <= 0.5 {
                    (q / 2.0).sqrt()
                } else {
                    1.0 - ((1.0 - q) / 2.0).sqrt()
                }
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.inverse_cdf(rng.gen::<f64>())).collect()
    }

    /// Closed-form bias with expected firing fraction `target`:
    /// `b* = 1 - F⁻¹(1 - target)`.
    pub fn closed_form_bias(&self, target: f64) -> f64 {
        1.0 - self.inverse_cdf(1.0 - target)
    }
}

/// One row of the scalar-solver sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub distribution: String,
    pub target: f64,
    pub b_estimate: f64,
    pub b_closed_form: f64,
    /// `E_samples[H(x + b - 1)] - target` at the estimated bias.
    pub residual: f64,
}

/// Runs the solver over every (distribution, target) pair.
pub fn prop1_sweep(
    distributions: &[SampleDistribution],
    targets: &[f64],
    n: usize,
    c: f64,
    iters: usize,
    seed: u64,
) -> Result<Vec<Prop1Row>> {
    let mut rows = Vec::with_capacity(distributions.len() * targets.len());
    for dist in distributions {
        let samples = dist.sample(n, seed);
        for &target in targets {
            let b = solve_bias_star(&samples, target, c, iters)?;
            rows.push(Prop1Row {
                distribution: dist.name().to_string(),
                target,
                b_estimate: b,
                b_closed_form: dist.closed_form_bias(target),
                residual: empirical_expectation(&samples, b) - target,
            });
        }
    }
    Ok(rows)
}
