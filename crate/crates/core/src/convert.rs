//! The ANN-to-SNN pipeline: threshold initialization from activation
//! statistics, weight scaling to unit thresholds, and `SnnModel`
//! construction.

use crate::ann::{AnnModel, LayerSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::snn::{BiasTable, PotentialPolicy, SnnModel};
use crate::tensor::{percentile, Tensor};
use serde::{Deserialize, Serialize};

const THRESHOLD_FLOOR: f64 = 1e-6;
const STATS_BATCH: usize = 64;

/// How a layer's threshold is read off its activation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Max,
    Percentile,
}

/// Whether statistics are pooled per layer or per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Layer,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub kind: ThresholdKind,
    /// Percentile in (0, 100]; only read when `kind = percentile`.
    pub p: f64,
    pub granularity: Granularity,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            kind: ThresholdKind::Percentile,
            p: 99.9,
            granularity: Granularity::Channel,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.kind == ThresholdKind::Percentile && !(self.p > 0.0 && self.p <= 100.0) {
            return Err(Error::Argument(format!(
                "percentile threshold needs p in (0,100], got {}",
                self.p
            )));
        }
        Ok(())
    }

    fn stat(&self, values: &[f64]) -> Result<f64> {
        match self.kind {
            ThresholdKind::Max => Ok(values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))),
            ThresholdKind::Percentile => percentile(values, self.p),
        }
    }
}

/// Settings for `build_snn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConversionConfig {
    pub threshold_policy: ThresholdPolicy,
    pub scale_weights: bool,
    pub initial_potential_policy: PotentialPolicy,
    pub calibration_samples: usize,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        ConversionConfig {
            threshold_policy: ThresholdPolicy::default(),
            scale_weights: true,
            initial_potential_policy: PotentialPolicy::Zero,
            calibration_samples: 256,
        }
    }
}

impl ConversionConfig {
    pub fn validate(&self) -> Result<()> {
        self.threshold_policy.validate()?;
        if self.calibration_samples < 1 {
            return Err(Error::Argument(
                "conversion needs at least 1 calibration sample".into(),
            ));
        }
        Ok(())
    }
}

/// Estimates per-layer thresholds from post-activation statistics over the
/// sample set. Channel granularity yields one threshold per channel;
/// layer granularity repeats the pooled value across channels. Thresholds
/// are clamped below at 1e-6.
pub fn init_thresholds(
    model: &AnnModel,
    data: &Dataset,
    policy: &ThresholdPolicy,
) -> Result<Vec<Tensor>> {
    policy.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("threshold data is empty".into()));
    }
    let channels = model.segment_channels()?;
    if channels.is_empty() {
        return Err(Error::Structure(
            "model has no spiking-equivalent layers".into(),
        ));
    }

    // per layer, per channel, every observed post-activation value
    let mut observed: Vec<Vec<Vec<f64>>> = channels
        .iter()
        .map(|&c| (0..c).map(|_| Vec::new()).collect())
        .collect();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(STATS_BATCH) {
        let (batch, _) = data.batch(chunk)?;
        let (_, captures) = model.forward_collect(&batch)?;
        for (layer, capture) in captures.iter().enumerate() {
            let c = channels[layer];
            let b = capture.shape()[0];
            let inner: usize = capture.shape()[2..].iter().product();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * inner;
                    observed[layer][ci]
                        .extend_from_slice(&capture.data()[base..base + inner]);
                }
            }
        }
    }

    let mut thresholds = Vec::with_capacity(channels.len());
    for (layer, per_channel) in observed.iter().enumerate() {
        let all_zero = per_channel
            .iter()
            .all(|ch| ch.iter().all(|&v| v == 0.0));
        if all_zero {
            return Err(Error::Threshold {
                layer,
                msg: "all captured activations are zero".into(),
            });
        }
        let theta = match policy.granularity {
            Granularity::Layer => {
                let mut pooled = Vec::new();
                for ch in per_channel {
                    pooled.extend_from_slice(ch);
                }
                let v = policy.stat(&pooled)?.max(THRESHOLD_FLOOR);
                Tensor::full(vec![channels[layer]], v)
            }
            Granularity::Channel => {
                let mut data = Vec::with_capacity(channels[layer]);
                for ch in per_channel {
                    data.push(policy.stat(ch)?.max(THRESHOLD_FLOOR));
                }
                Tensor::from_parts(vec![channels[layer]], data)
            }
        };
        thresholds.push(theta);
    }
    Ok(thresholds)
}

/// Rescales the model so every spiking layer has unit threshold: each
/// segment's first transform has its input columns multiplied by the
/// previous layer's thresholds (ones for the input layer) and its last
/// transform divided by its own thresholds (weights and bias). Capped
/// activations have their cap divided accordingly. The readout's first
/// transform absorbs the last layer's thresholds, so logits are unchanged
/// up to rounding and argmax predictions are preserved.
///
/// Returns the rescaled model and the now-unit thresholds.
pub fn scale_weights(
    model: &AnnModel,
    thresholds: &[Tensor],
) -> Result<(AnnModel, Vec<Tensor>)> {
    if model.has_batchnorm() {
        return Err(Error::Structure(
            "fold batchnorm before scaling weights".into(),
        ));
    }
    let segments = model.segments()?;
    let channels = model.segment_channels()?;
    if thresholds.len() != channels.len() {
        return Err(Error::Dimension(format!(
            "{} thresholds for {} spiking layers",
            thresholds.len(),
            channels.len()
        )));
    }
    for (l, theta) in thresholds.iter().enumerate() {
        if theta.data().iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Argument(format!(
                "layer {l} threshold must be positive and finite"
            )));
        }
    }

    let out_shapes = model.segment_output_shapes()?;
    let mut scaled = model.clone();

    for (l, seg) in segments.spiking.iter().enumerate() {
        // feature-level scale of this segment's input
        let input_scale = if l == 0 {
            None
        } else {
            Some(feature_scale(&thresholds[l - 1], &out_shapes[l - 1]))
        };
        let transform_idx: Vec<usize> = seg
            .ops
            .clone()
            .filter(|&i| model.layers[i].is_transform())
            .collect();
        let first = *transform_idx.first().expect("segment has a transform");
        let last = *transform_idx.last().expect("segment has a transform");
        if let Some(scale) = input_scale {
            scale_input_columns(&mut scaled.layers[first], &scale)?;
        }
        scale_output_rows(&mut scaled.layers[last], &thresholds[l])?;

        // rescale a capped activation; requires a uniform layer threshold
        if let LayerSpec::Activation { spec } = &mut scaled.layers[seg.activation] {
            if spec.cap().is_some() {
                let theta = thresholds[l].data();
                let uniform = theta.iter().all(|&v| v == theta[0]);
                if !uniform {
                    return Err(Error::Argument(format!(
                        "layer {l}: capped activations need a uniform (layer-granularity) \
                         threshold for weight scaling"
                    )));
                }
                *spec = spec.rescaled(theta[0]);
            }
        }
    }

    // the readout absorbs the last spiking layer's thresholds
    if let Some(last_layer) = channels.len().checked_sub(1) {
        let scale = feature_scale(&thresholds[last_layer], &out_shapes[last_layer]);
        let readout_first = segments
            .readout
            .clone()
            .find(|&i| model.layers[i].is_transform())
            .ok_or_else(|| Error::Structure("readout has no transform".into()))?;
        scale_input_columns(&mut scaled.layers[readout_first], &scale)?;
    }

    let unit = channels.iter().map(|&c| Tensor::full(vec![c], 1.0)).collect();
    scaled.validate()?;
    Ok((scaled, unit))
}

/// Per-channel thresholds broadcast over the spatial dims of a segment
/// output shape, flattened to feature order.
fn feature_scale(theta: &Tensor, shape: &[usize]) -> Vec<f64> {
    let inner: usize = shape[1..].iter().product();
    let mut scale = Vec::with_capacity(theta.len() * inner);
    for &t in theta.data() {
        scale.extend(std::iter::repeat(t).take(inner));
    }
    scale
}

fn scale_input_columns(layer: &mut LayerSpec, scale: &[f64]) -> Result<()> {
    match layer {
        LayerSpec::Linear { weight, .. } => {
            let (out, inp) = (weight.shape()[0], weight.shape()[1]);
            if inp != scale.len() {
                return Err(Error::Dimension(format!(
                    "input scale has {} features, linear expects {inp}",
                    scale.len()
                )));
            }
            for o in 0..out {
                for i in 0..inp {
                    weight.data_mut()[o * inp + i] *= scale[i];
                }
            }
            Ok(())
        }
        LayerSpec::Conv2d { weight, .. } => {
            let (c_out, c_in, kh, kw) = (
                weight.shape()[0],
                weight.shape()[1],
                weight.shape()[2],
                weight.shape()[3],
            );
            // conv inputs are scaled per channel, uniformly over space
            let inner = scale.len() / c_in;
            for ci in 0..c_in {
                let s = scale[ci * inner];
                debug_assert!(scale[ci * inner..(ci + 1) * inner].iter().all(|&v| v == s));
                for co in 0..c_out {
                    for k in 0..kh * kw {
                        weight.data_mut()[((co * c_in + ci) * kh * kw) + k] *= s;
                    }
                }
            }
            Ok(())
        }
        other => Err(Error::Structure(format!(
            "cannot scale inputs of {other:?}"
        ))),
    }
}

fn scale_output_rows(layer: &mut LayerSpec, theta: &Tensor) -> Result<()> {
    match layer {
        LayerSpec::Linear { weight, bias } => {
            let (out, inp) = (weight.shape()[0], weight.shape()[1]);
            if out != theta.len() {
                return Err(Error::Dimension(format!(
                    "{} thresholds for linear with {out} outputs",
                    theta.len()
                )));
            }
            for o in 0..out {
                let th = theta.data()[o];
                for i in 0..inp {
                    weight.data_mut()[o * inp + i] /= th;
                }
                if let Some(bias) = bias {
                    bias.data_mut()[o] /= th;
                }
            }
            Ok(())
        }
        LayerSpec::Conv2d { weight, bias, .. } => {
            let c_out = weight.shape()[0];
            if c_out != theta.len() {
                return Err(Error::Dimension(format!(
                    "{} thresholds for conv with {c_out} outputs",
                    theta.len()
                )));
            }
            let per_out: usize = weight.shape()[1..].iter().product();
            for o in 0..c_out {
                let th = theta.data()[o];
                for k in 0..per_out {
                    weight.data_mut()[o * per_out + k] /= th;
                }
                if let Some(bias) = bias {
                    bias.data_mut()[o] /= th;
                }
            }
            Ok(())
        }
        other => Err(Error::Structure(format!(
            "cannot scale outputs of {other:?}"
        ))),
    }
}

/// Full conversion: fold batchnorm, estimate thresholds on (up to)
/// `calibration_samples` samples, optionally rescale to unit thresholds,
/// and assemble an `SnnModel` with an empty bias table.
pub fn build_snn(model: &AnnModel, config: &ConversionConfig, data: &Dataset) -> Result<SnnModel> {
    config.validate()?;
    let folded = if model.has_batchnorm() {
        model.fold_batchnorm()?
    } else {
        model.clone()
    };
    let subset = data.take(config.calibration_samples, data.split)?;
    let thresholds = init_thresholds(&folded, &subset, &config.threshold_policy)?;
    let (ann, thresholds) = if config.scale_weights {
        scale_weights(&folded, &thresholds)?
    } else {
        (folded, thresholds)
    };
    let channels = ann.segment_channels()?;
    SnnModel::new(
        ann,
        thresholds,
        config.initial_potential_policy,
        BiasTable::zeros(&channels, 0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{mlp_arch, ActivationSpec};
    use crate::data::{synth_dataset, Split};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn policy(kind: ThresholdKind, p: f64, granularity: Granularity) -> ThresholdPolicy {
        ThresholdPolicy {
            kind,
            p,
            granularity,
        }
    }

    /// One spiking unit fed by identity weights so the activations equal
    /// the inputs.
    fn passthrough_model(units: usize) -> AnnModel {
        AnnModel::new(
            vec![units],
            vec![
                LayerSpec::linear(Tensor::eye(units), None),
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(units), None),
            ],
        )
        .unwrap()
    }

    fn dataset_from_rows(rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows.len();
        let dim = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Dataset::new(
            Tensor::new(vec![n, dim], data).unwrap(),
            vec![0; n],
            2,
            Split::Calib,
        )
        .unwrap()
    }

    #[test]
    fn max_and_percentile_thresholds() {
        let model = passthrough_model(1);
        let rows: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64 / 10.0]).collect();
        let data = dataset_from_rows(rows);

        let max = init_thresholds(&model, &data, &policy(ThresholdKind::Max, 0.0, Granularity::Layer))
            .unwrap();
        assert_eq!(max[0].data(), &[1.0]);

        let p90 = init_thresholds(
            &model,
            &data,
            &policy(ThresholdKind::Percentile, 90.0, Granularity::Layer),
        )
        .unwrap();
        assert_eq!(p90[0].data(), &[0.9]);
    }

    #[test]
    fn per_channel_maxima() {
        let model = passthrough_model(2);
        let data = dataset_from_rows(vec![vec![0.5, 1.0], vec![0.25, 2.0]]);
        let theta = init_thresholds(
            &model,
            &data,
            &policy(ThresholdKind::Max, 0.0, Granularity::Channel),
        )
        .unwrap();
        assert_eq!(theta[0].data(), &[0.5, 2.0]);
    }

    #[test]
    fn all_zero_layer_is_an_error() {
        let model = AnnModel::new(
            vec![2],
            vec![
                LayerSpec::linear(Tensor::zeros(vec![2, 2]), None),
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(2), None),
            ],
        )
        .unwrap();
        let data = dataset_from_rows(vec![vec![1.0, 1.0]]);
        match init_thresholds(&model, &data, &ThresholdPolicy::default()) {
            Err(Error::Threshold { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected threshold error, got {other:?}"),
        }
    }

    #[test]
    fn percentile_is_below_max() {
        let data = synth_dataset(2, &[6], 64, 3, 2.0).unwrap();
        let model = mlp_arch(6, &[8], 2, 5);
        let max = init_thresholds(&model, &data, &policy(ThresholdKind::Max, 0.0, Granularity::Channel)).unwrap();
        let p90 = init_thresholds(
            &model,
            &data,
            &policy(ThresholdKind::Percentile, 90.0, Granularity::Channel),
        )
        .unwrap();
        for (m, p) in max.iter().zip(&p90) {
            for (a, b) in m.data().iter().zip(p.data()) {
                assert!(b <= a);
                assert!(*b > 0.0);
            }
        }
    }

    #[test]
    fn scale_formula_instantiation() {
        // two stacked passthrough segments with thresholds 2 then 4
        let model = AnnModel::new(
            vec![2],
            vec![
                LayerSpec::linear(Tensor::eye(2), None),
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(2), None),
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(2), None),
            ],
        )
        .unwrap();
        let thresholds = vec![Tensor::full(vec![2], 2.0), Tensor::full(vec![2], 4.0)];
        let (scaled, unit) = scale_weights(&model, &thresholds).unwrap();
        match &scaled.layers[2] {
            LayerSpec::Linear { weight, .. } => {
                assert_eq!(weight.data(), &[0.5, 0.0, 0.0, 0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(unit.iter().all(|t| t.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn unit_thresholds_leave_model_unchanged() {
        let model = mlp_arch(5, &[7], 3, 11);
        let thresholds: Vec<Tensor> = model
            .segment_channels()
            .unwrap()
            .iter()
            .map(|&c| Tensor::full(vec![c], 1.0))
            .collect();
        let (scaled, _) = scale_weights(&model, &thresholds).unwrap();
        assert_eq!(scaled, model);
    }

    #[test]
    fn scaling_preserves_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = mlp_arch(6, &[10, 8], 4, 13);
        let channels = model.segment_channels().unwrap();
        let thresholds: Vec<Tensor> = channels
            .iter()
            .map(|&c| {
                Tensor::from_parts(vec![c], (0..c).map(|_| rng.gen_range(0.3..2.5)).collect())
            })
            .collect();
        let (scaled, _) = scale_weights(&model, &thresholds).unwrap();
        let data: Vec<f64> = (0..100 * 6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch = Tensor::new(vec![100, 6], data).unwrap();
        let a = model.forward(&batch).unwrap().argmax_rows().unwrap();
        let b = scaled.forward(&batch).unwrap().argmax_rows().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn capped_activation_rescales_with_layer_granularity() {
        let model = AnnModel::new(
            vec![2],
            vec![
                LayerSpec::linear(Tensor::eye(2), None),
                LayerSpec::activation(ActivationSpec::TRelu { cap: 1.0 }),
                LayerSpec::linear(Tensor::eye(2), None),
            ],
        )
        .unwrap();
        let (scaled, _) = scale_weights(&model, &[Tensor::full(vec![2], 0.5)]).unwrap();
        match &scaled.layers[1] {
            LayerSpec::Activation {
                spec: ActivationSpec::TRelu { cap },
            } => assert_eq!(*cap, 2.0),
            other => panic!("unexpected {other:?}"),
        }
        // per-channel thresholds on a capped activation are rejected
        let uneven = Tensor::new(vec![2], vec![0.5, 0.7]).unwrap();
        assert!(scale_weights(&model, &[uneven]).is_err());
    }

    #[test]
    fn build_snn_passthrough_and_determinism() {
        let data = synth_dataset(3, &[6], 96, 21, 4.0).unwrap();
        let model = mlp_arch(6, &[9], 3, 19);
        let cfg = ConversionConfig {
            scale_weights: false,
            ..ConversionConfig::default()
        };
        let snn = build_snn(&model, &cfg, &data).unwrap();
        assert_eq!(snn.ann(), &model);
        assert!(snn.bias().is_all_zero());
        assert_eq!(snn.bias().horizon(), 0);

        let again = build_snn(&model, &cfg, &data).unwrap();
        assert_eq!(snn, again);
    }

    /// From-scratch scalar-loop IF simulator for relu MLPs, used as an
    /// independent oracle for `simulate`.
    fn naive_mlp_sim(
        weights: &[Vec<Vec<f64>>],
        biases: &[Vec<f64>],
        thetas: &[Vec<f64>],
        readout_w: &[Vec<f64>],
        readout_b: &[f64],
        input: &[f64],
        t_max: usize,
    ) -> Vec<Vec<f64>> {
        let mut potentials: Vec<Vec<f64>> =
            thetas.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut acc = vec![0.0; readout_w.len()];
        let mut outs = Vec::new();
        for t in 1..=t_max {
            let mut carrier: Vec<f64> = input.to_vec();
            for l in 0..weights.len() {
                let mut next = vec![0.0; weights[l].len()];
                for (o, row) in weights[l].iter().enumerate() {
                    let mut z = biases[l][o];
                    for (i, w) in row.iter().enumerate() {
                        z += w * carrier[i];
                    }
                    potentials[l][o] += z;
                    if potentials[l][o] >= thetas[l][o] {
                        next[o] = thetas[l][o];
                        potentials[l][o] -= thetas[l][o];
                    }
                }
                carrier = next;
            }
            for (o, row) in readout_w.iter().enumerate() {
                let mut z = readout_b[o];
                for (i, w) in row.iter().enumerate() {
                    z += w * carrier[i];
                }
                acc[o] += z;
            }
            outs.push(acc.iter().map(|v| v / t as f64).collect());
        }
        outs
    }

    #[test]
    fn simulate_matches_naive_network_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let data = synth_dataset(3, &[5], 64, 31, 3.0).unwrap();
        let model = mlp_arch(5, &[8, 6], 3, 29);
        for scale in [false, true] {
            let cfg = ConversionConfig {
                scale_weights: scale,
                ..ConversionConfig::default()
            };
            let snn = build_snn(&model, &cfg, &data).unwrap();

            // pull the layer parameters into plain nested vectors
            let ann = snn.ann();
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for layer in &ann.layers[..ann.layers.len() - 1] {
                if let LayerSpec::Linear { weight, bias } = layer {
                    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                    weights.push(
                        (0..out)
                            .map(|o| weight.data()[o * inp..(o + 1) * inp].to_vec())
                            .collect::<Vec<_>>(),
                    );
                    biases.push(bias.as_ref().map_or(vec![0.0; out], |b| b.data().to_vec()));
                }
            }
            let (readout_w, readout_b) = match ann.layers.last().unwrap() {
                LayerSpec::Linear { weight, bias } => {
                    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                    (
                        (0..out)
                            .map(|o| weight.data()[o * inp..(o + 1) * inp].to_vec())
                            .collect::<Vec<Vec<f64>>>(),
                        bias.as_ref().map_or(vec![0.0; out], |b| b.data().to_vec()),
                    )
                }
                _ => unreachable!(),
            };
            let thetas: Vec<Vec<f64>> =
                snn.thresholds().iter().map(|t| t.data().to_vec()).collect();

            let t_max = 11;
            for _ in 0..10 {
                let input: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let batch = Tensor::new(vec![1, 5], input.clone()).unwrap();
                let (readouts, _) = snn.simulate(&batch, t_max, false).unwrap();
                let naive = naive_mlp_sim(
                    &weights, &biases, &thetas, &readout_w, &readout_b, &input, t_max,
                );
                for t in 0..t_max {
                    for (a, b) in readouts[t].data().iter().zip(&naive[t]) {
                        assert!((a - b).abs() <= 1e-12, "t={t}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn rates_converge_toward_clipped_activations() {
        let data = synth_dataset(3, &[6], 96, 41, 4.0).unwrap();
        let model = mlp_arch(6, &[10], 3, 43);
        let snn = build_snn(&model, &ConversionConfig::default(), &data).unwrap();
        let (batch, _) = data.batch(&(0..16).collect::<Vec<_>>()).unwrap();
        let (_, captures) = snn.ann().forward_collect(&batch).unwrap();

        let gap_at = |t_max: usize| -> f64 {
            let (_, trace) = snn.simulate(&batch, t_max, true).unwrap();
            let trace = trace.unwrap();
            let mut total = 0.0;
            let mut count = 0;
            for (layer, capture) in captures.iter().enumerate() {
                let rate = trace.mean_spikes(layer).unwrap();
                let theta = snn.thresholds()[layer].clone();
                let c = theta.len();
                let inner: usize = capture.shape()[2..].iter().product();
                for b in 0..capture.shape()[0] {
                    for ci in 0..c {
                        for i in 0..inner {
                            let idx = (b * c + ci) * inner + i;
                            let a = capture.data()[idx].min(theta.data()[ci]);
                            total += (rate.data()[idx] - a).abs();
                            count += 1;
                        }
                    }
                }
            }
            total / count as f64
        };

        let coarse = gap_at(16);
        let fine = gap_at(256);
        assert!(
            fine <= coarse,
            "rate gap grew with T: {fine} at T=256 vs {coarse} at T=16"
        );
    }
}
