//! Feedforward ANN definition and inference.
//!
//! Models are an ordered list of layers (linear / conv2d / avgpool /
//! batchnorm / activation) ending in a linear readout. For conversion the
//! model is viewed as a sequence of *spiking-equivalent segments*: each
//! linear or conv transform (plus any pooling/batchnorm glued to it)
//! followed by its activation. The segment index is the layer index shared
//! with the converted SNN.

mod presets;
mod train;

pub use presets::{cnn_arch, mlp_arch};
pub use train::{train_sgd, TrainOutcome};

use crate::error::{Error, Result};
use crate::tensor::{avgpool2d, conv2d_batched, linear_forward, Tensor};
use serde::{Deserialize, Serialize};

fn default_cap() -> f64 {
    1.0
}

/// ReLU-family activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ActivationSpec {
    Relu,
    /// Threshold-capped ReLU: `min(max(x,0), a)`.
    TRelu {
        #[serde(rename = "a")]
        cap: f64,
    },
    /// Quantized clip-floor-shift step function with `l` steps and
    /// amplitude `a`: `(a/l)·floor(clamp(x,0,a)·l/a + 0.5)`. With `a = 1`
    /// this is the plain stairs function.
    Stairs {
        #[serde(rename = "l")]
        steps: usize,
        #[serde(rename = "a", default = "default_cap")]
        cap: f64,
    },
}

impl ActivationSpec {
    pub fn stairs(steps: usize) -> ActivationSpec {
        ActivationSpec::Stairs { steps, cap: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationSpec::Relu => Ok(()),
            ActivationSpec::TRelu { cap } => {
                if cap > 0.0 && cap.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Argument(format!("trelu cap must be positive, got {cap}")))
                }
            }
            ActivationSpec::Stairs { steps, cap } => {
                if steps == 0 {
                    return Err(Error::Argument("stairs needs at least one step".into()));
                }
                if cap <= 0.0 || !cap.is_finite() {
                    return Err(Error::Argument(format!(
                        "stairs amplitude must be positive, got {cap}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn apply_scalar(&self, x: f64) -> f64 {
        match *self {
            ActivationSpec::Relu => x.max(0.0),
            ActivationSpec::TRelu { cap } => x.max(0.0).min(cap),
            ActivationSpec::Stairs { steps, cap } => {
                let l = steps as f64;
                let y = x.clamp(0.0, cap);
                ((y * l / cap + 0.5).floor() * cap / l).min(cap)
            }
        }
    }

    /// Upper bound of the activation's range, if it has one.
    pub fn cap(&self) -> Option<f64> {
        match *self {
            ActivationSpec::Relu => None,
            ActivationSpec::TRelu { cap } | ActivationSpec::Stairs { cap, .. } => Some(cap),
        }
    }

    /// Equivalent activation after dividing the layer's output scale by
    /// `theta` (used by weight scaling): `f'(y) = f(theta·y)/theta`.
    pub fn rescaled(&self, theta: f64) -> ActivationSpec {
        match *self {
            ActivationSpec::Relu => ActivationSpec::Relu,
            ActivationSpec::TRelu { cap } => ActivationSpec::TRelu { cap: cap / theta },
            ActivationSpec::Stairs { steps, cap } => ActivationSpec::Stairs {
                steps,
                cap: cap / theta,
            },
        }
    }
}

/// Applies an activation elementwise.
pub fn activation_apply(spec: &ActivationSpec, x: &Tensor) -> Tensor {
    x.map(|v| spec.apply_scalar(v))
}

/// One layer of a feedforward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Linear {
        /// `[out, in]`, row-major.
        weight: Tensor,
        bias: Option<Tensor>,
    },
    Conv2d {
        /// `[c_out, c_in, kh, kw]`.
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
    },
    AvgPool {
        size: usize,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        mean: Tensor,
        var: Tensor,
        eps: f64,
    },
    Activation {
        spec: ActivationSpec,
    },
}

impl LayerSpec {
    pub fn linear(weight: Tensor, bias: Option<Tensor>) -> LayerSpec {
        LayerSpec::Linear { weight, bias }
    }

    pub fn activation(spec: ActivationSpec) -> LayerSpec {
        LayerSpec::Activation { spec }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Linear { weight, .. } => {
                let in_features: usize = input.iter().product();
                let (out, k) = (weight.shape()[0], weight.shape()[1]);
                if k != in_features {
                    return Err(Error::Dimension(format!(
                        "linear expects {k} input features, got shape {input:?}"
                    )));
                }
                Ok(vec![out])
            }
            LayerSpec::Conv2d {
                weight,
                stride,
                pad,
                ..
            } => {
                let [c, h, w] = match input {
                    [c, h, w] => [*c, *h, *w],
                    _ => {
                        return Err(Error::Dimension(format!(
                            "conv2d expects CxHxW input, got {input:?}"
                        )))
                    }
                };
                // run the shape arithmetic through a dummy batch of zeros
                let probe = Tensor::zeros(vec![1, c, h, w]);
                let out = conv2d_batched(&probe, weight, None, *stride, *pad)?;
                Ok(out.shape()[1..].to_vec())
            }
            LayerSpec::AvgPool { size } => {
                let [c, h, w] = match input {
                    [c, h, w] => [*c, *h, *w],
                    _ => {
                        return Err(Error::Dimension(format!(
                            "avgpool expects CxHxW input, got {input:?}"
                        )))
                    }
                };
                if *size == 0 || h % size != 0 || w % size != 0 {
                    return Err(Error::Dimension(format!(
                        "pool size {size} does not divide {h}x{w}"
                    )));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::BatchNorm { gamma, .. } => {
                let channels = input
                    .first()
                    .copied()
                    .ok_or_else(|| Error::Dimension("batchnorm on scalar input".into()))?;
                if gamma.len() != channels {
                    return Err(Error::Dimension(format!(
                        "batchnorm has {} channels, input has {channels}",
                        gamma.len()
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
        }
    }

    /// Forward over a batched input `[B, ...]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::Linear { weight, bias } => linear_forward(x, weight, bias.as_ref()),
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                pad,
            } => conv2d_batched(x, weight, bias.as_ref(), *stride, *pad),
            LayerSpec::AvgPool { size } => avgpool2d(x, *size),
            LayerSpec::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                if x.rank() < 2 || x.shape()[1] != gamma.len() {
                    return Err(Error::Dimension(format!(
                        "batchnorm over {} channels applied to {:?}",
                        gamma.len(),
                        x.shape()
                    )));
                }
                let channels = gamma.len();
                let inner: usize = x.shape()[2..].iter().product();
                let mut out = x.clone();
                let data = out.data_mut();
                for b in 0..x.shape()[0] {
                    for c in 0..channels {
                        let scale = gamma.data()[c] / (var.data()[c] + eps).sqrt();
                        let shift = beta.data()[c] - scale * mean.data()[c];
                        let base = (b * channels + c) * inner;
                        for i in 0..inner {
                            data[base + i] = data[base + i] * scale + shift;
                        }
                    }
                }
                Ok(out)
            }
            LayerSpec::Activation { spec } => Ok(activation_apply(spec, x)),
        }
    }

    pub fn is_transform(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })
    }
}

/// One spiking-equivalent segment: the layer indices of its transform ops
/// followed by the index of its activation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub ops: std::ops::Range<usize>,
    pub activation: usize,
}

/// Segment decomposition of a model: spiking segments in order plus the
/// trailing readout ops.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub spiking: Vec<Segment>,
    pub readout: std::ops::Range<usize>,
}

/// A feedforward network: ordered layers plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnModel {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl AnnModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<AnnModel> {
        let model = AnnModel {
            input_shape,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks shape composition, activation parameters and the trailing
    /// linear readout.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Structure("model has no layers".into()));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Activation { spec } = layer {
                spec.validate()?;
            }
            shape = layer
                .out_shape(&shape)
                .map_err(|e| Error::Structure(format!("layer {i}: {e}")))?;
        }
        match self.layers.last() {
            Some(LayerSpec::Linear { .. }) => {}
            _ => {
                return Err(Error::Structure(
                    "final layer must be a linear readout".into(),
                ))
            }
        }
        self.segments()?;
        Ok(())
    }

    /// Per-sample output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.out_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Splits the layer list into spiking-equivalent segments and readout.
    /// Every activation closes a segment that must contain a transform;
    /// everything after the last activation is the readout.
    pub fn segments(&self) -> Result<Segments> {
        let mut spiking = Vec::new();
        let mut start = 0;
        let mut has_transform = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Activation { .. } => {
                    if !has_transform {
                        return Err(Error::Structure(format!(
                            "activation at layer {i} has no preceding linear/conv transform"
                        )));
                    }
                    spiking.push(Segment {
                        ops: start..i,
                        activation: i,
                    });
                    start = i + 1;
                    has_transform = false;
                }
                l => {
                    if l.is_transform() {
                        has_transform = true;
                    }
                }
            }
        }
        if start >= self.layers.len() {
            return Err(Error::Structure(
                "model ends in an activation; a linear readout is required".into(),
            ));
        }
        Ok(Segments {
            spiking,
            readout: start..self.layers.len(),
        })
    }

    /// Number of spiking-equivalent layers.
    pub fn spiking_layer_count(&self) -> usize {
        self.segments().map(|s| s.spiking.len()).unwrap_or(0)
    }

    /// Per-segment per-sample output shape (the activation output shape).
    pub fn segment_output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let segments = self.segments()?;
        let shapes = self.layer_shapes()?;
        Ok(segments
            .spiking
            .iter()
            .map(|seg| shapes[seg.activation].clone())
            .collect())
    }

    /// Channel count of each spiking segment (axis 0 of its output shape).
    pub fn segment_channels(&self) -> Result<Vec<usize>> {
        Ok(self
            .segment_output_shapes()?
            .iter()
            .map(|s| s[0])
            .collect())
    }

    /// Applies the transform ops of segment `index` (no activation).
    pub fn segment_transform(&self, segments: &Segments, index: usize, x: &Tensor) -> Result<Tensor> {
        let seg = &segments.spiking[index];
        let mut cur = x.clone();
        for layer in &self.layers[seg.ops.clone()] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Post-activation output of segment `index` for a given segment input.
    pub fn segment_forward(&self, segments: &Segments, index: usize, x: &Tensor) -> Result<Tensor> {
        let pre = self.segment_transform(segments, index, x)?;
        self.layers[segments.spiking[index].activation].forward(&pre)
    }

    /// Applies the readout ops (the trailing non-spiking layers).
    pub fn readout_forward(&self, segments: &Segments, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers[segments.readout.clone()] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Plain forward pass to logits.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_collect(batch)?.0)
    }

    /// Forward pass capturing the post-activation output of every
    /// spiking-equivalent layer, indexed like the converted SNN's layers.
    pub fn forward_collect(&self, batch: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        if batch.rank() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape {
            return Err(Error::Dimension(format!(
                "batch shape {:?} does not extend input shape {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        let segments = self.segments()?;
        let mut captures = Vec::with_capacity(segments.spiking.len());
        let mut cur = batch.clone();
        for i in 0..segments.spiking.len() {
            cur = self.segment_forward(&segments, i, &cur)?;
            captures.push(cur.clone());
        }
        let logits = self.readout_forward(&segments, &cur)?;
        Ok((logits, captures))
    }

    /// Absorbs every batchnorm into the weight and bias of the transform
    /// layer immediately before it, leaving an equivalent model.
    pub fn fold_batchnorm(&self) -> Result<AnnModel> {
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let prev = layers.pop().ok_or_else(|| {
                        Error::Structure(format!("batchnorm at layer {i} has no preceding layer"))
                    })?;
                    let folded = fold_into(prev, gamma, beta, mean, var, *eps).map_err(|e| {
                        Error::Structure(format!("batchnorm at layer {i}: {e}"))
                    })?;
                    layers.push(folded);
                }
                other => layers.push(other.clone()),
            }
        }
        AnnModel::new(self.input_shape.clone(), layers)
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
    }
}

fn fold_into(
    prev: LayerSpec,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Result<LayerSpec> {
    let channels = gamma.len();
    let scale: Vec<f64> = (0..channels)
        .map(|c| gamma.data()[c] / (var.data()[c] + eps).sqrt())
        .collect();
    let new_bias = |old: Option<&Tensor>| -> Tensor {
        let data: Vec<f64> = (0..channels)
            .map(|c| {
                let b = old.map_or(0.0, |t| t.data()[c]);
                scale[c] * (b - mean.data()[c]) + beta.data()[c]
            })
            .collect();
        Tensor::from_parts(vec![channels], data)
    };
    match prev {
        LayerSpec::Linear { weight, bias } => {
            let (out, inp) = (weight.shape()[0], weight.shape()[1]);
            if out != channels {
                return Err(Error::Structure(format!(
                    "batchnorm over {channels} channels follows linear with {out} outputs"
                )));
            }
            let mut w = weight.clone();
            for o in 0..out {
                for i in 0..inp {
                    w.data_mut()[o * inp + i] *= scale[o];
                }
            }
            let bias = new_bias(bias.as_ref());
            Ok(LayerSpec::Linear {
                weight: w,
                bias: Some(bias),
            })
        }
        LayerSpec::Conv2d {
            weight,
            bias,
            stride,
            pad,
        } => {
            let c_out = weight.shape()[0];
            if c_out != channels {
                return Err(Error::Structure(format!(
                    "batchnorm over {channels} channels follows conv with {c_out} outputs"
                )));
            }
            let per_out: usize = weight.shape()[1..].iter().product();
            let mut w = weight.clone();
            for o in 0..c_out {
                for i in 0..per_out {
                    w.data_mut()[o * per_out + i] *= scale[o];
                }
            }
            let bias = new_bias(bias.as_ref());
            Ok(LayerSpec::Conv2d {
                weight: w,
                bias: Some(bias),
                stride,
                pad,
            })
        }
        other => Err(Error::Structure(format!(
            "batchnorm must follow a linear or conv layer, found {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_relu_model(weight: Tensor) -> AnnModel {
        let out = weight.shape()[0];
        AnnModel::new(
            vec![weight.shape()[1]],
            vec![
                LayerSpec::linear(weight, None),
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(out), None),
            ],
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, with_bn: bool) -> AnnModel {
        let (d_in, d_hid, d_out) = (4, 5, 3);
        let w1 = Tensor::from_parts(
            vec![d_hid, d_in],
            (0..d_hid * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let b1 = Tensor::from_parts(vec![d_hid], (0..d_hid).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let w2 = Tensor::from_parts(
            vec![d_out, d_hid],
            (0..d_out * d_hid).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let mut layers = vec![LayerSpec::linear(w1, Some(b1))];
        if with_bn {
            layers.push(LayerSpec::BatchNorm {
                gamma: Tensor::from_parts(vec![d_hid], (0..d_hid).map(|_| rng.gen_range(0.5..1.5)).collect()),
                beta: Tensor::from_parts(vec![d_hid], (0..d_hid).map(|_| rng.gen_range(-0.3..0.3)).collect()),
                mean: Tensor::from_parts(vec![d_hid], (0..d_hid).map(|_| rng.gen_range(-0.3..0.3)).collect()),
                var: Tensor::from_parts(vec![d_hid], (0..d_hid).map(|_| rng.gen_range(0.2..2.0)).collect()),
                eps: 1e-5,
            });
        }
        layers.push(LayerSpec::activation(ActivationSpec::Relu));
        layers.push(LayerSpec::linear(w2, None));
        AnnModel::new(vec![d_in], layers).unwrap()
    }

    #[test]
    fn trelu_formula_cases() {
        let spec = ActivationSpec::TRelu { cap: 1.0 };
        assert_eq!(spec.apply_scalar(0.7), 0.7);
        assert_eq!(spec.apply_scalar(-1.0), 0.0);
        assert_eq!(spec.apply_scalar(3.0), 1.0);
    }

    #[test]
    fn stairs_formula_cases() {
        let spec = ActivationSpec::stairs(4);
        assert_eq!(spec.apply_scalar(0.3), 0.25);
        assert_eq!(spec.apply_scalar(-0.5), 0.0);
        assert_eq!(spec.apply_scalar(2.0), 1.0);
    }

    #[test]
    fn forward_collect_hand_trace() {
        let model = single_relu_model(Tensor::eye(2));
        let batch = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        let (logits, captures) = model.forward_collect(&batch).unwrap();
        assert_eq!(captures.len(), 1);
        assert_eq!(captures[0].data(), &[0.0, 2.0]);
        assert_eq!(logits.data(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_collect_zero_weights() {
        let model = single_relu_model(Tensor::zeros(vec![3, 2]));
        let batch = Tensor::new(vec![2, 2], vec![1.0, -4.0, 0.5, 2.0]).unwrap();
        let (_, captures) = model.forward_collect(&batch).unwrap();
        assert!(captures[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_collect_identical_rows_and_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, false);
        let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut both = row.clone();
        both.extend_from_slice(&row);
        let batch = Tensor::new(vec![2, 4], both).unwrap();
        let (logits, captures) = model.forward_collect(&batch).unwrap();
        for cap in &captures {
            let n = cap.len() / 2;
            assert_eq!(&cap.data()[..n], &cap.data()[n..]);
        }
        let (logits2, _) = model.forward_collect(&batch).unwrap();
        assert_eq!(logits, logits2);
    }

    #[test]
    fn forward_collect_rejects_bad_batch() {
        let model = single_relu_model(Tensor::eye(2));
        let batch = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            model.forward_collect(&batch),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fold_identity_batchnorm_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = random_model(&mut rng, false);
        model.layers.insert(
            1,
            LayerSpec::BatchNorm {
                gamma: Tensor::full(vec![5], 1.0),
                beta: Tensor::zeros(vec![5]),
                mean: Tensor::zeros(vec![5]),
                var: Tensor::full(vec![5], 1.0),
                eps: 0.0,
            },
        );
        let folded = model.fold_batchnorm().unwrap();
        let batch = Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let a = model.forward(&batch).unwrap();
        let b = folded.forward(&batch).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn fold_scale_two() {
        let model = AnnModel::new(
            vec![2],
            vec![
                LayerSpec::linear(Tensor::eye(2), None),
                LayerSpec::BatchNorm {
                    gamma: Tensor::full(vec![2], 2.0),
                    beta: Tensor::zeros(vec![2]),
                    mean: Tensor::zeros(vec![2]),
                    var: Tensor::full(vec![2], 1.0),
                    eps: 0.0,
                },
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(2), None),
            ],
        )
        .unwrap();
        let folded = model.fold_batchnorm().unwrap();
        match &folded.layers[0] {
            LayerSpec::Linear { weight, .. } => {
                assert_eq!(weight.data(), &[2.0, 0.0, 0.0, 2.0]);
            }
            other => panic!("unexpected layer {other:?}"),
        }
    }

    #[test]
    fn fold_rejects_batchnorm_after_pool() {
        let model = AnnModel {
            input_shape: vec![1, 2, 2],
            layers: vec![
                LayerSpec::AvgPool { size: 2 },
                LayerSpec::BatchNorm {
                    gamma: Tensor::full(vec![1], 1.0),
                    beta: Tensor::zeros(vec![1]),
                    mean: Tensor::zeros(vec![1]),
                    var: Tensor::full(vec![1], 1.0),
                    eps: 0.0,
                },
                LayerSpec::linear(Tensor::eye(1), None),
            ],
        };
        assert!(matches!(
            model.fold_batchnorm(),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn segments_split_and_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, true);
        let segments = model.segments().unwrap();
        assert_eq!(segments.spiking.len(), 1);
        assert_eq!(segments.spiking[0].ops, 0..2);
        assert_eq!(segments.spiking[0].activation, 2);
        assert_eq!(segments.readout, 3..4);
        assert_eq!(model.segment_channels().unwrap(), vec![5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fold_batchnorm_preserves_forward(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, true);
            let folded = model.fold_batchnorm().unwrap();
            let data: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let batch = Tensor::new(vec![2, 4], data).unwrap();
            let a = model.forward(&batch).unwrap();
            let b = folded.forward(&batch).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn activation_ranges(seed in 0u64..1000, steps in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: f64 = rng.gen_range(-3.0..3.0);
            let relu = ActivationSpec::Relu.apply_scalar(x);
            prop_assert!(relu >= 0.0);
            let trelu = ActivationSpec::TRelu { cap: 1.5 }.apply_scalar(x);
            prop_assert!((0.0..=1.5).contains(&trelu));
            let stairs = ActivationSpec::stairs(steps).apply_scalar(x);
            prop_assert!((0.0..=1.0).contains(&stairs));
            let scaled = stairs * steps as f64;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        }
    }
}
