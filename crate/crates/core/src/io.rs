//! Model and bias-table files.
//!
//! A model is a JSON document (structure, shape metadata, activations,
//! thresholds for spiking models) plus a sidecar blob of little-endian
//! f64 weights concatenated in layer order. Bias tables use a JSON index
//! of `(layer, timestep, channel_count, offset)` entries over their own
//! blob. Both formats round-trip byte-identically.

use crate::ann::{ActivationSpec, AnnModel, LayerSpec};
use crate::error::{Error, Result};
use crate::snn::{BiasTable, PotentialPolicy, SnnModel};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerMeta {
    Linear {
        #[serde(rename = "in")]
        in_features: usize,
        #[serde(rename = "out")]
        out_features: usize,
        has_bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        has_bias: bool,
    },
    Avgpool {
        size: usize,
    },
    Batchnorm {
        channels: usize,
        eps: f64,
    },
    Activation {
        activation: ActivationSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_potential_policy: Option<PotentialPolicy>,
    layers: Vec<LayerMeta>,
    weights_file: String,
}

fn sidecar_path(path: &Path, suffix: &str) -> Result<(PathBuf, String)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Argument(format!("bad model path {}", path.display())))?;
    let name = format!("{stem}.{suffix}");
    let full = path.with_file_name(&name);
    Ok((full, name))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{display}: {e}")))?;
    text.push('\n');
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(&display, e))
}

fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    let display = path.display().to_string();
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&display, e))
}

fn read_blob(path: &Path) -> Result<Vec<f64>> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{display}: blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn layer_meta(layer: &LayerSpec, threshold: Option<&Tensor>) -> LayerMeta {
    match layer {
        LayerSpec::Linear { weight, bias } => LayerMeta::Linear {
            in_features: weight.shape()[1],
            out_features: weight.shape()[0],
            has_bias: bias.is_some(),
        },
        LayerSpec::Conv2d {
            weight,
            bias,
            stride,
            pad,
        } => LayerMeta::Conv2d {
            in_channels: weight.shape()[1],
            out_channels: weight.shape()[0],
            kh: weight.shape()[2],
            kw: weight.shape()[3],
            stride: *stride,
            pad: *pad,
            has_bias: bias.is_some(),
        },
        LayerSpec::AvgPool { size } => LayerMeta::Avgpool { size: *size },
        LayerSpec::BatchNorm { gamma, eps, .. } => LayerMeta::Batchnorm {
            channels: gamma.len(),
            eps: *eps,
        },
        LayerSpec::Activation { spec } => LayerMeta::Activation {
            activation: spec.clone(),
            threshold: threshold.map(|t| t.data().to_vec()),
        },
    }
}

fn push_layer_weights(layer: &LayerSpec, out: &mut Vec<f64>) {
    match layer {
        LayerSpec::Linear { weight, bias } | LayerSpec::Conv2d { weight, bias, .. } => {
            out.extend_from_slice(weight.data());
            if let Some(bias) = bias {
                out.extend_from_slice(bias.data());
            }
        }
        LayerSpec::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            ..
        } => {
            out.extend_from_slice(gamma.data());
            out.extend_from_slice(beta.data());
            out.extend_from_slice(mean.data());
            out.extend_from_slice(var.data());
        }
        LayerSpec::AvgPool { .. } | LayerSpec::Activation { .. } => {}
    }
}

fn save_model(
    path: &Path,
    kind: &str,
    ann: &AnnModel,
    thresholds: Option<&[Tensor]>,
    policy: Option<PotentialPolicy>,
) -> Result<()> {
    let (blob_path, blob_name) = sidecar_path(path, "weights.bin")?;
    let segments = ann.segments()?;
    let mut metas = Vec::with_capacity(ann.layers.len());
    let mut weights = Vec::new();
    for (i, layer) in ann.layers.iter().enumerate() {
        let threshold = thresholds.and_then(|ts| {
            segments
                .spiking
                .iter()
                .position(|seg| seg.activation == i)
                .map(|l| &ts[l])
        });
        metas.push(layer_meta(layer, threshold));
        push_layer_weights(layer, &mut weights);
    }
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        input_shape: ann.input_shape.clone(),
        initial_potential_policy: policy,
        layers: metas,
        weights_file: blob_name,
    };
    write_json(&file, path)?;
    write_blob(&blob_path, &weights)
}

/// Writes an ANN as `<path>` plus `<stem>.weights.bin` alongside.
pub fn save_ann_model(model: &AnnModel, path: &Path) -> Result<()> {
    save_model(path, "ann", model, None, None)
}

/// Writes a spiking model: the ANN layout with per-layer thresholds on the
/// activation entries and the initial-potential policy. The bias table is
/// stored separately (`save_bias_table`).
pub fn save_snn_model(snn: &SnnModel, path: &Path) -> Result<()> {
    save_model(
        path,
        "snn",
        snn.ann(),
        Some(snn.thresholds()),
        Some(snn.policy()),
    )
}

struct WeightCursor {
    values: Vec<f64>,
    pos: usize,
}

impl WeightCursor {
    fn take(&mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if self.pos + n > self.values.len() {
            return Err(Error::Format(format!(
                "weights blob too short: wanted {n} more values at {}",
                self.pos
            )));
        }
        let t = Tensor::new(shape, self.values[self.pos..self.pos + n].to_vec())?;
        self.pos += n;
        Ok(t)
    }
}

fn load_model(path: &Path) -> Result<(ModelFile, AnnModel, Vec<Option<Tensor>>)> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{display}: {e}")))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{display}: unsupported format version {}",
            file.format_version
        )));
    }
    let blob_path = path.with_file_name(&file.weights_file);
    let mut cursor = WeightCursor {
        values: read_blob(&blob_path)?,
        pos: 0,
    };

    let mut layers = Vec::with_capacity(file.layers.len());
    let mut thresholds = Vec::new();
    for meta in &file.layers {
        match meta {
            LayerMeta::Linear {
                in_features,
                out_features,
                has_bias,
            } => {
                let weight = cursor.take(vec![*out_features, *in_features])?;
                let bias = has_bias
                    .then(|| cursor.take(vec![*out_features]))
                    .transpose()?;
                layers.push(LayerSpec::Linear { weight, bias });
            }
            LayerMeta::Conv2d {
                in_channels,
                out_channels,
                kh,
                kw,
                stride,
                pad,
                has_bias,
            } => {
                let weight = cursor.take(vec![*out_channels, *in_channels, *kh, *kw])?;
                let bias = has_bias
                    .then(|| cursor.take(vec![*out_channels]))
                    .transpose()?;
                layers.push(LayerSpec::Conv2d {
                    weight,
                    bias,
                    stride: *stride,
                    pad: *pad,
                });
            }
            LayerMeta::Avgpool { size } => layers.push(LayerSpec::AvgPool { size: *size }),
            LayerMeta::Batchnorm { channels, eps } => {
                let gamma = cursor.take(vec![*channels])?;
                let beta = cursor.take(vec![*channels])?;
                let mean = cursor.take(vec![*channels])?;
                let var = cursor.take(vec![*channels])?;
                layers.push(LayerSpec::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps: *eps,
                });
            }
            LayerMeta::Activation {
                activation,
                threshold,
            } => {
                thresholds.push(threshold.clone().map(|v| {
                    let len = v.len();
                    Tensor::new(vec![len], v)
                }));
                layers.push(LayerSpec::Activation {
                    spec: activation.clone(),
                });
            }
        }
    }
    if cursor.pos != cursor.values.len() {
        return Err(Error::Format(format!(
            "{display}: weights blob has {} trailing values",
            cursor.values.len() - cursor.pos
        )));
    }
    let ann = AnnModel::new(file.input_shape.clone(), layers)?;
    let thresholds = thresholds
        .into_iter()
        .map(|t| t.transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok((file, ann, thresholds))
}

/// Reads an ANN model file (thresholds, if any, are ignored).
pub fn load_ann_model(path: &Path) -> Result<AnnModel> {
    let (_, ann, _) = load_model(path)?;
    Ok(ann)
}

/// Reads a spiking model file; the bias table starts empty.
pub fn load_snn_model(path: &Path) -> Result<SnnModel> {
    let display = path.display().to_string();
    let (file, ann, thresholds) = load_model(path)?;
    if file.kind != "snn" {
        return Err(Error::Format(format!(
            "{display}: expected a spiking model, found kind {:?}",
            file.kind
        )));
    }
    let policy = file.initial_potential_policy.ok_or_else(|| {
        Error::Format(format!("{display}: missing initial_potential_policy"))
    })?;
    let thresholds: Vec<Tensor> = thresholds
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            t.ok_or_else(|| {
                Error::Format(format!("{display}: activation {i} is missing its threshold"))
            })
        })
        .collect::<Result<_>>()?;
    let channels = ann.segment_channels()?;
    SnnModel::new(
        ann,
        thresholds,
        policy,
        BiasTable::zeros(&channels, 0),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BiasEntry {
    layer: usize,
    timestep: usize,
    channel_count: usize,
    /// Byte offset into the blob.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BiasFile {
    format_version: u32,
    horizon: usize,
    blob_file: String,
    entries: Vec<BiasEntry>,
}

/// Writes a bias table as a JSON index plus an f64 blob, entries ordered
/// by (layer, timestep).
pub fn save_bias_table(bias: &BiasTable, path: &Path) -> Result<()> {
    let (blob_path, blob_name) = sidecar_path(path, "bias.bin")?;
    let mut entries = Vec::new();
    let mut values = Vec::new();
    for layer in 0..bias.layer_count() {
        for t in 1..=bias.horizon() {
            let tensor = bias.get(layer, t).expect("dense table");
            entries.push(BiasEntry {
                layer,
                timestep: t,
                channel_count: tensor.len(),
                offset: values.len() * 8,
            });
            values.extend_from_slice(tensor.data());
        }
    }
    let file = BiasFile {
        format_version: FORMAT_VERSION,
        horizon: bias.horizon(),
        blob_file: blob_name,
        entries,
    };
    write_json(&file, path)?;
    write_blob(&blob_path, &values)
}

pub fn load_bias_table(path: &Path) -> Result<BiasTable> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let file: BiasFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{display}: {e}")))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{display}: unsupported format version {}",
            file.format_version
        )));
    }
    let values = read_blob(&path.with_file_name(&file.blob_file))?;

    // channel counts per layer from the t=1 entries
    let mut channels: Vec<(usize, usize)> = file
        .entries
        .iter()
        .filter(|e| e.timestep == 1)
        .map(|e| (e.layer, e.channel_count))
        .collect();
    channels.sort_unstable();
    let counts: Vec<usize> = channels.iter().map(|&(_, c)| c).collect();
    if channels.iter().enumerate().any(|(i, &(l, _))| l != i) {
        return Err(Error::Format(format!(
            "{display}: bias entries do not cover contiguous layers"
        )));
    }

    let mut table = BiasTable::zeros(&counts, file.horizon);
    let mut seen = 0usize;
    for e in &file.entries {
        if e.offset % 8 != 0 {
            return Err(Error::Format(format!(
                "{display}: entry (layer {}, t {}) offset {} is misaligned",
                e.layer, e.timestep, e.offset
            )));
        }
        let start = e.offset / 8;
        let end = start + e.channel_count;
        if end > values.len() {
            return Err(Error::Format(format!(
                "{display}: entry (layer {}, t {}) overruns the blob",
                e.layer, e.timestep
            )));
        }
        let tensor = Tensor::new(vec![e.channel_count], values[start..end].to_vec())?;
        table.set(e.layer, e.timestep, tensor)?;
        seen += e.channel_count;
    }
    if seen != values.len() {
        return Err(Error::Format(format!(
            "{display}: blob has {} values, entries cover {seen}",
            values.len()
        )));
    }
    Ok(table)
}
