//! Plain SGD training with softmax cross-entropy, enough to produce
//! desk-scale source models. Calibration never differentiates anything;
//! backprop lives only here.

use super::{ActivationSpec, AnnModel, LayerSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 32;

/// Trained model plus headline numbers from the final epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AnnModel,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Deterministic minibatch SGD. The same `(model, data, epochs, lr, seed)`
/// always yields bit-identical weights.
pub fn train_sgd(
    model: &AnnModel,
    data: &Dataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    if data.len() == 0 {
        return Err(Error::Argument("training dataset is empty".into()));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut final_loss = f64::NAN;

    for epoch in 0..epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in indices.chunks(BATCH) {
            let (batch, labels) = data.batch(chunk)?;
            let loss = sgd_step(&mut model, &batch, &labels, lr)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {loss} at epoch {epoch}, batch {batches}"
                )));
            }
            epoch_loss += loss;
            batches += 1;
        }
        final_loss = epoch_loss / batches as f64;
    }

    let (full, labels) = data.batch(&(0..data.len()).collect::<Vec<_>>())?;
    let logits = model.forward(&full)?;
    let preds = logits.argmax_rows()?;
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(TrainOutcome {
        model,
        train_accuracy: correct as f64 / labels.len() as f64,
        final_loss,
    })
}

/// Per-channel batch statistics of a `[B,C,...]` tensor (biased variance).
fn batch_stats(x: &Tensor, channels: usize) -> (Vec<f64>, Vec<f64>) {
    let batch = x.shape()[0];
    let inner: usize = x.shape()[2..].iter().product();
    let n = (batch * inner) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * inner;
            for i in 0..inner {
                mean[c] += x.data()[base + i];
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * inner;
            for i in 0..inner {
                let d = x.data()[base + i] - mean[c];
                var[c] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

/// Batchnorm forward with explicit statistics.
fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Tensor {
    let channels = gamma.len();
    let batch = x.shape()[0];
    let inner: usize = x.shape()[2..].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let scale = gamma.data()[c] / (var[c] + eps).sqrt();
            let shift = beta.data()[c] - scale * mean[c];
            let base = (b * channels + c) * inner;
            for i in 0..inner {
                data[base + i] = data[base + i] * scale + shift;
            }
        }
    }
    out
}

enum ParamGrad {
    WeightBias(Tensor, Tensor),
    BatchNorm {
        dgamma: Tensor,
        dbeta: Tensor,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
}

const BN_MOMENTUM: f64 = 0.1;

/// Training-mode forward: caches every layer input and, for batchnorm
/// layers, the batch statistics actually used.
fn forward_train(
    model: &AnnModel,
    batch: &Tensor,
) -> Result<(Tensor, Vec<Tensor>, Vec<Option<(Vec<f64>, Vec<f64>)>>)> {
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut stats = vec![None; model.layers.len()];
    let mut cur = batch.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        inputs.push(cur.clone());
        cur = match layer {
            LayerSpec::BatchNorm {
                gamma, beta, eps, ..
            } => {
                let (mean, var) = batch_stats(&cur, gamma.len());
                let out = batchnorm_forward(&cur, gamma, beta, &mean, &var, *eps);
                stats[i] = Some((mean, var));
                out
            }
            other => other.forward(&cur)?,
        };
    }
    Ok((cur, inputs, stats))
}

/// Loss of a batch under training-mode batchnorm (used by the
/// finite-difference checks).
#[cfg(test)]
fn training_loss(model: &AnnModel, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, _, _) = forward_train(model, batch)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// One forward/backward/update step; returns the batch loss.
fn sgd_step(model: &mut AnnModel, batch: &Tensor, labels: &[usize], lr: f64) -> Result<f64> {
    let (logits, inputs, stats) = forward_train(model, batch)?;
    let (loss, mut grad) = softmax_cross_entropy(&logits, labels)?;

    // backward
    let mut updates: Vec<Option<ParamGrad>> = (0..model.layers.len()).map(|_| None).collect();
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let x = &inputs[i];
        match layer {
            LayerSpec::Linear { weight, .. } => {
                let (dx, dw, db) = linear_backward(x, weight, &grad);
                updates[i] = Some(ParamGrad::WeightBias(dw, db));
                grad = dx;
            }
            LayerSpec::Conv2d {
                weight,
                stride,
                pad,
                ..
            } => {
                let (dx, dw, db) = conv_backward(x, weight, &grad, *stride, *pad);
                updates[i] = Some(ParamGrad::WeightBias(dw, db));
                grad = dx;
            }
            LayerSpec::AvgPool { size } => {
                grad = avgpool_backward(x.shape(), &grad, *size);
            }
            LayerSpec::BatchNorm { gamma, eps, .. } => {
                let (mean, var) = stats[i].clone().expect("stats cached in forward");
                let (dx, dgamma, dbeta) = batchnorm_backward(x, gamma, &mean, &var, *eps, &grad);
                updates[i] = Some(ParamGrad::BatchNorm {
                    dgamma,
                    dbeta,
                    batch_mean: mean,
                    batch_var: var,
                });
                grad = dx;
            }
            LayerSpec::Activation { spec } => {
                grad = activation_backward(spec, x, &grad);
            }
        }
    }

    // apply parameter updates and fold the batch statistics into the
    // running estimates
    for (layer, upd) in model.layers.iter_mut().zip(updates) {
        match (layer, upd) {
            (
                LayerSpec::Linear { weight, bias } | LayerSpec::Conv2d { weight, bias, .. },
                Some(ParamGrad::WeightBias(dw, db)),
            ) => {
                for (w, g) in weight.data_mut().iter_mut().zip(dw.data()) {
                    *w -= lr * g;
                }
                if let Some(bias) = bias {
                    for (b, g) in bias.data_mut().iter_mut().zip(db.data()) {
                        *b -= lr * g;
                    }
                }
            }
            (
                LayerSpec::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    ..
                },
                Some(ParamGrad::BatchNorm {
                    dgamma,
                    dbeta,
                    batch_mean,
                    batch_var,
                }),
            ) => {
                for (g, d) in gamma.data_mut().iter_mut().zip(dgamma.data()) {
                    *g -= lr * d;
                }
                for (b, d) in beta.data_mut().iter_mut().zip(dbeta.data()) {
                    *b -= lr * d;
                }
                for (m, bm) in mean.data_mut().iter_mut().zip(&batch_mean) {
                    *m += BN_MOMENTUM * (bm - *m);
                }
                for (v, bv) in var.data_mut().iter_mut().zip(&batch_var) {
                    *v += BN_MOMENTUM * (bv - *v);
                }
            }
            (_, None) => {}
            _ => unreachable!("gradient kind matches its layer kind"),
        }
    }
    Ok(loss)
}

/// Gradient of training-mode batchnorm, compact form:
/// `dx = γ/(N·s) · (N·dy − Σdy − x̂·Σ(dy·x̂))` with `s = √(σ²+ε)`.
fn batchnorm_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let channels = gamma.len();
    let batch = x.shape()[0];
    let inner: usize = x.shape()[2..].iter().product();
    let n = (batch * inner) as f64;

    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let s = (var[c] + eps).sqrt();
            let base = (b * channels + c) * inner;
            for i in 0..inner {
                let xhat = (x.data()[base + i] - mean[c]) / s;
                dgamma[c] += grad.data()[base + i] * xhat;
                dbeta[c] += grad.data()[base + i];
            }
        }
    }

    let mut dx = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let s = (var[c] + eps).sqrt();
            let k = gamma.data()[c] / (n * s);
            let base = (b * channels + c) * inner;
            for i in 0..inner {
                let xhat = (x.data()[base + i] - mean[c]) / s;
                dx[base + i] =
                    k * (n * grad.data()[base + i] - dbeta[c] - xhat * dgamma[c]);
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(vec![channels], dgamma),
        Tensor::from_parts(vec![channels], dbeta),
    )
}

fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{b} logits rows vs {} labels",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(vec![b, k]);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for row in 0..b {
        let slice = &logits.data()[row * k..(row + 1) * k];
        let max = slice.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut denom = 0.0;
        for &v in slice {
            denom += (v - max).exp();
        }
        let label = labels[row];
        loss -= (slice[label] - max - denom.ln()) * inv_b;
        for j in 0..k {
            let p = (slice[j] - max).exp() / denom;
            grad.data_mut()[row * k + j] = (p - if j == label { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss, grad))
}

fn activation_backward(spec: &ActivationSpec, x: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        let pass = match *spec {
            ActivationSpec::Relu => v > 0.0,
            ActivationSpec::TRelu { cap } => v > 0.0 && v < cap,
            // straight-through estimate of the underlying clamp
            ActivationSpec::Stairs { cap, .. } => v > 0.0 && v < cap,
        };
        if !pass {
            *g = 0.0;
        }
    }
    out
}

fn linear_backward(x: &Tensor, weight: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let b = x.shape()[0];
    let in_features: usize = x.shape()[1..].iter().product();
    let out_features = weight.shape()[0];
    let mut dx = vec![0.0; b * in_features];
    let mut dw = vec![0.0; out_features * in_features];
    let mut db = vec![0.0; out_features];
    for bi in 0..b {
        for o in 0..out_features {
            let g = grad.data()[bi * out_features + o];
            db[o] += g;
            for i in 0..in_features {
                dw[o * in_features + i] += g * x.data()[bi * in_features + i];
                dx[bi * in_features + i] += g * weight.data()[o * in_features + i];
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        Tensor::from_parts(vec![out_features], db),
    )
}

fn conv_backward(
    x: &Tensor,
    weight: &Tensor,
    grad: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, _, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let (h_out, w_out) = (grad.shape()[2], grad.shape()[3]);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; c_out];
    for bi in 0..b {
        for co in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let g = grad.data()[((bi * c_out + co) * h_out + oy) * w_out + ox];
                    db[co] += g;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((bi * c_in + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((co * c_in + ci) * kh + ky) * kw + kx;
                                dw[wi] += g * x.data()[xi];
                                dx[xi] += g * weight.data()[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        Tensor::from_parts(vec![c_out], db),
    )
}

fn avgpool_backward(in_shape: &[usize], grad: &Tensor, k: usize) -> Tensor {
    let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (ho, wo) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut dx = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad.data()[((bi * c + ci) * ho + oy) * wo + ox] * norm;
                    for ky in 0..k {
                        for kx in 0..k {
                            dx[((bi * c + ci) * h + oy * k + ky) * w + ox * k + kx] += g;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}
