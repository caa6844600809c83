//! Reference architectures used by the CLI and the test benches.

use super::{ActivationSpec, AnnModel, LayerSpec};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn he_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
        .collect();
    Tensor::from_parts(shape, data)
}

/// MLP with ReLU hidden layers and a linear readout.
pub fn mlp_arch(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> AnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut prev = input_dim;
    for &width in hidden {
        layers.push(LayerSpec::Linear {
            weight: he_tensor(&mut rng, vec![width, prev], prev),
            bias: Some(Tensor::zeros(vec![width])),
        });
        layers.push(LayerSpec::activation(ActivationSpec::Relu));
        prev = width;
    }
    layers.push(LayerSpec::Linear {
        weight: he_tensor(&mut rng, vec![classes, prev], prev),
        bias: Some(Tensor::zeros(vec![classes])),
    });
    AnnModel::new(vec![input_dim], layers).expect("preset mlp is well-formed")
}

/// Three-conv-block CNN (conv + batchnorm + relu, average pooling between
/// blocks) for single-channel 12x12 images.
pub fn cnn_arch(classes: usize, seed: u64) -> AnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |rng: &mut ChaCha8Rng, c_out: usize, c_in: usize| LayerSpec::Conv2d {
        weight: he_tensor(rng, vec![c_out, c_in, 3, 3], c_in * 9),
        bias: Some(Tensor::zeros(vec![c_out])),
        stride: 1,
        pad: 1,
    };
    let bn = |channels: usize| LayerSpec::BatchNorm {
        gamma: Tensor::full(vec![channels], 1.0),
        beta: Tensor::zeros(vec![channels]),
        mean: Tensor::zeros(vec![channels]),
        var: Tensor::full(vec![channels], 1.0),
        eps: 1e-5,
    };
    let layers = vec![
        conv(&mut rng, 8, 1),
        bn(8),
        LayerSpec::activation(ActivationSpec::Relu),
        LayerSpec::AvgPool { size: 2 },
        conv(&mut rng, 16, 8),
        bn(16),
        LayerSpec::activation(ActivationSpec::Relu),
        LayerSpec::AvgPool { size: 2 },
        conv(&mut rng, 32, 16),
        bn(32),
        LayerSpec::activation(ActivationSpec::Relu),
        LayerSpec::Linear {
            weight: he_tensor(&mut rng, vec![classes, 32 * 3 * 3], 32 * 3 * 3),
            bias: Some(Tensor::zeros(vec![classes])),
        },
    ];
    AnnModel::new(vec![1, 12, 12], layers).expect("preset cnn is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_are_deterministic() {
        let a = mlp_arch(16, &[32, 16], 4, 7);
        let b = mlp_arch(16, &[32, 16], 4, 7);
        assert_eq!(a, b);
        assert_eq!(a.spiking_layer_count(), 2);

        let cnn = cnn_arch(10, 7);
        assert_eq!(cnn.spiking_layer_count(), 3);
        assert_eq!(cnn.segment_channels().unwrap(), vec![8, 16, 32]);
    }
}
