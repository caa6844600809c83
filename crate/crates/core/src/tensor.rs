//! Dense row-major f64 tensors with the handful of ops inference and
//! calibration need: elementwise arithmetic, matmul, 2-D convolution,
//! average pooling, channel reductions and nearest-rank percentiles.
//!
//! All reductions use a fixed left-to-right summation order so repeated
//! runs produce bit-identical results.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense n-dimensional array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from external input, rejecting shape/length mismatch
    /// and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} wants {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for values produced by our own ops.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape, vec![value; n])
    }

    /// Row-major identity matrix.
    pub fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the data under a new shape of equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elems) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Matrix product of `self [m×k]` with `b [k×n]`, summing left-to-right
    /// over k.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => {
                return Err(Error::Dimension(format!(
                    "matmul lhs must be rank 2, got {:?}",
                    self.shape
                )))
            }
        };
        let (k2, n) = match b.shape[..] {
            [k2, n] => (k2, n),
            _ => {
                return Err(Error::Dimension(format!(
                    "matmul rhs must be rank 2, got {:?}",
                    b.shape
                )))
            }
        };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dims disagree: {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.data[i * k + p] * b.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// 2-D cross-correlation of a single `C_in×H×W` input with a
    /// `C_out×C_in×kh×kw` kernel, zero padding.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (c_in, h, w) = match self.shape[..] {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv2d input must be rank 3, got {:?}",
                    self.shape
                )))
            }
        };
        let out = conv2d_batched(
            &Tensor::from_parts(vec![1, c_in, h, w], self.data.clone()),
            kernel,
            None,
            stride,
            pad,
        )?;
        let shape = out.shape[1..].to_vec();
        Ok(Tensor::from_parts(shape, out.data))
    }

    /// Mean over every axis except axis 1 (the channel axis).
    pub fn channel_mean(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::Dimension(format!(
                "channel_mean needs rank >= 2, got {:?}",
                self.shape
            )));
        }
        let batch = self.shape[0];
        let channels = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut sums = vec![0.0; channels];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * inner;
                let mut acc = 0.0;
                for i in 0..inner {
                    acc += self.data[base + i];
                }
                sums[c] += acc;
            }
        }
        let denom = (batch * inner) as f64;
        for s in &mut sums {
            *s /= denom;
        }
        Ok(Tensor::from_parts(vec![channels], sums))
    }

    /// Adds `bias[c]` to every element of channel `c`. `self` is `[B,C,...]`.
    pub fn add_channel_bias(&mut self, bias: &Tensor) -> Result<()> {
        if self.rank() < 2 {
            return Err(Error::Dimension(format!(
                "channel bias needs rank >= 2, got {:?}",
                self.shape
            )));
        }
        let channels = self.shape[1];
        if bias.shape != [channels] {
            return Err(Error::Dimension(format!(
                "bias length {:?} does not match channel count {channels}",
                bias.shape
            )));
        }
        let batch = self.shape[0];
        let inner: usize = self.shape[2..].iter().product();
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * inner;
                let add = bias.data[c];
                for i in 0..inner {
                    self.data[base + i] += add;
                }
            }
        }
        Ok(())
    }

    /// Index of the largest value in each row of a `[B,K]` tensor,
    /// ties resolved to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (b, k) = match self.shape[..] {
            [b, k] => (b, k),
            _ => {
                return Err(Error::Dimension(format!(
                    "argmax_rows needs rank 2, got {:?}",
                    self.shape
                )))
            }
        };
        let mut out = Vec::with_capacity(b);
        for row in 0..b {
            let mut best = 0;
            let mut best_v = self.data[row * k];
            for j in 1..k {
                let v = self.data[row * k + j];
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

/// Batched cross-correlation: input `[B,C_in,H,W]`, kernel
/// `[C_out,C_in,kh,kw]`, optional per-output-channel bias.
pub fn conv2d_batched(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (b, c_in, h, w) = match input.shape[..] {
        [b, c, h, w] => (b, c, h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "conv input must be rank 4, got {:?}",
                input.shape
            )))
        }
    };
    let (c_out, kc, kh, kw) = match kernel.shape[..] {
        [o, i, kh, kw] => (o, i, kh, kw),
        _ => {
            return Err(Error::Dimension(format!(
                "conv kernel must be rank 4, got {:?}",
                kernel.shape
            )))
        }
    };
    if kc != c_in {
        return Err(Error::Dimension(format!(
            "conv kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    if stride == 0 {
        return Err(Error::Argument("conv stride must be positive".into()));
    }
    let h_out = conv_out_dim(h, kh, stride, pad)?;
    let w_out = conv_out_dim(w, kw, stride, pad)?;
    if let Some(bias) = bias {
        if bias.shape != [c_out] {
            return Err(Error::Dimension(format!(
                "conv bias shape {:?} does not match {c_out} output channels",
                bias.shape
            )));
        }
    }

    let mut out = vec![0.0; b * c_out * h_out * w_out];
    for bi in 0..b {
        for co in 0..c_out {
            let base_out = (bi * c_out + co) * h_out * w_out;
            let b0 = bias.map_or(0.0, |t| t.data[co]);
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        let base_in = (bi * c_in + ci) * h * w;
                        let base_k = ((co * c_in + ci) * kh) * kw;
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
                                acc += input.data[base_in + iy as usize * w + ix as usize]
                                    * kernel.data[base_k + ky * kw + kx];
                            }
                        }
                    }
                    out[base_out + oy * w_out + ox] = acc + b0;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c_out, h_out, w_out], out))
}

fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Dimension(format!(
            "kernel size {k} exceeds padded input {padded}"
        )));
    }
    let span = padded - k;
    if span % stride != 0 {
        return Err(Error::Dimension(format!(
            "conv output size ({padded} - {k}) / {stride} + 1 is not an integer"
        )));
    }
    Ok(span / stride + 1)
}

/// Average pooling over `k×k` windows with stride `k`; input `[B,C,H,W]`.
pub fn avgpool2d(input: &Tensor, k: usize) -> Result<Tensor> {
    let (b, c, h, w) = match input.shape[..] {
        [b, c, h, w] => (b, c, h, w),
        _ => {
            return Err(Error::Dimension(format!(
                "avgpool input must be rank 4, got {:?}",
                input.shape
            )))
        }
    };
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Dimension(format!(
            "pool size {k} does not divide spatial dims {h}x{w}"
        )));
    }
    let (ho, wo) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; b * c * ho * wo];
    for bi in 0..b {
        for ci in 0..c {
            let base_in = (bi * c + ci) * h * w;
            let base_out = (bi * c + ci) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += input.data[base_in + (oy * k + ky) * w + (ox * k + kx)];
                        }
                    }
                    out[base_out + oy * wo + ox] = acc * norm;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, ho, wo], out))
}

/// Linear layer forward: `x [B,in] × w [out,in]ᵀ + bias`, summing
/// left-to-right over the input features. Inputs of higher rank are
/// flattened per sample.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::Dimension(format!(
            "linear input must have a batch axis, got {:?}",
            x.shape
        )));
    }
    let b = x.shape[0];
    let in_features: usize = x.shape[1..].iter().product();
    let (out_features, k) = match weight.shape[..] {
        [o, k] => (o, k),
        _ => {
            return Err(Error::Dimension(format!(
                "linear weight must be rank 2, got {:?}",
                weight.shape
            )))
        }
    };
    if k != in_features {
        return Err(Error::Dimension(format!(
            "linear weight expects {k} inputs, got {in_features}"
        )));
    }
    if let Some(bias) = bias {
        if bias.shape != [out_features] {
            return Err(Error::Dimension(format!(
                "linear bias shape {:?} does not match {out_features} outputs",
                bias.shape
            )));
        }
    }
    let mut out = vec![0.0; b * out_features];
    for bi in 0..b {
        let base_x = bi * in_features;
        for o in 0..out_features {
            let base_w = o * in_features;
            let mut acc = 0.0;
            for i in 0..in_features {
                acc += weight.data[base_w + i] * x.data[base_x + i];
            }
            out[bi * out_features + o] = acc + bias.map_or(0.0, |t| t.data[o]);
        }
    }
    Ok(Tensor::from_parts(vec![b, out_features], out))
}

/// Nearest-rank percentile: the value at 1-based index `ceil(p/100 · n)` in
/// the sorted sequence; `p = 0` maps to the minimum.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("percentile of empty sequence".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Argument(format!("percentile p={p} outside [0,100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_bad_shapes_and_values() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_is_exact() {
        let a = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let out = Tensor::eye(2).matmul(&a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_case() {
        let z = Tensor::zeros(vec![2, 3]);
        let b = Tensor::new(vec![3, 1], vec![1.0, -2.0, 5.5]).unwrap();
        let out = z.matmul(&b).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 1]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv2d_sum_of_ones() {
        let input = Tensor::full(vec![1, 3, 3], 1.0);
        let kernel = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let out = input.conv2d(&kernel, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv2d_identity_kernel_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..2 * 4 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let input = Tensor::new(vec![2, 4, 4], data).unwrap();
        // 1x1 kernel mapping each channel to itself with weight 1
        let mut k = Tensor::zeros(vec![2, 2, 1, 1]);
        k.data_mut()[0] = 1.0; // out 0 <- in 0
        k.data_mut()[3] = 1.0; // out 1 <- in 1
        let out = input.conv2d(&k, 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_zero_kernel_gives_zeros() {
        let input = Tensor::full(vec![1, 3, 3], 2.5);
        let kernel = Tensor::zeros(vec![1, 1, 2, 2]);
        let out = input.conv2d(&kernel, 1, 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_non_integer_output_errors() {
        let input = Tensor::full(vec![1, 5, 5], 1.0);
        let kernel = Tensor::full(vec![1, 1, 2, 2], 1.0);
        assert!(matches!(
            input.conv2d(&kernel, 2, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn channel_mean_per_column() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.channel_mean().unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn channel_mean_constant() {
        let t = Tensor::full(vec![3, 4, 2], 7.5);
        assert_eq!(t.channel_mean().unwrap().data(), &[7.5; 4]);
    }

    #[test]
    fn channel_mean_signed_channels() {
        let mut t = Tensor::zeros(vec![1, 2, 2, 2]);
        for i in 0..4 {
            t.data_mut()[i] = 1.0;
            t.data_mut()[4 + i] = -1.0;
        }
        assert_eq!(t.channel_mean().unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn channel_mean_rank_one_errors() {
        let t = Tensor::full(vec![3], 1.0);
        assert!(matches!(t.channel_mean(), Err(Error::Dimension(_))));
    }

    #[test]
    fn channel_mean_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let shape: Vec<usize> = (0..4).map(|_| rng.gen_range(1..=8)).collect();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t = Tensor::new(shape.clone(), data.clone()).unwrap();

            // naive triple-loop oracle
            let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let mut expect = vec![0.0; c];
            for ci in 0..c {
                let mut acc = 0.0;
                for bi in 0..b {
                    for y in 0..h {
                        for x in 0..w {
                            acc += data[((bi * c + ci) * h + y) * w + x];
                        }
                    }
                }
                expect[ci] = acc / (b * h * w) as f64;
            }
            let got = t.channel_mean().unwrap();
            for (g, e) in got.data().iter().zip(&expect) {
                assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 99.0).unwrap(), 99.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[5.0], 50.0).unwrap(), 5.0);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn linear_forward_flattens_higher_rank() {
        let x = Tensor::new(vec![1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let out = linear_forward(&x, &w, None).unwrap();
        assert_eq!(out.data(), &[10.0]);
    }

    #[test]
    fn avgpool_means_windows() {
        let input = Tensor::new(
            vec![1, 1, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let out = avgpool2d(&input, 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
        assert!(avgpool2d(&Tensor::zeros(vec![1, 1, 3, 3]), 2).is_err());
    }

    proptest! {
        #[test]
        fn percentile_monotone_in_p(
            values in proptest::collection::vec(-1e3..1e3f64, 1..40),
            p1 in 0.0..100.0f64,
            p2 in 0.0..100.0f64,
        ) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = percentile(&values, lo).unwrap();
            let b = percentile(&values, hi).unwrap();
            prop_assert!(a <= b);
        }

        #[test]
        fn matmul_left_identity(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = Tensor::new(vec![rows, cols], data).unwrap();
            let out = Tensor::eye(rows).matmul(&a).unwrap();
            prop_assert_eq!(out, a);
        }
    }
}
