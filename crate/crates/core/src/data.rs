//! Datasets: IDX file ingestion, synthetic Gaussian blobs and a procedural
//! digit-glyph set for the desk-scale benchmarks.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Which role a dataset plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Calib,
    Test,
}

/// Labeled classification data; `inputs` is `[N, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Dataset> {
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} samples vs {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Argument(format!(
                "label {bad} exceeds class count {class_count}"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Gathers the given rows into a batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let sample: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!(
                    "sample index {i} out of range ({} samples)",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.inputs.data()[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::from_parts(shape, data), labels))
    }

    /// First `n` samples as a new dataset.
    pub fn take(&self, n: usize, split: Split) -> Result<Dataset> {
        let n = n.min(self.len());
        let (inputs, labels) = self.batch(&(0..n).collect::<Vec<_>>())?;
        Dataset::new(inputs, labels, self.class_count, split)
    }

    /// Cuts sequential train/calib/test slices (the generators already
    /// shuffle sample order).
    pub fn split_three(
        &self,
        train_n: usize,
        calib_n: usize,
        test_n: usize,
    ) -> Result<(Dataset, Dataset, Dataset)> {
        if train_n + calib_n + test_n > self.len() {
            return Err(Error::Argument(format!(
                "requested {} samples from a set of {}",
                train_n + calib_n + test_n,
                self.len()
            )));
        }
        let slice = |from: usize, count: usize, split: Split| -> Result<Dataset> {
            let idx: Vec<usize> = (from..from + count).collect();
            let (inputs, labels) = self.batch(&idx)?;
            Dataset::new(inputs, labels, self.class_count, split)
        };
        Ok((
            slice(0, train_n, Split::Train)?,
            slice(train_n, calib_n, Split::Calib)?,
            slice(train_n + calib_n, test_n, Split::Test)?,
        ))
    }
}

/// Gaussian blobs: one unit-variance cluster per class, class means placed
/// `separation` away from the origin in random directions.
pub fn synth_dataset(
    classes: usize,
    dims: &[usize],
    n: usize,
    seed: u64,
    separation: f64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Argument("need at least 2 classes".into()));
    }
    if n < classes {
        return Err(Error::Argument(format!(
            "need at least {classes} samples, got {n}"
        )));
    }
    let dim: usize = dims.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        means.push(v.into_iter().map(|x| x / norm * separation).collect::<Vec<_>>());
    }

    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * dim);
    for &label in &labels {
        for d in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            data.push(means[label][d] + z);
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    Dataset::new(Tensor::new(shape, data)?, labels, classes, Split::Train)
}

const GLYPHS: [[&str; 8]; 10] = [
    [
        "..###...", ".#...#..", ".#..##..", ".#.#.#..", ".##..#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "...#....", "..##....", "...#....", "...#....", "...#....", "...#....", ".#####..",
        "........",
    ],
    [
        "..###...", ".#...#..", ".....#..", "....#...", "...#....", "..#.....", ".#####..",
        "........",
    ],
    [
        "..###...", ".#...#..", ".....#..", "...##...", ".....#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..",
        "........",
    ],
    [
        ".#####..", ".#......", ".####...", ".....#..", ".....#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "..###...", ".#......", ".####...", ".#...#..", ".#...#..", ".#...#..", "..###...",
        "........",
    ],
    [
        ".#####..", ".....#..", "....#...", "...#....", "..#.....", "..#.....", "..#.....",
        "........",
    ],
    [
        "..###...", ".#...#..", ".#...#..", "..###...", ".#...#..", ".#...#..", "..###...",
        "........",
    ],
    [
        "..###...", ".#...#..", ".#...#..", "..####..", ".....#..", ".....#..", "..###...",
        "........",
    ],
];

const DIGIT_SIDE: usize = 12;

/// Procedural ten-class digit images: 8x8 glyphs jittered on a 12x12
/// canvas over a per-image background level, with intensity and pixel
/// noise. The background level carries no class information but keeps
/// every input channel active. Pixel values are quantized to the 1/255
/// grid so the set round-trips through IDX files losslessly.
pub fn synth_digits(n: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Argument("need at least 10 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    labels.shuffle(&mut rng);

    let side = DIGIT_SIDE;
    let mut data = Vec::with_capacity(n * side * side);
    for &label in &labels {
        let dx = rng.gen_range(0..=4usize);
        let dy = rng.gen_range(0..=4usize);
        let intensity = rng.gen_range(0.75..1.0);
        let background = rng.gen_range(0.05..0.30);
        let mut canvas = vec![background; side * side];
        for (gy, row) in GLYPHS[label].iter().enumerate() {
            for (gx, ch) in row.bytes().enumerate() {
                if ch == b'#' {
                    canvas[(dy + gy) * side + (dx + gx)] = intensity;
                }
            }
        }
        for px in &mut canvas {
            let z: f64 = rng.sample(StandardNormal);
            let v = (*px + z * noise).clamp(0.0, 1.0);
            *px = (v * 255.0).round() / 255.0;
        }
        data.extend_from_slice(&canvas);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, side, side], data)?,
        labels,
        10,
        Split::Train,
    )
}

fn read_u32_be(reader: &mut impl Read, offset: &mut usize, path: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|_| {
        Error::Format(format!("{path}: truncated at byte {offset}", offset = *offset))
    })?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image file into a `[N,1,R,C]` tensor scaled to `[0,1]`.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut offset = 0usize;
    let magic = read_u32_be(&mut file, &mut offset, &display)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{display}: bad image magic {magic:#010x} at byte 0"
        )));
    }
    let n = read_u32_be(&mut file, &mut offset, &display)? as usize;
    let rows = read_u32_be(&mut file, &mut offset, &display)? as usize;
    let cols = read_u32_be(&mut file, &mut offset, &display)? as usize;
    let mut bytes = vec![0u8; n * rows * cols];
    file.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("{display}: truncated at byte {offset}")))?;
    let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

/// Reads an IDX label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut offset = 0usize;
    let magic = read_u32_be(&mut file, &mut offset, &display)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{display}: bad label magic {magic:#010x} at byte 0"
        )));
    }
    let n = read_u32_be(&mut file, &mut offset, &display)? as usize;
    let mut bytes = vec![0u8; n];
    file.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("{display}: truncated at byte {offset}")))?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

/// Loads an image/label IDX pair as a dataset.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let inputs = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(inputs, labels, class_count, split)
}

/// Writes a `[N,1,R,C]` tensor of 1/255-grid values as an IDX image file.
pub fn write_idx_images(path: &Path, images: &Tensor) -> Result<()> {
    let display = path.display().to_string();
    let (n, rows, cols) = match images.shape() {
        [n, 1, r, c] => (*n, *r, *c),
        other => {
            return Err(Error::Dimension(format!(
                "IDX images must be [N,1,R,C], got {other:?}"
            )))
        }
    };
    let mut bytes = Vec::with_capacity(16 + n * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for (i, &v) in images.data().iter().enumerate() {
        let scaled = v * 255.0;
        let byte = scaled.round();
        if (scaled - byte).abs() > 1e-9 || !(0.0..=255.0).contains(&byte) {
            return Err(Error::Format(format!(
                "pixel {i} value {v} is not on the 1/255 grid"
            )));
        }
        bytes.push(byte as u8);
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&display, e))
}

/// Writes labels as an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let display = path.display().to_string();
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for (i, &l) in labels.iter().enumerate() {
        if l > u8::MAX as usize {
            return Err(Error::Format(format!("label {l} at index {i} exceeds u8")));
        }
        bytes.push(l as u8);
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&display, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
        let dim: usize = train.sample_shape().iter().product();
        let mut centroids = vec![vec![0.0; dim]; train.class_count];
        let mut counts = vec![0usize; train.class_count];
        for (i, &label) in train.labels.iter().enumerate() {
            counts[label] += 1;
            for d in 0..dim {
                centroids[label][d] += train.inputs.data()[i * dim + d];
            }
        }
        for (c, count) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= (*count).max(1) as f64;
            }
        }
        let mut correct = 0;
        for (i, &label) in test.labels.iter().enumerate() {
            let x = &test.inputs.data()[i * dim..(i + 1) * dim];
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = x.iter().zip(centroid).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        correct as f64 / test.len() as f64
    }

    #[test]
    fn separable_blobs_are_linearly_classifiable() {
        let data = synth_dataset(3, &[8], 300, 5, 10.0).unwrap();
        let (train, _, test) = data.split_three(196, 4, 100).unwrap();
        assert!(nearest_centroid_accuracy(&train, &test) >= 0.99);
    }

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = synth_dataset(4, &[6], 64, 9, 3.0).unwrap();
        let b = synth_dataset(4, &[6], 64, 9, 3.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_separation_is_chance_level() {
        let data = synth_dataset(4, &[8], 800, 13, 0.0).unwrap();
        let (train, _, test) = data.split_three(592, 8, 200).unwrap();
        let acc = nearest_centroid_accuracy(&train, &test);
        assert!(acc < 0.45, "accuracy {acc} suspiciously high for unseparated blobs");
    }

    #[test]
    fn digits_generate_and_quantize() {
        let data = synth_digits(50, 3, 0.08).unwrap();
        assert_eq!(data.inputs.shape(), &[50, 1, 12, 12]);
        assert_eq!(data.class_count, 10);
        for &v in data.inputs.data() {
            assert!((v * 255.0 - (v * 255.0).round()).abs() < 1e-9);
        }
        assert_eq!(data, synth_digits(50, 3, 0.08).unwrap());
    }

    #[test]
    fn idx_fixture_loads_with_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx3-ubyte");
        let lbl_path = dir.path().join("labels.idx1-ubyte");

        // hand-authored 4-image 2x2 fixture
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 255, 128, 7, 1, 2, 3, 4, 9, 8, 7, 6, 255, 0, 255, 0]);
        std::fs::write(&img_path, &bytes).unwrap();

        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&4u32.to_be_bytes());
        lbl.extend_from_slice(&[0, 1, 2, 1]);
        std::fs::write(&lbl_path, &lbl).unwrap();

        let data = load_idx(&img_path, &lbl_path, Split::Test).unwrap();
        assert_eq!(data.len(), 4);
        assert_eq!(data.inputs.shape(), &[4, 1, 2, 2]);
        assert_eq!(data.inputs.data()[0], 0.0);
        assert_eq!(data.inputs.data()[1], 1.0);
        assert_eq!(data.inputs.data()[2], 128.0 / 255.0);
        assert_eq!(data.labels, vec![0, 1, 2, 1]);
    }

    #[test]
    fn idx_empty_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.idx");
        std::fs::write(&path, []).unwrap();
        match read_idx_images(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("byte 0"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        std::fs::write(&path, 0xdead_beefu32.to_be_bytes()).unwrap();
        assert!(matches!(read_idx_images(&path), Err(Error::Format(_))));
    }

    #[test]
    fn idx_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("digits.idx3-ubyte");
        let lbl_path = dir.path().join("digits.idx1-ubyte");
        let data = synth_digits(30, 8, 0.1).unwrap();
        write_idx_images(&img_path, &data.inputs).unwrap();
        write_idx_labels(&lbl_path, &data.labels).unwrap();
        let loaded = load_idx(&img_path, &lbl_path, Split::Train).unwrap();
        assert_eq!(loaded.inputs, data.inputs);
        assert_eq!(loaded.labels, data.labels);

        // write the loaded copy again: identical bytes
        let img2 = dir.path().join("digits2.idx3-ubyte");
        write_idx_images(&img2, &loaded.inputs).unwrap();
        assert_eq!(
            std::fs::read(&img_path).unwrap(),
            std::fs::read(&img2).unwrap()
        );
    }
}
