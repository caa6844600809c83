//! The desk-scale reference benchmarks: a procedural digit set driving the
//! three-conv-block CNN, and Gaussian blobs driving the two-hidden-layer
//! MLP. The CLI's built-in datasets and the acceptance suite both build on
//! these, so the numbers here define the reproducible experiment.

use crate::ann::{cnn_arch, mlp_arch, train_sgd, TrainOutcome};
use crate::data::{synth_dataset, synth_digits, Dataset};
use crate::error::Result;

pub const DIGITS_TOTAL: usize = 2400;
pub const DIGITS_SPLIT: (usize, usize, usize) = (1500, 400, 500);
pub const DIGITS_NOISE: f64 = 0.12;
pub const CNN_EPOCHS: usize = 30;
pub const CNN_LR: f64 = 0.1;

pub const BLOBS_TOTAL: usize = 1792;
pub const BLOBS_SPLIT: (usize, usize, usize) = (1024, 256, 512);
pub const BLOBS_CLASSES: usize = 4;
pub const BLOBS_DIM: usize = 16;
pub const BLOBS_SEPARATION: f64 = 5.0;
pub const MLP_HIDDEN: [usize; 2] = [32, 16];
pub const MLP_EPOCHS: usize = 15;
pub const MLP_LR: f64 = 0.05;

/// Train/calibration/test splits of one benchmark dataset.
#[derive(Debug, Clone)]
pub struct DeskBench {
    pub train: Dataset,
    pub calib: Dataset,
    pub test: Dataset,
}

pub fn digits_bench(seed: u64) -> Result<DeskBench> {
    let all = synth_digits(DIGITS_TOTAL, seed, DIGITS_NOISE)?;
    let (train, calib, test) =
        all.split_three(DIGITS_SPLIT.0, DIGITS_SPLIT.1, DIGITS_SPLIT.2)?;
    Ok(DeskBench { train, calib, test })
}

pub fn blobs_bench(seed: u64) -> Result<DeskBench> {
    let all = synth_dataset(
        BLOBS_CLASSES,
        &[BLOBS_DIM],
        BLOBS_TOTAL,
        seed,
        BLOBS_SEPARATION,
    )?;
    let (train, calib, test) = all.split_three(BLOBS_SPLIT.0, BLOBS_SPLIT.1, BLOBS_SPLIT.2)?;
    Ok(DeskBench { train, calib, test })
}

pub fn train_digits_cnn(bench: &DeskBench, seed: u64) -> Result<TrainOutcome> {
    train_sgd(&cnn_arch(10, seed), &bench.train, CNN_EPOCHS, CNN_LR, seed)
}

pub fn train_blobs_mlp(bench: &DeskBench, seed: u64) -> Result<TrainOutcome> {
    train_sgd(
        &mlp_arch(BLOBS_DIM, &MLP_HIDDEN, BLOBS_CLASSES, seed),
        &bench.train,
        MLP_EPOCHS,
        MLP_LR,
        seed,
    )
}
