//! Integrate-and-fire simulation of converted networks.
//!
//! Spiking layers share the source model's segment structure. Each
//! timestep a layer applies its linear transform to the incoming
//! θ-weighted spikes, adds the result (plus any per-channel temporal bias)
//! to its membrane potential, fires wherever the potential reaches the
//! threshold (equality fires), and soft-resets by subtracting the
//! threshold. The analog input is fed unchanged at every timestep; the
//! readout layer averages its accumulated pre-activation over time.

use crate::ann::{AnnModel, Segments};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// How membrane potentials start a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PotentialPolicy {
    #[default]
    Zero,
    HalfThreshold,
}

/// Per-layer, per-timestep, per-channel additive biases.
///
/// `layers[l][t-1]` is the bias vector of spiking layer `l` at timestep
/// `t`; timesteps beyond `horizon` are implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    horizon: usize,
    layers: Vec<Vec<Tensor>>,
}

impl BiasTable {
    /// All-zero table over the given per-layer channel counts.
    pub fn zeros(channels: &[usize], horizon: usize) -> BiasTable {
        BiasTable {
            horizon,
            layers: channels
                .iter()
                .map(|&c| (0..horizon).map(|_| Tensor::zeros(vec![c])).collect())
                .collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.first().map_or(0, |t| t.len()))
            .collect()
    }

    /// Bias for `(layer, t)` with 1-based `t`; `None` beyond the horizon.
    pub fn get(&self, layer: usize, t: usize) -> Option<&Tensor> {
        if t == 0 || t > self.horizon {
            return None;
        }
        self.layers.get(layer).and_then(|l| l.get(t - 1))
    }

    /// Grows the horizon with zero biases, keeping existing entries.
    pub fn grow_horizon(&mut self, horizon: usize, channels: &[usize]) {
        if self.layers.is_empty() {
            *self = BiasTable::zeros(channels, horizon);
            return;
        }
        if horizon <= self.horizon {
            return;
        }
        for (layer, &c) in self.layers.iter_mut().zip(channels) {
            while layer.len() < horizon {
                layer.push(Tensor::zeros(vec![c]));
            }
        }
        self.horizon = horizon;
    }

    /// Adds `alpha * delta` to the `(layer, t)` entry.
    pub fn add_scaled(&mut self, layer: usize, t: usize, delta: &Tensor, alpha: f64) -> Result<()> {
        let entry = self
            .layers
            .get_mut(layer)
            .and_then(|l| l.get_mut(t - 1))
            .ok_or_else(|| {
                Error::Argument(format!("bias table has no entry for layer {layer}, t={t}"))
            })?;
        if entry.shape() != delta.shape() {
            return Err(Error::Dimension(format!(
                "bias update shape {:?} vs entry {:?}",
                delta.shape(),
                entry.shape()
            )));
        }
        for (e, d) in entry.data_mut().iter_mut().zip(delta.data()) {
            *e += alpha * d;
        }
        Ok(())
    }

    /// Overwrites the `(layer, t)` entry.
    pub fn set(&mut self, layer: usize, t: usize, value: Tensor) -> Result<()> {
        let entry = self
            .layers
            .get_mut(layer)
            .and_then(|l| l.get_mut(t - 1))
            .ok_or_else(|| {
                Error::Argument(format!("bias table has no entry for layer {layer}, t={t}"))
            })?;
        if entry.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "bias value shape {:?} vs entry {:?}",
                value.shape(),
                entry.shape()
            )));
        }
        *entry = value;
        Ok(())
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

/// A converted spiking network: the (possibly rescaled) source layers,
/// per-layer per-channel thresholds, the initial-potential policy and the
/// calibrated bias table.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    ann: AnnModel,
    thresholds: Vec<Tensor>,
    policy: PotentialPolicy,
    bias: BiasTable,
}

impl SnnModel {
    pub fn new(
        ann: AnnModel,
        thresholds: Vec<Tensor>,
        policy: PotentialPolicy,
        bias: BiasTable,
    ) -> Result<SnnModel> {
        let channels = ann.segment_channels()?;
        if thresholds.len() != channels.len() {
            return Err(Error::Dimension(format!(
                "{} thresholds for {} spiking layers",
                thresholds.len(),
                channels.len()
            )));
        }
        for (l, (theta, &c)) in thresholds.iter().zip(&channels).enumerate() {
            if theta.shape() != [c] {
                return Err(Error::Dimension(format!(
                    "layer {l} threshold shape {:?} vs {c} channels",
                    theta.shape()
                )));
            }
            if theta.data().iter().any(|&v| v <= 0.0) {
                return Err(Error::Argument(format!(
                    "layer {l} has a non-positive threshold"
                )));
            }
        }
        bias_matches(&bias, &channels)?;
        Ok(SnnModel {
            ann,
            thresholds,
            policy,
            bias,
        })
    }

    /// The scale-matched ANN view sharing this model's layer indexing
    /// (used as the calibration target).
    pub fn ann(&self) -> &AnnModel {
        &self.ann
    }

    pub fn thresholds(&self) -> &[Tensor] {
        &self.thresholds
    }

    pub fn policy(&self) -> PotentialPolicy {
        self.policy
    }

    pub fn bias(&self) -> &BiasTable {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut BiasTable {
        &mut self.bias
    }

    pub fn set_bias(&mut self, bias: BiasTable) -> Result<()> {
        let channels = self.ann.segment_channels()?;
        bias_matches(&bias, &channels)?;
        self.bias = bias;
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.ann.spiking_layer_count()
    }

    /// Fresh per-layer membrane potentials for a batch of `batch` samples.
    pub fn init_state(&self, batch: usize) -> Result<SnnState> {
        let shapes = self.ann.segment_output_shapes()?;
        let mut potentials = Vec::with_capacity(shapes.len());
        for (shape, theta) in shapes.iter().zip(&self.thresholds) {
            let mut full = vec![batch];
            full.extend_from_slice(shape);
            let mut v = Tensor::zeros(full);
            if self.policy == PotentialPolicy::HalfThreshold {
                let half = theta.scale(0.5);
                v.add_channel_bias(&half)?;
            }
            potentials.push(v);
        }
        Ok(SnnState { potentials, t: 0 })
    }

    /// One spiking layer, one timestep: transform the incoming spikes,
    /// integrate (plus bias), fire at threshold, soft-reset.
    pub fn spike_layer_forward(
        &self,
        state: &mut SnnState,
        layer: usize,
        input_spikes: &Tensor,
        bias: Option<&Tensor>,
    ) -> Result<Tensor> {
        let segments = self.ann.segments()?;
        Ok(self
            .step_layer(&segments, state, layer, input_spikes, bias, false)?
            .0)
    }

    fn step_layer(
        &self,
        segments: &Segments,
        state: &mut SnnState,
        layer: usize,
        input_spikes: &Tensor,
        bias: Option<&Tensor>,
        capture_v_pre: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let x = self.ann.segment_transform(segments, layer, input_spikes)?;
        let v = state.potentials.get_mut(layer).ok_or_else(|| {
            Error::Argument(format!("state has no potentials for layer {layer}"))
        })?;
        v.add_assign(&x)?;
        if let Some(bias) = bias {
            v.add_channel_bias(bias)?;
        }
        let v_pre = capture_v_pre.then(|| v.clone());
        let spikes = fire_and_reset(v, &self.thresholds[layer]);
        Ok((spikes, v_pre))
    }

    /// Runs the network on `input` for `T` timesteps with constant
    /// encoding. Returns the time-averaged readout after each step and,
    /// when `record` is set, the full spike/potential trace.
    pub fn simulate(
        &self,
        input: &Tensor,
        t_max: usize,
        record: bool,
    ) -> Result<(Vec<Tensor>, Option<SpikeTrace>)> {
        if t_max < 1 {
            return Err(Error::Argument("simulation needs T >= 1".into()));
        }
        let segments = self.ann.segments()?;
        let layers = segments.spiking.len();
        let batch = input.shape()[0];
        let mut state = self.init_state(batch)?;

        let mut trace = record.then(|| SpikeTrace {
            input: input.clone(),
            initial_potentials: state.potentials.clone(),
            spikes: vec![Vec::with_capacity(t_max); layers],
            pre_firing_potentials: vec![Vec::with_capacity(t_max); layers],
            residual_potentials: Vec::new(),
        });

        let mut readouts = Vec::with_capacity(t_max);
        let mut acc: Option<Tensor> = None;
        for t in 1..=t_max {
            state.t = t;
            let mut carrier = input.clone();
            for layer in 0..layers {
                let bias = self.bias.get(layer, t);
                let (spikes, v_pre) =
                    self.step_layer(&segments, &mut state, layer, &carrier, bias, record)?;
                if let Some(trace) = trace.as_mut() {
                    trace.pre_firing_potentials[layer]
                        .push(v_pre.expect("captured when recording"));
                    trace.spikes[layer].push(spikes.clone());
                }
                carrier = spikes;
            }
            let out = self.ann.readout_forward(&segments, &carrier)?;
            let acc = match acc.as_mut() {
                Some(acc) => {
                    acc.add_assign(&out)?;
                    acc
                }
                None => acc.insert(out),
            };
            readouts.push(acc.scale(1.0 / t as f64));
        }
        if let Some(trace) = trace.as_mut() {
            trace.residual_potentials = state.potentials.clone();
        }
        Ok((readouts, trace))
    }
}

fn bias_matches(bias: &BiasTable, channels: &[usize]) -> Result<()> {
    if bias.layer_count() == 0 {
        return Ok(());
    }
    if bias.layer_count() != channels.len()
        || (bias.horizon() > 0 && bias.channel_counts() != channels)
    {
        return Err(Error::Dimension(
            "bias table does not match the model's layer channels".into(),
        ));
    }
    Ok(())
}

/// Fires wherever `v >= θ` (channel-broadcast), subtracting θ from the
/// potential; returns the θ-weighted spike tensor.
fn fire_and_reset(v: &mut Tensor, theta: &Tensor) -> Tensor {
    let channels = theta.len();
    let batch = v.shape()[0];
    let inner: usize = v.shape()[2..].iter().product();
    let mut spikes = vec![0.0; v.len()];
    let data = v.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let th = theta.data()[c];
            let base = (b * channels + c) * inner;
            for i in 0..inner {
                if data[base + i] >= th {
                    spikes[base + i] = th;
                    data[base + i] -= th;
                }
            }
        }
    }
    Tensor::from_parts(v.shape().to_vec(), spikes)
}

/// Membrane potentials of an in-flight simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnState {
    pub potentials: Vec<Tensor>,
    pub t: usize,
}

/// Everything a recorded simulation saw: θ-weighted spikes and pre-firing
/// potentials per (layer, timestep), plus initial and residual potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrace {
    pub input: Tensor,
    pub initial_potentials: Vec<Tensor>,
    pub spikes: Vec<Vec<Tensor>>,
    pub pre_firing_potentials: Vec<Vec<Tensor>>,
    pub residual_potentials: Vec<Tensor>,
}

impl SpikeTrace {
    pub fn timesteps(&self) -> usize {
        self.spikes.first().map_or(0, |l| l.len())
    }

    /// Time-averaged θ-weighted spike output of a layer.
    pub fn mean_spikes(&self, layer: usize) -> Result<Tensor> {
        let steps = &self.spikes[layer];
        if steps.is_empty() {
            return Err(Error::Argument("trace has no recorded steps".into()));
        }
        let mut acc = steps[0].clone();
        for s in &steps[1..] {
            acc.add_assign(s)?;
        }
        Ok(acc.scale(1.0 / steps.len() as f64))
    }
}

/// Checks the per-layer spike-rate identity on a recorded trace: the mean
/// spike output must equal the layer transform of the mean input plus the
/// mean temporal bias plus `(v[0] - v[T]) / T`. Returns the maximum
/// absolute violation per layer.
pub fn rate_identity_check(trace: &SpikeTrace, model: &SnnModel, t_max: usize) -> Result<Vec<f64>> {
    if trace.timesteps() < t_max {
        return Err(Error::Argument(format!(
            "trace has {} steps, identity asked for {t_max}",
            trace.timesteps()
        )));
    }
    let segments = model.ann().segments()?;
    let inv_t = 1.0 / t_max as f64;
    let mut violations = Vec::with_capacity(trace.spikes.len());
    for layer in 0..trace.spikes.len() {
        let mean_out = mean_over_t(&trace.spikes[layer], t_max)?;
        let mean_in = if layer == 0 {
            trace.input.clone()
        } else {
            mean_over_t(&trace.spikes[layer - 1], t_max)?
        };
        let mut rhs = model.ann().segment_transform(&segments, layer, &mean_in)?;
        let mut bias_sum = Tensor::zeros(vec![rhs.shape()[1]]);
        for t in 1..=t_max {
            if let Some(b) = model.bias().get(layer, t) {
                bias_sum.add_assign(b)?;
            }
        }
        rhs.add_channel_bias(&bias_sum.scale(inv_t))?;
        rhs.add_assign(&trace.initial_potentials[layer].scale(inv_t))?;
        rhs.add_assign(&trace.residual_potentials[layer].scale(-inv_t))?;
        violations.push(mean_out.sub(&rhs)?.max_abs());
    }
    Ok(violations)
}

fn mean_over_t(steps: &[Tensor], t_max: usize) -> Result<Tensor> {
    let mut acc = steps[0].clone();
    for s in &steps[1..t_max] {
        acc.add_assign(s)?;
    }
    Ok(acc.scale(1.0 / t_max as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{ActivationSpec, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Single IF neuron wrapped as a one-segment model: weight 1, relu,
    /// identity readout.
    fn single_neuron(theta: f64) -> SnnModel {
        let ann = AnnModel::new(
            vec![1],
            vec![
                LayerSpec::linear(Tensor::eye(1), None),
                LayerSpec::activation(ActivationSpec::Relu),
                LayerSpec::linear(Tensor::eye(1), None),
            ],
        )
        .unwrap();
        SnnModel::new(
            ann,
            vec![Tensor::full(vec![1], theta)],
            PotentialPolicy::Zero,
            BiasTable::zeros(&[1], 0),
        )
        .unwrap()
    }

    fn scalar_batch(v: f64) -> Tensor {
        Tensor::new(vec![1, 1], vec![v]).unwrap()
    }

    #[test]
    fn step_fires_and_soft_resets() {
        let model = single_neuron(1.0);
        let mut state = model.init_state(1).unwrap();
        state.potentials[0].data_mut()[0] = 0.7;
        let spikes = model
            .spike_layer_forward(&mut state, 0, &scalar_batch(0.5), None)
            .unwrap();
        assert_eq!(spikes.data(), &[1.0]);
        assert!((state.potentials[0].data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_everything_stays_silent() {
        let model = single_neuron(1.0);
        let mut state = model.init_state(1).unwrap();
        let zero_bias = Tensor::zeros(vec![1]);
        let spikes = model
            .spike_layer_forward(&mut state, 0, &scalar_batch(0.0), Some(&zero_bias))
            .unwrap();
        assert_eq!(spikes.data(), &[0.0]);
        assert_eq!(state.potentials[0].data(), &[0.0]);
    }

    #[test]
    fn equality_fires() {
        let model = single_neuron(1.0);
        let mut state = model.init_state(1).unwrap();
        state.potentials[0].data_mut()[0] = 0.9;
        let bias = Tensor::new(vec![1], vec![0.1]).unwrap();
        let spikes = model
            .spike_layer_forward(&mut state, 0, &scalar_batch(0.0), Some(&bias))
            .unwrap();
        assert_eq!(spikes.data(), &[1.0]);
        assert_eq!(state.potentials[0].data(), &[0.0]);
    }

    #[test]
    fn bias_length_mismatch_errors() {
        let model = single_neuron(1.0);
        let mut state = model.init_state(1).unwrap();
        let bias = Tensor::zeros(vec![2]);
        assert!(model
            .spike_layer_forward(&mut state, 0, &scalar_batch(0.0), Some(&bias))
            .is_err());
    }

    #[test]
    fn constant_drive_hand_trace() {
        let model = single_neuron(1.0);
        let (readouts, trace) = model.simulate(&scalar_batch(0.4), 5, true).unwrap();
        let trace = trace.unwrap();
        let fired: Vec<usize> = (0..5)
            .filter(|&t| trace.spikes[0][t].data()[0] > 0.0)
            .map(|t| t + 1)
            .collect();
        assert_eq!(fired, vec![3, 5]);
        assert!((readouts[4].data()[0] - 0.4).abs() < 1e-12);
        assert!(trace.residual_potentials[0].data()[0].abs() < 1e-12);
    }

    #[test]
    fn zero_bias_table_equals_absent_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ann = crate::ann::mlp_arch(4, &[6], 3, 17);
        let thetas: Vec<Tensor> = ann
            .segment_channels()
            .unwrap()
            .iter()
            .map(|&c| {
                Tensor::from_parts(vec![c], (0..c).map(|_| rng.gen_range(0.5..1.5)).collect())
            })
            .collect();
        let channels = ann.segment_channels().unwrap();
        let without = SnnModel::new(
            ann.clone(),
            thetas.clone(),
            PotentialPolicy::Zero,
            BiasTable::zeros(&channels, 0),
        )
        .unwrap();
        let with = SnnModel::new(
            ann,
            thetas,
            PotentialPolicy::Zero,
            BiasTable::zeros(&channels, 8),
        )
        .unwrap();
        let input = Tensor::new(vec![2, 4], (0..8).map(|i| 0.1 * i as f64).collect()).unwrap();
        let (r1, t1) = without.simulate(&input, 8, true).unwrap();
        let (r2, t2) = with.simulate(&input, 8, true).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(t1.unwrap().spikes, t2.unwrap().spikes);
    }

    #[test]
    fn subthreshold_single_step_is_silent() {
        let model = single_neuron(1.0);
        let (_, trace) = model.simulate(&scalar_batch(0.3), 1, true).unwrap();
        assert_eq!(trace.unwrap().spikes[0][0].data(), &[0.0]);
    }

    #[test]
    fn simulate_rejects_t_zero() {
        let model = single_neuron(1.0);
        assert!(matches!(
            model.simulate(&scalar_batch(0.3), 0, false),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn spikes_are_zero_or_theta_and_reset_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = 0.85;
        let model = single_neuron(theta);
        let mut state = model.init_state(1).unwrap();
        let mut count = 0;
        let t_max = 12;
        for _ in 0..t_max {
            let x = rng.gen_range(-0.5..0.9);
            let v_before = state.potentials[0].data()[0];
            let spikes = model
                .spike_layer_forward(&mut state, 0, &scalar_batch(x), None)
                .unwrap();
            let s = spikes.data()[0];
            assert!(s == 0.0 || s == theta);
            if s == theta {
                count += 1;
                // relu clips the transform, not the potential: x >= 0 here
                let v_temp = v_before + x.max(0.0);
                assert_eq!(state.potentials[0].data()[0], v_temp - theta);
            }
        }
        assert!(count <= t_max);
    }

    #[test]
    fn rate_identity_holds_without_and_with_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let ann = crate::ann::mlp_arch(5, &[7, 6], 3, 23);
        let channels = ann.segment_channels().unwrap();
        let thetas: Vec<Tensor> = channels
            .iter()
            .map(|&c| Tensor::from_parts(vec![c], (0..c).map(|_| rng.gen_range(0.4..1.2)).collect()))
            .collect();
        let t_max = 13;
        let mut bias = BiasTable::zeros(&channels, t_max);
        for (l, &c) in channels.iter().enumerate() {
            for t in 1..=t_max {
                let delta =
                    Tensor::from_parts(vec![c], (0..c).map(|_| rng.gen_range(-0.2..0.2)).collect());
                bias.set(l, t, delta).unwrap();
            }
        }
        let input =
            Tensor::new(vec![3, 5], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();

        for (policy, biased) in [
            (PotentialPolicy::Zero, false),
            (PotentialPolicy::Zero, true),
            (PotentialPolicy::HalfThreshold, true),
        ] {
            let table = if biased {
                bias.clone()
            } else {
                BiasTable::zeros(&channels, 0)
            };
            let model = SnnModel::new(ann.clone(), thetas.clone(), policy, table).unwrap();
            let (_, trace) = model.simulate(&input, t_max, true).unwrap();
            let violations = rate_identity_check(&trace.unwrap(), &model, t_max).unwrap();
            for v in violations {
                assert!(v <= 1e-9, "identity violated by {v}");
            }
        }
    }

    #[test]
    fn constant_bias_identity_algebra() {
        // single neuron, constant bias b at every step: the identity picks
        // up exactly b * (biased steps) / T
        let t_max = 6;
        let mut bias = BiasTable::zeros(&[1], t_max);
        for t in 1..=t_max {
            bias.set(0, t, Tensor::new(vec![1], vec![0.15]).unwrap()).unwrap();
        }
        let mut model = single_neuron(1.0);
        model.set_bias(bias).unwrap();
        let (_, trace) = model.simulate(&scalar_batch(0.3), t_max, true).unwrap();
        let trace = trace.unwrap();
        let mean_out = trace.mean_spikes(0).unwrap().data()[0];
        let expected = 0.3 + 0.15 - trace.residual_potentials[0].data()[0] / t_max as f64;
        assert!((mean_out - expected).abs() <= 1e-9);
        let violations = rate_identity_check(&trace, &model, t_max).unwrap();
        assert!(violations[0] <= 1e-9);
    }

    #[test]
    fn simulation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ann = crate::ann::mlp_arch(4, &[5], 2, 31);
        let channels = ann.segment_channels().unwrap();
        let model = SnnModel::new(
            ann,
            channels.iter().map(|&c| Tensor::full(vec![c], 0.9)).collect(),
            PotentialPolicy::Zero,
            BiasTable::zeros(&channels, 0),
        )
        .unwrap();
        let input = Tensor::new(vec![2, 4], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (r1, t1) = model.simulate(&input, 9, true).unwrap();
        let (r2, t2) = model.simulate(&input, 9, true).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(t1, t2);
    }

    /// Cumulative spike counts never drop when a single bias entry grows:
    /// brute force over short random drive sequences.
    #[test]
    fn monotone_response_in_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let theta = 1.0;
        let model = single_neuron(theta);
        for _ in 0..300 {
            let t_max = rng.gen_range(1..=8usize);
            let drive: Vec<f64> = (0..t_max).map(|_| rng.gen_range(-theta..theta)).collect();
            let biases: Vec<f64> = (0..t_max).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let tau = rng.gen_range(0..t_max);
            let eps = rng.gen_range(0.01..0.6);

            let run = |biases: &[f64]| -> Vec<usize> {
                let mut state = model.init_state(1).unwrap();
                let mut cum = 0;
                let mut counts = Vec::with_capacity(t_max);
                for t in 0..t_max {
                    let b = Tensor::new(vec![1], vec![biases[t]]).unwrap();
                    let s = model
                        .spike_layer_forward(&mut state, 0, &scalar_batch(drive[t]), Some(&b))
                        .unwrap();
                    if s.data()[0] > 0.0 {
                        cum += 1;
                    }
                    counts.push(cum);
                }
                counts
            };

            let base = run(&biases);
            let mut bumped = biases.clone();
            bumped[tau] += eps;
            let more = run(&bumped);
            for t in tau..t_max {
                assert!(
                    more[t] >= base[t],
                    "cumulative count dropped at t={t} (tau={tau}, eps={eps})"
                );
            }
        }
    }
}
