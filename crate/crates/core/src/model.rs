//! Configurable convolutional classifier.
//!
//! The architecture is an ordered stack of conv (optionally batch-normed,
//! ReLU-activated), max-pool and dense layers over square single- or
//! three-channel inputs. The flattened activations of the *last* pooling
//! layer are the feature map fed to the domain loss; the dense stack on top
//! of it produces two-class logits (fake = 0, genuine = 1).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::ops::BnBatchStats;
use crate::rng::Rng;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Batch-norm running-statistics momentum: `running = m*running + (1-m)*batch`.
pub const BN_MOMENTUM: f64 = 0.9;
/// Batch-norm variance damping.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize, batchnorm: bool },
    Pool { window: usize, stride: usize },
    Dense { width: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureConfig {
    /// Small configuration that trains in seconds on a CPU: two conv+pool
    /// stages of 8 and 16 channels over 16x16 inputs, dense 32 -> 2.
    pub fn desk() -> Self {
        Self::desk_sized(16)
    }

    /// Desk-style stack over a custom input side (8 gives the smallest
    /// gradient-checkable model).
    pub fn desk_sized(input_side: usize) -> Self {
        ArchitectureConfig {
            input_side,
            input_channels: 1,
            class_count: 2,
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1, batchnorm: true },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 1, padding: 1, batchnorm: true },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Dense { width: 32 },
                LayerSpec::Dense { width: 2 },
            ],
        }
    }

    /// Tiny stack for finite-difference tests: 4 and 8 channels over 8x8
    /// inputs, dense 16 -> 2.
    pub fn desk_mini() -> Self {
        ArchitectureConfig {
            input_side: 8,
            input_channels: 1,
            class_count: 2,
            layers: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1, batchnorm: true },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1, batchnorm: true },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Dense { width: 16 },
                LayerSpec::Dense { width: 2 },
            ],
        }
    }

    /// Five conv+pool stages and three dense layers over 224x224 RGB input.
    /// Kept for architectural fidelity at full scale; the acceptance suite
    /// never trains it.
    pub fn alexnet_shape() -> Self {
        let conv = |out_channels| LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            batchnorm: true,
        };
        ArchitectureConfig {
            input_side: 224,
            input_channels: 3,
            class_count: 2,
            layers: vec![
                conv(64),
                LayerSpec::Pool { window: 2, stride: 2 },
                conv(128),
                LayerSpec::Pool { window: 2, stride: 2 },
                conv(256),
                LayerSpec::Pool { window: 2, stride: 2 },
                conv(256),
                LayerSpec::Pool { window: 2, stride: 2 },
                conv(192),
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Dense { width: 512 },
                LayerSpec::Dense { width: 128 },
                LayerSpec::Dense { width: 2 },
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "desk-mini" => Ok(Self::desk_mini()),
            "alexnet-shape" => Ok(Self::alexnet_shape()),
            other => Err(CoreError::invalid(
                "architecture",
                format!("unknown preset '{other}' (expected desk, desk-mini or alexnet-shape)"),
            )),
        }
    }

    /// Shapes flowing through the stack: (channels, side) before each layer
    /// plus the final feature width at each dense boundary.
    fn trace(&self) -> Result<ShapeTrace> {
        if self.input_side == 0 || self.input_channels == 0 {
            return Err(CoreError::invalid("architecture", "empty input geometry"));
        }
        if self.class_count < 2 {
            return Err(CoreError::invalid("architecture", "need at least two classes"));
        }
        let mut channels = self.input_channels;
        let mut side = self.input_side;
        let mut seen_dense = false;
        let mut last_pool: Option<(usize, usize, usize)> = None; // layer idx, channels, side
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { out_channels, kernel, stride, padding, .. } => {
                    if seen_dense {
                        return Err(CoreError::invalid(
                            "architecture",
                            format!("layer {idx}: conv after dense"),
                        ));
                    }
                    if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                        return Err(CoreError::invalid(
                            "architecture",
                            format!("layer {idx}: zero conv geometry"),
                        ));
                    }
                    if side + 2 * padding < *kernel {
                        return Err(CoreError::invalid(
                            "architecture",
                            format!("layer {idx}: kernel {kernel} exceeds side {side}"),
                        ));
                    }
                    per_layer.push((channels, side));
                    side = (side + 2 * padding - kernel) / stride + 1;
                    channels = *out_channels;
                }
                LayerSpec::Pool { window, stride } => {
                    if seen_dense {
                        return Err(CoreError::invalid(
                            "architecture",
                            format!("layer {idx}: pool after dense"),
                        ));
                    }
                    if *window == 0 || *stride == 0 || *window > side {
                        return Err(CoreError::invalid(
                            "architecture",
                            format!("layer {idx}: pool window {window} does not fit side {side}"),
                        ));
                    }
                    per_layer.push((channels, side));
                    side = (side - window) / stride + 1;
                    last_pool = Some((idx, channels, side));
                }
                LayerSpec::Dense { width } => {
                    if *width == 0 {
                        return Err(CoreError::invalid(
                            "architecture",
                            format!("layer {idx}: zero-width dense"),
                        ));
                    }
                    per_layer.push((channels, side));
                    seen_dense = true;
                }
            }
            if side == 0 {
                return Err(CoreError::invalid(
                    "architecture",
                    format!("layer {idx}: spatial extent collapsed to zero"),
                ));
            }
        }
        let Some((pool_idx, pool_channels, pool_side)) = last_pool else {
            return Err(CoreError::invalid("architecture", "at least one pooling layer required"));
        };
        // The dense stack consumes the last-pool features directly, so no
        // convolution may follow the last pooling layer.
        if self.layers.iter().skip(pool_idx + 1).any(|l| matches!(l, LayerSpec::Conv { .. })) {
            return Err(CoreError::invalid(
                "architecture",
                "convolution after the last pooling layer",
            ));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { width }) if *width == self.class_count => {}
            _ => {
                return Err(CoreError::invalid(
                    "architecture",
                    "last layer must be a dense head with class_count outputs",
                ));
            }
        }
        Ok(ShapeTrace { per_layer, pool_idx, feature_width: pool_channels * pool_side * pool_side })
    }

    pub fn validate(&self) -> Result<()> {
        self.trace().map(|_| ())
    }

    /// Width of the feature vector taken at the last pooling layer.
    pub fn feature_width(&self) -> Result<usize> {
        Ok(self.trace()?.feature_width)
    }

    /// Number of learnable scalars (conv weights, batch-norm scales and
    /// shifts, dense weights and biases).
    pub fn param_count(&self) -> Result<usize> {
        let trace = self.trace()?;
        let mut count = 0;
        let mut dense_in = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let (channels, side) = trace.per_layer[idx];
            match layer {
                LayerSpec::Conv { out_channels, kernel, batchnorm, .. } => {
                    count += out_channels * channels * kernel * kernel;
                    if *batchnorm {
                        count += 2 * out_channels;
                    }
                }
                LayerSpec::Pool { .. } => {}
                LayerSpec::Dense { width } => {
                    let input = dense_in.unwrap_or(channels * side * side);
                    count += input * width + width;
                    dense_in = Some(*width);
                }
            }
        }
        Ok(count)
    }
}

struct ShapeTrace {
    /// (channels, side) immediately before each layer.
    per_layer: Vec<(usize, usize)>,
    pool_idx: usize,
    feature_width: usize,
}

/// Which tensor of a layer a parameter is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamRole {
    ConvWeight,
    BnGamma,
    BnBeta,
    DenseWeight,
    DenseBias,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::ConvWeight => "weight",
            ParamRole::BnGamma => "gamma",
            ParamRole::BnBeta => "beta",
            ParamRole::DenseWeight => "weight",
            ParamRole::DenseBias => "bias",
        }
    }
}

/// Identifies one learnable tensor: layer index plus role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamKey {
    pub layer: usize,
    pub role: ParamRole,
}

/// Running batch-norm statistics of one normalized conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// All state of a model: learnable tensors plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchitectureConfig,
    tensors: BTreeMap<ParamKey, Tensor>,
    running: BTreeMap<usize, RunningNorm>,
}

/// Forward/eval mode; training-mode batch norm uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Deterministic fan-in-scaled uniform initialization; batch-norm scales
/// start at one, every shift and bias at zero, running stats at (0, 1).
pub fn build_model(arch: &ArchitectureConfig, seed: u64) -> Result<ModelParams> {
    let trace = arch.trace()?;
    let mut rng = Rng::stream(seed, "model-init");
    let mut tensors = BTreeMap::new();
    let mut running = BTreeMap::new();
    let mut dense_in: Option<usize> = None;
    for (idx, layer) in arch.layers.iter().enumerate() {
        let (channels, side) = trace.per_layer[idx];
        match layer {
            LayerSpec::Conv { out_channels, kernel, batchnorm, .. } => {
                let fan_in = (channels * kernel * kernel) as f64;
                let limit = libm::sqrt(3.0 / fan_in);
                let shape = vec![*out_channels, channels, *kernel, *kernel];
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
                tensors.insert(
                    ParamKey { layer: idx, role: ParamRole::ConvWeight },
                    Tensor::new(shape, data)?,
                );
                if *batchnorm {
                    tensors.insert(
                        ParamKey { layer: idx, role: ParamRole::BnGamma },
                        Tensor::filled(vec![*out_channels], 1.0),
                    );
                    tensors.insert(
                        ParamKey { layer: idx, role: ParamRole::BnBeta },
                        Tensor::zeros(vec![*out_channels]),
                    );
                    running.insert(
                        idx,
                        RunningNorm { mean: vec![0.0; *out_channels], var: vec![1.0; *out_channels] },
                    );
                }
            }
            LayerSpec::Pool { .. } => {}
            LayerSpec::Dense { width } => {
                let input = dense_in.unwrap_or(channels * side * side);
                let limit = libm::sqrt(3.0 / input as f64);
                let data: Vec<f64> = (0..input * width).map(|_| rng.uniform(-limit, limit)).collect();
                tensors.insert(
                    ParamKey { layer: idx, role: ParamRole::DenseWeight },
                    Tensor::new(vec![input, *width], data)?,
                );
                tensors.insert(
                    ParamKey { layer: idx, role: ParamRole::DenseBias },
                    Tensor::zeros(vec![*width]),
                );
                dense_in = Some(*width);
            }
        }
    }
    Ok(ModelParams { arch: arch.clone(), tensors, running })
}

impl ModelParams {
    /// Rebuild from externally stored parts (checkpoint loading), verifying
    /// that every tensor matches the architecture.
    pub fn from_parts(
        arch: ArchitectureConfig,
        tensors: BTreeMap<ParamKey, Tensor>,
        running: BTreeMap<usize, RunningNorm>,
    ) -> Result<Self> {
        let reference = build_model(&arch, 0)?;
        if reference.tensors.len() != tensors.len() {
            return Err(CoreError::invalid(
                "model_params",
                format!("expected {} tensors, got {}", reference.tensors.len(), tensors.len()),
            ));
        }
        for (key, t) in &reference.tensors {
            let Some(got) = tensors.get(key) else {
                return Err(CoreError::invalid(
                    "model_params",
                    format!("missing tensor for layer {} {}", key.layer, key.role.name()),
                ));
            };
            if got.shape() != t.shape() {
                return Err(CoreError::shape(
                    "model_params",
                    format!(
                        "layer {} {}: expected {:?}, got {:?}",
                        key.layer,
                        key.role.name(),
                        t.shape(),
                        got.shape()
                    ),
                ));
            }
            got.check_finite("model_params")?;
        }
        for (idx, r) in &reference.running {
            let Some(got) = running.get(idx) else {
                return Err(CoreError::invalid(
                    "model_params",
                    format!("missing running stats for layer {idx}"),
                ));
            };
            if got.mean.len() != r.mean.len() || got.var.len() != r.var.len() {
                return Err(CoreError::shape("model_params", "running stats length mismatch"));
            }
        }
        if running.len() != reference.running.len() {
            return Err(CoreError::invalid("model_params", "unexpected running stats"));
        }
        Ok(ModelParams { arch, tensors, running })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn tensors(&self) -> &BTreeMap<ParamKey, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<ParamKey, Tensor> {
        &mut self.tensors
    }

    pub fn running(&self) -> &BTreeMap<usize, RunningNorm> {
        &self.running
    }

    /// Register every learnable tensor on a tape.
    pub fn bind(&self, tape: &mut Tape) -> Result<ModelBinding> {
        let mut ids = BTreeMap::new();
        for (key, tensor) in &self.tensors {
            ids.insert(*key, tape.leaf(tensor.clone())?);
        }
        Ok(ModelBinding { arch: self.arch.clone(), ids, running: self.running.clone() })
    }

    /// Fold training-batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, stats: &[(usize, BnBatchStats)]) {
        for (layer, s) in stats {
            if let Some(r) = self.running.get_mut(layer) {
                for c in 0..r.mean.len() {
                    r.mean[c] = BN_MOMENTUM * r.mean[c] + (1.0 - BN_MOMENTUM) * s.mean[c];
                    r.var[c] = BN_MOMENTUM * r.var[c] + (1.0 - BN_MOMENTUM) * s.var[c];
                }
            }
        }
    }
}

/// A model's parameters registered on one tape.
pub struct ModelBinding {
    arch: ArchitectureConfig,
    ids: BTreeMap<ParamKey, ValueId>,
    running: BTreeMap<usize, RunningNorm>,
}

/// Result of one forward pass on a tape.
pub struct ForwardPass {
    /// Flattened activations of the last pooling layer (N x f), the feature
    /// map used by domain losses.
    pub features: ValueId,
    /// Class logits (N x class_count).
    pub logits: ValueId,
    /// Raw output of the last pooling layer before flattening; kept so the
    /// feature placement can be asserted.
    pub last_pool: ValueId,
    /// Batch statistics of every train-mode batch norm, in layer order.
    pub bn_stats: Vec<(usize, BnBatchStats)>,
}

impl ModelBinding {
    pub fn param_ids(&self) -> &BTreeMap<ParamKey, ValueId> {
        &self.ids
    }

    fn id(&self, layer: usize, role: ParamRole) -> Result<ValueId> {
        self.ids
            .get(&ParamKey { layer, role })
            .copied()
            .ok_or_else(|| {
                CoreError::invalid("forward", format!("missing parameter {layer}/{}", role.name()))
            })
    }

    /// Run the full stack. The input must be N x C x S x S matching the
    /// architecture geometry.
    pub fn forward(&self, tape: &mut Tape, input: ValueId, mode: Mode) -> Result<ForwardPass> {
        let (_, c, h, w) = tape.value(input).dims4("forward")?;
        if c != self.arch.input_channels || h != self.arch.input_side || w != self.arch.input_side {
            return Err(CoreError::shape(
                "forward",
                format!(
                    "input {c}x{h}x{w} does not match architecture {}x{}x{}",
                    self.arch.input_channels, self.arch.input_side, self.arch.input_side
                ),
            ));
        }
        let trace = self.arch.trace()?;
        let mut current = input;
        let mut last_pool: Option<ValueId> = None;
        let mut flat: Option<ValueId> = None;
        let mut bn_stats = Vec::new();
        let dense_total = self
            .arch
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count();
        let mut dense_seen = 0;
        for (idx, layer) in self.arch.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { stride, padding, batchnorm, .. } => {
                    let w_id = self.id(idx, ParamRole::ConvWeight)?;
                    current = tape.conv2d(current, w_id, *stride, *padding)?;
                    if *batchnorm {
                        let gamma = self.id(idx, ParamRole::BnGamma)?;
                        let beta = self.id(idx, ParamRole::BnBeta)?;
                        current = match mode {
                            Mode::Train => {
                                let (out, stats) =
                                    tape.batchnorm_train(current, gamma, beta, BN_EPS)?;
                                bn_stats.push((idx, stats));
                                out
                            }
                            Mode::Eval => {
                                let r = self.running.get(&idx).ok_or_else(|| {
                                    CoreError::invalid(
                                        "forward",
                                        format!("missing running stats for layer {idx}"),
                                    )
                                })?;
                                tape.batchnorm_eval(current, gamma, beta, &r.mean, &r.var, BN_EPS)?
                            }
                        };
                    }
                    current = tape.relu(current)?;
                }
                LayerSpec::Pool { window, stride } => {
                    current = tape.maxpool2d(current, *window, *stride)?;
                    if idx == trace.pool_idx {
                        last_pool = Some(current);
                        flat = Some(tape.flatten(current)?);
                        current = flat.unwrap();
                    }
                }
                LayerSpec::Dense { .. } => {
                    let w_id = self.id(idx, ParamRole::DenseWeight)?;
                    let b_id = self.id(idx, ParamRole::DenseBias)?;
                    current = tape.dense(current, w_id, b_id)?;
                    dense_seen += 1;
                    if dense_seen < dense_total {
                        current = tape.relu(current)?;
                    }
                }
            }
        }
        let last_pool = last_pool.ok_or_else(|| {
            CoreError::invalid("forward", "architecture has no pooling layer")
        })?;
        let features = flat.expect("flatten recorded with last pool");
        Ok(ForwardPass { features, logits: current, last_pool, bn_stats })
    }
}

/// Features of a batch (flattened last-pool activations), without touching
/// running statistics.
pub fn forward_features(params: &ModelParams, batch: &Tensor, mode: Mode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape)?;
    let input = tape.leaf(batch.clone())?;
    let pass = binding.forward(&mut tape, input, mode)?;
    Ok(tape.value(pass.features).clone())
}

/// Class logits of a batch, without touching running statistics.
pub fn forward_logits(params: &ModelParams, batch: &Tensor, mode: Mode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape)?;
    let input = tape.leaf(batch.clone())?;
    let pass = binding.forward(&mut tape, input, mode)?;
    Ok(tape.value(pass.logits).clone())
}

/// Per-row genuine probability (softmax component of the genuine class).
pub fn genuine_probabilities(params: &ModelParams, batch: &Tensor, mode: Mode) -> Result<Vec<f64>> {
    let logits = forward_logits(params, batch, mode)?;
    let (n, c) = logits.dims2("genuine_probabilities")?;
    let probs = crate::ops::softmax_rows(logits.data(), n, c);
    let genuine = crate::metrics::Label::Genuine.class_index();
    Ok((0..n).map(|r| probs[r * c + genuine]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_validates_and_counts_params() {
        let arch = ArchitectureConfig::desk();
        arch.validate().unwrap();
        // conv1 8*1*3*3 + bn 16, conv2 16*8*3*3 + bn 32,
        // dense 256*32+32, head 32*2+2
        let expected = 72 + 16 + 1152 + 32 + (256 * 32 + 32) + (32 * 2 + 2);
        assert_eq!(arch.param_count().unwrap(), expected);
        assert_eq!(arch.feature_width().unwrap(), 16 * 4 * 4);
    }

    #[test]
    fn alexnet_shape_has_five_stages_and_three_dense() {
        let arch = ArchitectureConfig::alexnet_shape();
        arch.validate().unwrap();
        let convs = arch
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count();
        let pools = arch
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Pool { .. }))
            .count();
        let dense = arch
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count();
        assert_eq!((convs, pools, dense), (5, 5, 3));
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        // no pooling layer
        let no_pool = ArchitectureConfig {
            input_side: 8,
            input_channels: 1,
            class_count: 2,
            layers: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1, batchnorm: false },
                LayerSpec::Dense { width: 2 },
            ],
        };
        assert!(no_pool.validate().is_err());
        // spatial collapse
        let collapse = ArchitectureConfig {
            input_side: 4,
            input_channels: 1,
            class_count: 2,
            layers: vec![
                LayerSpec::Pool { window: 4, stride: 4 },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Dense { width: 2 },
            ],
        };
        assert!(collapse.validate().is_err());
        // head width mismatch
        let bad_head = ArchitectureConfig {
            input_side: 8,
            input_channels: 1,
            class_count: 2,
            layers: vec![LayerSpec::Pool { window: 2, stride: 2 }, LayerSpec::Dense { width: 3 }],
        };
        assert!(bad_head.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let arch = ArchitectureConfig::desk_mini();
        let a = build_model(&arch, 99).unwrap();
        let b = build_model(&arch, 99).unwrap();
        assert_eq!(a, b);
        let c = build_model(&arch, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn feature_width_matches_forward_output() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 5).unwrap();
        let batch = Tensor::filled(vec![3, 1, 8, 8], 0.25);
        let feats = forward_features(&params, &batch, Mode::Eval).unwrap();
        assert_eq!(feats.shape(), &[3, arch.feature_width().unwrap()]);
    }

    #[test]
    fn eval_mode_is_per_sample_and_batch_size_invariant() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 7).unwrap();
        let mut rng = Rng::seed(42);
        let one = Tensor::from_fn(vec![1, 1, 8, 8], |_| rng.uniform(0.0, 1.0));
        let mut both_data = one.data().to_vec();
        let mut rng2 = Rng::seed(43);
        let other = Tensor::from_fn(vec![1, 1, 8, 8], |_| rng2.uniform(0.0, 1.0));
        both_data.extend_from_slice(other.data());
        let pair = Tensor::new(vec![2, 1, 8, 8], both_data).unwrap();

        let solo = forward_logits(&params, &one, Mode::Eval).unwrap();
        let batched = forward_logits(&params, &pair, Mode::Eval).unwrap();
        assert_eq!(solo.data()[0], batched.data()[0]);
        assert_eq!(solo.data()[1], batched.data()[1]);
    }

    #[test]
    fn duplicate_rows_give_duplicate_features_in_eval() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 8).unwrap();
        let mut rng = Rng::seed(4);
        let img = Tensor::from_fn(vec![1, 1, 8, 8], |_| rng.uniform(0.0, 1.0));
        let mut data = img.data().to_vec();
        data.extend_from_slice(img.data());
        let batch = Tensor::new(vec![2, 1, 8, 8], data).unwrap();
        let feats = forward_features(&params, &batch, Mode::Eval).unwrap();
        let f = feats.shape()[1];
        assert_eq!(&feats.data()[..f], &feats.data()[f..]);
    }

    #[test]
    fn logits_finite_and_softmax_normalized() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 11).unwrap();
        let mut rng = Rng::seed(12);
        let batch = Tensor::from_fn(vec![4, 1, 8, 8], |_| rng.uniform(0.0, 1.0));
        let logits = forward_logits(&params, &batch, Mode::Train).unwrap();
        assert!(logits.data().iter().all(|v| v.is_finite()));
        let probs = crate::ops::softmax_rows(logits.data(), 4, 2);
        for r in 0..4 {
            let s: f64 = probs[r * 2..(r + 1) * 2].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_head_on_zero_input_gives_equal_logits() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 3).unwrap();
        let zeros = Tensor::zeros(vec![2, 1, 8, 8]);
        let logits = forward_logits(&params, &zeros, Mode::Eval).unwrap();
        assert_eq!(logits.data()[0], logits.data()[1]);
        assert_eq!(logits.data()[2], logits.data()[3]);
    }

    #[test]
    fn features_are_exactly_the_last_pool_activations() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 21).unwrap();
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape).unwrap();
        let mut rng = Rng::seed(2);
        let batch = Tensor::from_fn(vec![2, 1, 8, 8], |_| rng.uniform(0.0, 1.0));
        let input = tape.leaf(batch).unwrap();
        let pass = binding.forward(&mut tape, input, Mode::Train).unwrap();
        let pool_value = tape.value(pass.last_pool);
        let feat_value = tape.value(pass.features);
        assert_eq!(pool_value.data(), feat_value.data());
        let (n, c, h, w) = pool_value.dims4("test").unwrap();
        assert_eq!(feat_value.shape(), &[n, c * h * w]);
    }

    #[test]
    fn checkpoint_parts_round_trip() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 31).unwrap();
        let rebuilt = ModelParams::from_parts(
            params.arch().clone(),
            params.tensors().clone(),
            params.running().clone(),
        )
        .unwrap();
        assert_eq!(&rebuilt, &params);
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let arch = ArchitectureConfig::desk_mini();
        let params = build_model(&arch, 31).unwrap();
        let mut tensors = params.tensors().clone();
        let key = ParamKey { layer: 0, role: ParamRole::ConvWeight };
        tensors.insert(key, Tensor::zeros(vec![4, 1, 5, 5]));
        assert!(ModelParams::from_parts(arch, tensors, params.running().clone()).is_err());
    }
}
