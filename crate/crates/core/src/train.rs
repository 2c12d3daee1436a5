//! Joint classification + domain objectives and the Adam training loop.
//!
//! Three objectives share one loop:
//!
//! - `stdcnn`: classification loss only, over source halves.
//! - `unsupervised`: classification on the source half plus `lambda` times
//!   the biased squared MMD between source and target features (target
//!   labels unused).
//! - `semisupervised`: classification on the source half plus `lambda`
//!   times one MMD term matching genuine features across domains and one
//!   per spoof modality (target labels are used only to form the
//!   partition; they never enter the classification term).
//!
//! With `lambda == 0` both domain objectives skip the target half entirely,
//! so their training trajectory is bit-identical to `stdcnn` under the same
//! seed. Domain terms always use the biased estimator: per-modality cells
//! in a small batch can hold a single sample, where the unbiased form is
//! undefined.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::adam::{AdamParams, AdamState};
use crate::error::{CoreError, Result};
use crate::kernel::{KernelSpec, MmdEstimator};
use crate::model::{build_model, ArchitectureConfig, Mode, ModelBinding, ModelParams, ParamKey};
use crate::ops::BnBatchStats;
use crate::sampler::{
    DomainBatch, HalfBatch, ModalityPartition, SamplePool, SamplerMode, TwoHalfSampler,
};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    StdCnn,
    Unsupervised,
    Semisupervised,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::StdCnn => "stdcnn",
            Objective::Unsupervised => "unsupervised",
            Objective::Semisupervised => "semisupervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stdcnn" => Ok(Objective::StdCnn),
            "unsupervised" => Ok(Objective::Unsupervised),
            "semisupervised" => Ok(Objective::Semisupervised),
            other => Err(CoreError::invalid(
                "objective",
                format!("unknown objective '{other}' (expected stdcnn, unsupervised or semisupervised)"),
            )),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub kernel: KernelSpec,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        TrainConfig {
            objective,
            lambda: 0.5,
            batch_size: 32,
            epochs: 45,
            learning_rate: 1e-3,
            seed: 0,
            kernel: KernelSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(CoreError::invalid(
                "train_config",
                format!("batch size must be even and at least 4, got {}", self.batch_size),
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CoreError::invalid(
                "train_config",
                format!("lambda must be a finite non-negative real, got {}", self.lambda),
            ));
        }
        if self.epochs == 0 {
            return Err(CoreError::invalid("train_config", "need at least one epoch"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("train_config", "learning rate must be positive"));
        }
        Ok(())
    }
}

/// Scalar components of one training-step loss.
pub struct LossBreakdown {
    pub root: ValueId,
    pub class_loss: f64,
    pub mmd_terms: Vec<f64>,
    pub total: f64,
    pub bn_stats: Vec<(usize, BnBatchStats)>,
}

fn class_labels(half: &HalfBatch) -> Vec<usize> {
    half.labels.iter().map(|l| l.class_index()).collect()
}

/// Classification-only loss over one half batch.
pub fn stdcnn_step_loss(
    tape: &mut Tape,
    binding: &ModelBinding,
    half: &HalfBatch,
) -> Result<LossBreakdown> {
    let input = tape.leaf(half.pixels.clone())?;
    let pass = binding.forward(tape, input, Mode::Train)?;
    let root = tape.softmax_cross_entropy(pass.logits, &class_labels(half))?;
    let total = tape.value(root).item()?;
    Ok(LossBreakdown {
        root,
        class_loss: total,
        mmd_terms: Vec::new(),
        total,
        bn_stats: pass.bn_stats,
    })
}

fn concat_halves(batch: &DomainBatch) -> Result<Tensor> {
    let mut data = batch.source.pixels.data().to_vec();
    data.extend_from_slice(batch.target.pixels.data());
    let mut shape = batch.source.pixels.shape().to_vec();
    shape[0] += batch.target.pixels.shape()[0];
    Tensor::new(shape, data)
}

/// Classification on the source half plus `lambda` times the whole-half
/// domain term. With `lambda == 0` the target half is skipped entirely.
pub fn unsupervised_step_loss(
    tape: &mut Tape,
    binding: &ModelBinding,
    batch: &DomainBatch,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<LossBreakdown> {
    if lambda == 0.0 {
        let mut parts = stdcnn_step_loss(tape, binding, &batch.source)?;
        parts.mmd_terms = alloc::vec![0.0];
        return Ok(parts);
    }
    let h = batch.half_size();
    let input = tape.leaf(concat_halves(batch)?)?;
    let pass = binding.forward(tape, input, Mode::Train)?;

    let source_rows: Vec<usize> = (0..h).collect();
    let target_rows: Vec<usize> = (h..2 * h).collect();
    let source_logits = tape.gather_rows(pass.logits, &source_rows)?;
    let ce = tape.softmax_cross_entropy(source_logits, &class_labels(&batch.source))?;

    let feats_src = tape.gather_rows(pass.features, &source_rows)?;
    let feats_tgt = tape.gather_rows(pass.features, &target_rows)?;
    let mmd = tape.mmd2(feats_src, feats_tgt, spec, MmdEstimator::Biased)?;
    let scaled = tape.scale(mmd, lambda)?;
    let root = tape.add(ce, scaled)?;

    Ok(LossBreakdown {
        root,
        class_loss: tape.value(ce).item()?,
        mmd_terms: alloc::vec![tape.value(mmd).item()?],
        total: tape.value(root).item()?,
        bn_stats: pass.bn_stats,
    })
}

/// Classification on the source half plus `lambda` times the genuine-to-
/// genuine term and one term per spoof modality. The partition must match
/// the batch. A cell empty on both sides contributes no term; a cell
/// populated on only one side is a protocol error.
pub fn semisupervised_step_loss(
    tape: &mut Tape,
    binding: &ModelBinding,
    batch: &DomainBatch,
    partition: &ModalityPartition,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<LossBreakdown> {
    if partition != &ModalityPartition::from_batch(batch) {
        return Err(CoreError::protocol(
            "partition does not describe this batch".to_string(),
        ));
    }
    let cells = 1 + batch.spoof_names.len();
    if lambda == 0.0 {
        let mut parts = stdcnn_step_loss(tape, binding, &batch.source)?;
        parts.mmd_terms = alloc::vec![0.0; cells];
        return Ok(parts);
    }
    partition.check_cells(&batch.spoof_names)?;

    let h = batch.half_size();
    let input = tape.leaf(concat_halves(batch)?)?;
    let pass = binding.forward(tape, input, Mode::Train)?;

    let source_rows: Vec<usize> = (0..h).collect();
    let source_logits = tape.gather_rows(pass.logits, &source_rows)?;
    let ce = tape.softmax_cross_entropy(source_logits, &class_labels(&batch.source))?;

    let offset = |rows: &[usize]| -> Vec<usize> { rows.iter().map(|r| r + h).collect() };
    let mut mmd_terms = alloc::vec![0.0; cells];
    let mut term_ids = Vec::with_capacity(cells);
    for cell in 0..cells {
        if !partition.cell_matched(cell) {
            continue;
        }
        let (src_rows, tgt_rows) = if cell == 0 {
            (&partition.source_real, &partition.target_real)
        } else {
            (&partition.source_spoof[cell - 1], &partition.target_spoof[cell - 1])
        };
        let src = tape.gather_rows(pass.features, src_rows)?;
        let tgt = tape.gather_rows(pass.features, &offset(tgt_rows))?;
        let term = tape.mmd2(src, tgt, spec, MmdEstimator::Biased)?;
        mmd_terms[cell] = tape.value(term).item()?;
        term_ids.push(term);
    }

    let root = if term_ids.is_empty() {
        ce
    } else {
        let mut domain_sum = term_ids[0];
        for &t in &term_ids[1..] {
            domain_sum = tape.add(domain_sum, t)?;
        }
        let scaled = tape.scale(domain_sum, lambda)?;
        tape.add(ce, scaled)?
    };

    Ok(LossBreakdown {
        root,
        class_loss: tape.value(ce).item()?,
        mmd_terms,
        total: tape.value(root).item()?,
        bn_stats: pass.bn_stats,
    })
}

/// Whole-batch unsupervised objective as a standalone scalar (fresh tape,
/// no parameter updates).
pub fn loss_unsupervised(
    params: &ModelParams,
    batch: &DomainBatch,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape)?;
    let parts = unsupervised_step_loss(&mut tape, &binding, batch, spec, lambda)?;
    Ok(tape.value(parts.root).clone())
}

/// Whole-batch semi-supervised objective as a standalone scalar.
pub fn loss_semisupervised(
    params: &ModelParams,
    batch: &DomainBatch,
    partition: &ModalityPartition,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape)?;
    let parts = semisupervised_step_loss(&mut tape, &binding, batch, partition, spec, lambda)?;
    Ok(tape.value(parts.root).clone())
}

/// One row of the training trace: per-batch loss components.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub epoch: usize,
    pub batch: usize,
    pub class_loss: f64,
    pub mmd_terms: Vec<f64>,
    pub total: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    /// Names of the mmd term columns in the trace (empty for stdcnn).
    pub term_names: Vec<String>,
}

/// Names of the domain-term columns for an objective over a modality set.
pub fn term_names(objective: Objective, spoof_names: &[String]) -> Vec<String> {
    match objective {
        Objective::StdCnn => Vec::new(),
        Objective::Unsupervised => alloc::vec!["mmd_all".to_string()],
        Objective::Semisupervised => {
            let mut names = Vec::with_capacity(1 + spoof_names.len());
            names.push("mmd_real".to_string());
            for n in spoof_names {
                names.push(format!("mmd_{n}"));
            }
            names
        }
    }
}

/// Train a model from scratch. Deterministic for a fixed config: the
/// parameter initialization, source stream and target stream are three
/// independent substreams of `config.seed`.
pub fn train(
    arch: &ArchitectureConfig,
    source: &SamplePool,
    target: Option<&SamplePool>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_hook(arch, source, target, config, &mut |_, _| {})
}

/// As [`train`], invoking `hook(epoch, params)` after each epoch (used for
/// periodic checkpointing).
pub fn train_with_hook(
    arch: &ArchitectureConfig,
    source: &SamplePool,
    target: Option<&SamplePool>,
    config: &TrainConfig,
    hook: &mut dyn FnMut(usize, &ModelParams),
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    let mode = match config.objective {
        Objective::StdCnn => SamplerMode::SourceOnly,
        Objective::Unsupervised => SamplerMode::UniformTarget,
        Objective::Semisupervised => SamplerMode::StratifiedTarget,
    };
    if mode != SamplerMode::SourceOnly && target.is_none() {
        return Err(CoreError::invalid(
            "train",
            format!("objective {} requires a target pool", config.objective.name()),
        ));
    }
    let sampler_target = if mode == SamplerMode::SourceOnly { None } else { target };
    let mut sampler =
        TwoHalfSampler::new(source, sampler_target, config.batch_size, mode, config.seed)?;

    let mut params = build_model(arch, config.seed)?;
    let mut adam = AdamState::new(AdamParams {
        learning_rate: config.learning_rate,
        ..AdamParams::default()
    });
    let spoof_names: Vec<String> = match sampler_target {
        Some(t) => t.spoof_modalities().to_vec(),
        None => source.spoof_modalities().to_vec(),
    };

    let mut trace = Vec::with_capacity(config.epochs * sampler.batches_per_epoch());
    for epoch in 0..config.epochs {
        for batch_idx in 0..sampler.batches_per_epoch() {
            let mut tape = Tape::new();
            let binding = params.bind(&mut tape).map_err(|e| at_step(e, epoch, batch_idx))?;
            let parts = (|| -> Result<LossBreakdown> {
                match config.objective {
                    Objective::StdCnn => {
                        let half = sampler.next_source_half()?;
                        stdcnn_step_loss(&mut tape, &binding, &half)
                    }
                    Objective::Unsupervised => {
                        let batch = sampler.next_batch()?;
                        unsupervised_step_loss(&mut tape, &binding, &batch, &config.kernel, config.lambda)
                    }
                    Objective::Semisupervised => {
                        let batch = sampler.next_batch()?;
                        let partition = ModalityPartition::from_batch(&batch);
                        semisupervised_step_loss(
                            &mut tape,
                            &binding,
                            &batch,
                            &partition,
                            &config.kernel,
                            config.lambda,
                        )
                    }
                }
            })()
            .map_err(|e| at_step(e, epoch, batch_idx))?;
            let ids = binding.param_ids().clone();

            let wanted: Vec<ValueId> = ids.values().copied().collect();
            let grads_by_id =
                tape.backward(parts.root, &wanted).map_err(|e| at_step(e, epoch, batch_idx))?;
            let mut grads: BTreeMap<ParamKey, Tensor> = BTreeMap::new();
            for (key, id) in &ids {
                grads.insert(*key, grads_by_id[id].clone());
            }
            adam.step(params.tensors_mut(), &grads).map_err(|e| at_step(e, epoch, batch_idx))?;
            params.apply_bn_updates(&parts.bn_stats);

            trace.push(TraceRow {
                epoch,
                batch: batch_idx,
                class_loss: parts.class_loss,
                mmd_terms: parts.mmd_terms,
                total: parts.total,
            });
        }
        hook(epoch, &params);
    }

    Ok(TrainOutcome {
        params,
        trace,
        term_names: term_names(config.objective, &spoof_names),
    })
}

fn at_step(err: CoreError, epoch: usize, batch: usize) -> CoreError {
    CoreError::protocol(format!("training aborted at epoch {epoch}, batch {batch}: {err}"))
}

/// Fraction of pool samples whose argmax class matches the label, scored
/// in eval mode in fixed-size chunks.
pub fn classification_accuracy(params: &ModelParams, pool: &SamplePool) -> Result<f64> {
    let mut correct = 0usize;
    let samples = pool.samples();
    for chunk in samples.chunks(64) {
        let tensors: Vec<&Tensor> = chunk.iter().map(|s| &s.pixels).collect();
        let batch = Tensor::stack(&tensors)?;
        let logits = crate::model::forward_logits(params, &batch, Mode::Eval)?;
        let (_n, c) = logits.dims2("accuracy")?;
        for (r, sample) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            if best == sample.label.class_index() {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Label;
    use crate::rng::Rng;
    use crate::sampler::{Modality, PoolSample};
    use alloc::vec;

    /// Tiny 4x4 single-channel pool: genuine images bright in the top-left
    /// quadrant, fakes in the bottom-right, linearly separable.
    fn toy_pool(count: usize, seed: u64) -> SamplePool {
        let mut rng = Rng::seed(seed);
        let mut samples = Vec::new();
        for i in 0..count {
            let genuine = i % 2 == 0;
            let pixels = Tensor::from_fn(vec![1, 4, 4], |idx| {
                let (y, x) = (idx / 4, idx % 4);
                let hot = if genuine { y < 2 && x < 2 } else { y >= 2 && x >= 2 };
                let base: f64 = if hot { 0.9 } else { 0.1 };
                (base + rng.uniform(-0.05, 0.05)).clamp(0.0, 1.0)
            });
            samples.push(PoolSample {
                pixels,
                label: if genuine { Label::Genuine } else { Label::Fake },
                modality: if genuine { Modality::Real } else { Modality::Spoof(0) },
                subject: (i / 4) as u32,
            });
        }
        SamplePool::new(samples, vec!["print".to_string()]).unwrap()
    }

    fn toy_arch() -> ArchitectureConfig {
        use crate::model::LayerSpec;
        ArchitectureConfig {
            input_side: 4,
            input_channels: 1,
            class_count: 2,
            layers: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1, batchnorm: true },
                LayerSpec::Pool { window: 2, stride: 2 },
                LayerSpec::Dense { width: 8 },
                LayerSpec::Dense { width: 2 },
            ],
        }
    }

    fn quick_config(objective: Objective, epochs: usize) -> TrainConfig {
        TrainConfig {
            objective,
            lambda: 0.5,
            batch_size: 8,
            epochs,
            learning_rate: 1e-2,
            seed: 7,
            kernel: KernelSpec::default(),
        }
    }

    #[test]
    fn stdcnn_solves_separable_toy_set() {
        let pool = toy_pool(32, 3);
        let arch = toy_arch();
        let config = quick_config(Objective::StdCnn, 50);
        let outcome = train(&arch, &pool, None, &config).unwrap();
        let acc = classification_accuracy(&outcome.params, &pool).unwrap();
        assert!(acc == 1.0, "train accuracy {acc}");
        // loss decreased
        let first: f64 = outcome.trace.iter().take(4).map(|r| r.total).sum::<f64>() / 4.0;
        let last: f64 =
            outcome.trace.iter().rev().take(4).map(|r| r.total).sum::<f64>() / 4.0;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn same_seed_reproduces_parameters() {
        let pool = toy_pool(16, 5);
        let arch = toy_arch();
        let config = quick_config(Objective::StdCnn, 3);
        let a = train(&arch, &pool, None, &config).unwrap();
        let b = train(&arch, &pool, None, &config).unwrap();
        for (key, t) in a.params.tensors() {
            let u = &b.params.tensors()[key];
            assert_eq!(t.data(), u.data(), "mismatch in {key:?}");
        }
    }

    #[test]
    fn lambda_zero_is_bit_identical_to_stdcnn() {
        let source = toy_pool(16, 5);
        let target = toy_pool(8, 11);
        let arch = toy_arch();
        let mut unsup = quick_config(Objective::Unsupervised, 4);
        unsup.lambda = 0.0;
        let std_config = TrainConfig { objective: Objective::StdCnn, ..unsup.clone() };

        let a = train(&arch, &source, Some(&target), &unsup).unwrap();
        let b = train(&arch, &source, None, &std_config).unwrap();
        for (key, t) in a.params.tensors() {
            let u = &b.params.tensors()[key];
            let bits_a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = u.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "bit mismatch in {key:?}");
        }
        for (layer, r) in a.params.running() {
            let s = &b.params.running()[layer];
            assert_eq!(r, s);
        }
    }

    #[test]
    fn unsupervised_loss_composes_from_parts() {
        let source = toy_pool(16, 5);
        let target = toy_pool(8, 11);
        let arch = toy_arch();
        let params = build_model(&arch, 9).unwrap();
        let spec = KernelSpec::default();
        let batch = crate::sampler::two_half_batches(
            &source,
            &target,
            8,
            SamplerMode::UniformTarget,
            13,
            1,
        )
        .unwrap()
        .remove(0);

        let lambda = 0.7;
        let loss = loss_unsupervised(&params, &batch, &spec, lambda).unwrap().item().unwrap();

        // hand-assembled: one forward over the concatenated batch, then
        // module-level classification and MMD calls
        let full = concat_halves(&batch).unwrap();
        let feats = crate::model::forward_features(&params, &full, Mode::Train).unwrap();
        let logits = crate::model::forward_logits(&params, &full, Mode::Train).unwrap();
        let h = batch.half_size();
        let src_logits_data: Vec<f64> = (0..h).flat_map(|r| logits.row(r).to_vec()).collect();
        let ce = crate::ops::softmax_ce_forward(
            &src_logits_data,
            &class_labels(&batch.source),
            h,
            2,
        )
        .unwrap();
        let f = feats.shape()[1];
        let src = crate::kernel::SampleSet::new(
            Tensor::new(vec![h, f], feats.data()[..h * f].to_vec()).unwrap(),
        )
        .unwrap();
        let tgt = crate::kernel::SampleSet::new(
            Tensor::new(vec![h, f], feats.data()[h * f..].to_vec()).unwrap(),
        )
        .unwrap();
        let mmd = crate::kernel::mmd2_biased(&src, &tgt, &spec).unwrap();
        let assembled = ce + lambda * mmd;
        assert!(
            (loss - assembled).abs() < 1e-12,
            "composed {loss} vs assembled {assembled}"
        );
    }

    #[test]
    fn unsupervised_identical_halves_reduce_to_classification() {
        let source = toy_pool(16, 5);
        let arch = toy_arch();
        let params = build_model(&arch, 10).unwrap();
        let spec = KernelSpec::default();
        // build a batch whose target half equals its source half
        let mut sampler =
            TwoHalfSampler::new(&source, Some(&source), 8, SamplerMode::UniformTarget, 3).unwrap();
        let b = sampler.next_batch().unwrap();
        let batch = DomainBatch::new(b.source.clone(), b.source.clone(), b.spoof_names.clone())
            .unwrap();
        let with_domain =
            loss_unsupervised(&params, &batch, &spec, 0.9).unwrap().item().unwrap();
        let class_only = loss_unsupervised(&params, &batch, &spec, 0.0).unwrap().item().unwrap();
        // identical halves: biased MMD is exactly zero, but the batch-norm
        // statistics still differ between the concatenated and the source-
        // only forward, so compare against the concatenated classification
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape).unwrap();
        let input = tape.leaf(concat_halves(&batch).unwrap()).unwrap();
        let pass = binding.forward(&mut tape, input, Mode::Train).unwrap();
        let rows: Vec<usize> = (0..batch.half_size()).collect();
        let sl = tape.gather_rows(pass.logits, &rows).unwrap();
        let ce_id = tape.softmax_cross_entropy(sl, &class_labels(&batch.source)).unwrap();
        let ce = tape.value(ce_id).item().unwrap();
        assert!((with_domain - ce).abs() < 1e-12, "{with_domain} vs {ce}");
        let _ = class_only;
    }

    #[test]
    fn semisupervised_loss_composes_and_scales_linearly() {
        let source = toy_pool(16, 5);
        let target = toy_pool(8, 11);
        let arch = toy_arch();
        let params = build_model(&arch, 12).unwrap();
        let spec = KernelSpec::default();
        let batch = crate::sampler::two_half_batches(
            &source,
            &target,
            8,
            SamplerMode::StratifiedTarget,
            13,
            1,
        )
        .unwrap()
        .remove(0);
        let partition = ModalityPartition::from_batch(&batch);

        let lambda = 0.5;
        let loss =
            loss_semisupervised(&params, &batch, &partition, &spec, lambda).unwrap().item().unwrap();
        let loss2x = loss_semisupervised(&params, &batch, &partition, &spec, 2.0 * lambda)
            .unwrap()
            .item()
            .unwrap();

        // hand-assembled from module-level calls
        let full = concat_halves(&batch).unwrap();
        let feats = crate::model::forward_features(&params, &full, Mode::Train).unwrap();
        let logits = crate::model::forward_logits(&params, &full, Mode::Train).unwrap();
        let h = batch.half_size();
        let f = feats.shape()[1];
        let src_logits_data: Vec<f64> = (0..h).flat_map(|r| logits.row(r).to_vec()).collect();
        let ce =
            crate::ops::softmax_ce_forward(&src_logits_data, &class_labels(&batch.source), h, 2)
                .unwrap();
        let rows_set = |rows: &[usize], offset: usize| {
            let mut data = Vec::new();
            for &r in rows {
                data.extend_from_slice(feats.row(r + offset));
            }
            crate::kernel::SampleSet::new(Tensor::new(vec![rows.len(), f], data).unwrap()).unwrap()
        };
        let mut domain = crate::kernel::mmd2_biased(
            &rows_set(&partition.source_real, 0),
            &rows_set(&partition.target_real, h),
            &spec,
        )
        .unwrap();
        for i in 0..batch.spoof_names.len() {
            domain += crate::kernel::mmd2_biased(
                &rows_set(&partition.source_spoof[i], 0),
                &rows_set(&partition.target_spoof[i], h),
                &spec,
            )
            .unwrap();
        }
        let assembled = ce + lambda * domain;
        assert!((loss - assembled).abs() < 1e-12, "{loss} vs {assembled}");

        // doubling lambda doubles (loss - class term)
        let delta = loss - ce;
        let delta2 = loss2x - ce;
        assert!((delta2 - 2.0 * delta).abs() < 1e-12);
    }

    #[test]
    fn semisupervised_all_genuine_identical_halves_is_pure_classification() {
        // a declared modality that is absent on BOTH sides contributes no
        // term; with identical halves the genuine term is exactly zero, so
        // the loss equals the classification term of the joint forward
        let mut rng = Rng::seed(61);
        let samples: Vec<PoolSample> = (0..8)
            .map(|i| PoolSample {
                pixels: Tensor::from_fn(vec![1, 4, 4], |_| rng.uniform(0.0, 1.0)),
                label: Label::Genuine,
                modality: Modality::Real,
                subject: i as u32,
            })
            .collect();
        let pool = SamplePool::new(samples, vec!["print".to_string()]).unwrap();
        let arch = toy_arch();
        let params = build_model(&arch, 44).unwrap();
        let spec = KernelSpec::default();
        let mut sampler =
            TwoHalfSampler::new(&pool, Some(&pool), 8, SamplerMode::UniformTarget, 5).unwrap();
        let b = sampler.next_batch().unwrap();
        let batch =
            DomainBatch::new(b.source.clone(), b.source.clone(), b.spoof_names.clone()).unwrap();
        let partition = ModalityPartition::from_batch(&batch);
        let loss =
            loss_semisupervised(&params, &batch, &partition, &spec, 0.9).unwrap().item().unwrap();

        let mut tape = Tape::new();
        let binding = params.bind(&mut tape).unwrap();
        let input = tape.leaf(concat_halves(&batch).unwrap()).unwrap();
        let pass = binding.forward(&mut tape, input, Mode::Train).unwrap();
        let rows: Vec<usize> = (0..batch.half_size()).collect();
        let sl = tape.gather_rows(pass.logits, &rows).unwrap();
        let ce_id = tape.softmax_cross_entropy(sl, &class_labels(&batch.source)).unwrap();
        let ce = tape.value(ce_id).item().unwrap();
        assert_eq!(loss, ce, "all-genuine identical halves must reduce to the class term");
    }

    #[test]
    fn semisupervised_one_sided_cell_names_the_modality() {
        let mut rng = Rng::seed(62);
        let mut make = |genuine: bool, modality: Modality, subject: u32| PoolSample {
            pixels: Tensor::from_fn(vec![1, 4, 4], |_| rng.uniform(0.0, 1.0)),
            label: if genuine { Label::Genuine } else { Label::Fake },
            modality,
            subject,
        };
        let names = vec!["print".to_string()];
        // source half carries print samples, target half has none
        let src = vec![
            make(true, Modality::Real, 0),
            make(true, Modality::Real, 1),
            make(false, Modality::Spoof(0), 2),
            make(false, Modality::Spoof(0), 3),
        ];
        let tgt = vec![
            make(true, Modality::Real, 4),
            make(true, Modality::Real, 5),
            make(true, Modality::Real, 6),
            make(true, Modality::Real, 7),
        ];
        let src_pool = SamplePool::new(src, names.clone()).unwrap();
        let tgt_pool = SamplePool::new(tgt, names.clone()).unwrap();
        let src_half = HalfBatch {
            pixels: Tensor::stack(&src_pool.samples().iter().map(|s| &s.pixels).collect::<Vec<_>>())
                .unwrap(),
            labels: src_pool.samples().iter().map(|s| s.label).collect(),
            modalities: src_pool.samples().iter().map(|s| s.modality).collect(),
        };
        let tgt_half = HalfBatch {
            pixels: Tensor::stack(&tgt_pool.samples().iter().map(|s| &s.pixels).collect::<Vec<_>>())
                .unwrap(),
            labels: tgt_pool.samples().iter().map(|s| s.label).collect(),
            modalities: tgt_pool.samples().iter().map(|s| s.modality).collect(),
        };
        let batch = DomainBatch::new(src_half, tgt_half, names).unwrap();
        let partition = ModalityPartition::from_batch(&batch);
        let arch = toy_arch();
        let params = build_model(&arch, 45).unwrap();
        let err = loss_semisupervised(&params, &batch, &partition, &KernelSpec::default(), 0.5)
            .err()
            .expect("one-sided modality cell must be rejected");
        let msg = format!("{err}");
        assert!(msg.contains("print") && msg.contains("target"), "{msg}");
    }

    #[test]
    fn domain_loss_reaches_conv_weights() {
        let source = toy_pool(16, 6);
        let target = toy_pool(8, 23);
        let arch = toy_arch();
        let params = build_model(&arch, 14).unwrap();
        let spec = KernelSpec::default();
        let batch = crate::sampler::two_half_batches(
            &source,
            &target,
            8,
            SamplerMode::UniformTarget,
            17,
            1,
        )
        .unwrap()
        .remove(0);

        // root = MMD term alone: its gradient must reach the conv weights
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape).unwrap();
        let input = tape.leaf(concat_halves(&batch).unwrap()).unwrap();
        let pass = binding.forward(&mut tape, input, Mode::Train).unwrap();
        let h = batch.half_size();
        let src_rows: Vec<usize> = (0..h).collect();
        let tgt_rows: Vec<usize> = (h..2 * h).collect();
        let fs = tape.gather_rows(pass.features, &src_rows).unwrap();
        let ft = tape.gather_rows(pass.features, &tgt_rows).unwrap();
        let mmd = tape.mmd2(fs, ft, &spec, MmdEstimator::Biased).unwrap();
        let conv_key = ParamKey { layer: 0, role: crate::model::ParamRole::ConvWeight };
        let conv_id = binding.param_ids()[&conv_key];
        let grads = tape.backward(mmd, &[conv_id]).unwrap();
        let norm: f64 = grads[&conv_id].data().iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "domain loss does not reach the feature extractor");
    }

    #[test]
    fn nan_loss_aborts_with_location() {
        let pool = toy_pool(16, 5);
        let arch = toy_arch();
        let mut config = quick_config(Objective::StdCnn, 2);
        config.learning_rate = 1e200; // drives the parameters to overflow
        let err = match train(&arch, &pool, None, &config) {
            Ok(_) => panic!("training should abort on overflow"),
            Err(e) => e,
        };
        let msg = format!("{err}");
        assert!(msg.contains("epoch"), "error should name the failing step: {msg}");
    }

    #[test]
    fn semisupervised_requires_target() {
        let pool = toy_pool(16, 5);
        let arch = toy_arch();
        let config = quick_config(Objective::Semisupervised, 1);
        assert!(train(&arch, &pool, None, &config).is_err());
    }
}
