//! Sample pools and the Two-Half batch stream.
//!
//! Every training batch carries an equal number of source and target
//! samples. The source half walks reshuffled per-cell queues so each class/
//! modality cell is represented in proportion every batch; the target half
//! does the same in semi-supervised mode, or cycles the whole reshuffled
//! target pool in unsupervised mode. Queues recycle by reshuffling, so a
//! scarce target pool is repeated (sampled with replacement across batches)
//! until it matches the source half size, and every target sample is
//! guaranteed to appear once per cycle.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::metrics::Label;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Spoofing modality tag: the material class of the presentation surface,
/// or `Real` for genuine access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Real,
    Spoof(usize),
}

/// One training sample: pixels (C x H x W), class label, modality, subject.
#[derive(Debug, Clone)]
pub struct PoolSample {
    pub pixels: Tensor,
    pub label: Label,
    pub modality: Modality,
    pub subject: u32,
}

/// A validated collection of samples sharing one image geometry and one
/// declared spoof-modality set.
#[derive(Debug, Clone)]
pub struct SamplePool {
    samples: Vec<PoolSample>,
    spoof_modalities: Vec<String>,
}

impl SamplePool {
    pub fn new(samples: Vec<PoolSample>, spoof_modalities: Vec<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::invalid("sample_pool", "empty pool"));
        }
        let shape = samples[0].pixels.shape().to_vec();
        for (i, s) in samples.iter().enumerate() {
            if s.pixels.shape() != shape {
                return Err(CoreError::shape(
                    "sample_pool",
                    format!("sample {i} has shape {:?}, expected {:?}", s.pixels.shape(), shape),
                ));
            }
            s.pixels.check_finite("sample_pool")?;
            match (s.label, s.modality) {
                (Label::Genuine, Modality::Real) => {}
                (Label::Fake, Modality::Spoof(m)) => {
                    if m >= spoof_modalities.len() {
                        return Err(CoreError::invalid(
                            "sample_pool",
                            format!("sample {i} references undeclared modality {m}"),
                        ));
                    }
                }
                (Label::Genuine, Modality::Spoof(_)) | (Label::Fake, Modality::Real) => {
                    return Err(CoreError::protocol(format!(
                        "sample {i}: genuine label requires real modality and vice versa"
                    )));
                }
            }
        }
        Ok(SamplePool { samples, spoof_modalities })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PoolSample] {
        &self.samples
    }

    pub fn spoof_modalities(&self) -> &[String] {
        &self.spoof_modalities
    }

    /// Number of cells: real plus each declared spoof modality.
    pub fn cell_count(&self) -> usize {
        1 + self.spoof_modalities.len()
    }

    fn cell_of(&self, sample: &PoolSample) -> usize {
        match sample.modality {
            Modality::Real => 0,
            Modality::Spoof(m) => 1 + m,
        }
    }

    fn cell_indices(&self) -> Vec<Vec<usize>> {
        let mut cells = alloc::vec![Vec::new(); self.cell_count()];
        for (i, s) in self.samples.iter().enumerate() {
            cells[self.cell_of(s)].push(i);
        }
        cells
    }

    pub fn cell_name(&self, cell: usize) -> String {
        if cell == 0 {
            String::from("real")
        } else {
            self.spoof_modalities[cell - 1].clone()
        }
    }
}

/// One half of a Two-Half batch, stacked into an N x C x H x W tensor.
#[derive(Debug, Clone)]
pub struct HalfBatch {
    pub pixels: Tensor,
    pub labels: Vec<Label>,
    pub modalities: Vec<Modality>,
}

impl HalfBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather(pool: &SamplePool, indices: &[usize]) -> Result<HalfBatch> {
        let tensors: Vec<&Tensor> = indices.iter().map(|&i| &pool.samples()[i].pixels).collect();
        Ok(HalfBatch {
            pixels: Tensor::stack(&tensors)?,
            labels: indices.iter().map(|&i| pool.samples()[i].label).collect(),
            modalities: indices.iter().map(|&i| pool.samples()[i].modality).collect(),
        })
    }
}

/// A Two-Half training batch: equally sized source and target halves.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub source: HalfBatch,
    pub target: HalfBatch,
    pub spoof_names: Vec<String>,
}

impl DomainBatch {
    pub fn new(source: HalfBatch, target: HalfBatch, spoof_names: Vec<String>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(CoreError::protocol(format!(
                "two-half batch requires equal halves, got {} source and {} target",
                source.len(),
                target.len()
            )));
        }
        Ok(DomainBatch { source, target, spoof_names })
    }

    pub fn half_size(&self) -> usize {
        self.source.len()
    }
}

/// Index lists into the two halves, one per cell (real plus each modality).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityPartition {
    pub source_real: Vec<usize>,
    pub target_real: Vec<usize>,
    /// Per declared spoof modality.
    pub source_spoof: Vec<Vec<usize>>,
    pub target_spoof: Vec<Vec<usize>>,
}

impl ModalityPartition {
    /// Partition both halves of a batch by modality. Covers each half
    /// exactly; genuine indices are exactly the real-modality samples.
    pub fn from_batch(batch: &DomainBatch) -> Self {
        let n = batch.spoof_names.len();
        let split = |half: &HalfBatch| {
            let mut real = Vec::new();
            let mut spoof = alloc::vec![Vec::new(); n];
            for (i, m) in half.modalities.iter().enumerate() {
                match m {
                    Modality::Real => real.push(i),
                    Modality::Spoof(k) => spoof[*k].push(i),
                }
            }
            (real, spoof)
        };
        let (source_real, source_spoof) = split(&batch.source);
        let (target_real, target_spoof) = split(&batch.target);
        ModalityPartition { source_real, target_real, source_spoof, target_spoof }
    }

    /// A matched term can be formed for a cell that has samples on both
    /// sides, and a cell empty on both sides simply contributes no term -
    /// but a cell populated on exactly one side cannot be matched, which is
    /// a protocol error naming the modality.
    pub fn check_cells(&self, spoof_names: &[String]) -> Result<()> {
        if self.source_real.is_empty() != self.target_real.is_empty() {
            let side = if self.source_real.is_empty() { "source" } else { "target" };
            return Err(CoreError::protocol(format!(
                "empty {side} cell for modality 'real' in semi-supervised batch"
            )));
        }
        for (i, name) in spoof_names.iter().enumerate() {
            if self.source_spoof[i].is_empty() != self.target_spoof[i].is_empty() {
                let side = if self.source_spoof[i].is_empty() { "source" } else { "target" };
                return Err(CoreError::protocol(format!(
                    "empty {side} cell for modality '{name}' in semi-supervised batch"
                )));
            }
        }
        Ok(())
    }

    /// Whether a matched term exists for the given cell (0 = real,
    /// 1 + m = spoof modality m).
    pub fn cell_matched(&self, cell: usize) -> bool {
        if cell == 0 {
            !self.source_real.is_empty() && !self.target_real.is_empty()
        } else {
            !self.source_spoof[cell - 1].is_empty() && !self.target_spoof[cell - 1].is_empty()
        }
    }
}

/// How the target half of each batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// No target half; the stream serves classification-only training.
    SourceOnly,
    /// Target half cycles the whole target pool.
    UniformTarget,
    /// Target half is stratified over real + every declared modality.
    StratifiedTarget,
}

struct CellQueue {
    indices: Vec<usize>,
    pos: usize,
}

impl CellQueue {
    fn new(mut indices: Vec<usize>, rng: &mut Rng) -> Self {
        rng.shuffle(&mut indices);
        CellQueue { indices, pos: 0 }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.indices.len() {
            rng.shuffle(&mut self.indices);
            self.pos = 0;
        }
        let v = self.indices[self.pos];
        self.pos += 1;
        v
    }
}

/// Deterministic stream of Two-Half batches.
///
/// The source and target halves consume independent random streams derived
/// from the seed, so a classification-only consumer sees exactly the same
/// source halves as a domain-loss consumer with the same seed.
pub struct TwoHalfSampler<'a> {
    source: &'a SamplePool,
    target: Option<&'a SamplePool>,
    half: usize,
    mode: SamplerMode,
    rng_source: Rng,
    rng_target: Rng,
    source_cells: Vec<CellQueue>,
    target_cells: Vec<CellQueue>,
    batch_counter: usize,
    spoof_names: Vec<String>,
}

impl<'a> TwoHalfSampler<'a> {
    pub fn new(
        source: &'a SamplePool,
        target: Option<&'a SamplePool>,
        batch_size: usize,
        mode: SamplerMode,
        seed: u64,
    ) -> Result<Self> {
        if batch_size < 4 || batch_size % 2 != 0 {
            return Err(CoreError::invalid(
                "two_half_batches",
                format!("batch size must be even and at least 4, got {batch_size}"),
            ));
        }
        let half = batch_size / 2;
        let mut rng_source = Rng::stream(seed, "two-half-source");
        let mut rng_target = Rng::stream(seed, "two-half-target");

        // Source half: stratified over the non-empty cells of the source
        // pool so every batch sees each available class/modality.
        let source_cells: Vec<CellQueue> = source
            .cell_indices()
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|c| CellQueue::new(c, &mut rng_source))
            .collect();
        if half < source_cells.len() {
            return Err(CoreError::invalid(
                "two_half_batches",
                format!(
                    "half size {half} cannot cover {} source cells",
                    source_cells.len()
                ),
            ));
        }

        let mut target_cells = Vec::new();
        let mut spoof_names = source.spoof_modalities().to_vec();
        match mode {
            SamplerMode::SourceOnly => {}
            SamplerMode::UniformTarget => {
                let t = target.ok_or_else(|| {
                    CoreError::invalid("two_half_batches", "mode requires a target pool")
                })?;
                target_cells.push(CellQueue::new((0..t.len()).collect(), &mut rng_target));
                spoof_names = t.spoof_modalities().to_vec();
            }
            SamplerMode::StratifiedTarget => {
                let t = target.ok_or_else(|| {
                    CoreError::invalid("two_half_batches", "mode requires a target pool")
                })?;
                if t.spoof_modalities() != source.spoof_modalities() {
                    return Err(CoreError::protocol(format!(
                        "source and target declare different modality sets: {:?} vs {:?}",
                        source.spoof_modalities(),
                        t.spoof_modalities()
                    )));
                }
                // Every matched cell must exist on both sides.
                for (pool, side) in [(source, "source"), (t, "target")] {
                    for (cell, indices) in pool.cell_indices().iter().enumerate() {
                        if indices.is_empty() {
                            return Err(CoreError::protocol(format!(
                                "empty {side} modality '{}': the intra-modality objective cannot be formed",
                                pool.cell_name(cell)
                            )));
                        }
                    }
                }
                let cells = t.cell_indices();
                if half < cells.len() {
                    return Err(CoreError::invalid(
                        "two_half_batches",
                        format!("half size {half} cannot cover {} target cells", cells.len()),
                    ));
                }
                target_cells = cells
                    .into_iter()
                    .map(|c| CellQueue::new(c, &mut rng_target))
                    .collect();
                spoof_names = t.spoof_modalities().to_vec();
            }
        }

        Ok(TwoHalfSampler {
            source,
            target,
            half,
            mode,
            rng_source,
            rng_target,
            source_cells,
            target_cells,
            batch_counter: 0,
            spoof_names,
        })
    }

    pub fn half_size(&self) -> usize {
        self.half
    }

    /// One pass over the source pool, in half-sized steps.
    pub fn batches_per_epoch(&self) -> usize {
        (self.source.len() / self.half).max(1)
    }

    fn quotas(half: usize, cells: usize, counter: usize) -> Vec<usize> {
        let base = half / cells;
        let rem = half % cells;
        let mut q = alloc::vec![base; cells];
        for r in 0..rem {
            q[(counter + r) % cells] += 1;
        }
        q
    }

    fn draw_source_indices(&mut self) -> Vec<usize> {
        let quotas = Self::quotas(self.half, self.source_cells.len(), self.batch_counter);
        let mut out = Vec::with_capacity(self.half);
        for (cell, quota) in self.source_cells.iter_mut().zip(quotas) {
            for _ in 0..quota {
                out.push(cell.next(&mut self.rng_source));
            }
        }
        out
    }

    /// Next source half only (classification-only training).
    pub fn next_source_half(&mut self) -> Result<HalfBatch> {
        let indices = self.draw_source_indices();
        self.batch_counter += 1;
        HalfBatch::gather(self.source, &indices)
    }

    /// Next full Two-Half batch.
    pub fn next_batch(&mut self) -> Result<DomainBatch> {
        if self.mode == SamplerMode::SourceOnly {
            return Err(CoreError::invalid(
                "two_half_batches",
                "source-only sampler cannot emit two-half batches",
            ));
        }
        let target = self.target.expect("target checked at construction");
        let source_indices = self.draw_source_indices();
        let mut target_indices = Vec::with_capacity(self.half);
        match self.mode {
            SamplerMode::UniformTarget => {
                for _ in 0..self.half {
                    target_indices.push(self.target_cells[0].next(&mut self.rng_target));
                }
            }
            SamplerMode::StratifiedTarget => {
                let quotas = Self::quotas(self.half, self.target_cells.len(), self.batch_counter);
                for (cell, quota) in self.target_cells.iter_mut().zip(quotas) {
                    for _ in 0..quota {
                        target_indices.push(cell.next(&mut self.rng_target));
                    }
                }
            }
            SamplerMode::SourceOnly => unreachable!(),
        }
        self.batch_counter += 1;
        DomainBatch::new(
            HalfBatch::gather(self.source, &source_indices)?,
            HalfBatch::gather(target, &target_indices)?,
            self.spoof_names.clone(),
        )
    }
}

/// Materialize `count` batches from a fresh sampler (convenience for tests
/// and inspection).
pub fn two_half_batches(
    source: &SamplePool,
    target: &SamplePool,
    batch_size: usize,
    mode: SamplerMode,
    seed: u64,
    count: usize,
) -> Result<Vec<DomainBatch>> {
    let mut sampler = TwoHalfSampler::new(source, Some(target), batch_size, mode, seed)?;
    (0..count).map(|_| sampler.next_batch()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn tiny_image(v: f64) -> Tensor {
        Tensor::filled(vec![1, 2, 2], v)
    }

    fn sample(v: f64, label: Label, modality: Modality, subject: u32) -> PoolSample {
        PoolSample { pixels: tiny_image(v), label, modality, subject }
    }

    fn pool(genuine: usize, print: usize, video: usize) -> SamplePool {
        let mut samples = Vec::new();
        for i in 0..genuine {
            samples.push(sample(i as f64, Label::Genuine, Modality::Real, i as u32));
        }
        for i in 0..print {
            samples.push(sample(100.0 + i as f64, Label::Fake, Modality::Spoof(0), i as u32));
        }
        for i in 0..video {
            samples.push(sample(200.0 + i as f64, Label::Fake, Modality::Spoof(1), i as u32));
        }
        SamplePool::new(samples, vec!["print".to_string(), "video".to_string()]).unwrap()
    }

    #[test]
    fn pool_rejects_label_modality_mismatch() {
        let bad = vec![sample(0.0, Label::Genuine, Modality::Spoof(0), 0)];
        assert!(SamplePool::new(bad, vec!["print".to_string()]).is_err());
        let bad2 = vec![sample(0.0, Label::Fake, Modality::Real, 0)];
        assert!(SamplePool::new(bad2, vec!["print".to_string()]).is_err());
        let bad3 = vec![sample(0.0, Label::Fake, Modality::Spoof(3), 0)];
        assert!(SamplePool::new(bad3, vec!["print".to_string()]).is_err());
    }

    #[test]
    fn batch_size_eight_gives_four_plus_four() {
        let src = pool(6, 6, 6);
        let tgt = pool(3, 3, 3);
        let batches =
            two_half_batches(&src, &tgt, 8, SamplerMode::UniformTarget, 1, 5).unwrap();
        for b in &batches {
            assert_eq!(b.source.len(), 4);
            assert_eq!(b.target.len(), 4);
        }
    }

    #[test]
    fn scarce_target_pool_is_recycled_and_fully_covered() {
        let src = pool(20, 20, 20);
        let tgt = pool(2, 2, 2); // 6 target samples
        let batches =
            two_half_batches(&src, &tgt, 8, SamplerMode::UniformTarget, 3, 100).unwrap();
        // every target sample appears across 100 batches of half 4, and
        // duplicates necessarily occur (400 draws from 6 samples)
        let mut seen = [0usize; 6];
        let mut draws = 0;
        for b in &batches {
            for v in b.target.pixels.data().iter().step_by(4) {
                // pixel value encodes the sample identity
                let idx = match *v as usize {
                    0 => 0,
                    1 => 1,
                    100 => 2,
                    101 => 3,
                    200 => 4,
                    201 => 5,
                    other => panic!("unexpected pixel {other}"),
                };
                seen[idx] += 1;
                draws += 1;
            }
        }
        assert_eq!(draws, 400);
        assert!(seen.iter().all(|c| *c > 0), "coverage {seen:?}");
        assert!(seen.iter().any(|c| *c > 1));
    }

    #[test]
    fn same_seed_same_stream() {
        let src = pool(8, 8, 8);
        let tgt = pool(2, 2, 2);
        let a = two_half_batches(&src, &tgt, 8, SamplerMode::StratifiedTarget, 11, 10).unwrap();
        let b = two_half_batches(&src, &tgt, 8, SamplerMode::StratifiedTarget, 11, 10).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.source.pixels.data(), y.source.pixels.data());
            assert_eq!(x.target.pixels.data(), y.target.pixels.data());
        }
    }

    #[test]
    fn source_half_independent_of_mode() {
        let src = pool(8, 8, 8);
        let tgt = pool(2, 2, 2);
        let mut a = TwoHalfSampler::new(&src, None, 8, SamplerMode::SourceOnly, 7).unwrap();
        let mut b =
            TwoHalfSampler::new(&src, Some(&tgt), 8, SamplerMode::UniformTarget, 7).unwrap();
        for _ in 0..10 {
            let ha = a.next_source_half().unwrap();
            let hb = b.next_batch().unwrap().source;
            assert_eq!(ha.pixels.data(), hb.pixels.data());
        }
    }

    #[test]
    fn stratified_batches_cover_every_cell() {
        let src = pool(5, 5, 5);
        let tgt = pool(2, 2, 2);
        let batches =
            two_half_batches(&src, &tgt, 12, SamplerMode::StratifiedTarget, 5, 20).unwrap();
        for b in &batches {
            let part = ModalityPartition::from_batch(b);
            part.check_cells(&b.spoof_names).unwrap();
        }
    }

    #[test]
    fn empty_target_modality_is_a_protocol_error() {
        let src = pool(5, 5, 5);
        let tgt = pool(2, 2, 0); // no "video" samples in target
        let err = match TwoHalfSampler::new(&src, Some(&tgt), 8, SamplerMode::StratifiedTarget, 1) {
            Ok(_) => panic!("sampler construction should fail"),
            Err(e) => e,
        };
        let msg = alloc::format!("{err}");
        assert!(msg.contains("video"), "error should name the modality: {msg}");
    }

    #[test]
    fn partition_covers_halves_exactly() {
        let src = pool(5, 5, 5);
        let tgt = pool(2, 2, 2);
        let b = &two_half_batches(&src, &tgt, 10, SamplerMode::StratifiedTarget, 9, 1).unwrap()[0];
        let part = ModalityPartition::from_batch(b);
        let mut all: Vec<usize> = part
            .source_real
            .iter()
            .chain(part.source_spoof.iter().flatten())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..b.source.len()).collect::<Vec<_>>());
        // genuine indices are exactly the real cell
        for &i in &part.source_real {
            assert_eq!(b.source.labels[i], Label::Genuine);
        }
        for &i in part.source_spoof.iter().flatten() {
            assert_eq!(b.source.labels[i], Label::Fake);
        }
    }

    #[test]
    fn odd_or_tiny_batch_sizes_rejected() {
        let src = pool(4, 4, 4);
        let tgt = pool(2, 2, 2);
        assert!(TwoHalfSampler::new(&src, Some(&tgt), 7, SamplerMode::UniformTarget, 1).is_err());
        assert!(TwoHalfSampler::new(&src, Some(&tgt), 2, SamplerMode::UniformTarget, 1).is_err());
    }
}
