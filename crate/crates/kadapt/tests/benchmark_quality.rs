//! Regression bounds on the default synthetic benchmark: the class signal
//! must be learnable within one domain and the domain gap must be real at
//! the raw-pixel level. Both bounds were measured once and frozen.

use kadapt::dataset::Dataset;
use kadapt::manifest::Split;
use kadapt::synth::{generate, SyntheticSpec};
use kadapt_core::kernel::{mmd2_biased, KernelSpec, SampleSet};
use kadapt_core::model::ArchitectureConfig;
use kadapt_core::tensor::Tensor;
use kadapt_core::train::{classification_accuracy, train, Objective, TrainConfig};

fn pixel_set(ds: &Dataset, count: usize) -> SampleSet {
    let step = (ds.len() / count).max(1);
    let indices: Vec<usize> = (0..ds.len()).step_by(step).take(count).collect();
    let d = ds.image(0).numel();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in &indices {
        data.extend_from_slice(ds.image(i).data());
    }
    SampleSet::new(Tensor::new(vec![indices.len(), d], data).unwrap()).unwrap()
}

#[test]
fn default_benchmark_is_learnable_with_a_real_domain_gap() {
    let dir = std::env::temp_dir().join(format!("kadapt-quality-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let spec = SyntheticSpec { seed: 1, ..SyntheticSpec::default() };
    let out = generate(&spec, &dir).unwrap();
    let source = Dataset::load(&out.source_manifest, spec.side, 1).unwrap();
    let target = Dataset::load(&out.target_manifest, spec.side, 1).unwrap();

    // domain gap: biased squared MMD between raw pixel vectors
    let gap = mmd2_biased(&pixel_set(&source, 60), &pixel_set(&target, 60), &KernelSpec::default())
        .unwrap();
    assert!(gap > 0.1, "pixel-level domain gap too small: {gap}");

    // class signal: a desk model separates genuine from fake within the
    // source domain
    let train_pool = source.to_pool(&source.indices(Split::Train)).unwrap();
    let test_pool = source.to_pool(&source.indices(Split::Test)).unwrap();
    let config = TrainConfig {
        epochs: 45,
        batch_size: 32,
        seed: 1,
        ..TrainConfig::new(Objective::StdCnn)
    };
    let outcome = train(&ArchitectureConfig::desk(), &train_pool, None, &config).unwrap();
    let accuracy = classification_accuracy(&outcome.params, &test_pool).unwrap();
    assert!(accuracy >= 0.95, "intra-domain test accuracy {accuracy} below 0.95");

    let _ = std::fs::remove_dir_all(&dir);
    println!("benchmark quality: pixel mmd2 {gap:.3}, intra-domain accuracy {accuracy:.3}");
}
