//! Training and evaluation pipelines.
//!
//! The evaluation order is fixed and instrumented: frame scores are
//! computed without touching labels, the decision threshold is selected on
//! the development split only, and test labels are joined strictly after
//! test scoring. Phase markers and every label access land on the target
//! dataset's tap so tests can assert the ordering.

use std::collections::BTreeMap;

use kadapt_core::metrics::{
    aggregate_all, eer_threshold, evaluate_at, EvalReport, Label, ScoreRecord, VideoScore,
};
use kadapt_core::model::{genuine_probabilities, ModelParams};
use kadapt_core::sampler::SamplePool;
use kadapt_core::tensor::Tensor;
use kadapt_core::train::{train_with_hook, Objective, TrainOutcome};

use crate::config::TrainSettings;
use crate::dataset::{split_protocol, Dataset, SplitScheme, SplitViews, VideoGroup};
use crate::error::{HarnessError, Result};

/// Frames per forward chunk during scoring.
const SCORE_CHUNK: usize = 64;

/// Pools for one training run: the full source train split plus (for the
/// domain objectives) the frames of `k` randomly chosen labeled target
/// subjects. `k = 0` means every target train subject.
pub struct TrainPools {
    pub source: SamplePool,
    pub target: Option<SamplePool>,
    pub chosen_subjects: Vec<String>,
}

pub fn build_train_pools(
    source: &Dataset,
    target: Option<&Dataset>,
    labeled_target_subjects: usize,
    seed: u64,
) -> Result<TrainPools> {
    let source_train = source.indices(crate::manifest::Split::Train);
    if source_train.is_empty() {
        return Err(HarnessError::validation("source dataset has no train split"));
    }
    let source_pool = source.to_pool(&source_train)?;
    let (target_pool, chosen) = match target {
        None => (None, Vec::new()),
        Some(t) => {
            let subjects = t.subjects(crate::manifest::Split::Train);
            if subjects.is_empty() {
                return Err(HarnessError::validation("target dataset has no train split"));
            }
            let chosen: Vec<String> = if labeled_target_subjects == 0
                || labeled_target_subjects >= subjects.len()
            {
                subjects
            } else {
                let mut rng = kadapt_core::rng::Rng::stream(seed, "labeled-target-subjects");
                let mut picks = rng.choose_indices(subjects.len(), labeled_target_subjects);
                picks.sort_unstable();
                picks.into_iter().map(|i| subjects[i].clone()).collect()
            };
            let indices = t.indices_for_subjects(crate::manifest::Split::Train, &chosen);
            (Some(t.to_pool(&indices)?), chosen)
        }
    };
    Ok(TrainPools { source: source_pool, target: target_pool, chosen_subjects: chosen })
}

/// Train under the settings, invoking `hook` after each epoch.
pub fn run_training(
    pools: &TrainPools,
    settings: &TrainSettings,
    hook: &mut dyn FnMut(usize, &ModelParams),
) -> Result<TrainOutcome> {
    train_with_hook(
        &settings.arch,
        &pools.source,
        pools.target.as_ref(),
        &settings.config,
        hook,
    )
    .map_err(|e| HarnessError::runtime(e.to_string()))
}

/// Eval-mode feature matrix (samples x feature width) of dataset samples,
/// computed in fixed-size chunks.
pub fn features_of(
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Tensor> {
    let mut data: Vec<f64> = Vec::new();
    let mut width = 0;
    for chunk in indices.chunks(SCORE_CHUNK) {
        let tensors: Vec<&Tensor> = chunk.iter().map(|&i| dataset.image(i)).collect();
        let batch = Tensor::stack(&tensors)?;
        let feats = kadapt_core::model::forward_features(
            params,
            &batch,
            kadapt_core::model::Mode::Eval,
        )?;
        width = feats.shape()[1];
        data.extend_from_slice(feats.data());
    }
    Ok(Tensor::new(vec![indices.len(), width], data)?)
}

/// Genuine probability per frame index, computed in eval mode without any
/// label access.
pub fn score_frames(
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for chunk in indices.chunks(SCORE_CHUNK) {
        let tensors: Vec<&Tensor> = chunk.iter().map(|&i| dataset.image(i)).collect();
        let batch = Tensor::stack(&tensors)?;
        let probs = genuine_probabilities(params, &batch, kadapt_core::model::Mode::Eval)?;
        for (&idx, p) in chunk.iter().zip(probs) {
            out.insert(idx, p);
        }
    }
    Ok(out)
}

/// Join labels onto already-computed frame scores (this is where target
/// labels are read).
pub fn video_records(
    dataset: &Dataset,
    videos: &[VideoGroup],
    frame_scores: &BTreeMap<usize, f64>,
) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        let (label, _) = dataset.tags(v.frame_indices[0]);
        let frames: Vec<f64> = v
            .frame_indices
            .iter()
            .map(|i| {
                frame_scores.get(i).copied().ok_or_else(|| {
                    HarnessError::runtime(format!("missing frame score for video {}", v.video))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(ScoreRecord::new(v.video.clone(), v.subject.clone(), label, frames)?);
    }
    Ok(out)
}

/// Video-level accuracy at a threshold (genuine accepted, fake rejected).
pub fn accuracy_at(scores: &[VideoScore], tau: f64) -> f64 {
    let correct = scores
        .iter()
        .filter(|s| match s.label {
            Label::Genuine => s.score >= tau,
            Label::Fake => s.score < tau,
        })
        .count();
    correct as f64 / scores.len() as f64
}

/// Evaluation across a dataset's views: threshold from the development
/// split, metrics on the test split.
pub struct SplitEvaluation {
    pub tau: f64,
    pub devel_scores: Vec<VideoScore>,
    pub report: EvalReport,
    pub accuracy: f64,
}

pub fn evaluate_views(
    params: &ModelParams,
    dataset: &Dataset,
    views: &SplitViews,
    phase: &str,
) -> Result<SplitEvaluation> {
    // development split: score, then join labels, then pick the threshold
    let devel_videos = dataset.videos_of_indices(&views.devel);
    if devel_videos.is_empty() {
        return Err(HarnessError::validation("no development videos to select a threshold on"));
    }
    let devel_frame_scores = score_frames(params, dataset, &views.devel)?;
    dataset.mark(&format!("devel-scored:{phase}"));
    let devel_records = video_records(dataset, &devel_videos, &devel_frame_scores)?;
    let devel_scores = aggregate_all(&devel_records)?;
    let tau = eer_threshold(&devel_scores)?;
    dataset.mark(&format!("threshold-selected:{phase}"));

    // test split: score first, labels strictly afterwards
    let test_videos = dataset.videos_of_indices(&views.test);
    if test_videos.is_empty() {
        return Err(HarnessError::validation("no test videos to evaluate"));
    }
    let test_frame_scores = score_frames(params, dataset, &views.test)?;
    dataset.mark(&format!("test-scored:{phase}"));
    let test_records = video_records(dataset, &test_videos, &test_frame_scores)?;
    let test_scores = aggregate_all(&test_records)?;
    let report = evaluate_at(&test_scores, tau)?;
    let accuracy = accuracy_at(&test_scores, tau);
    Ok(SplitEvaluation { tau, devel_scores, report, accuracy })
}

/// Cross-domain protocol settings.
pub struct CrossTestSettings {
    pub train: TrainSettings,
    pub scheme: SplitScheme,
}

pub struct ModeResult {
    pub objective: Objective,
    pub evaluation: SplitEvaluation,
    pub outcome: TrainOutcome,
}

pub struct CrossTestResult {
    pub modes: Vec<ModeResult>,
    pub chosen_subjects: Vec<String>,
}

/// Full source-to-target protocol: train on the source train split with
/// `labeled_target_subjects` target subjects, select the threshold on the
/// target development view, report HTER/AUC on the target test view - for
/// the classification-only baseline and both domain objectives, under one
/// shared seed.
pub fn cross_test(
    source: &Dataset,
    target: &Dataset,
    settings: &CrossTestSettings,
) -> Result<CrossTestResult> {
    let views = split_protocol(target, settings.scheme, settings.train.config.seed)?;
    target.mark("protocol-split");
    let pools = build_train_pools(
        source,
        Some(target),
        settings.train.labeled_target_subjects,
        settings.train.config.seed,
    )?;
    target.mark("train-pools-built");

    let mut modes = Vec::new();
    for objective in [Objective::StdCnn, Objective::Unsupervised, Objective::Semisupervised] {
        let phase = objective.name();
        target.mark(&format!("mode-begin:{phase}"));
        let mut mode_settings = TrainSettings {
            arch: settings.train.arch.clone(),
            config: settings.train.config.clone(),
            labeled_target_subjects: settings.train.labeled_target_subjects,
            checkpoint_every: settings.train.checkpoint_every,
        };
        mode_settings.config.objective = objective;
        let outcome = run_training(&pools, &mode_settings, &mut |_, _| {})?;
        target.mark(&format!("trained:{phase}"));
        let evaluation = evaluate_views(&outcome.params, target, &views, phase)?;
        target.mark(&format!("mode-end:{phase}"));
        modes.push(ModeResult { objective, evaluation, outcome });
    }
    Ok(CrossTestResult { modes, chosen_subjects: pools.chosen_subjects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainSettings;
    use crate::dataset::{new_tap, ProtocolEvent};
    use crate::manifest::Split;
    use crate::synth::{generate, SyntheticSpec};
    use kadapt_core::model::ArchitectureConfig;
    use kadapt_core::train::TrainConfig;

    fn tiny_benchmark(name: &str) -> (Dataset, Dataset) {
        let dir = std::env::temp_dir().join(format!("kadapt-pipe-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let spec = SyntheticSpec {
            subjects_train: 2,
            subjects_test: 2,
            subjects_devel: 2,
            real_videos_per_subject: 1,
            fake_videos_per_subject: 1,
            frames_per_video: 3,
            seed: 11,
            ..SyntheticSpec::default()
        };
        let out = generate(&spec, &dir).unwrap();
        (
            Dataset::load(&out.source_manifest, spec.side, 1).unwrap(),
            Dataset::load(&out.target_manifest, spec.side, 1).unwrap(),
        )
    }

    fn quick_settings(epochs: usize) -> CrossTestSettings {
        CrossTestSettings {
            train: TrainSettings {
                arch: ArchitectureConfig::desk(),
                config: TrainConfig {
                    epochs,
                    batch_size: 8,
                    seed: 3,
                    ..TrainConfig::new(Objective::Semisupervised)
                },
                labeled_target_subjects: 1,
                checkpoint_every: 0,
            },
            scheme: SplitScheme::Declared,
        }
    }

    #[test]
    fn cross_test_runs_and_orders_label_access() {
        let (source, target) = tiny_benchmark("order");
        let tap = new_tap();
        target.install_tap(tap.clone());
        let result = cross_test(&source, &target, &quick_settings(2)).unwrap();
        assert_eq!(result.modes.len(), 3);
        assert_eq!(result.chosen_subjects.len(), 1);

        let events = tap.borrow();
        let marker_pos = |label: &str| {
            events
                .iter()
                .position(|e| matches!(e, ProtocolEvent::Marker(m) if m == label))
                .unwrap_or_else(|| panic!("missing marker {label}"))
        };
        for mode in ["stdcnn", "unsupervised", "semisupervised"] {
            let begin = marker_pos(&format!("mode-begin:{mode}"));
            let scored = marker_pos(&format!("test-scored:{mode}"));
            let selected = marker_pos(&format!("threshold-selected:{mode}"));
            let end = marker_pos(&format!("mode-end:{mode}"));
            assert!(begin < selected && selected < scored && scored < end);
            // every test-label read inside this mode happens after scoring
            for (i, e) in events.iter().enumerate().take(end).skip(begin) {
                if let ProtocolEvent::TagsRead { split: Split::Test, .. } = e {
                    assert!(
                        i > scored && i > selected,
                        "test labels read at {i}, before scoring ({scored}) or selection ({selected})"
                    );
                }
            }
        }
        // no test/devel label ever read before the first mode begins
        let first_mode = marker_pos("mode-begin:stdcnn");
        for e in events.iter().take(first_mode) {
            if let ProtocolEvent::TagsRead { split, .. } = e {
                assert_eq!(*split, Split::Train, "pre-training label read from {split}");
            }
        }
    }

    #[test]
    fn accuracy_at_counts_both_classes() {
        let scores = kadapt_core::metrics::scores_from_pairs(&[
            (Label::Genuine, 0.9),
            (Label::Genuine, 0.3),
            (Label::Fake, 0.6),
            (Label::Fake, 0.1),
        ]);
        assert_eq!(accuracy_at(&scores, 0.5), 0.5);
        assert_eq!(accuracy_at(&scores, 0.25), 0.75);
    }

    #[test]
    fn labeled_subject_selection_is_seeded_and_sorted() {
        let (_, target) = tiny_benchmark("subjects");
        let a = build_train_pools(&target, Some(&target), 1, 5).unwrap();
        let b = build_train_pools(&target, Some(&target), 1, 5).unwrap();
        assert_eq!(a.chosen_subjects, b.chosen_subjects);
        let all = build_train_pools(&target, Some(&target), 0, 5).unwrap();
        assert_eq!(all.chosen_subjects.len(), 2);
    }
}
