//! Biometric evaluation: frame-to-video aggregation, FAR/FRR, EER threshold
//! selection, HTER and rank-statistic ROC AUC.
//!
//! Scores are oriented so that higher means more genuine, and "acceptance"
//! means score >= threshold. All metrics operate on video-level scores; the
//! only way to get one from frames is [`aggregate_video`], which keeps the
//! aggregation-first rule structural.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Which of the two classes a video belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Label {
    Fake,
    Genuine,
}

impl Label {
    /// Class index used by the classifier head: fake 0, genuine 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Fake => 0,
            Label::Genuine => 1,
        }
    }
}

/// Per-frame genuine probabilities of one video.
#[derive(Debug, Clone)]
pub struct ScoreRecord {
    pub video: String,
    pub subject: String,
    pub label: Label,
    pub frame_scores: Vec<f64>,
}

impl ScoreRecord {
    pub fn new(
        video: impl Into<String>,
        subject: impl Into<String>,
        label: Label,
        frame_scores: Vec<f64>,
    ) -> Result<Self> {
        if frame_scores.is_empty() {
            return Err(CoreError::invalid("score_record", "empty frame list"));
        }
        if frame_scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(CoreError::invalid(
                "score_record",
                "frame probabilities must lie in [0, 1]",
            ));
        }
        Ok(ScoreRecord {
            video: video.into(),
            subject: subject.into(),
            label,
            frame_scores,
        })
    }
}

/// One video with its aggregated score.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub video: String,
    pub subject: String,
    pub label: Label,
    pub score: f64,
}

/// Arithmetic mean of the per-frame probabilities.
pub fn aggregate_video(record: &ScoreRecord) -> Result<f64> {
    if record.frame_scores.is_empty() {
        return Err(CoreError::invalid("aggregate_video", "empty frame list"));
    }
    Ok(record.frame_scores.iter().sum::<f64>() / record.frame_scores.len() as f64)
}

/// Aggregate a batch of records into video-level scores, preserving order.
pub fn aggregate_all(records: &[ScoreRecord]) -> Result<Vec<VideoScore>> {
    records
        .iter()
        .map(|r| {
            Ok(VideoScore {
                video: r.video.clone(),
                subject: r.subject.clone(),
                label: r.label,
                score: aggregate_video(r)?,
            })
        })
        .collect()
}

fn class_scores(scores: &[VideoScore], op: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut genuine = Vec::new();
    let mut fake = Vec::new();
    for s in scores {
        match s.label {
            Label::Genuine => genuine.push(s.score),
            Label::Fake => fake.push(s.score),
        }
    }
    if genuine.is_empty() || fake.is_empty() {
        return Err(CoreError::invalid(op, "both classes must be present"));
    }
    Ok((genuine, fake))
}

/// False acceptance rate (fakes with score >= tau over all fakes) and false
/// rejection rate (genuines with score < tau over all genuines).
pub fn far_frr(scores: &[VideoScore], tau: f64) -> Result<(f64, f64)> {
    let (genuine, fake) = class_scores(scores, "far_frr")?;
    let far = fake.iter().filter(|s| **s >= tau).count() as f64 / fake.len() as f64;
    let frr = genuine.iter().filter(|s| **s < tau).count() as f64 / genuine.len() as f64;
    Ok((far, frr))
}

/// Threshold minimizing |FAR - FRR| over the sweep of midpoints between
/// adjacent distinct scores plus -inf/+inf sentinels. Ties go to the
/// candidate with smaller FAR, then to the smaller threshold, so the choice
/// is deterministic.
pub fn eer_threshold(dev_scores: &[VideoScore]) -> Result<f64> {
    let (genuine, fake) = class_scores(dev_scores, "eer_threshold")?;

    let mut distinct: Vec<f64> = genuine.iter().chain(fake.iter()).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    for pair in distinct.windows(2) {
        candidates.push(0.5 * (pair[0] + pair[1]));
    }
    candidates.push(f64::INFINITY);

    let mut best_tau = f64::NEG_INFINITY;
    let mut best_diff = f64::INFINITY;
    let mut best_far = f64::INFINITY;
    for &tau in &candidates {
        let far = fake.iter().filter(|s| **s >= tau).count() as f64 / fake.len() as f64;
        let frr = genuine.iter().filter(|s| **s < tau).count() as f64 / genuine.len() as f64;
        let diff = (far - frr).abs();
        if diff < best_diff || (diff == best_diff && far < best_far) {
            best_diff = diff;
            best_far = far;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

/// Half total error rate at a fixed threshold.
pub fn hter(test_scores: &[VideoScore], tau: f64) -> Result<f64> {
    let (far, frr) = far_frr(test_scores, tau)?;
    Ok((far + frr) / 2.0)
}

/// Probability that a random genuine video outscores a random fake one,
/// ties counted one half (the Mann-Whitney rank statistic).
pub fn roc_auc(scores: &[VideoScore]) -> Result<f64> {
    let (genuine, fake) = class_scores(scores, "roc_auc")?;
    let mut all: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(fake.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));

    // average ranks over tie groups
    let mut genuine_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tie group [i, j) shares the average rank
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                genuine_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let g = genuine.len() as f64;
    let f = fake.len() as f64;
    let u = genuine_rank_sum - g * (g + 1.0) / 2.0;
    Ok(u / (g * f))
}

/// Evaluation summary at a fixed threshold, plus the FAR/FRR sweep used for
/// curve export. The threshold is an input: selecting it (on a development
/// split) and applying it (to a test split) are separate steps.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
    pub auc: f64,
    pub genuine_videos: usize,
    pub fake_videos: usize,
    pub scores: Vec<VideoScore>,
    /// (tau, FAR, FRR) triples over the candidate sweep.
    pub curve: Vec<(f64, f64, f64)>,
}

pub fn evaluate_at(scores: &[VideoScore], tau: f64) -> Result<EvalReport> {
    let (genuine, fake) = class_scores(scores, "evaluate")?;
    let (far, frr) = far_frr(scores, tau)?;
    let auc = roc_auc(scores)?;

    let mut distinct: Vec<f64> = scores.iter().map(|s| s.score).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut curve = Vec::with_capacity(distinct.len());
    for &t in &distinct {
        let (cf, cr) = far_frr(scores, t)?;
        curve.push((t, cf, cr));
    }

    let mut sorted_scores = scores.to_vec();
    sorted_scores.sort_by(|a, b| a.video.cmp(&b.video));

    Ok(EvalReport {
        threshold: tau,
        far,
        frr,
        hter: (far + frr) / 2.0,
        auc,
        genuine_videos: genuine.len(),
        fake_videos: fake.len(),
        scores: sorted_scores,
        curve,
    })
}

impl EvalReport {
    /// The defining identity, used by integrity checks.
    pub fn hter_identity_holds(&self) -> bool {
        (self.hter - (self.far + self.frr) / 2.0).abs() < 1e-15
    }
}

/// Helper for tests and pipelines: build video scores from (label, score)
/// pairs with synthetic ids.
pub fn scores_from_pairs(pairs: &[(Label, f64)]) -> Vec<VideoScore> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (label, score))| VideoScore {
            video: format!("v{i:04}"),
            subject: format!("s{i:04}"),
            label: *label,
            score: *score,
        })
        .collect()
}
