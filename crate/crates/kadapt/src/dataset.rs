//! Loaded datasets: manifest rows plus decoded images, with label access
//! routed through a tap so protocol integrity (thresholds from the
//! development split only, test labels untouched until scoring is frozen)
//! can be asserted from the outside.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use kadapt_core::metrics::Label;
use kadapt_core::sampler::{Modality, PoolSample, SamplePool};
use kadapt_core::tensor::Tensor;

use crate::error::{HarnessError, Result};
use crate::imageio;
use crate::manifest::{self, Domain, Manifest, ManifestRow, Split};

/// Event stream recorded by a dataset tap. `TagsRead` is emitted by the
/// dataset itself on every label/modality access; `Marker` entries are
/// pushed by pipelines at phase boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolEvent {
    TagsRead { domain: Domain, split: Split },
    Marker(String),
}

pub type AccessTap = Rc<RefCell<Vec<ProtocolEvent>>>;

pub fn new_tap() -> AccessTap {
    Rc::new(RefCell::new(Vec::new()))
}

/// Sample metadata that carries no class information.
#[derive(Debug, Clone)]
pub struct SampleMeta {
    pub domain: Domain,
    pub split: Split,
    pub subject: String,
    pub video: String,
    pub frame: u32,
}

/// Frames of one video, in frame order.
#[derive(Debug, Clone)]
pub struct VideoGroup {
    pub video: String,
    pub subject: String,
    pub frame_indices: Vec<usize>,
}

pub struct Dataset {
    rows: Vec<ManifestRow>,
    images: Vec<Tensor>,
    side: usize,
    channels: usize,
    spoof_modalities: Vec<String>,
    tap: RefCell<Option<AccessTap>>,
}

impl Dataset {
    /// Load a manifest and decode every referenced image at the model
    /// geometry. Relative image paths resolve against the manifest's
    /// directory.
    pub fn load(manifest_path: &Path, side: usize, channels: usize) -> Result<Dataset> {
        let m = manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(m, base, side, channels)
    }

    pub fn from_manifest(
        m: Manifest,
        base: &Path,
        side: usize,
        channels: usize,
    ) -> Result<Dataset> {
        let mut images = Vec::with_capacity(m.rows.len());
        for (i, row) in m.rows.iter().enumerate() {
            let path = {
                let p = Path::new(&row.path);
                if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
            };
            let decoded = imageio::decode(&path)
                .map_err(|e| HarnessError::validation(format!("manifest row {}: {e}", i + 1)))?;
            images.push(imageio::to_model_tensor(&decoded, side, channels)?);
        }
        Ok(Dataset {
            rows: m.rows,
            images,
            side,
            channels,
            spoof_modalities: m.spoof_modalities,
            tap: RefCell::new(None),
        })
    }

    pub fn install_tap(&self, tap: AccessTap) {
        *self.tap.borrow_mut() = Some(tap);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spoof_modalities(&self) -> &[String] {
        &self.spoof_modalities
    }

    pub fn meta(&self, idx: usize) -> SampleMeta {
        let r = &self.rows[idx];
        SampleMeta {
            domain: r.domain,
            split: r.split,
            subject: r.subject.clone(),
            video: r.video.clone(),
            frame: r.frame,
        }
    }

    pub fn image(&self, idx: usize) -> &Tensor {
        &self.images[idx]
    }

    /// Class label and modality of one sample. Every call is recorded on
    /// the installed tap; scoring paths must not need this.
    pub fn tags(&self, idx: usize) -> (Label, Modality) {
        let r = &self.rows[idx];
        if let Some(tap) = self.tap.borrow().as_ref() {
            tap.borrow_mut().push(ProtocolEvent::TagsRead { domain: r.domain, split: r.split });
        }
        let label = if r.label_genuine { Label::Genuine } else { Label::Fake };
        let modality = if r.label_genuine {
            Modality::Real
        } else {
            let i = self
                .spoof_modalities
                .iter()
                .position(|m| *m == r.modality)
                .expect("validated at parse");
            Modality::Spoof(i)
        };
        (label, modality)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].split == split).collect()
    }

    /// Sorted distinct subjects of a split.
    pub fn subjects(&self, split: Split) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.rows.iter().filter(|r| r.split == split) {
            if !out.contains(&r.subject) {
                out.push(r.subject.clone());
            }
        }
        out.sort();
        out
    }

    pub fn indices_for_subjects(&self, split: Split, subjects: &[String]) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| {
                self.rows[i].split == split && subjects.contains(&self.rows[i].subject)
            })
            .collect()
    }

    /// Videos of a split, sorted by id, frames in frame order.
    pub fn videos(&self, split: Split) -> Vec<VideoGroup> {
        self.videos_of_indices(&self.indices(split))
    }

    /// Group arbitrary sample indices into videos, sorted by video id,
    /// frames in frame order.
    pub fn videos_of_indices(&self, indices: &[usize]) -> Vec<VideoGroup> {
        let mut groups: BTreeMap<&str, VideoGroup> = BTreeMap::new();
        for &i in indices {
            let r = &self.rows[i];
            groups
                .entry(&r.video)
                .or_insert_with(|| VideoGroup {
                    video: r.video.clone(),
                    subject: r.subject.clone(),
                    frame_indices: Vec::new(),
                })
                .frame_indices
                .push(i);
        }
        let mut out: Vec<VideoGroup> = groups.into_values().collect();
        for g in &mut out {
            g.frame_indices.sort_by_key(|&i| self.rows[i].frame);
        }
        out
    }

    /// Materialize samples into a training pool (reads tags).
    pub fn to_pool(&self, indices: &[usize]) -> Result<SamplePool> {
        if indices.is_empty() {
            return Err(HarnessError::validation("cannot build a pool from zero samples"));
        }
        // subjects get dense numeric ids in sorted order
        let mut subjects: Vec<&str> =
            indices.iter().map(|&i| self.rows[i].subject.as_str()).collect();
        subjects.sort_unstable();
        subjects.dedup();
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let (label, modality) = self.tags(i);
            let subject = subjects
                .binary_search(&self.rows[i].subject.as_str())
                .expect("subject present") as u32;
            samples.push(PoolSample { pixels: self.images[i].clone(), label, modality, subject });
        }
        Ok(SamplePool::new(samples, self.spoof_modalities.to_vec())?)
    }

    /// Push a phase marker onto the installed tap, if any.
    pub fn mark(&self, label: &str) {
        if let Some(tap) = self.tap.borrow().as_ref() {
            tap.borrow_mut().push(ProtocolEvent::Marker(label.to_string()));
        }
    }
}

/// Train/test/devel index views of one dataset.
#[derive(Debug, Clone)]
pub struct SplitViews {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub devel: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    /// Use the manifest's declared train/test/devel columns.
    Declared,
    /// No declared development set: split the declared test subjects into
    /// two halves, development and new test, subject-disjoint.
    EqualSplitDevel,
}

impl SplitScheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "table1" | "declared" => Some(SplitScheme::Declared),
            "equal-split-devel" => Some(SplitScheme::EqualSplitDevel),
            _ => None,
        }
    }
}

/// Build subject-disjoint train/test/devel views.
pub fn split_protocol(dataset: &Dataset, scheme: SplitScheme, seed: u64) -> Result<SplitViews> {
    match scheme {
        SplitScheme::Declared => {
            let views = SplitViews {
                train: dataset.indices(Split::Train),
                test: dataset.indices(Split::Test),
                devel: dataset.indices(Split::Devel),
            };
            for (name, v) in
                [("train", &views.train), ("test", &views.test), ("devel", &views.devel)]
            {
                if v.is_empty() {
                    return Err(HarnessError::validation(format!(
                        "declared split scheme: dataset has no {name} samples"
                    )));
                }
            }
            Ok(views)
        }
        SplitScheme::EqualSplitDevel => {
            let mut subjects = dataset.subjects(Split::Test);
            if subjects.len() < 2 {
                return Err(HarnessError::validation(format!(
                    "equal-split-devel needs at least 2 test subjects, got {}",
                    subjects.len()
                )));
            }
            let mut rng = kadapt_core::rng::Rng::stream(seed, "equal-split-devel");
            rng.shuffle(&mut subjects);
            let devel_count = subjects.len() / 2;
            let devel_subjects: Vec<String> = subjects[..devel_count].to_vec();
            let test_subjects: Vec<String> = subjects[devel_count..].to_vec();
            Ok(SplitViews {
                train: dataset.indices(Split::Train),
                test: dataset.indices_for_subjects(Split::Test, &test_subjects),
                devel: dataset.indices_for_subjects(Split::Test, &devel_subjects),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::MANIFEST_HEADER;
    use std::path::PathBuf;

    fn write_frame(dir: &Path, name: &str, value: f64) {
        let values = vec![value; 16];
        imageio::write_pgm(&dir.join(name), 4, 4, &values).unwrap();
    }

    fn demo_dataset(name: &str) -> (Dataset, PathBuf) {
        let dir = std::env::temp_dir().join(format!("kadapt-ds-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut rows = Vec::new();
        let mut line = |subject: &str, split: &str, modality: &str, video: &str, frame: u32| {
            let file = format!("{video}_f{frame}.pgm");
            write_frame(&dir, &file, 0.5);
            let label = if modality == "real" { "genuine" } else { "fake" };
            rows.push(format!(
                "{file}\ttarget\t{label}\t{modality}\t{subject}\t{split}\t{video}\t{frame}"
            ));
        };
        for (si, subject) in ["s01", "s02", "s03", "s04"].iter().enumerate() {
            let split = if si < 2 { "train" } else { "test" };
            line(subject, split, "real", &format!("{subject}_real_0"), 0);
            line(subject, split, "real", &format!("{subject}_real_0"), 1);
            line(subject, split, "print", &format!("{subject}_print_0"), 0);
            line(subject, split, "video", &format!("{subject}_video_0"), 0);
        }
        let text = format!("{MANIFEST_HEADER}\n{}\n", rows.join("\n"));
        let manifest_path = dir.join("manifest.tsv");
        std::fs::write(&manifest_path, text).unwrap();
        (Dataset::load(&manifest_path, 4, 1).unwrap(), dir)
    }

    #[test]
    fn load_and_views() {
        let (ds, _dir) = demo_dataset("views");
        assert_eq!(ds.len(), 16);
        assert_eq!(ds.spoof_modalities(), &["print".to_string(), "video".to_string()]);
        assert_eq!(ds.indices(Split::Train).len(), 8);
        assert_eq!(ds.subjects(Split::Test), vec!["s03".to_string(), "s04".to_string()]);
        let videos = ds.videos(Split::Train);
        assert_eq!(videos.len(), 6);
        let real = videos.iter().find(|v| v.video == "s01_real_0").unwrap();
        assert_eq!(real.frame_indices.len(), 2);
    }

    #[test]
    fn tags_are_recorded_on_the_tap() {
        let (ds, _dir) = demo_dataset("tap");
        let tap = new_tap();
        ds.install_tap(tap.clone());
        ds.mark("phase-one");
        let train = ds.indices(Split::Train);
        let _pool = ds.to_pool(&train).unwrap();
        let events = tap.borrow();
        assert_eq!(events[0], ProtocolEvent::Marker("phase-one".to_string()));
        let reads = events
            .iter()
            .filter(|e| matches!(e, ProtocolEvent::TagsRead { split: Split::Train, .. }))
            .count();
        assert_eq!(reads, 8);
        assert!(!events
            .iter()
            .any(|e| matches!(e, ProtocolEvent::TagsRead { split: Split::Test, .. })));
    }

    #[test]
    fn equal_split_devel_is_subject_disjoint_and_deterministic() {
        let (ds, _dir) = demo_dataset("equalsplit");
        let a = split_protocol(&ds, SplitScheme::EqualSplitDevel, 9).unwrap();
        let b = split_protocol(&ds, SplitScheme::EqualSplitDevel, 9).unwrap();
        assert_eq!(a.devel, b.devel);
        assert_eq!(a.test, b.test);
        assert!(!a.devel.is_empty() && !a.test.is_empty());
        let devel_subjects: Vec<String> =
            a.devel.iter().map(|&i| ds.meta(i).subject).collect();
        let test_subjects: Vec<String> = a.test.iter().map(|&i| ds.meta(i).subject).collect();
        for s in &devel_subjects {
            assert!(!test_subjects.contains(s), "subject {s} in both devel and test");
        }
        // union of views covers the dataset
        let total = a.train.len() + a.test.len() + a.devel.len();
        assert_eq!(total, ds.len());
    }

    #[test]
    fn declared_scheme_requires_all_three_splits() {
        let (ds, _dir) = demo_dataset("declared");
        assert!(split_protocol(&ds, SplitScheme::Declared, 1).is_err()); // no devel rows
    }

    #[test]
    fn pool_round_trip_preserves_counts() {
        let (ds, _dir) = demo_dataset("pool");
        let pool = ds.to_pool(&ds.indices(Split::Train)).unwrap();
        assert_eq!(pool.len(), 8);
        let genuine = pool
            .samples()
            .iter()
            .filter(|s| s.label == kadapt_core::metrics::Label::Genuine)
            .count();
        assert_eq!(genuine, 4);
    }

    #[test]
    fn missing_image_is_a_validation_error_naming_the_row() {
        let dir = std::env::temp_dir().join(format!("kadapt-ds-missing-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let text = format!(
            "{MANIFEST_HEADER}\nnope.pgm\tsource\tgenuine\treal\ts01\ttrain\tv_a\t0\n"
        );
        let manifest_path = dir.join("manifest.tsv");
        std::fs::write(&manifest_path, text).unwrap();
        let err = Dataset::load(&manifest_path, 4, 1).err().unwrap();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
