//! Built-in synthetic domain-shift benchmark.
//!
//! Two small image datasets (source and target) with a learnable class
//! signal and a real domain gap:
//!
//! - every frame carries a smooth radial blob (the face; position and
//!   width vary per subject and video);
//! - spoof frames additionally carry a sinusoidal texture overlay - the
//!   presentation surface - with a per-modality base orientation and
//!   frequency; the overlay is the class signal;
//! - the domains differ photometrically (brightness, contrast, noise),
//!   texturally (a per-domain frequency shift of the overlays) and through
//!   a camera carrier: a faint diagonal grating the target sensor stamps
//!   on *every* frame, genuine or spoof. A source-trained model that keys
//!   on raw texture energy confuses carrier with overlay and collapses on
//!   the target; a model whose features are aligned per class/modality has
//!   to become carrier-invariant and keeps the classes apart.
//!
//! Generation is keyed: every subject, video and frame derives its own
//! random stream from the spec seed, so outputs are byte-identical for a
//! fixed spec regardless of generation order.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use kadapt_core::rng::Rng;

use crate::error::{HarnessError, Result};
use crate::imageio;
use crate::manifest::{self, Domain, ManifestRow, Split};

/// Per-domain photometric transform applied after pattern rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricShift {
    pub brightness: f64,
    pub contrast: f64,
    pub noise_sigma: f64,
}

/// Per-domain recipe: photometric shift, a texture perturbation added to
/// every spoof modality's base frequency, and a camera carrier - a faint
/// diagonal grating superimposed on every frame of the domain (genuine and
/// spoof alike), the way a sensor leaves moire on everything it captures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainRecipe {
    pub photometric: PhotometricShift,
    pub texture_freq_shift: f64,
    pub carrier_amplitude: f64,
    pub carrier_freq: f64,
}

/// Everything the generator needs; all counts are per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub side: usize,
    pub seed: u64,
    pub subjects_train: usize,
    pub subjects_test: usize,
    pub subjects_devel: usize,
    /// Genuine videos per subject.
    pub real_videos_per_subject: usize,
    /// Spoof videos per subject per modality.
    pub fake_videos_per_subject: usize,
    pub frames_per_video: usize,
    /// Spoof modality names, e.g. print and video.
    pub modalities: Vec<String>,
    /// Base overlay frequency (cycles per image) per modality.
    pub base_frequencies: Vec<f64>,
    /// Strength of the spoof texture overlay.
    pub overlay_amplitude: f64,
    pub source: DomainRecipe,
    pub target: DomainRecipe,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            side: 16,
            seed: 0,
            subjects_train: 6,
            subjects_test: 6,
            subjects_devel: 6,
            real_videos_per_subject: 2,
            fake_videos_per_subject: 2,
            frames_per_video: 5,
            modalities: vec!["print".to_string(), "video".to_string()],
            base_frequencies: vec![3.0, 4.5],
            overlay_amplitude: 0.35,
            source: DomainRecipe {
                photometric: PhotometricShift { brightness: 0.0, contrast: 1.0, noise_sigma: 0.02 },
                texture_freq_shift: 0.0,
                carrier_amplitude: 0.0,
                carrier_freq: 5.0,
            },
            target: DomainRecipe {
                photometric: PhotometricShift {
                    brightness: 0.15,
                    contrast: 0.75,
                    noise_sigma: 0.05,
                },
                texture_freq_shift: 1.5,
                carrier_amplitude: 0.3,
                carrier_freq: 5.0,
            },
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 8 {
            return Err(HarnessError::validation("synthetic side must be at least 8"));
        }
        if self.modalities.is_empty() {
            return Err(HarnessError::validation("need at least one spoof modality"));
        }
        if self.modalities.len() != self.base_frequencies.len() {
            return Err(HarnessError::validation(format!(
                "{} modalities but {} base frequencies",
                self.modalities.len(),
                self.base_frequencies.len()
            )));
        }
        for count in [
            self.subjects_train,
            self.subjects_test,
            self.subjects_devel,
            self.real_videos_per_subject,
            self.fake_videos_per_subject,
            self.frames_per_video,
        ] {
            if count == 0 {
                return Err(HarnessError::validation(
                    "all subject/video/frame counts must be positive",
                ));
            }
        }
        for recipe in [&self.source, &self.target] {
            let p = recipe.photometric;
            if !(p.brightness.is_finite() && p.contrast.is_finite() && p.noise_sigma.is_finite()) {
                return Err(HarnessError::validation("photometric shifts must be finite"));
            }
            if p.noise_sigma < 0.0 || p.contrast <= 0.0 {
                return Err(HarnessError::validation(
                    "noise sigma must be >= 0 and contrast > 0",
                ));
            }
            if recipe.carrier_amplitude < 0.0 || !(recipe.carrier_freq > 0.0) {
                return Err(HarnessError::validation(
                    "carrier amplitude must be >= 0 and carrier frequency > 0",
                ));
            }
        }
        if self.base_frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(HarnessError::validation("base frequencies must be positive"));
        }
        if !(self.overlay_amplitude > 0.0) {
            return Err(HarnessError::validation("overlay amplitude must be positive"));
        }
        Ok(())
    }
}

/// Paths of the two generated manifests.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
}

struct VideoPattern {
    genuine: bool,
    // face blob, present in every frame
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
    // spoof texture overlay (zeroed for genuine videos)
    frequency: f64,
    orientation: f64,
    phase: f64,
    // camera carrier, drawn per video from the domain recipe
    carrier_amplitude: f64,
    carrier_freq: f64,
    carrier_orientation: f64,
}

fn domain_index(domain: Domain) -> u64 {
    match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

fn split_tag(split: Split) -> &'static str {
    match split {
        Split::Train => "tr",
        Split::Test => "te",
        Split::Devel => "de",
    }
}

/// Render one frame as `side*side` values in [0, 1].
fn render_frame(
    spec: &SyntheticSpec,
    recipe: &DomainRecipe,
    pattern: &VideoPattern,
    frame_rng: &mut Rng,
) -> Vec<f64> {
    let side = spec.side;
    let mut out = vec![0.0; side * side];
    // small per-frame drift keeps consecutive frames correlated but distinct
    let drift_x = frame_rng.uniform(-0.02, 0.02);
    let drift_y = frame_rng.uniform(-0.02, 0.02);
    let drift_phase = frame_rng.uniform(-0.3, 0.3);
    let carrier_phase = frame_rng.uniform(0.0, 2.0 * PI);
    let carrier_dir = pattern.carrier_orientation;
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5) / side as f64;
            let v = (y as f64 + 0.5) / side as f64;
            let dx = u - (pattern.cx + drift_x);
            let dy = v - (pattern.cy + drift_y);
            let r2 = dx * dx + dy * dy;
            let mut base =
                0.2 + pattern.amplitude * (-r2 / (2.0 * pattern.sigma * pattern.sigma)).exp();
            if !pattern.genuine {
                let t = u * pattern.orientation.cos() + v * pattern.orientation.sin();
                base += spec.overlay_amplitude
                    * (2.0 * PI * pattern.frequency * t + pattern.phase + drift_phase).sin();
            }
            let tc = u * carrier_dir.cos() + v * carrier_dir.sin();
            let carrier = pattern.carrier_amplitude
                * (2.0 * PI * pattern.carrier_freq * tc + carrier_phase).sin();
            let p = recipe.photometric;
            let shifted = p.contrast * (base + carrier - 0.5)
                + 0.5
                + p.brightness
                + p.noise_sigma * frame_rng.normal();
            out[y * side + x] = shifted.clamp(0.0, 1.0);
        }
    }
    out
}

fn video_pattern(
    spec: &SyntheticSpec,
    recipe: &DomainRecipe,
    domain: Domain,
    subject_global: u64,
    cell: usize, // 0 = real, 1 + m = modality m
    video_idx: usize,
) -> VideoPattern {
    let mut subject_rng = Rng::keyed(spec.seed, "subject", &[domain_index(domain), subject_global]);
    let subj_cx = subject_rng.uniform(0.35, 0.65);
    let subj_cy = subject_rng.uniform(0.35, 0.65);
    let subj_phase = subject_rng.uniform(0.0, 2.0 * PI);

    let mut rng = Rng::keyed(
        spec.seed,
        "video",
        &[domain_index(domain), subject_global, cell as u64, video_idx as u64],
    );
    let cx = subj_cx + rng.uniform(-0.05, 0.05);
    let cy = subj_cy + rng.uniform(-0.05, 0.05);
    let sigma = rng.uniform(0.14, 0.2);
    let amplitude = rng.uniform(0.6, 0.8);
    // a wide per-video spread keeps carrier energy from being a usable
    // ranking signal: it straddles the overlay energy on both sides
    let mut carrier_rng = Rng::keyed(
        spec.seed,
        "carrier",
        &[domain_index(domain), subject_global, cell as u64, video_idx as u64],
    );
    let carrier_amplitude = recipe.carrier_amplitude * carrier_rng.uniform(0.3, 1.4);
    let carrier_freq = recipe.carrier_freq * carrier_rng.uniform(0.55, 1.3);
    let carrier_orientation = carrier_rng.uniform(PI * 20.0 / 180.0, PI * 70.0 / 180.0);
    if cell == 0 {
        VideoPattern {
            genuine: true,
            cx,
            cy,
            sigma,
            amplitude,
            frequency: 0.0,
            orientation: 0.0,
            phase: 0.0,
            carrier_amplitude,
            carrier_freq,
            carrier_orientation,
        }
    } else {
        let m = cell - 1;
        let n = spec.modalities.len();
        let base_orientation = if n == 1 { 0.0 } else { (m as f64) * PI / (2.0 * (n - 1) as f64) };
        VideoPattern {
            genuine: false,
            cx,
            cy,
            sigma,
            amplitude,
            frequency: spec.base_frequencies[m] + recipe.texture_freq_shift
                + rng.uniform(-0.25, 0.25),
            orientation: base_orientation + rng.uniform(-0.1, 0.1),
            phase: subj_phase + rng.uniform(0.0, 2.0 * PI),
            carrier_amplitude,
            carrier_freq,
            carrier_orientation,
        }
    }
}

fn generate_domain(
    spec: &SyntheticSpec,
    domain: Domain,
    out_dir: &Path,
) -> Result<PathBuf> {
    let recipe = match domain {
        Domain::Source => &spec.source,
        Domain::Target => &spec.target,
    };
    let domain_dir = out_dir.join(domain.as_str());
    let image_dir = domain_dir.join("images");
    fs::create_dir_all(&image_dir)?;

    let mut rows: Vec<ManifestRow> = Vec::new();
    let splits = [
        (Split::Train, spec.subjects_train),
        (Split::Test, spec.subjects_test),
        (Split::Devel, spec.subjects_devel),
    ];
    let mut subject_global: u64 = 0;
    for (split, subject_count) in splits {
        for s in 0..subject_count {
            let subject = format!("{}_{}{:02}", domain.as_str(), split_tag(split), s);
            for cell in 0..=spec.modalities.len() {
                let videos = if cell == 0 {
                    spec.real_videos_per_subject
                } else {
                    spec.fake_videos_per_subject
                };
                let modality = if cell == 0 {
                    "real".to_string()
                } else {
                    spec.modalities[cell - 1].clone()
                };
                for v in 0..videos {
                    let pattern =
                        video_pattern(spec, recipe, domain, subject_global, cell, v);
                    let video = format!("{subject}_{modality}_{v}");
                    for f in 0..spec.frames_per_video {
                        let mut frame_rng = Rng::keyed(
                            spec.seed,
                            "frame",
                            &[
                                domain_index(domain),
                                subject_global,
                                cell as u64,
                                v as u64,
                                f as u64,
                            ],
                        );
                        let values = render_frame(spec, recipe, &pattern, &mut frame_rng);
                        let file = format!("{video}_f{f}.pgm");
                        imageio::write_pgm(&image_dir.join(&file), spec.side, spec.side, &values)?;
                        rows.push(ManifestRow {
                            path: format!("images/{file}"),
                            domain,
                            label_genuine: cell == 0,
                            modality: modality.clone(),
                            subject: subject.clone(),
                            split,
                            video: video.clone(),
                            frame: f as u32,
                        });
                    }
                }
            }
            subject_global += 1;
        }
    }
    let manifest_path = domain_dir.join("manifest.tsv");
    manifest::save(&manifest_path, &rows)?;
    Ok(manifest_path)
}

/// Generate both domains under `out_dir` (`source/` and `target/`
/// subdirectories, each with `manifest.tsv` and an `images/` folder).
pub fn generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    Ok(SynthOutput {
        source_manifest: generate_domain(spec, Domain::Source, out_dir)?,
        target_manifest: generate_domain(spec, Domain::Target, out_dir)?,
    })
}
