//! Command-line surface: synth / train / eval / cross-test /
//! project-features / report. Exit codes: 0 success, 1 usage, 2
//! validation, 3 runtime.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kadapt_core::metrics::Label;
use kadapt_core::model::ModelParams;
use kadapt_core::train::Objective;

use crate::checkpoint;
use crate::config::{self, ConfigFile, TrainSettings};
use crate::dataset::{split_protocol, Dataset, SplitScheme};
use crate::error::{HarnessError, Result};
use crate::formats::{self, ComparisonRow, ProjectedRow};
use crate::manifest::Split;
use crate::pipeline::{self, CrossTestSettings};
use crate::plot;
use crate::synth;

const USAGE: &str = "\
kadapt - domain-adaptive genuine/fake classifier toolkit

USAGE:
    kadapt <subcommand> [--flag value ...]

SUBCOMMANDS:
    synth             generate the synthetic domain-shift benchmark
                      --out DIR [--config FILE] [--seed N]
    train             train a classifier
                      --source MANIFEST --out DIR [--target MANIFEST]
                      [--config FILE] [--objective stdcnn|unsupervised|semisupervised]
                      [--arch desk|desk-mini|alexnet-shape] [--epochs N]
                      [--batch-size N] [--lambda X] [--learning-rate X]
                      [--seed N] [--labeled-target-subjects K]
                      [--checkpoint-every N]
    eval              score a dataset and report FAR/FRR/HTER/AUC
                      --checkpoint FILE --manifest MANIFEST --out DIR
                      [--split-scheme declared|equal-split-devel] [--seed N]
                      [--tau X]
    cross-test        full source-to-target protocol: train the baseline and
                      both domain objectives, select tau on the target devel
                      split, report HTER on the target test split
                      --source MANIFEST --target MANIFEST --out DIR
                      [--config FILE] [--split-scheme S] [--seed N]
                      [--epochs N] [--batch-size N] [--lambda X]
                      [--learning-rate X] [--labeled-target-subjects K]
                      [--arch NAME]
    project-features  export a principal-component feature projection
                      --checkpoint FILE --manifest MANIFEST --out FILE
                      [--split train|test|devel|all] [--components N]
    report            render delimited summaries and SVG plots
                      --out DIR [--loss-log FILE ...] [--eval FILE ...]
                      [--pca FILE]
    help              print this text
";

struct Flags {
    values: BTreeMap<String, Vec<String>>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Flags> {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(key) = arg.strip_prefix("--") else {
                return Err(HarnessError::usage(format!("expected a --flag, got '{arg}'")));
            };
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    i += 1;
                    let v = args.get(i).ok_or_else(|| {
                        HarnessError::usage(format!("flag --{key} needs a value"))
                    })?;
                    (key.to_string(), v.clone())
                }
            };
            values.entry(key).or_default().push(value);
            i += 1;
        }
        Ok(Flags { values })
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn take(&mut self, key: &str) -> Result<Option<String>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(mut v) if v.len() == 1 => Ok(Some(v.pop().unwrap())),
            Some(_) => Err(HarnessError::usage(format!("flag --{key} given more than once"))),
        }
    }

    fn take_all(&mut self, key: &str) -> Vec<String> {
        self.values.remove(key).unwrap_or_default()
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)?
            .ok_or_else(|| HarnessError::usage(format!("missing required flag --{key}")))
    }

    fn take_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key)? {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| HarnessError::usage(format!("flag --{key}: bad value '{v}'"))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.values.keys().next() {
            return Err(HarnessError::usage(format!("unknown flag --{key}")));
        }
        Ok(())
    }
}

/// Entry point used by `main`; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    match dispatch(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kadapt: {e}");
            if matches!(e, HarnessError::Usage(_)) {
                eprintln!("\n{USAGE}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(sub) = args.first() else {
        return Err(HarnessError::usage("no subcommand"));
    };
    let rest = &args[1..];
    match sub.as_str() {
        "synth" => cmd_synth(Flags::parse(rest)?),
        "train" => cmd_train(Flags::parse(rest)?),
        "eval" => cmd_eval(Flags::parse(rest)?),
        "cross-test" => cmd_cross_test(Flags::parse(rest)?),
        "project-features" => cmd_project(Flags::parse(rest)?),
        "report" => cmd_report(Flags::parse(rest)?),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(HarnessError::usage(format!("unknown subcommand '{other}'"))),
    }
}

fn load_config(flags: &mut Flags) -> Result<ConfigFile> {
    match flags.take("config")? {
        Some(path) => ConfigFile::load(Path::new(&path)),
        None => Ok(ConfigFile::empty()),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_synth(mut flags: Flags) -> Result<()> {
    let out = PathBuf::from(flags.require("out")?);
    let mut cfg = load_config(&mut flags)?;
    let seed_override: Option<u64> = flags.take_parse("seed")?;
    flags.finish()?;
    let mut spec = config::synth_spec(&mut cfg)?;
    cfg.finish()?;
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    ensure_dir(&out)?;
    let result = synth::generate(&spec, &out)?;
    println!("source manifest: {}", result.source_manifest.display());
    println!("target manifest: {}", result.target_manifest.display());
    Ok(())
}

/// Shared train/cross-test settings: config file first, CLI flags override.
fn settings_from(flags: &mut Flags, cfg: &mut ConfigFile) -> Result<TrainSettings> {
    let mut s = config::train_settings(cfg)?;
    if let Some(v) = flags.take("arch")? {
        s.arch = kadapt_core::model::ArchitectureConfig::preset(&v)?;
    }
    if let Some(v) = flags.take("objective")? {
        s.config.objective = Objective::parse(&v)?;
    }
    if let Some(v) = flags.take_parse("epochs")? {
        s.config.epochs = v;
    }
    if let Some(v) = flags.take_parse("batch-size")? {
        s.config.batch_size = v;
    }
    if let Some(v) = flags.take_parse("lambda")? {
        s.config.lambda = v;
    }
    if let Some(v) = flags.take_parse("learning-rate")? {
        s.config.learning_rate = v;
    }
    if let Some(v) = flags.take_parse("seed")? {
        s.config.seed = v;
    }
    if let Some(v) = flags.take_parse("labeled-target-subjects")? {
        s.labeled_target_subjects = v;
    }
    if let Some(v) = flags.take_parse("checkpoint-every")? {
        s.checkpoint_every = v;
    }
    Ok(s)
}

fn cmd_train(mut flags: Flags) -> Result<()> {
    let source_path = PathBuf::from(flags.require("source")?);
    let out = PathBuf::from(flags.require("out")?);
    let target_path: Option<PathBuf> = flags.take("target")?.map(PathBuf::from);
    let mut cfg = load_config(&mut flags)?;
    let objective_given = flags.has("objective") || cfg.contains_key("objective");
    let mut settings = settings_from(&mut flags, &mut cfg)?;
    flags.finish()?;
    cfg.finish()?;
    if !objective_given {
        settings.config.objective =
            if target_path.is_some() { Objective::Semisupervised } else { Objective::StdCnn };
    }

    let side = settings.arch.input_side;
    let channels = settings.arch.input_channels;
    let source = Dataset::load(&source_path, side, channels)?;
    let target = match &target_path {
        Some(p) => Some(Dataset::load(p, side, channels)?),
        None => None,
    };
    let pools = pipeline::build_train_pools(
        &source,
        target.as_ref(),
        settings.labeled_target_subjects,
        settings.config.seed,
    )?;
    if !pools.chosen_subjects.is_empty() {
        println!("labeled target subjects: {}", pools.chosen_subjects.join(", "));
    }
    ensure_dir(&out)?;
    let every = settings.checkpoint_every;
    let out_for_hook = out.clone();
    let mut hook_error: Option<HarnessError> = None;
    let outcome = pipeline::run_training(&pools, &settings, &mut |epoch, params| {
        if every > 0 && (epoch + 1) % every == 0 && hook_error.is_none() {
            let path = out_for_hook.join(format!("checkpoint_epoch_{:04}.ckpt", epoch + 1));
            if let Err(e) = checkpoint::save(&path, params) {
                hook_error = Some(e);
            }
        }
    })?;
    if let Some(e) = hook_error {
        return Err(e);
    }
    checkpoint::save(&out.join("checkpoint.ckpt"), &outcome.params)?;
    formats::write_loss_log(&out.join("train.log"), &outcome.term_names, &outcome.trace)?;
    let last = outcome.trace.last().expect("at least one step");
    println!(
        "trained {} for {} epochs; final batch loss {}",
        settings.config.objective.name(),
        settings.config.epochs,
        formats::fmt_f64(last.total)
    );
    println!("checkpoint: {}", out.join("checkpoint.ckpt").display());
    println!("loss log: {}", out.join("train.log").display());
    Ok(())
}

fn split_scheme_flag(flags: &mut Flags) -> Result<SplitScheme> {
    match flags.take("split-scheme")? {
        None => Ok(SplitScheme::Declared),
        Some(v) => SplitScheme::parse(&v).ok_or_else(|| {
            HarnessError::usage(format!(
                "bad --split-scheme '{v}' (expected declared|table1|equal-split-devel)"
            ))
        }),
    }
}

fn cmd_eval(mut flags: Flags) -> Result<()> {
    let checkpoint_path = PathBuf::from(flags.require("checkpoint")?);
    let manifest_path = PathBuf::from(flags.require("manifest")?);
    let out = PathBuf::from(flags.require("out")?);
    let scheme = split_scheme_flag(&mut flags)?;
    let seed: u64 = flags.take_parse("seed")?.unwrap_or(0);
    let tau_override: Option<f64> = flags.take_parse("tau")?;
    flags.finish()?;

    let params = checkpoint::load(&checkpoint_path)?;
    let dataset = Dataset::load(
        &manifest_path,
        params.arch().input_side,
        params.arch().input_channels,
    )?;

    let (tau, report) = match tau_override {
        Some(tau) => {
            let views = split_protocol(&dataset, scheme, seed)?;
            let videos = dataset.videos_of_indices(&views.test);
            let frame_scores = pipeline::score_frames(&params, &dataset, &views.test)?;
            let records = pipeline::video_records(&dataset, &videos, &frame_scores)?;
            let scores = kadapt_core::metrics::aggregate_all(&records)?;
            (tau, kadapt_core::metrics::evaluate_at(&scores, tau)?)
        }
        None => {
            let views = split_protocol(&dataset, scheme, seed)?;
            let eval = pipeline::evaluate_views(&params, &dataset, &views, "eval")?;
            (eval.tau, eval.report)
        }
    };
    ensure_dir(&out)?;
    formats::write_scores(&out.join("scores.tsv"), &report.scores)?;
    formats::write_report(&out.join("eval.report"), &report)?;
    println!(
        "tau {}  FAR {}  FRR {}  HTER {}  AUC {}",
        formats::fmt_f64(tau),
        formats::fmt_f64(report.far),
        formats::fmt_f64(report.frr),
        formats::fmt_f64(report.hter),
        formats::fmt_f64(report.auc)
    );
    println!("scores: {}", out.join("scores.tsv").display());
    println!("report: {}", out.join("eval.report").display());
    Ok(())
}

fn cmd_cross_test(mut flags: Flags) -> Result<()> {
    let source_path = PathBuf::from(flags.require("source")?);
    let target_path = PathBuf::from(flags.require("target")?);
    let out = PathBuf::from(flags.require("out")?);
    let scheme = split_scheme_flag(&mut flags)?;
    let mut cfg = load_config(&mut flags)?;
    let settings = settings_from(&mut flags, &mut cfg)?;
    flags.finish()?;
    cfg.finish()?;

    let side = settings.arch.input_side;
    let channels = settings.arch.input_channels;
    let source = Dataset::load(&source_path, side, channels)?;
    let target = Dataset::load(&target_path, side, channels)?;

    let result =
        pipeline::cross_test(&source, &target, &CrossTestSettings { train: settings, scheme })?;

    ensure_dir(&out)?;
    let mut comparison = Vec::new();
    println!("labeled target subjects: {}", result.chosen_subjects.join(", "));
    println!(
        "{:<16} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "objective", "tau", "FAR", "FRR", "HTER", "AUC", "ACC"
    );
    for mode in &result.modes {
        let name = mode.objective.name();
        checkpoint::save(&out.join(format!("model_{name}.ckpt")), &mode.outcome.params)?;
        formats::write_loss_log(
            &out.join(format!("train_{name}.log")),
            &mode.outcome.term_names,
            &mode.outcome.trace,
        )?;
        formats::write_scores(
            &out.join(format!("scores_{name}.tsv")),
            &mode.evaluation.report.scores,
        )?;
        formats::write_report(&out.join(format!("eval_{name}.report")), &mode.evaluation.report)?;
        let r = &mode.evaluation.report;
        println!(
            "{name:<16} {:>9.5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            mode.evaluation.tau, r.far, r.frr, r.hter, r.auc, mode.evaluation.accuracy
        );
        comparison.push(ComparisonRow {
            objective: name.to_string(),
            threshold: mode.evaluation.tau,
            far: r.far,
            frr: r.frr,
            hter: r.hter,
            auc: r.auc,
            accuracy: mode.evaluation.accuracy,
        });
    }
    formats::write_comparison(&out.join("comparison.tsv"), &comparison)?;
    println!("comparison: {}", out.join("comparison.tsv").display());
    Ok(())
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    match s {
        "all" => Ok(None),
        other => Split::parse(other).map(Some).ok_or_else(|| {
            HarnessError::usage(format!("bad --split '{other}' (expected train|test|devel|all)"))
        }),
    }
}

fn cmd_project(mut flags: Flags) -> Result<()> {
    let checkpoint_path = PathBuf::from(flags.require("checkpoint")?);
    let manifest_path = PathBuf::from(flags.require("manifest")?);
    let out = PathBuf::from(flags.require("out")?);
    let split = match flags.take("split")? {
        None => Some(Split::Test),
        Some(v) => parse_split(&v)?,
    };
    let components: usize = flags.take_parse("components")?.unwrap_or(3);
    flags.finish()?;

    let params = checkpoint::load(&checkpoint_path)?;
    let dataset = Dataset::load(
        &manifest_path,
        params.arch().input_side,
        params.arch().input_channels,
    )?;
    let indices: Vec<usize> = match split {
        Some(s) => dataset.indices(s),
        None => (0..dataset.len()).collect(),
    };
    if indices.is_empty() {
        return Err(HarnessError::validation("no samples in the requested split"));
    }
    let (variance, rows) = project_rows(&params, &dataset, &indices, components)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    formats::write_projection(&out, &variance, &rows)?;
    println!("projected {} samples onto {} components", rows.len(), components);
    println!("projection: {}", out.display());
    Ok(())
}

/// Feature projection of dataset samples (shared with tests).
pub fn project_rows(
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    components: usize,
) -> Result<(Vec<f64>, Vec<ProjectedRow>)> {
    let features = pipeline::features_of(params, dataset, indices)?;
    let projection = kadapt_core::pca::pca_project(&features, components)?;
    let mut rows = Vec::with_capacity(indices.len());
    for (pos, &i) in indices.iter().enumerate() {
        let meta = dataset.meta(i);
        let (label, modality) = dataset.tags(i);
        let modality_name = match modality {
            kadapt_core::sampler::Modality::Real => "real".to_string(),
            kadapt_core::sampler::Modality::Spoof(m) => dataset.spoof_modalities()[m].clone(),
        };
        rows.push(ProjectedRow {
            domain: meta.domain.as_str().to_string(),
            subject: meta.subject,
            video: meta.video,
            frame: meta.frame,
            label,
            modality: modality_name,
            coords: projection.projected.row(pos).to_vec(),
        });
    }
    Ok((projection.explained_variance, rows))
}

fn cmd_report(mut flags: Flags) -> Result<()> {
    let out = PathBuf::from(flags.require("out")?);
    let loss_logs = flags.take_all("loss-log");
    let evals = flags.take_all("eval");
    let pca: Option<PathBuf> = flags.take("pca")?.map(PathBuf::from);
    flags.finish()?;
    if loss_logs.is_empty() && evals.is_empty() && pca.is_none() {
        return Err(HarnessError::usage(
            "report needs at least one of --loss-log, --eval, --pca",
        ));
    }
    ensure_dir(&out)?;

    if !loss_logs.is_empty() {
        let mut series = Vec::new();
        for path in &loss_logs {
            let log = formats::load_loss_log(Path::new(path))?;
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.clone());
            let points: Vec<(f64, f64)> =
                log.rows.iter().enumerate().map(|(i, r)| (i as f64, r.total)).collect();
            series.push((stem, points));
        }
        let svg = plot::line_chart("training loss", "step", "loss", &series);
        plot::write_svg(&out.join("loss_curve.svg"), &svg)?;
        println!("loss curve: {}", out.join("loss_curve.svg").display());
    }

    if !evals.is_empty() {
        let mut rows = Vec::new();
        let mut curve_series = Vec::new();
        for path in &evals {
            let report = formats::load_report(Path::new(path))?;
            let stem = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.clone());
            rows.push(ComparisonRow {
                objective: stem.clone(),
                threshold: report.threshold,
                far: report.far,
                frr: report.frr,
                hter: report.hter,
                auc: report.auc,
                accuracy: pipeline::accuracy_at(&report.scores, report.threshold),
            });
            let far_pts: Vec<(f64, f64)> =
                report.curve.iter().map(|(t, far, _)| (*t, *far)).collect();
            let frr_pts: Vec<(f64, f64)> =
                report.curve.iter().map(|(t, _, frr)| (*t, *frr)).collect();
            curve_series.push((format!("{stem} FAR"), far_pts));
            curve_series.push((format!("{stem} FRR"), frr_pts));
        }
        formats::write_comparison(&out.join("eval_summary.tsv"), &rows)?;
        let svg = plot::line_chart("FAR / FRR vs threshold", "tau", "rate", &curve_series);
        plot::write_svg(&out.join("far_frr.svg"), &svg)?;
        println!("eval summary: {}", out.join("eval_summary.tsv").display());
        println!("FAR/FRR curves: {}", out.join("far_frr.svg").display());
    }

    if let Some(pca_path) = pca {
        let text = fs::read_to_string(&pca_path).map_err(|e| {
            HarnessError::validation(format!("cannot read projection {}: {e}", pca_path.display()))
        })?;
        let projection = formats::parse_projection(&text)?;
        let mut class_names: Vec<String> = Vec::new();
        let mut points = Vec::new();
        for r in &projection.rows {
            let class = format!(
                "{} {}",
                r.domain,
                match r.label {
                    Label::Genuine => "genuine",
                    Label::Fake => "fake",
                }
            );
            let class_idx = match class_names.iter().position(|c| *c == class) {
                Some(i) => i,
                None => {
                    class_names.push(class);
                    class_names.len() - 1
                }
            };
            if r.coords.len() >= 2 {
                points.push((r.coords[0], r.coords[1], class_idx));
            }
        }
        let svg = plot::scatter("feature projection", "pc1", "pc2", &class_names, &points);
        plot::write_svg(&out.join("pca_scatter.svg"), &svg)?;
        println!("projection scatter: {}", out.join("pca_scatter.svg").display());
    }
    Ok(())
}
