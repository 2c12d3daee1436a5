//! Delimited text formats: training loss logs, score files, evaluation
//! reports, feature projections and the cross-test comparison table.
//! Everything is written through one float formatter (shortest round-trip
//! decimal), so identical values give identical bytes.

use std::fs;
use std::path::Path;

use kadapt_core::metrics::{EvalReport, Label, VideoScore};
use kadapt_core::train::TraceRow;

use crate::error::{HarnessError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn label_token(label: Label) -> &'static str {
    match label {
        Label::Genuine => "genuine",
        Label::Fake => "fake",
    }
}

fn parse_label(token: &str) -> Result<Label> {
    match token {
        "genuine" => Ok(Label::Genuine),
        "fake" => Ok(Label::Fake),
        other => Err(HarnessError::validation(format!("unknown label '{other}'"))),
    }
}

// ── loss log ────────────────────────────────────────────────────────

pub const LOSS_LOG_FORMAT: &str = "# kadapt-loss-log v1";

/// Render the per-batch loss trace: epoch, batch, classification term, one
/// column per domain term, total.
pub fn render_loss_log(term_names: &[String], rows: &[TraceRow]) -> String {
    let mut out = String::new();
    out.push_str(LOSS_LOG_FORMAT);
    out.push('\n');
    out.push_str("epoch\tbatch\tloss_class");
    for name in term_names {
        out.push('\t');
        out.push_str(name);
    }
    out.push_str("\tloss_total\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}", r.epoch, r.batch, fmt_f64(r.class_loss)));
        for term in &r.mmd_terms {
            out.push('\t');
            out.push_str(&fmt_f64(*term));
        }
        out.push('\t');
        out.push_str(&fmt_f64(r.total));
        out.push('\n');
    }
    out
}

pub fn write_loss_log(path: &Path, term_names: &[String], rows: &[TraceRow]) -> Result<()> {
    fs::write(path, render_loss_log(term_names, rows))?;
    Ok(())
}

/// Parsed loss log: domain-term column names and rows.
pub struct LossLog {
    pub term_names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

pub fn parse_loss_log(text: &str) -> Result<LossLog> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_FORMAT) {
        return Err(HarnessError::validation("loss log: missing format line"));
    }
    let header = lines.next().ok_or_else(|| HarnessError::validation("loss log: no header"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[0] != "epoch" || cols[1] != "batch" || cols[2] != "loss_class" {
        return Err(HarnessError::validation("loss log: unexpected header layout"));
    }
    if cols[cols.len() - 1] != "loss_total" {
        return Err(HarnessError::validation("loss log: last column must be loss_total"));
    }
    let term_names: Vec<String> = cols[3..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(HarnessError::validation(format!(
                "loss log row {}: expected {} columns",
                i + 1,
                cols.len()
            )));
        }
        let parse_f = |t: &str| -> Result<f64> {
            t.parse().map_err(|_| {
                HarnessError::validation(format!("loss log row {}: bad number '{t}'", i + 1))
            })
        };
        rows.push(TraceRow {
            epoch: fields[0].parse().map_err(|_| {
                HarnessError::validation(format!("loss log row {}: bad epoch", i + 1))
            })?,
            batch: fields[1].parse().map_err(|_| {
                HarnessError::validation(format!("loss log row {}: bad batch", i + 1))
            })?,
            class_loss: parse_f(fields[2])?,
            mmd_terms: fields[3..fields.len() - 1]
                .iter()
                .map(|t| parse_f(t))
                .collect::<Result<Vec<f64>>>()?,
            total: parse_f(fields[fields.len() - 1])?,
        });
    }
    Ok(LossLog { term_names, rows })
}

pub fn load_loss_log(path: &Path) -> Result<LossLog> {
    let text = fs::read_to_string(path).map_err(|e| {
        HarnessError::validation(format!("cannot read loss log {}: {e}", path.display()))
    })?;
    parse_loss_log(&text)
}

// ── scores file ─────────────────────────────────────────────────────

pub const SCORES_HEADER: &str = "video\tsubject\tlabel\tscore";

pub fn render_scores(scores: &[VideoScore]) -> String {
    let mut out = String::new();
    out.push_str(SCORES_HEADER);
    out.push('\n');
    for s in scores {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.video,
            s.subject,
            label_token(s.label),
            fmt_f64(s.score)
        ));
    }
    out
}

pub fn write_scores(path: &Path, scores: &[VideoScore]) -> Result<()> {
    fs::write(path, render_scores(scores))?;
    Ok(())
}

pub fn parse_scores(text: &str) -> Result<Vec<VideoScore>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCORES_HEADER) {
        return Err(HarnessError::validation("scores file: missing header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(HarnessError::validation(format!(
                "scores row {}: expected 4 columns",
                i + 1
            )));
        }
        out.push(VideoScore {
            video: fields[0].to_string(),
            subject: fields[1].to_string(),
            label: parse_label(fields[2])?,
            score: fields[3].parse().map_err(|_| {
                HarnessError::validation(format!("scores row {}: bad score", i + 1))
            })?,
        });
    }
    Ok(out)
}

// ── evaluation report ───────────────────────────────────────────────

pub const REPORT_FORMAT: &str = "kadapt-eval-report v1";

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(REPORT_FORMAT);
    out.push('\n');
    out.push_str(&format!("threshold: {}\n", fmt_f64(report.threshold)));
    out.push_str(&format!("far: {}\n", fmt_f64(report.far)));
    out.push_str(&format!("frr: {}\n", fmt_f64(report.frr)));
    out.push_str(&format!("hter: {}\n", fmt_f64(report.hter)));
    out.push_str(&format!("auc: {}\n", fmt_f64(report.auc)));
    out.push_str(&format!("genuine_videos: {}\n", report.genuine_videos));
    out.push_str(&format!("fake_videos: {}\n", report.fake_videos));
    out.push_str("[scores]\n");
    out.push_str(&render_scores(&report.scores));
    out.push_str("[curve]\n");
    out.push_str("tau\tfar\tfrr\n");
    for (tau, far, frr) in &report.curve {
        out.push_str(&format!("{}\t{}\t{}\n", fmt_f64(*tau), fmt_f64(*far), fmt_f64(*frr)));
    }
    out
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    fs::write(path, render_report(report))?;
    Ok(())
}

pub fn parse_report(text: &str) -> Result<EvalReport> {
    let bad = |msg: &str| HarnessError::validation(format!("eval report: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_FORMAT) {
        return Err(bad("missing format line"));
    }
    let mut scalar = |name: &str| -> Result<f64> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(&format!("{name}: "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(&format!("bad '{name}' line")))
    };
    let threshold = scalar("threshold")?;
    let far = scalar("far")?;
    let frr = scalar("frr")?;
    let hter = scalar("hter")?;
    let auc = scalar("auc")?;
    let genuine_videos = scalar("genuine_videos")? as usize;
    let fake_videos = scalar("fake_videos")? as usize;
    if lines.next() != Some("[scores]") {
        return Err(bad("missing [scores] section"));
    }
    let mut score_lines = vec![SCORES_HEADER.to_string()];
    let mut curve = Vec::new();
    let mut in_curve = false;
    let mut curve_header_seen = false;
    for line in lines {
        if line == "[curve]" {
            in_curve = true;
            continue;
        }
        if !in_curve {
            score_lines.push(line.to_string());
        } else if !curve_header_seen {
            if line != "tau\tfar\tfrr" {
                return Err(bad("missing curve header"));
            }
            curve_header_seen = true;
        } else if !line.is_empty() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("curve row must have 3 columns"));
            }
            let p = |t: &str| -> Result<f64> {
                t.parse().map_err(|_| bad(&format!("bad curve value '{t}'")))
            };
            curve.push((p(fields[0])?, p(fields[1])?, p(fields[2])?));
        }
    }
    // the [scores] section repeats its own header on line one
    if score_lines.len() >= 2 && score_lines[1] == SCORES_HEADER {
        score_lines.remove(1);
    }
    let scores = parse_scores(&score_lines.join("\n"))?;
    Ok(EvalReport {
        threshold,
        far,
        frr,
        hter,
        auc,
        genuine_videos,
        fake_videos,
        scores,
        curve,
    })
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| {
        HarnessError::validation(format!("cannot read report {}: {e}", path.display()))
    })?;
    parse_report(&text)
}

// ── feature projection export ───────────────────────────────────────

/// One projected sample with its tags.
pub struct ProjectedRow {
    pub domain: String,
    pub subject: String,
    pub video: String,
    pub frame: u32,
    pub label: Label,
    pub modality: String,
    pub coords: Vec<f64>,
}

pub fn render_projection(explained_variance: &[f64], rows: &[ProjectedRow]) -> String {
    let mut out = String::new();
    let ev: Vec<String> = explained_variance.iter().map(|v| fmt_f64(*v)).collect();
    out.push_str(&format!("# explained_variance: {}\n", ev.join("\t")));
    out.push_str("domain\tsubject\tvideo\tframe\tlabel\tmodality");
    for i in 0..explained_variance.len() {
        out.push_str(&format!("\tpc{}", i + 1));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.domain,
            r.subject,
            r.video,
            r.frame,
            label_token(r.label),
            r.modality
        ));
        for c in &r.coords {
            out.push('\t');
            out.push_str(&fmt_f64(*c));
        }
        out.push('\n');
    }
    out
}

pub fn write_projection(path: &Path, explained_variance: &[f64], rows: &[ProjectedRow]) -> Result<()> {
    fs::write(path, render_projection(explained_variance, rows))?;
    Ok(())
}

pub struct Projection {
    pub explained_variance: Vec<f64>,
    pub rows: Vec<ProjectedRow>,
}

pub fn parse_projection(text: &str) -> Result<Projection> {
    let bad = |msg: &str| HarnessError::validation(format!("projection file: {msg}"));
    let mut lines = text.lines();
    let ev_line = lines.next().ok_or_else(|| bad("empty file"))?;
    let ev: Vec<f64> = ev_line
        .strip_prefix("# explained_variance: ")
        .ok_or_else(|| bad("missing explained_variance line"))?
        .split('\t')
        .map(|t| t.parse().map_err(|_| bad("bad variance value")))
        .collect::<Result<Vec<f64>>>()?;
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    let expected_cols = 6 + ev.len();
    if header.split('\t').count() != expected_cols {
        return Err(bad("unexpected header layout"));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != expected_cols {
            return Err(bad("row width mismatch"));
        }
        rows.push(ProjectedRow {
            domain: f[0].to_string(),
            subject: f[1].to_string(),
            video: f[2].to_string(),
            frame: f[3].parse().map_err(|_| bad("bad frame"))?,
            label: parse_label(f[4])?,
            modality: f[5].to_string(),
            coords: f[6..]
                .iter()
                .map(|t| t.parse().map_err(|_| bad("bad coordinate")))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(Projection { explained_variance: ev, rows })
}

// ── cross-test comparison table ─────────────────────────────────────

pub const COMPARISON_HEADER: &str = "objective\tthreshold\tfar\tfrr\thter\tauc\taccuracy";

pub struct ComparisonRow {
    pub objective: String,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
    pub auc: f64,
    pub accuracy: f64,
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    out.push_str(COMPARISON_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.objective,
            fmt_f64(r.threshold),
            fmt_f64(r.far),
            fmt_f64(r.frr),
            fmt_f64(r.hter),
            fmt_f64(r.auc),
            fmt_f64(r.accuracy)
        ));
    }
    out
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    fs::write(path, render_comparison(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_log_round_trip() {
        let rows = vec![
            TraceRow { epoch: 0, batch: 0, class_loss: 0.69, mmd_terms: vec![0.1, 0.2], total: 0.84 },
            TraceRow { epoch: 0, batch: 1, class_loss: 0.5, mmd_terms: vec![0.05, 0.1], total: 0.575 },
        ];
        let names = vec!["mmd_real".to_string(), "mmd_print".to_string()];
        let text = render_loss_log(&names, &rows);
        let parsed = parse_loss_log(&text).unwrap();
        assert_eq!(parsed.term_names, names);
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.rows[1].mmd_terms, vec![0.05, 0.1]);
        assert_eq!(render_loss_log(&parsed.term_names, &parsed.rows), text);
    }

    #[test]
    fn scores_round_trip_bit_exact() {
        let scores = vec![
            VideoScore {
                video: "v1".into(),
                subject: "s1".into(),
                label: Label::Genuine,
                score: 0.123456789012345,
            },
            VideoScore {
                video: "v2".into(),
                subject: "s2".into(),
                label: Label::Fake,
                score: 1.0 / 3.0,
            },
        ];
        let text = render_scores(&scores);
        let parsed = parse_scores(&text).unwrap();
        for (a, b) in scores.iter().zip(&parsed) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a.label, b.label);
        }
        assert_eq!(render_scores(&parsed), text);
    }

    #[test]
    fn report_round_trip() {
        use kadapt_core::metrics::{evaluate_at, scores_from_pairs};
        let scores = scores_from_pairs(&[
            (Label::Genuine, 0.9),
            (Label::Genuine, 0.7),
            (Label::Fake, 0.4),
            (Label::Fake, 0.2),
        ]);
        let report = evaluate_at(&scores, 0.55).unwrap();
        let text = render_report(&report);
        let parsed = parse_report(&text).unwrap();
        assert_eq!(parsed.threshold.to_bits(), report.threshold.to_bits());
        assert_eq!(parsed.hter, report.hter);
        assert_eq!(parsed.scores.len(), report.scores.len());
        assert_eq!(parsed.curve, report.curve);
        assert_eq!(render_report(&parsed), text);
    }

    #[test]
    fn projection_round_trip() {
        let rows = vec![ProjectedRow {
            domain: "source".into(),
            subject: "s1".into(),
            video: "v1".into(),
            frame: 3,
            label: Label::Fake,
            modality: "print".into(),
            coords: vec![0.5, -1.25, 3.0],
        }];
        let text = render_projection(&[2.0, 1.0, 0.5], &rows);
        let parsed = parse_projection(&text).unwrap();
        assert_eq!(parsed.explained_variance, vec![2.0, 1.0, 0.5]);
        assert_eq!(parsed.rows[0].coords, vec![0.5, -1.25, 3.0]);
        assert_eq!(parsed.rows[0].modality, "print");
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(parse_loss_log("nope").is_err());
        assert!(parse_scores("bad header\n").is_err());
        assert!(parse_report("kadapt-eval-report v2\n").is_err());
        assert!(parse_projection("no variance line\n").is_err());
    }
}
