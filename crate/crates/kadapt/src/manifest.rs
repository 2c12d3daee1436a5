//! Sample manifests: delimited text with a header row and `#` comments.
//!
//! Columns, in order: path, domain, label, modality, subject, split, video,
//! frame. The format is line-oriented and diff-friendly on purpose; every
//! validation failure names the offending row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub const MANIFEST_HEADER: &str = "path\tdomain\tlabel\tmodality\tsubject\tsplit\tvideo\tframe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Domain::Source),
            "target" => Some(Domain::Target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
    Devel,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Devel => "devel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "devel" => Some(Split::Devel),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest row. `label_genuine` and `modality` are coupled: genuine
/// if and only if the modality is "real".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub domain: Domain,
    pub label_genuine: bool,
    pub modality: String,
    pub subject: String,
    pub split: Split,
    pub video: String,
    pub frame: u32,
}

/// A parsed, validated manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Distinct spoof modalities, sorted (deterministic index assignment).
    pub spoof_modalities: Vec<String>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

fn row_err(line: usize, msg: impl fmt::Display) -> HarnessError {
    HarnessError::validation(format!("manifest row {line}: {msg}"))
}

/// Parse and validate manifest text. Layout errors and invariant
/// violations name the 1-based line they were found on.
pub fn parse(text: &str) -> Result<Manifest> {
    let mut rows = Vec::new();
    let mut line_numbers = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != MANIFEST_HEADER {
                return Err(row_err(line_no, format!("expected header '{MANIFEST_HEADER}'")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(row_err(line_no, format!("expected 8 columns, got {}", fields.len())));
        }
        let domain = Domain::parse(fields[1])
            .ok_or_else(|| row_err(line_no, format!("unknown domain '{}'", fields[1])))?;
        let label_genuine = match fields[2] {
            "genuine" => true,
            "fake" => false,
            other => return Err(row_err(line_no, format!("unknown label '{other}'"))),
        };
        let modality = fields[3].to_string();
        if !valid_token(&modality) {
            return Err(row_err(line_no, format!("unknown modality '{modality}'")));
        }
        if label_genuine != (modality == "real") {
            return Err(row_err(
                line_no,
                format!(
                    "label '{}' conflicts with modality '{modality}' (genuine <=> real)",
                    fields[2]
                ),
            ));
        }
        let split = Split::parse(fields[5])
            .ok_or_else(|| row_err(line_no, format!("unknown split '{}'", fields[5])))?;
        let frame: u32 = fields[7]
            .parse()
            .map_err(|_| row_err(line_no, format!("bad frame index '{}'", fields[7])))?;
        if fields[0].is_empty() {
            return Err(row_err(line_no, "empty path"));
        }
        if !valid_token(fields[4]) {
            return Err(row_err(line_no, format!("bad subject id '{}'", fields[4])));
        }
        if !valid_token(fields[6]) {
            return Err(row_err(line_no, format!("bad video id '{}'", fields[6])));
        }
        rows.push(ManifestRow {
            path: fields[0].to_string(),
            domain,
            label_genuine,
            modality,
            subject: fields[4].to_string(),
            split,
            video: fields[6].to_string(),
            frame,
        });
        line_numbers.push(line_no);
    }
    if !header_seen {
        return Err(HarnessError::validation("manifest has no header row"));
    }
    if rows.is_empty() {
        return Err(HarnessError::validation("manifest has no sample rows"));
    }
    validate_subjects(&rows, &line_numbers)?;
    validate_videos(&rows, &line_numbers)?;

    let mut spoof: BTreeSet<String> = BTreeSet::new();
    for r in &rows {
        if !r.label_genuine {
            spoof.insert(r.modality.clone());
        }
    }
    Ok(Manifest { rows, spoof_modalities: spoof.into_iter().collect() })
}

/// Subjects must be split-disjoint within a domain.
fn validate_subjects(rows: &[ManifestRow], line_numbers: &[usize]) -> Result<()> {
    let mut seen: BTreeMap<(Domain, &str), Split> = BTreeMap::new();
    for (r, line) in rows.iter().zip(line_numbers) {
        match seen.get(&(r.domain, r.subject.as_str())) {
            None => {
                seen.insert((r.domain, r.subject.as_str()), r.split);
            }
            Some(split) if *split == r.split => {}
            Some(split) => {
                return Err(HarnessError::validation(format!(
                    "manifest row {line}: subject '{}' leaks across splits ({} and {})",
                    r.subject, split, r.split
                )));
            }
        }
    }
    Ok(())
}

/// A video id carries one subject, label, modality, domain and split.
fn validate_videos(rows: &[ManifestRow], line_numbers: &[usize]) -> Result<()> {
    let mut seen: BTreeMap<&str, (&ManifestRow, usize)> = BTreeMap::new();
    for (r, line) in rows.iter().zip(line_numbers) {
        match seen.get(r.video.as_str()) {
            None => {
                seen.insert(r.video.as_str(), (r, *line));
            }
            Some((first, first_line)) => {
                let consistent = first.subject == r.subject
                    && first.label_genuine == r.label_genuine
                    && first.modality == r.modality
                    && first.domain == r.domain
                    && first.split == r.split;
                if !consistent {
                    return Err(HarnessError::validation(format!(
                        "manifest row {line}: video '{}' disagrees with row {first_line}",
                        r.video
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| {
        HarnessError::validation(format!("cannot read manifest {}: {e}", path.display()))
    })?;
    parse(&text)
}

/// Serialize rows in their given order, bit-stable.
pub fn render(rows: &[ManifestRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + 64);
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.path,
            r.domain.as_str(),
            if r.label_genuine { "genuine" } else { "fake" },
            r.modality,
            r.subject,
            r.split.as_str(),
            r.video,
            r.frame
        ));
    }
    out
}

pub fn save(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    fs::write(path, render(rows))?;
    Ok(())
}
