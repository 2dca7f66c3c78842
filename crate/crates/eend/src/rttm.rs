//! RTTM speaker segments.
//!
//! One line per segment:
//! `SPEAKER <file-id> 1 <onset> <duration> <NA> <NA> <speaker> <NA> <NA>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eend_core::{Segment, SegmentList};

use crate::error::{CliError, Result};

/// Formats segments of one recording, times to two decimals.
pub fn format_rttm(file_id: &str, segs: &SegmentList) -> String {
    let mut out = String::new();
    for s in &segs.entries {
        writeln!(
            out,
            "SPEAKER {file_id} 1 {:.2} {:.2} <NA> <NA> {} <NA> <NA>",
            s.onset,
            s.offset - s.onset,
            s.speaker
        )
        .expect("writing to a String");
    }
    out
}

/// Parses RTTM text into per-recording segment lists. Blank lines and
/// lines starting with `#` are skipped; non-SPEAKER records are ignored.
pub fn parse_rttm(text: &str, origin: &Path) -> Result<BTreeMap<String, SegmentList>> {
    let mut out: BTreeMap<String, SegmentList> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| CliError::format(origin, format!("line {}: {what}: {line:?}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(bad("expected at least 8 fields"));
        }
        let onset: f64 = fields[3].parse().map_err(|_| bad("bad onset"))?;
        let dur: f64 = fields[4].parse().map_err(|_| bad("bad duration"))?;
        if !(onset >= 0.0 && dur > 0.0) {
            return Err(bad("onset must be >= 0 and duration > 0"));
        }
        out.entry(fields[1].to_string())
            .or_default()
            .push(Segment::new(fields[7], onset, onset + dur));
    }
    Ok(out)
}

pub fn read_rttm(path: &Path) -> Result<BTreeMap<String, SegmentList>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_rttm(&text, path)
}

/// The segments of one `.rttm` file; the recording id is the file stem.
pub fn read_recording(path: &Path) -> Result<(String, SegmentList)> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::format(path, "file name is not valid UTF-8"))?
        .to_string();
    let mut all = read_rttm(path)?;
    let segs = all.remove(&id).unwrap_or_default();
    if let Some(other) = all.keys().next() {
        return Err(CliError::format(path, format!("contains segments of another recording {other:?}")));
    }
    Ok((id, segs))
}

pub fn write_recording(dir: &Path, file_id: &str, segs: &SegmentList) -> Result<PathBuf> {
    let path = dir.join(format!("{file_id}.rttm"));
    std::fs::write(&path, format_rttm(file_id, segs)).map_err(CliError::io(&path))?;
    Ok(path)
}

/// Every `*.rttm` under `dir` keyed by recording id, or a single file.
pub fn read_rttm_set(path: &Path) -> Result<BTreeMap<String, SegmentList>> {
    if path.is_file() {
        let (id, segs) = read_recording(path)?;
        return Ok(BTreeMap::from([(id, segs)]));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(path).map_err(CliError::io(path))? {
        let p = entry.map_err(CliError::io(path))?.path();
        if p.extension().is_some_and(|e| e == "rttm") {
            let (id, segs) = read_recording(&p)?;
            out.insert(id, segs);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_and_parse_round_trip() {
        let segs = SegmentList::new(vec![Segment::new("spk0", 0.3, 1.25), Segment::new("spk1", 2.0, 2.1)]);
        let text = format_rttm("rec1", &segs);
        assert_eq!(
            text.lines().next().unwrap(),
            "SPEAKER rec1 1 0.30 0.95 <NA> <NA> spk0 <NA> <NA>"
        );
        let back = parse_rttm(&text, Path::new("x")).unwrap();
        let got = &back["rec1"];
        for (a, b) in got.entries.iter().zip(&segs.entries) {
            assert_eq!(a.speaker, b.speaker);
            assert!((a.onset - b.onset).abs() < 1e-9 && (a.offset - b.offset).abs() < 1e-9);
        }
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let err = parse_rttm("SPEAKER a 1 x 1.0 <NA> <NA> s <NA> <NA>\n", Path::new("f.rttm")).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(parse_rttm("SPEAKER a 1 0.0 0.0 <NA> <NA> s <NA> <NA>\n", Path::new("f")).is_err());
        assert!(parse_rttm("SPEAKER a 1 0.0\n", Path::new("f")).is_err());
        assert!(parse_rttm("# note\n\nLEXEME a 1 0 1 x y z\n", Path::new("f")).unwrap().is_empty());
    }
}
