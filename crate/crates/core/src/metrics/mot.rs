//! MOT-style CSV: `frame,id,x,y,w,h,conf` per line, top-left box corner,
//! 1-indexed frames. Extra trailing columns are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{Rect, TrackRecord};
use crate::error::{Error, Result};

/// Parses records; `source` names the input in error messages.
pub fn parse_mot(text: &str, source: &str) -> Result<Vec<TrackRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                file: source.to_string(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse {
            file: source.to_string(),
            line,
            message,
        };
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() < 7 {
            return Err(err(format!("expected 7 fields, found {}", row.len())));
        }
        let frame: u32 = row[0]
            .parse()
            .map_err(|_| err(format!("frame `{}` is not a positive integer", &row[0])))?;
        if frame == 0 {
            return Err(err("frames are 1-indexed".into()));
        }
        let track_id: u64 = row[1]
            .parse()
            .map_err(|_| err(format!("id `{}` is not a non-negative integer", &row[1])))?;
        let mut nums = [0.0; 5];
        for (k, slot) in nums.iter_mut().enumerate() {
            let field = &row[2 + k];
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("field {} `{field}` is not a finite number", k + 3)))?;
        }
        let [x, y, w, h, confidence] = nums;
        if w < 0.0 || h < 0.0 {
            return Err(err(format!("negative box size {w}x{h}")));
        }
        if !seen.insert((frame, track_id)) {
            return Err(err(format!("duplicate record for frame {frame}, id {track_id}")));
        }
        out.push(TrackRecord {
            frame,
            track_id,
            rect: Rect { x, y, w, h },
            confidence,
        });
    }
    Ok(out)
}

pub fn read_mot(path: &Path) -> Result<Vec<TrackRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_mot(&text, &path.display().to_string())
}

/// One LF-terminated line per record, in the given order.
pub fn format_mot(records: &[TrackRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.frame, r.track_id, r.rect.x, r.rect.y, r.rect.w, r.rect.h, r.confidence
        );
    }
    s
}

pub fn write_mot(path: &Path, records: &[TrackRecord]) -> Result<()> {
    std::fs::write(path, format_mot(records))?;
    Ok(())
}
