//! RD-curve CSV parsing for `bdrate`.
//!
//! Accepted layout: `label,bitrate_kbps,quality_db`, one point per row,
//! with an optional header line.

use anyhow::{bail, Context};
use hbvc_core::metrics::RdCurve;
use std::path::Path;

pub fn read_curve(path: &Path) -> anyhow::Result<RdCurve> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading curve {}", path.display()))?;
    let mut curve = RdCurve::new(path.display().to_string());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            bail!("{}:{}: expected label,bitrate_kbps,quality_db", path.display(), lineno + 1);
        }
        let (bitrate, quality) = (fields[1].parse::<f64>(), fields[2].parse::<f64>());
        match (bitrate, quality) {
            (Ok(bitrate), Ok(quality)) => curve.push(bitrate, quality, fields[0]),
            _ if lineno == 0 => continue, // header line
            _ => bail!("{}:{}: non-numeric point", path.display(), lineno + 1),
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let with = dir.path().join("a.csv");
        std::fs::write(&with, "label,bitrate_kbps,quality_db\nop0,100.5,30.1\nop1,50,28\n").unwrap();
        let curve = read_curve(&with).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[0].bitrate, 100.5);

        let without = dir.path().join("b.csv");
        std::fs::write(&without, "op0,100,30\n").unwrap();
        assert_eq!(read_curve(&without).unwrap().points.len(), 1);
    }

    #[test]
    fn rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "op0,100,30\nop1,oops,31\n").unwrap();
        assert!(read_curve(&bad).is_err());
    }
}
