//! CSV and JSON writers. Data goes to `<dir>/<stem>.<ext>` or to standard output.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{Format, OutputSection};
use crate::sweep::SweepRecord;

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_unix_time: Option<u64>,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct Records<'a> {
    records: &'a [SweepRecord],
}

fn now(out: &OutputSection) -> Option<u64> {
    out.timestamp
        .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn sink(out: &OutputSection, stem: &str, ext: &str) -> Result<(Box<dyn Write>, Option<PathBuf>)> {
    match &out.dir {
        None => Ok((Box::new(BufWriter::new(io::stdout().lock())), None)),
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{stem}.{ext}"));
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            Ok((Box::new(BufWriter::new(f)), Some(path)))
        }
    }
}

pub fn write_records_to(w: &mut dyn Write, records: &[SweepRecord], format: Format, stamp: Option<u64>) -> Result<()> {
    match format {
        Format::Csv => {
            if let Some(t) = stamp {
                writeln!(w, "# generated_unix_time: {t}")?;
            }
            let mut csv = csv::Writer::from_writer(w);
            for r in records {
                csv.serialize(r)?;
            }
            csv.flush()?;
        }
        Format::Json => {
            let body = Records { records };
            serde_json::to_writer_pretty(&mut *w, &Stamped { generated_unix_time: stamp, body: &body })?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Writes sweep records; returns the file path when one was created.
pub fn emit_records(records: &[SweepRecord], out: &OutputSection, stem: &str) -> Result<Option<PathBuf>> {
    let ext = match out.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let (mut w, path) = sink(out, stem, ext)?;
    write_records_to(&mut w, records, out.format, now(out))?;
    w.flush()?;
    Ok(path)
}

/// Reports are always JSON regardless of the data format.
pub fn emit_report<T: Serialize>(report: &T, out: &OutputSection, stem: &str) -> Result<Option<PathBuf>> {
    let (mut w, path) = sink(out, stem, "json")?;
    serde_json::to_writer_pretty(&mut w, &Stamped { generated_unix_time: now(out), body: report })?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectiveName;
    use crate::sweep::COLUMNS;

    fn rec() -> SweepRecord {
        SweepRecord {
            distance_km: 300.0,
            e_d: 0.02,
            objective: ObjectiveName::Inside,
            n_sifted: None,
            s: None,
            mu: Some(0.5),
            train_len: Some(128),
            nu_th: Some(4),
            q: Some(1e-3),
            q_hat: Some(5e-4),
            e_b: Some(0.02),
            e_src: Some(1e-6),
            e_p: Some(0.03),
            e_p_hat: Some(0.03),
            rate_raw: Some(-1e-9),
            rate: 0.0,
            clamped: true,
            plob: 7.9e-6,
        }
    }

    #[test]
    fn csv_header_matches_documented_columns() {
        let mut buf = Vec::new();
        write_records_to(&mut buf, &[rec()], Format::Csv, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        let row = lines.next().unwrap();
        assert!(row.starts_with("300.0,0.02,inside,,,0.5,128,4,"), "{row}");
        assert!(row.ends_with(",0.0,true,7.9e-6"), "{row}");
    }

    #[test]
    fn timestamp_is_a_single_comment_line() {
        let mut buf = Vec::new();
        write_records_to(&mut buf, &[rec()], Format::Csv, Some(42)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "# generated_unix_time: 42");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn json_roundtrips() {
        let mut buf = Vec::new();
        write_records_to(&mut buf, &[rec()], Format::Json, None).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert!(v.get("generated_unix_time").is_none());
        let back: Vec<SweepRecord> = serde_json::from_value(v["records"].clone()).unwrap();
        assert_eq!(back, vec![rec()]);
    }
}
