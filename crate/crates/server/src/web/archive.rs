//! Reproducible result archives.

use std::io::{Cursor, Write};

use pathquant_core::QuantResult;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipWriter};

/// Members of every result archive, in archive order.
pub const MEMBERS: [&str; 10] = [
    "dapi.png",
    "hema.png",
    "lap2.png",
    "marker.png",
    "original.png",
    "overlay.png",
    "scoring.csv",
    "scoring.json",
    "seg.png",
    "seg_raw.png",
];

pub fn scoring_json(s: &QuantResult) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(s).expect("scoring serializes");
    out.push(b'\n');
    out
}

pub fn scoring_csv(s: &QuantResult) -> Vec<u8> {
    format!("num_total,num_pos,percent_pos\n{},{},{}\n", s.num_total, s.num_pos, s.percent_pos).into_bytes()
}

/// Builds the archive from `(name, bytes)` pairs. Members are sorted by
/// name and stamped 1980-01-01 00:00, so equal inputs give equal bytes.
pub fn build(mut members: Vec<(String, Vec<u8>)>) -> zip::result::ZipResult<Vec<u8>> {
    members.sort_by(|a, b| a.0.cmp(&b.0));
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    for (name, bytes) in &members {
        zip.start_file(name.as_str(), opts)?;
        zip.write_all(bytes)?;
    }
    Ok(zip.finish()?.into_inner())
}
