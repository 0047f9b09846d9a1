//! Scenarios, benchmark harness, LLM initializer and SVG rendering on top of
//! [`conpose_core`].

pub mod harness;
pub mod llm;
pub mod render;
pub mod scenario;

use std::io::Write;

use conpose_core::sim::EpisodeRecord;

/// Writes one JSON object per trajectory sample.
pub fn write_trajectory_jsonl<W: Write>(record: &EpisodeRecord, mut out: W) -> std::io::Result<()> {
    for sample in &record.trajectory {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
