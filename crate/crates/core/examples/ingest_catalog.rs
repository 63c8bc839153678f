//! Ingest a catalog at the scale of the curated study (100 artists with 20
//! tracks each, plus a few incomplete entries) into the canonical CSV.

use anyhow::Result;
use songpop::pipeline::cmd_ingest;
use songpop::synthetic::curated_catalog;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let catalog = dir.path().join("catalog.json");
    std::fs::write(&catalog, serde_json::to_string_pretty(&curated_catalog(100, 20, 3))?)?;
    let out = dir.path().join("out/tracks.csv");
    let s = cmd_ingest(&catalog, &out)?;
    println!("artists {}  tracks {}  dropped incomplete {}", s.artists, s.tracks, s.dropped_incomplete);
    let text = std::fs::read_to_string(&out)?;
    for line in text.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
