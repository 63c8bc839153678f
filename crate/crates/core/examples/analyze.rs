//! Correlation table and month-by-year popularity heatmap for a synthetic
//! catalog.

use anyhow::Result;
use songpop::config::RunConfig;
use songpop::pipeline::cmd_analyze;
use songpop::synthetic::{catalog_value, synthetic_records, CorpusSpec};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let catalog = dir.path().join("catalog.json");
    let records = synthetic_records(&CorpusSpec {
        n_artists: 40,
        tracks_per_artist: 10,
        ..CorpusSpec::default()
    });
    std::fs::write(&catalog, catalog_value(&records).to_string())?;
    let cfg = RunConfig {
        catalog: Some(catalog),
        out_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let a = cmd_analyze(&cfg)?;
    println!("correlation with popularity (ascending):");
    for (name, r) in &a.correlation.rows {
        println!("  {name:<18} {r:+.4}");
    }
    println!("heatmap years {:?}", a.heatmap.years);
    if let Some((mean, n)) = a.heatmap.cell(a.heatmap.years[0], 1) {
        println!("  {}-01: mean {mean:.1} over {n} tracks", a.heatmap.years[0]);
    }
    Ok(())
}
