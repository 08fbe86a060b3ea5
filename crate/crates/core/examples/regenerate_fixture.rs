//! Rewrites `fixtures/synthetic/*.csv` from the fixture generator.

use std::path::Path;

fn main() -> scalemix::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic");
    std::fs::create_dir_all(&dir)?;
    let panel = scalemix::workbench::fixture::generate()?;
    scalemix::panel::export_files(&panel, &dir.join("stations.csv"), &dir.join("values.csv"))?;
    println!("wrote {} values to {}", panel.values().len(), dir.display());
    Ok(())
}
