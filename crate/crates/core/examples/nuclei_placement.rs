//! Build a nucleus prototype database and place one nucleus per cell.
//!
//!     cargo run --release --example nuclei_placement

use cellsynth::fixtures::{ellipsoid_nuclei, voronoi_spheroid, NucleiSpec, SpheroidSpec};
use cellsynth::nuclei::{extract_prototypes, place_nuclei, PlacementConfig, PrototypeDb};

fn main() -> cellsynth::Result<()> {
    let (img, lab) = ellipsoid_nuclei(&NucleiSpec::default())?;
    let db = extract_prototypes(&img, &lab, &lab.labels())?;
    let dir = std::env::temp_dir().join("cellsynth_prototypes");
    db.save(&dir)?;
    let db = PrototypeDb::load(&dir)?;
    println!("{} prototypes saved to {}", db.len(), dir.display());

    let cells = voronoi_spheroid(&SpheroidSpec::default())?;
    let cfg = PlacementConfig::default();
    let p = place_nuclei(&cells, &db, &cfg, 3)?;
    println!(
        "placed {} of {} cells, skipped {:?}",
        p.report.placed,
        p.report.cells.len(),
        p.report.skipped
    );
    for c in p.report.cells.iter().take(5) {
        let tries: usize = c.attempts.iter().map(|a| a.positions.len()).sum();
        println!(
            "  cell {:>2}: {:>5} voxels, N:C {:.3} (target {}), {} position attempts",
            c.label,
            c.cell_voxels,
            c.achieved_ratio(),
            cfg.nc_volume_ratio,
            tries
        );
    }
    let (lo, hi) = p.phantom.min_max();
    println!(
        "phantom range [{lo}, {hi}], nuclei voxels {}",
        p.nuclei.foreground_count()
    );
    Ok(())
}
