//! Run the Cellular Potts model on a synthetic spheroid with permuted
//! targets and report energy, acceptance and shape drift.
//!
//!     cargo run --release --example cpm_simulation

use cellsynth::cpm::{CpmParams, CpmState};
use cellsynth::fixtures::{voronoi_spheroid, SpheroidSpec};
use cellsynth::morphology::{extract_features, mean_iou};
use cellsynth::scan::feature_distances;

fn main() -> cellsynth::Result<()> {
    let initial = voronoi_spheroid(&SpheroidSpec::default())?;
    let mut state = CpmState::new(initial.clone(), CpmParams::best(), 42)?;
    let targets = state.assign_targets(7)?;
    println!(
        "cell {} takes the targets of cell {}",
        targets.labels[0], targets.sources[0]
    );

    let e0 = state.energy();
    let out = state.run_mcs(100, 25);
    state.verify_caches()?;
    let s = &out.stats;
    println!(
        "H: {e0:.1} -> {:.1}; accepted {}/{} ({:.1}%)",
        state.energy(),
        s.accepted,
        s.attempted,
        100.0 * s.accepted as f64 / s.attempted as f64
    );
    for snap in &out.snapshots {
        println!(
            "  mcs {:>4}: {} cells, IoU vs start {:.3}",
            snap.mcs,
            snap.lattice.labels().len(),
            mean_iou(&initial, &snap.lattice)?
        );
    }

    let w = feature_distances(
        &extract_features(&initial),
        &extract_features(state.lattice()),
    )?;
    println!("W per feature: {w:.3?}");
    println!("vanished cells: {:?}", state.vanished_cells());
    println!(
        "border voxels: {}",
        state.export_borders().foreground_count()
    );
    Ok(())
}
