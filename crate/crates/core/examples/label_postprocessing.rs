//! Turn a binary nucleus signal plus simulated cell labels into nucleus
//! instance labels by cutting along the cell membranes.
//!
//!     cargo run --release --example label_postprocessing

use cellsynth::fixtures::{voronoi_spheroid, SpheroidSpec};
use cellsynth::metrics::{det_score, seg_score};
use cellsynth::morphology::component_count;
use cellsynth::postproc::{borders_to_binary_membrane, instance_labels, PostprocConfig};

fn main() -> cellsynth::Result<()> {
    let cells = voronoi_spheroid(&SpheroidSpec::default())?;
    let membrane = borders_to_binary_membrane(&cells, 1)?;
    println!(
        "membrane voxels: {} of {} cell voxels",
        membrane.sum(),
        cells.foreground_count()
    );

    // a prediction covering every cell voxel; touching neighbours are only
    // separable through the membrane
    let pred = cells.map(|l| (l != 0) as u8 as f32 * 0.9);
    let cfg = PostprocConfig::default();
    let inst = instance_labels(&pred, &cells, &cfg, 1.0)?;
    let split = inst
        .labels()
        .iter()
        .filter(|&&l| component_count(&inst, l) == 1)
        .count();
    println!(
        "{} instances, {} of them single components",
        inst.labels().len(),
        split
    );

    println!(
        "SEG vs cells {:.3}, DET vs cells {:.3}",
        seg_score(&cells, &inst)?,
        det_score(&cells, &inst)?
    );
    Ok(())
}
