//! Clean a label mask, compute the seven shape features and compare two
//! ensembles with the 1D Wasserstein distance.
//!
//!     cargo run --release --example morphology_features

use cellsynth::fixtures::{voronoi_spheroid, SpheroidSpec};
use cellsynth::morphology::{
    clean_labels, close_and_dilate, extract_features, mean_iou, principal_axes, wasserstein_1d,
    Feature,
};

fn main() -> cellsynth::Result<()> {
    let cells = voronoi_spheroid(&SpheroidSpec {
        shape: [32, 32, 32],
        n_cells: 20,
        radius_fraction: 0.9,
        seed: 7,
    })?;

    let cleaned = clean_labels(&cells, 50, 4);
    let closed = close_and_dilate(&cleaned, 1)?;
    println!(
        "labels: {} raw, {} after cleaning",
        cells.labels().len(),
        cleaned.labels().len()
    );
    println!(
        "IoU(raw, closed+dilated) = {:.3}",
        mean_iou(&cells, &closed)?
    );

    let table = extract_features(&closed);
    print!(
        "{}",
        table
            .to_csv_string()
            .lines()
            .take(4)
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!("\n...");

    let frame = principal_axes(&closed, 1)?;
    println!(
        "cell 1: centroid {:?}, axis lengths {:?}",
        frame.centroid,
        frame.axis_lengths()
    );

    let other = extract_features(&voronoi_spheroid(&SpheroidSpec {
        seed: 8,
        ..Default::default()
    })?);
    for f in Feature::ALL {
        let w = wasserstein_1d(&table.column(f), &other.column(f))?;
        println!("W1[{:<18}] = {w:.4} {}", f.name(), f.unit());
    }
    Ok(())
}
