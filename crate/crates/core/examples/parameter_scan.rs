//! Rank CPM parameter sets by m = mean(W) × mean(IoU) on a small grid.
//! The full reference grid is `ScanGrid::reference()` (648 sets).
//!
//!     cargo run --release --example parameter_scan

use cellsynth::fixtures::{voronoi_spheroid, SpheroidSpec};
use cellsynth::scan::{grid_scan, ScanGrid, ScanOptions};

fn main() -> cellsynth::Result<()> {
    let initial = voronoi_spheroid(&SpheroidSpec {
        shape: [20, 20, 20],
        n_cells: 10,
        radius_fraction: 0.9,
        seed: 1,
    })?;
    let grid = ScanGrid {
        lambda_volume: vec![2.0, 10.0],
        lambda_surface: vec![0.001, 4.0],
        j_cell_cell: vec![2.0, 8.0],
        j_cell_medium: vec![55.0],
        ..ScanGrid::reference()
    };
    let opts = ScanOptions {
        n_mcs: 50,
        ..Default::default()
    };
    let report = grid_scan(&initial, &grid, &opts)?;
    println!("rank  λV     λA     Jcc   mean W   mean IoU   m");
    for (rank, r) in report.records.iter().enumerate() {
        let p = r.params;
        println!(
            "{:>4}  {:<6} {:<6} {:<5} {:>7.3}  {:>8.3}  {:>7.3}",
            rank + 1,
            p.lambda_volume,
            p.lambda_surface,
            p.j_cell_cell,
            r.mean_w,
            r.mean_iou,
            r.metric_m
        );
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    println!("csv: {} bytes, {} rows", csv.len(), report.records.len());
    Ok(())
}
