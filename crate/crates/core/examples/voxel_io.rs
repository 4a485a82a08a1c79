//! Write a label volume and an intensity volume as TIFF and RVOL, read them
//! back and compare.
//!
//!     cargo run --example voxel_io

use cellsynth::io::{self, DType, FileFormat, RawVolume};
use cellsynth::{Volume, VolumeGeometry};

fn main() -> cellsynth::Result<()> {
    let dir = std::env::temp_dir().join("cellsynth_voxel_io");
    let geom = VolumeGeometry::new([6, 16, 20], [2.0, 0.5, 0.5])?;

    let mut labels = Volume::filled(geom, 0u32);
    for z in 1..5 {
        for y in 2..14 {
            for x in 2..18 {
                labels.set(z, y, x, if x < 10 { 1 } else { 2 });
            }
        }
    }
    let intensity = labels.map(|l| l as f32 * 100.5);

    for ext in ["tif", "rvol"] {
        let lp = dir.join(format!("labels.{ext}"));
        let ip = dir.join(format!("intensity.{ext}"));
        io::save_labels(&labels, &lp)?;
        io::save_intensity(&intensity, &ip)?;

        let (back, warnings) = io::load_labels(&lp)?;
        let (img, dtype, _) = io::load_intensity(&ip)?;
        println!(
            "{ext:>4}: labels equal = {}, spacing = {:?}, intensity dtype = {}, max = {}, warnings = {}",
            back == labels,
            back.spacing(),
            dtype.name(),
            img.min_max().1,
            warnings.len()
        );
    }

    // explicit dtype: an 8-bit RVOL mask
    let mask = RawVolume::from_labels(&labels.map(|l| (l != 0) as u32), DType::U8)?;
    let path = dir.join("mask.rvol");
    io::save_volume(&mask, &path, FileFormat::Rvol)?;
    let loaded = io::load_volume(&path)?;
    println!(
        "mask: dtype {}, {} voxels, payload {}",
        loaded.volume.dtype().name(),
        loaded.volume.data.len(),
        io::rvol_payload_path(&path).display()
    );
    Ok(())
}
