//! Forward model from phantom to a noisy 16-bit image: depth attenuation,
//! Gaussian PSF, block downsampling, Poisson and read noise.
//!
//!     cargo run --release --example imaging_simulation

use cellsynth::imaging::{gaussian_kernel, pre_noise, simulate_imaging, ImagingConfig};
use cellsynth::io::DType;
use cellsynth::{Volume, VolumeGeometry};

fn main() -> cellsynth::Result<()> {
    let geom = VolumeGeometry::new([16, 32, 32], [1.0, 0.5, 0.5])?;
    let mut phantom = Volume::filled(geom, 0.0f32);
    for z in 4..12 {
        for y in 8..24 {
            for x in 8..24 {
                phantom.set(z, y, x, 1.0);
            }
        }
    }

    println!("kernel σ=1: {:.4?}", gaussian_kernel(1.0));

    let cfg = ImagingConfig {
        attenuation_mu: 0.05,
        psf_sigma: [1.5, 1.0, 1.0],
        downsample_factors: [1, 2, 2],
        intensity_scale: 500.0,
        photon_gain: 2.0,
        read_noise_sigma: 3.0,
        output_dtype: DType::U16,
    };
    let clean = pre_noise(&phantom, &cfg)?;
    let run = simulate_imaging(&phantom, &cfg, 11)?;
    println!(
        "output shape {:?}, spacing {:?}",
        run.image.shape(),
        run.image.spacing()
    );
    for z in [4, 8, 11] {
        println!(
            "  z={z:>2}: clean {:>7.1}, noisy {:>7.1}",
            clean.get(z, 8, 8),
            run.image.get(z, 8, 8)
        );
    }

    // the neutral config is the identity before noise, and nearly so after
    let neutral = ImagingConfig::neutral();
    println!(
        "neutral pre-noise identity: {}",
        pre_noise(&phantom, &neutral)? == phantom
    );
    let noisy = simulate_imaging(&phantom, &neutral, 0)?.image;
    let dev = noisy
        .data()
        .iter()
        .zip(phantom.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("neutral max deviation after noise: {dev:.2e}");
    Ok(())
}
