//! SEG and DET for instance labels, KID between two image volumes.
//!
//!     cargo run --release --example metrics

use cellsynth::fixtures::{ellipsoid_nuclei, NucleiSpec};
use cellsynth::imaging::{simulate_imaging, ImagingConfig};
use cellsynth::io::DType;
use cellsynth::metrics::{
    det_counts, kid_volumes, object_matches, seg_score, HistogramExtractor, KidOptions,
};

fn main() -> cellsynth::Result<()> {
    let (img, gt) = ellipsoid_nuclei(&NucleiSpec {
        n_nuclei: 6,
        ..Default::default()
    })?;

    // drop one object, merge two, shift the ids
    let pred = gt.map(|l| match l {
        0 | 6 => 0,
        2 => 101,
        l => l + 100,
    });
    for m in object_matches(&gt, &pred)? {
        println!("gt {} -> {:?} IoU {:.3}", m.gt_label, m.pred_label, m.iou);
    }
    let c = det_counts(&gt, &pred)?;
    println!(
        "SEG {:.3}; DET {:.3} (FN {}, FP {}, NS {})",
        seg_score(&gt, &pred)?,
        c.det(),
        c.FN,
        c.FP,
        c.NS
    );

    let imaging = |gain: f64, seed: u64| {
        let cfg = ImagingConfig {
            psf_sigma: [0.0; 3],
            intensity_scale: 200.0,
            photon_gain: gain,
            read_noise_sigma: 2.0,
            output_dtype: DType::F32,
            ..Default::default()
        };
        simulate_imaging(&img, &cfg, seed).map(|r| r.image)
    };
    let real = imaging(1.0, 1)?;
    let same = imaging(1.0, 2)?;
    let noisier = imaging(0.05, 3)?;
    // naive baseline: noise with the real image's mean, no structure
    let mean = real.mean() as f32;
    let naive = cellsynth::imaging::add_noise(&real.map(|_| mean), 1.0, 2.0, 4, DType::F32)?;
    let opts = KidOptions::default();
    for (name, other) in [
        ("same model", &same),
        ("low photon count", &noisier),
        ("naive noise", &naive),
    ] {
        let fx = HistogramExtractor::for_volumes(&[&real, other])?;
        let k = kid_volumes(&real, other, &fx, &opts)?;
        println!("KID vs {name:<16}: {:.5} ± {:.5}", k.kid, k.std_error);
    }
    Ok(())
}
