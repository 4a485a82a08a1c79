//! Microscope forward model: depth attenuation, Gaussian PSF, block-mean
//! downsampling and Poisson–Gaussian noise, applied in that order.

use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::DType;
use crate::seed::{derive_seed, rng_from_seed};
use crate::volume::{IntensityVolume, Volume, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    /// Attenuation coefficient in 1/µm; 0 disables attenuation.
    pub attenuation_mu: f64,
    /// PSF standard deviation in µm along (z, y, x).
    pub psf_sigma: [f64; 3],
    pub downsample_factors: [usize; 3],
    /// Multiplies the pre-noise signal into output intensity units.
    pub intensity_scale: f64,
    /// Photon counts per intensity unit.
    pub photon_gain: f64,
    /// Read noise standard deviation in intensity units.
    pub read_noise_sigma: f64,
    pub output_dtype: DType,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            attenuation_mu: 0.0,
            psf_sigma: [1.0, 0.5, 0.5],
            downsample_factors: [1, 1, 1],
            intensity_scale: 1000.0,
            photon_gain: 1.0,
            read_noise_sigma: 5.0,
            output_dtype: DType::U16,
        }
    }
}

impl ImagingConfig {
    /// A configuration under which imaging is the identity up to noise of
    /// negligible size.
    pub fn neutral() -> Self {
        Self {
            attenuation_mu: 0.0,
            psf_sigma: [0.0; 3],
            downsample_factors: [1, 1, 1],
            intensity_scale: 1.0,
            photon_gain: 1e12,
            read_noise_sigma: 0.0,
            output_dtype: DType::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation_mu >= 0.0 && self.attenuation_mu.is_finite()) {
            return Err(Error::arg("attenuation_mu must be >= 0"));
        }
        if self.psf_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::arg("psf_sigma entries must be >= 0"));
        }
        if self.downsample_factors.contains(&0) {
            return Err(Error::arg("downsample factors must be >= 1"));
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale.is_finite()) {
            return Err(Error::arg("intensity_scale must be > 0"));
        }
        if !(self.photon_gain > 0.0 && self.photon_gain.is_finite()) {
            return Err(Error::arg("photon_gain must be > 0"));
        }
        if !(self.read_noise_sigma >= 0.0 && self.read_noise_sigma.is_finite()) {
            return Err(Error::arg("read_noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// `out = in · exp(−mu · z · sz)`, z growing with depth.
pub fn attenuate_depth(v: &IntensityVolume, mu: f64) -> Result<IntensityVolume> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::arg(format!("attenuation mu must be >= 0, got {mu}")));
    }
    let [_, ny, nx] = v.shape();
    let sz = v.spacing()[0];
    let mut out = v.clone();
    out.data_mut()
        .par_chunks_mut(ny * nx)
        .enumerate()
        .for_each(|(z, plane)| {
            let f = (-mu * z as f64 * sz).exp();
            for x in plane.iter_mut() {
                *x = (*x as f64 * f) as f32;
            }
        });
    Ok(out)
}

/// Sampled Gaussian with standard deviation `sigma` voxels, truncated at 4σ
/// and normalized to sum 1. `sigma = 0` gives the unit kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_axis(v: &IntensityVolume, axis: usize, kernel: &[f64]) -> IntensityVolume {
    if kernel.len() == 1 {
        return v.clone();
    }
    let shape = v.shape();
    let geom = *v.geometry();
    let r = (kernel.len() / 2) as isize;
    let stride = [shape[1] * shape[2], shape[2], 1][axis];
    let n = shape[axis];
    let src = v.data();
    let mut out = vec![0.0f32; src.len()];
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let c = geom.coords(i)[axis] as isize;
        let base = i - c as usize * stride;
        let mut acc = 0.0f64;
        for (k, w) in kernel.iter().enumerate() {
            let j = reflect(c + k as isize - r, n);
            acc += w * src[base + j * stride] as f64;
        }
        *o = acc as f32;
    });
    Volume::from_vec(geom, out).expect("same geometry")
}

/// Separable Gaussian blur; `sigma` in µm per axis.
pub fn convolve_psf(v: &IntensityVolume, sigma: [f64; 3]) -> Result<IntensityVolume> {
    if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::arg("psf sigma must be >= 0"));
    }
    let sp = v.spacing();
    let mut out = v.clone();
    for axis in 0..3 {
        out = convolve_axis(&out, axis, &gaussian_kernel(sigma[axis] / sp[axis]));
    }
    Ok(out)
}

/// Block-mean pooling. Trailing partial blocks are averaged over the voxels
/// they contain. Spacing is multiplied by the factors.
pub fn downsample(v: &IntensityVolume, factors: [usize; 3]) -> Result<IntensityVolume> {
    if factors.contains(&0) {
        return Err(Error::arg("downsample factors must be >= 1"));
    }
    if factors == [1, 1, 1] {
        return Ok(v.clone());
    }
    let shape = v.shape();
    let out_shape = [0, 1, 2].map(|a| shape[a].div_ceil(factors[a]));
    let sp = v.spacing();
    let geom = VolumeGeometry::new(out_shape, [0, 1, 2].map(|a| sp[a] * factors[a] as f64))?;
    let src = v.data();
    let mut out = vec![0.0f32; geom.len()];
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let c = geom.coords(i);
        let lo = [0, 1, 2].map(|a| c[a] * factors[a]);
        let hi = [0, 1, 2].map(|a| (lo[a] + factors[a]).min(shape[a]));
        let mut acc = 0.0f64;
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    acc += src[(z * shape[1] + y) * shape[2] + x] as f64;
                }
            }
        }
        let n = (0..3).map(|a| hi[a] - lo[a]).product::<usize>();
        *o = (acc / n as f64) as f32;
    });
    Volume::from_vec(geom, out)
}

/// `Poisson(in · gain) / gain + Normal(0, read_sigma)`, clamped to the range
/// of `dtype` (no clamping for f32). Plane `z` draws from its own stream
/// `derive_seed(seed, z)`.
pub fn add_noise(
    v: &IntensityVolume,
    gain: f64,
    read_sigma: f64,
    seed: u64,
    dtype: DType,
) -> Result<IntensityVolume> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::arg(format!("photon gain must be > 0, got {gain}")));
    }
    if !(read_sigma >= 0.0 && read_sigma.is_finite()) {
        return Err(Error::arg(format!(
            "read noise sigma must be >= 0, got {read_sigma}"
        )));
    }
    if let Some(x) = v.data().iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::arg(format!(
            "noise input must be finite and >= 0, found {x}"
        )));
    }
    let [_, ny, nx] = v.shape();
    let read = Normal::new(0.0, read_sigma).expect("sigma checked");
    let max = dtype.max_value();
    let mut out = v.clone();
    out.data_mut()
        .par_chunks_mut(ny * nx)
        .enumerate()
        .for_each(|(z, plane)| {
            let mut rng = rng_from_seed(derive_seed(seed, z as u64));
            for x in plane.iter_mut() {
                let lambda = *x as f64 * gain;
                let shot = if lambda > 0.0 {
                    Poisson::new(lambda)
                        .expect("positive finite rate")
                        .sample(&mut rng)
                        / gain
                } else {
                    0.0
                };
                let mut y = shot
                    + if read_sigma > 0.0 {
                        read.sample(&mut rng)
                    } else {
                        0.0
                    };
                if let Some(m) = max {
                    y = y.clamp(0.0, m);
                }
                *x = y as f32;
            }
        });
    Ok(out)
}

/// Everything before the noise stage: attenuation, PSF, downsampling and the
/// intensity scale. Linear in the input.
pub fn pre_noise(v: &IntensityVolume, cfg: &ImagingConfig) -> Result<IntensityVolume> {
    cfg.validate()?;
    let a = attenuate_depth(v, cfg.attenuation_mu)?;
    let b = convolve_psf(&a, cfg.psf_sigma)?;
    let c = downsample(&b, cfg.downsample_factors)?;
    let s = cfg.intensity_scale;
    Ok(if s == 1.0 {
        c
    } else {
        c.map(|x| (x as f64 * s) as f32)
    })
}

#[derive(Debug, Clone)]
pub struct ImagingRun {
    pub image: IntensityVolume,
    pub config: ImagingConfig,
    pub seed: u64,
}

/// The full forward model.
pub fn simulate_imaging(v: &IntensityVolume, cfg: &ImagingConfig, seed: u64) -> Result<ImagingRun> {
    v.ensure_finite()?;
    let clean = pre_noise(v, cfg)?;
    let image = add_noise(
        &clean,
        cfg.photon_gain,
        cfg.read_noise_sigma,
        seed,
        cfg.output_dtype,
    )?;
    Ok(ImagingRun {
        image,
        config: *cfg,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn random(shape: [usize; 3], seed: u64) -> IntensityVolume {
        let mut rng = rng_from_seed(seed);
        let geom = VolumeGeometry::isotropic(shape).unwrap();
        Volume::from_vec(
            geom,
            (0..geom.len())
                .map(|_| rng.random_range(0.0..1.0f32))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn attenuation_cases() {
        let v = random([6, 3, 3], 1).with_spacing([0.5, 1.0, 1.0]).unwrap();
        assert_eq!(attenuate_depth(&v, 0.0).unwrap(), v);
        let mu = 0.3;
        let a = attenuate_depth(&v, mu).unwrap();
        for i in 0..9 {
            assert_eq!(a.data()[i], v.data()[i]);
        }
        // depth 2 µm = plane 4
        let ones = Volume::filled(*v.geometry(), 1.0f32);
        let mu = std::f64::consts::LN_2 / 2.0;
        let h = attenuate_depth(&ones, mu).unwrap();
        assert!((h.get(4, 1, 1) as f64 - 0.5).abs() < 1e-6);
        assert!(attenuate_depth(&v, -1.0).is_err());
    }

    #[test]
    fn kernel_properties() {
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
        let k = gaussian_kernel(1.3);
        assert_eq!(k.len(), 2 * 6 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k.windows(2).take(6).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect(-1, 1), 0);
    }

    #[test]
    fn psf_identity_and_constant() {
        let v = random([5, 6, 7], 2);
        assert_eq!(convolve_psf(&v, [0.0; 3]).unwrap(), v);
        let c = Volume::filled(*v.geometry(), 3.5f32);
        let b = convolve_psf(&c, [1.0, 2.0, 3.0]).unwrap();
        assert!(b.data().iter().all(|x| (x - 3.5).abs() < 1e-5));
    }

    #[test]
    fn impulse_matches_dense_convolution() {
        let geom = VolumeGeometry::new([9, 9, 9], [1.0, 0.5, 0.5]).unwrap();
        let mut v = Volume::filled(geom, 0.0f32);
        v.set(4, 4, 4, 1.0);
        let sigma = [0.9, 0.4, 0.3];
        let out = convolve_psf(&v, sigma).unwrap();
        let k: Vec<Vec<f64>> = (0..3)
            .map(|a| gaussian_kernel(sigma[a] / geom.spacing()[a]))
            .collect();
        for z in 0..9 {
            for y in 0..9 {
                for x in 0..9 {
                    // dense oracle: sum over every source voxel of the product weight
                    let mut acc = 0.0;
                    for sz in 0..9isize {
                        for sy in 0..9isize {
                            for sx in 0..9isize {
                                let s = v.get(sz as usize, sy as usize, sx as usize) as f64;
                                if s == 0.0 {
                                    continue;
                                }
                                let d = [z as isize - sz, y as isize - sy, x as isize - sx];
                                let mut w = 1.0;
                                for a in 0..3 {
                                    let r = (k[a].len() / 2) as isize;
                                    w *= if d[a].abs() <= r {
                                        k[a][(d[a] + r) as usize]
                                    } else {
                                        0.0
                                    };
                                }
                                acc += w * s;
                            }
                        }
                    }
                    assert!((out.get(z, y, x) as f64 - acc).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn psf_preserves_total_on_random_input() {
        let v = random([12, 12, 12], 3);
        let b = convolve_psf(&v, [1.0, 1.0, 1.0]).unwrap();
        assert!((b.sum() / v.sum() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn downsample_cases() {
        let v = random([4, 6, 8], 4);
        assert_eq!(downsample(&v, [1, 1, 1]).unwrap(), v);
        let d = downsample(&v, [2, 2, 2]).unwrap();
        assert_eq!(d.shape(), [2, 3, 4]);
        assert_eq!(d.spacing(), [2.0; 3]);
        assert!((d.mean() - v.mean()).abs() < 1e-6);
        let c = Volume::filled(VolumeGeometry::isotropic([2, 2, 2]).unwrap(), 7.0f32);
        assert_eq!(downsample(&c, [2, 2, 2]).unwrap().data(), &[7.0]);
        // remainder block averages over its real size
        let line = Volume::from_vec(
            VolumeGeometry::isotropic([1, 1, 5]).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0, 4.0],
        )
        .unwrap();
        assert_eq!(
            downsample(&line, [1, 1, 2]).unwrap().data(),
            &[1.0, 1.0, 4.0]
        );
        assert!(downsample(&v, [0, 1, 1]).is_err());
    }

    #[test]
    fn noise_statistics() {
        let geom = VolumeGeometry::isotropic([1, 100, 100]).unwrap();
        let (level, gain, sigma) = (50.0, 2.0, 3.0);
        let v = Volume::filled(geom, level as f32);
        let n = add_noise(&v, gain, sigma, 11, DType::F32).unwrap();
        let mean = n.mean();
        let var = n
            .data()
            .iter()
            .map(|&x| (x as f64 - mean).powi(2))
            .sum::<f64>()
            / (n.data().len() - 1) as f64;
        let expect = level / gain + sigma * sigma;
        assert!((var / expect - 1.0).abs() < 0.05, "var {var} vs {expect}");
        assert_eq!(n, add_noise(&v, gain, sigma, 11, DType::F32).unwrap());
        assert_ne!(n, add_noise(&v, gain, sigma, 12, DType::F32).unwrap());

        let ones = Volume::filled(geom, 1.0f32);
        let big = add_noise(&ones, 1e6, 0.0, 1, DType::F32).unwrap();
        assert!(big.data().iter().all(|&x| (x - 1.0).abs() < 0.01));
        let clipped = add_noise(&Volume::filled(geom, 300.0f32), 1.0, 50.0, 1, DType::U8).unwrap();
        assert!(clipped.data().iter().all(|&x| (0.0..=255.0).contains(&x)));
        assert!(add_noise(&Volume::filled(geom, -1.0f32), 1.0, 0.0, 0, DType::F32).is_err());
    }

    #[test]
    fn pipeline_order_and_linearity() {
        let geom = VolumeGeometry::new([8, 4, 4], [0.5, 1.0, 1.0]).unwrap();
        let ramp = Volume::from_vec(
            geom,
            (0..geom.len()).map(|i| (i % 7) as f32 + 1.0).collect(),
        )
        .unwrap();
        let cfg = ImagingConfig {
            attenuation_mu: 0.4,
            psf_sigma: [1.0, 0.0, 0.0],
            downsample_factors: [2, 1, 1],
            intensity_scale: 1.0,
            ..ImagingConfig::neutral()
        };
        let piped = pre_noise(&ramp, &cfg).unwrap();
        let direct = downsample(
            &convolve_psf(&attenuate_depth(&ramp, 0.4).unwrap(), [1.0, 0.0, 0.0]).unwrap(),
            [2, 1, 1],
        )
        .unwrap();
        assert_eq!(piped, direct);
        let swapped = downsample(
            &attenuate_depth(&convolve_psf(&ramp, [1.0, 0.0, 0.0]).unwrap(), 0.4).unwrap(),
            [2, 1, 1],
        )
        .unwrap();
        assert!(piped
            .data()
            .iter()
            .zip(swapped.data())
            .any(|(a, b)| (a - b).abs() > 1e-3));
        assert_eq!(piped.shape(), [4, 4, 4]);

        let scaled = pre_noise(&ramp.map(|x| 3.0 * x), &cfg).unwrap();
        for (a, b) in scaled.data().iter().zip(piped.data()) {
            assert!((a - 3.0 * b).abs() < 1e-5 * a.abs().max(1.0));
        }

        let run = simulate_imaging(&ramp, &ImagingConfig::neutral(), 0).unwrap();
        for (a, b) in run.image.data().iter().zip(ramp.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
