//! Conversion between simulated cell labels, binary membrane signals and
//! per-cell nucleus instance labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::binary;
use crate::volume::{IntensityVolume, LabelVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Threshold is a fraction of the input's maximum value.
    Normalized,
    /// Threshold is compared with raw intensities.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocConfig {
    pub binarize_threshold: f64,
    pub threshold_mode: ThresholdMode,
    /// Iterations of the 6-connected element used by the opening.
    pub opening_radius: usize,
    /// Membrane half-width in voxels.
    pub membrane_thickness: usize,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            threshold_mode: ThresholdMode::Normalized,
            opening_radius: 1,
            membrane_thickness: 1,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_mode == ThresholdMode::Normalized
            && !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0)
        {
            return Err(Error::arg(
                "normalized binarize_threshold must be in (0, 1)",
            ));
        }
        if !self.binarize_threshold.is_finite() {
            return Err(Error::arg("binarize_threshold must be finite"));
        }
        if self.membrane_thickness == 0 {
            return Err(Error::arg("membrane_thickness must be >= 1"));
        }
        Ok(())
    }

    /// The absolute threshold for an input whose largest value is `max`.
    pub fn absolute_threshold(&self, max: f64) -> f64 {
        match self.threshold_mode {
            ThresholdMode::Normalized => self.binarize_threshold * max,
            ThresholdMode::Absolute => self.binarize_threshold,
        }
    }
}

/// Mark every cell voxel whose L1 distance to a voxel of another label
/// (another cell or the medium) is at most `thickness`. Medium voxels are
/// never marked and the volume border does not count as a boundary.
pub fn borders_to_binary_membrane(
    cells: &LabelVolume,
    thickness: usize,
) -> Result<IntensityVolume> {
    if thickness == 0 {
        return Err(Error::arg("membrane thickness must be >= 1"));
    }
    let t = thickness as isize;
    let mut ball = Vec::new();
    for dz in -t..=t {
        for dy in -t..=t {
            for dx in -t..=t {
                let d = dz.abs() + dy.abs() + dx.abs();
                if d >= 1 && d <= t {
                    ball.push([dz, dy, dx]);
                }
            }
        }
    }
    ball.sort_by_key(|o| o.iter().map(|c| c.abs()).sum::<isize>());
    let geom = cells.geometry();
    let data = cells.data();
    let out: Vec<f32> = (0..data.len())
        .map(|i| {
            let l = data[i];
            if l == 0 {
                return 0.0;
            }
            let c = geom.coords(i);
            let boundary = ball
                .iter()
                .any(|&o| geom.offset_index(c, o).is_some_and(|j| data[j] != l));
            boundary as u8 as f32
        })
        .collect();
    Volume::from_vec(*geom, out)
}

/// 1 where `pred >= threshold`, else 0.
pub fn binarize(pred: &IntensityVolume, threshold: f64) -> IntensityVolume {
    pred.map(|x| (x as f64 >= threshold) as u8 as f32)
}

/// Split nucleus foreground along membranes and label it by cell:
/// `fg = nuclei ∧ ¬membrane`, opened `opening_radius` times, then each
/// remaining voxel takes the cell label beneath it (so foreground over medium
/// disappears).
pub fn split_and_assign(
    binary_nuclei: &IntensityVolume,
    binary_membrane: &IntensityVolume,
    cells: &LabelVolume,
    opening_radius: usize,
) -> Result<LabelVolume> {
    cells
        .geometry()
        .ensure_same_shape(binary_nuclei.geometry(), "split_and_assign nuclei")?;
    cells
        .geometry()
        .ensure_same_shape(binary_membrane.geometry(), "split_and_assign membrane")?;
    let fg: Vec<bool> = binary_nuclei
        .data()
        .iter()
        .zip(binary_membrane.data())
        .map(|(&n, &m)| n != 0.0 && m == 0.0)
        .collect();
    let fg = binary::open(&fg, cells.shape(), opening_radius);
    let out = fg
        .iter()
        .zip(cells.data())
        .map(|(&f, &l)| if f { l } else { 0 })
        .collect();
    Volume::from_vec(*cells.geometry(), out)
}

/// Membrane from `cells`, thresholded nuclei from `pred`, then
/// [`split_and_assign`].
pub fn instance_labels(
    pred: &IntensityVolume,
    cells: &LabelVolume,
    cfg: &PostprocConfig,
    pred_max: f64,
) -> Result<LabelVolume> {
    cfg.validate()?;
    let membrane = borders_to_binary_membrane(cells, cfg.membrane_thickness)?;
    let nuclei = binarize(pred, cfg.absolute_threshold(pred_max));
    split_and_assign(&nuclei, &membrane, cells, cfg.opening_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::volume::VolumeGeometry;
    use rand::Rng;

    fn labels(shape: [usize; 3]) -> LabelVolume {
        Volume::filled(VolumeGeometry::isotropic(shape).unwrap(), 0)
    }

    fn fill(v: &mut LabelVolume, lo: [usize; 3], hi: [usize; 3], l: u32) {
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    v.set(z, y, x, l);
                }
            }
        }
    }

    #[test]
    fn membrane_of_a_cube() {
        assert!(borders_to_binary_membrane(&labels([3, 3, 3]), 1)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        let mut v = labels([5, 5, 5]);
        fill(&mut v, [1, 1, 1], [4, 4, 4], 3);
        let m = borders_to_binary_membrane(&v, 1).unwrap();
        assert_eq!(m.sum(), 26.0);
        assert_eq!(m.get(2, 2, 2), 0.0);
        assert_eq!(m.get(0, 0, 0), 0.0);
        assert!(borders_to_binary_membrane(&v, 0).is_err());
    }

    #[test]
    fn membrane_between_abutting_cells() {
        let mut v = labels([1, 1, 6]);
        fill(&mut v, [0, 0, 0], [1, 1, 3], 1);
        fill(&mut v, [0, 0, 3], [1, 1, 6], 2);
        let m = borders_to_binary_membrane(&v, 1).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let m2 = borders_to_binary_membrane(&v, 2).unwrap();
        assert_eq!(m2.data(), &[0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn membrane_grows_with_thickness() {
        let mut rng = rng_from_seed(3);
        let geom = VolumeGeometry::isotropic([7, 7, 7]).unwrap();
        let v = Volume::from_vec(
            geom,
            (0..geom.len()).map(|_| rng.random_range(0..3u32)).collect(),
        )
        .unwrap();
        let mut prev = borders_to_binary_membrane(&v, 1).unwrap();
        for t in 2..4 {
            let m = borders_to_binary_membrane(&v, t).unwrap();
            assert!(prev.data().iter().zip(m.data()).all(|(&a, &b)| a <= b));
            prev = m;
        }
    }

    #[test]
    fn binarize_cases() {
        let geom = VolumeGeometry::isotropic([2, 3, 4]).unwrap();
        let low = Volume::filled(geom, 0.2f32);
        assert_eq!(binarize(&low, 0.5).sum(), 0.0);
        let bin = Volume::from_vec(geom, (0..24).map(|i| (i % 2) as f32).collect()).unwrap();
        assert_eq!(binarize(&bin, 0.5), bin);
        let mut rng = rng_from_seed(1);
        let r = Volume::from_vec(geom, (0..24).map(|_| rng.random::<f32>()).collect()).unwrap();
        let b = binarize(&r, 0.3);
        for (&x, &y) in r.data().iter().zip(b.data()) {
            assert_eq!(y, if x as f64 >= 0.3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn split_and_assign_cases() {
        let mut cells = labels([1, 3, 9]);
        fill(&mut cells, [0, 0, 0], [1, 3, 4], 5);
        fill(&mut cells, [0, 0, 5], [1, 3, 8], 9);
        let geom = *cells.geometry();
        let zero = Volume::filled(geom, 0.0f32);
        let one = Volume::filled(geom, 1.0f32);
        assert_eq!(
            split_and_assign(&zero, &zero, &cells, 1)
                .unwrap()
                .foreground_count(),
            0
        );
        // no membrane, no opening: cells masked by the nuclei
        assert_eq!(split_and_assign(&one, &zero, &cells, 0).unwrap(), cells);
        // blob over medium only
        let mut blob = zero.clone();
        blob.set(0, 1, 4, 1.0);
        blob.set(0, 1, 8, 1.0);
        assert_eq!(
            split_and_assign(&blob, &zero, &cells, 0)
                .unwrap()
                .foreground_count(),
            0
        );

        let membrane = borders_to_binary_membrane(&cells, 1).unwrap();
        let out = split_and_assign(&one, &membrane, &cells, 0).unwrap();
        assert_eq!(out.labels(), vec![5, 9]);
        assert_eq!(crate::morphology::component_count(&out, 5), 1);
        assert_eq!(crate::morphology::component_count(&out, 9), 1);
        // fixed point on its own output
        let again =
            split_and_assign(&out.map(|l| (l != 0) as u8 as f32), &membrane, &cells, 0).unwrap();
        assert_eq!(again, out);
        assert!(split_and_assign(&one, &zero, &labels([1, 1, 1]), 0).is_err());
    }

    #[test]
    fn touching_blobs_separated_by_membrane() {
        let mut cells = labels([3, 5, 10]);
        fill(&mut cells, [0, 0, 0], [3, 5, 5], 1);
        fill(&mut cells, [0, 0, 5], [3, 5, 10], 2);
        let geom = *cells.geometry();
        // one connected nuclei blob straddling the wall
        let mut nuclei = Volume::filled(geom, 0.0f32);
        for z in 0..3 {
            for y in 1..4 {
                for x in 2..8 {
                    nuclei.set(z, y, x, 1.0);
                }
            }
        }
        let membrane = borders_to_binary_membrane(&cells, 1).unwrap();
        let out = split_and_assign(&nuclei, &membrane, &cells, 0).unwrap();
        assert_eq!(out.labels(), vec![1, 2]);
        for i in 0..geom.len() {
            if out.data()[i] != 0 {
                assert_eq!(out.data()[i], cells.data()[i]);
                assert_eq!(nuclei.data()[i], 1.0);
            }
        }
    }

    #[test]
    fn config_threshold_modes() {
        let c = PostprocConfig::default();
        assert_eq!(c.absolute_threshold(200.0), 100.0);
        let a = PostprocConfig {
            binarize_threshold: 7.0,
            threshold_mode: ThresholdMode::Absolute,
            ..c
        };
        assert!(a.validate().is_ok());
        assert_eq!(a.absolute_threshold(200.0), 7.0);
        assert!(PostprocConfig {
            binarize_threshold: 1.5,
            ..c
        }
        .validate()
        .is_err());
    }
}
