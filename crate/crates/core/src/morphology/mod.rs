//! Label-mask preprocessing, per-cell shape features and the distribution
//! statistics used to compare cell ensembles.

pub mod binary;
mod features;
mod stats;

pub(crate) use features::{all_frames, minimal_rotation};
pub use features::{
    extract_features, principal_axes, Feature, FeatureRow, FeatureTable, PrincipalFrame,
};
pub use stats::{iou_per_cell, mean_iou, wasserstein_1d};

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::volume::LabelVolume;
use binary::FACE_OFFSETS;

/// Remove labels with fewer than `min_voxels` voxels or spanning fewer than
/// `min_z_span` z-planes. Removed voxels become medium.
pub fn clean_labels(v: &LabelVolume, min_voxels: usize, min_z_span: usize) -> LabelVolume {
    let n = v.max_label() as usize + 1;
    let mut count = vec![0usize; n];
    let mut z_lo = vec![usize::MAX; n];
    let mut z_hi = vec![0usize; n];
    let [_, ny, nx] = v.shape();
    for (i, &l) in v.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let z = i / (ny * nx);
        let l = l as usize;
        count[l] += 1;
        z_lo[l] = z_lo[l].min(z);
        z_hi[l] = z_hi[l].max(z);
    }
    let keep: Vec<bool> = (0..n)
        .map(|l| count[l] > 0 && count[l] >= min_voxels && z_hi[l] + 1 - z_lo[l] >= min_z_span)
        .collect();
    v.map(|l| if keep[l as usize] { l } else { 0 })
}

/// Per-label binary closing followed by a dilation into the medium, both with
/// the face-connected element iterated `radius` times.
///
/// Voxels claimed by several labels go to the nearest one; ties go to the
/// lowest label id. Existing labels are never overwritten.
pub fn close_and_dilate(v: &LabelVolume, radius: usize) -> Result<LabelVolume> {
    if radius == 0 {
        return Err(Error::arg("close/dilate radius must be >= 1"));
    }
    let geom = *v.geometry();
    let mut out = v.clone();

    // closing, label by label on a padded bounding box
    let labels = v.labels();
    let mut lo = vec![[usize::MAX; 3]; v.max_label() as usize + 1];
    let mut hi = vec![[0usize; 3]; v.max_label() as usize + 1];
    for (i, &l) in v.data().iter().enumerate() {
        if l != 0 {
            let c = geom.coords(i);
            for a in 0..3 {
                lo[l as usize][a] = lo[l as usize][a].min(c[a]);
                hi[l as usize][a] = hi[l as usize][a].max(c[a]);
            }
        }
    }
    for &label in &labels {
        // padded well beyond the volume so the closing behaves as on an
        // unbounded grid; only in-volume voxels are written back
        let (l0, h0) = (lo[label as usize], hi[label as usize]);
        let pad = radius + 1;
        let ext = [0, 1, 2].map(|a| h0[a] - l0[a] + 1 + 2 * pad);
        let org = l0.map(|c| c as isize - pad as isize);
        let local_len = ext[0] * ext[1] * ext[2];
        let mut mask = vec![false; local_len];
        for (k, m) in mask.iter_mut().enumerate() {
            let c = [k / (ext[1] * ext[2]), (k / ext[2]) % ext[1], k % ext[2]];
            if let Some(gi) = geom.offset_index(
                [0, 0, 0],
                [
                    org[0] + c[0] as isize,
                    org[1] + c[1] as isize,
                    org[2] + c[2] as isize,
                ],
            ) {
                *m = v.data()[gi] == label;
            }
        }
        let closed = binary::close(&mask, ext, radius);
        for (k, &c) in closed.iter().enumerate() {
            if !c {
                continue;
            }
            let p = [k / (ext[1] * ext[2]), (k / ext[2]) % ext[1], k % ext[2]];
            if let Some(gi) = geom.offset_index(
                [0, 0, 0],
                [
                    org[0] + p[0] as isize,
                    org[1] + p[1] as isize,
                    org[2] + p[2] as isize,
                ],
            ) {
                // lower labels were processed first and keep their claim
                if out.data()[gi] == 0 && v.data()[gi] == 0 {
                    out.data_mut()[gi] = label;
                }
            }
        }
    }

    // layered dilation into the medium
    let mut frontier: Vec<usize> = (0..out.data().len())
        .filter(|&i| out.data()[i] != 0)
        .collect();
    for _ in 0..radius {
        let mut claims: Vec<(usize, u32)> = Vec::new();
        for &i in &frontier {
            let c = geom.coords(i);
            let l = out.data()[i];
            for o in FACE_OFFSETS {
                if let Some(j) = geom.offset_index(c, o) {
                    if out.data()[j] == 0 {
                        claims.push((j, l));
                    }
                }
            }
        }
        claims.sort_unstable();
        claims.dedup_by_key(|c| c.0);
        frontier.clear();
        for (j, l) in claims {
            out.data_mut()[j] = l;
            frontier.push(j);
        }
    }
    Ok(out)
}

/// Face-connected components of a single label; returns the number of pieces.
pub fn component_count(v: &LabelVolume, label: u32) -> usize {
    let geom = *v.geometry();
    let mut seen = vec![false; v.data().len()];
    let mut pieces = 0;
    let mut queue = VecDeque::new();
    for start in 0..v.data().len() {
        if v.data()[start] != label || seen[start] {
            continue;
        }
        pieces += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let c = geom.coords(i);
            for o in FACE_OFFSETS {
                if let Some(j) = geom.offset_index(c, o) {
                    if !seen[j] && v.data()[j] == label {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Volume, VolumeGeometry};

    fn vol(shape: [usize; 3]) -> LabelVolume {
        Volume::filled(VolumeGeometry::isotropic(shape).unwrap(), 0)
    }

    fn fill_box(v: &mut LabelVolume, lo: [usize; 3], hi: [usize; 3], label: u32) {
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    v.set(z, y, x, label);
                }
            }
        }
    }

    #[test]
    fn clean_removes_small_and_flat_labels() {
        let mut v = vol([6, 4, 4]);
        // 4 voxels across 4 planes
        for z in 0..4 {
            v.set(z, 0, 0, 1);
        }
        // 9 voxels in 3 planes
        fill_box(&mut v, [0, 1, 1], [3, 4, 2], 2);
        // 12 voxels in 6 planes
        fill_box(&mut v, [0, 0, 3], [6, 2, 4], 3);
        let c = clean_labels(&v, 5, 4);
        assert_eq!(c.labels(), vec![3]);
        assert_eq!(clean_labels(&v, 5, 0).labels(), vec![2, 3]);
        assert_eq!(clean_labels(&v, 0, 4).labels(), vec![1, 3]);
        assert_eq!(clean_labels(&c, 5, 4), c);
        let empty = vol([2, 2, 2]);
        assert_eq!(clean_labels(&empty, 5, 4), empty);
    }

    #[test]
    fn cuboid_grows_by_l1_radius() {
        let shape = [9, 9, 10];
        let mut v = vol(shape);
        fill_box(&mut v, [3, 3, 3], [6, 5, 7], 4);
        for r in 1..=2 {
            let out = close_and_dilate(&v, r).unwrap();
            for z in 0..shape[0] {
                for y in 0..shape[1] {
                    for x in 0..shape[2] {
                        let d = |c: usize, lo: usize, hi: usize| {
                            if c < lo {
                                lo - c
                            } else if c >= hi {
                                c + 1 - hi
                            } else {
                                0
                            }
                        };
                        let dist = d(z, 3, 6) + d(y, 3, 5) + d(x, 3, 7);
                        let expect = if dist <= r { 4 } else { 0 };
                        assert_eq!(out.get(z, y, x), expect, "r={r} at {z},{y},{x}");
                    }
                }
            }
        }
    }

    #[test]
    fn closing_fills_a_single_voxel_hole() {
        let mut v = vol([7, 7, 7]);
        fill_box(&mut v, [1, 1, 1], [6, 6, 6], 2);
        v.set(3, 3, 3, 0);
        let out = close_and_dilate(&v, 1).unwrap();
        assert_eq!(out.get(3, 3, 3), 2);
    }

    #[test]
    fn contested_voxels_go_to_lower_label() {
        // labels at x=0 and x=4 on a line; x=2 is equidistant
        let mut v = vol([1, 1, 5]);
        v.set(0, 0, 0, 7);
        v.set(0, 0, 4, 3);
        let out = close_and_dilate(&v, 3).unwrap();
        assert_eq!(out.data(), &[7, 7, 3, 3, 3]);
        // and with an odd gap the nearest label wins
        let mut v = vol([1, 1, 6]);
        v.set(0, 0, 0, 7);
        v.set(0, 0, 5, 3);
        let out = close_and_dilate(&v, 5).unwrap();
        assert_eq!(out.data(), &[7, 7, 7, 3, 3, 3]);
    }

    #[test]
    fn radius_zero_is_rejected() {
        assert!(close_and_dilate(&vol([1, 1, 1]), 0).is_err());
    }

    #[test]
    fn component_count_detects_fragments() {
        let mut v = vol([1, 1, 5]);
        v.set(0, 0, 0, 1);
        v.set(0, 0, 1, 1);
        v.set(0, 0, 3, 1);
        assert_eq!(component_count(&v, 1), 2);
        assert_eq!(component_count(&v, 9), 0);
    }
}
