use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Exact 1-Wasserstein distance between two empirical distributions.
///
/// Integrates `|F_a⁻¹(t) − F_b⁻¹(t)|` over `t ∈ [0, 1]`; the quantile functions
/// are step functions with breakpoints at `i/n` and `j/m`, so the integral is a
/// finite sum over the merged breakpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty(
            "wasserstein_1d needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::arg("wasserstein_1d samples must be finite"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // next breakpoint compared exactly in integers: (i+1)/n vs (j+1)/m
        let lhs = (i + 1) as u128 * m as u128;
        let rhs = (j + 1) as u128 * n as u128;
        let next = if lhs <= rhs {
            (i + 1) as f64 / n as f64
        } else {
            (j + 1) as f64 / m as f64
        };
        total += (next - t) * (a[i] - b[j]).abs();
        t = next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    Ok(total)
}

/// IoU of every label of `a` against the same label id in `b` (0 if absent).
pub fn iou_per_cell(a: &LabelVolume, b: &LabelVolume) -> Result<BTreeMap<u32, f64>> {
    a.geometry()
        .ensure_same_shape(b.geometry(), "iou_per_cell")?;
    let mut count_a: BTreeMap<u32, usize> = BTreeMap::new();
    let mut count_b: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
    for (&la, &lb) in a.data().iter().zip(b.data()) {
        if la != 0 {
            *count_a.entry(la).or_default() += 1;
        }
        if lb != 0 {
            *count_b.entry(lb).or_default() += 1;
        }
        if la != 0 && la == lb {
            *inter.entry(la).or_default() += 1;
        }
    }
    Ok(count_a
        .iter()
        .map(|(&l, &ca)| {
            let cb = count_b.get(&l).copied().unwrap_or(0);
            let i = inter.get(&l).copied().unwrap_or(0);
            (l, i as f64 / (ca + cb - i) as f64)
        })
        .collect())
}

/// Mean of [`iou_per_cell`] over the labels of `a`; 1 for a label-free `a`.
pub fn mean_iou(a: &LabelVolume, b: &LabelVolume) -> Result<f64> {
    let ious = iou_per_cell(a, b)?;
    if ious.is_empty() {
        return Ok(1.0);
    }
    Ok(ious.values().sum::<f64>() / ious.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Volume, VolumeGeometry};
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Optimal assignment by enumeration; equals W1 for equal-size samples.
    fn assignment_oracle(a: &[f64], b: &[f64]) -> f64 {
        permutations(a.len())
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| (a[i] - b[j]).abs())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            / a.len() as f64
    }

    #[test]
    fn small_cases() {
        assert_eq!(
            wasserstein_1d(&[1.0, 5.0, 2.0], &[5.0, 2.0, 1.0]).unwrap(),
            0.0
        );
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        // unequal sizes: {0} vs {0, 1} -> half the mass moves by 1
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        // {0,1,2} vs {0,3}: quantiles 0|0 on [0,1/3], 1|0 on [1/3,1/2], 1|3 on [1/2,2/3], 2|3 on [2/3,1]
        let expect = 1.0 / 6.0 * 1.0 + 1.0 / 6.0 * 2.0 + 1.0 / 3.0 * 1.0;
        assert!((wasserstein_1d(&[0.0, 1.0, 2.0], &[0.0, 3.0]).unwrap() - expect).abs() < 1e-15);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
        assert!(wasserstein_1d(&[f64::NAN], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn matches_assignment_brute_force(
            a in prop::collection::vec(-10.0f64..10.0, 1..=6),
            seed in any::<u64>(),
        ) {
            let b: Vec<f64> = (0..a.len()).map(|i| (crate::seed::derive_seed(seed, i as u64) % 2001) as f64 / 100.0 - 10.0).collect();
            let w = wasserstein_1d(&a, &b).unwrap();
            prop_assert!((w - assignment_oracle(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn is_a_metric(
            a in prop::collection::vec(-5.0f64..5.0, 1..8),
            b in prop::collection::vec(-5.0f64..5.0, 1..8),
            c in prop::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            let ab = wasserstein_1d(&a, &b).unwrap();
            prop_assert_eq!(ab, wasserstein_1d(&b, &a).unwrap());
            let ac = wasserstein_1d(&a, &c).unwrap();
            let cb = wasserstein_1d(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }

    fn line(data: Vec<u32>) -> LabelVolume {
        Volume::from_vec(VolumeGeometry::isotropic([1, 1, data.len()]).unwrap(), data).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = line(vec![1, 1, 0, 2, 2]);
        assert!(iou_per_cell(&a, &a).unwrap().values().all(|&v| v == 1.0));
        let disjoint = line(vec![0, 0, 1, 0, 0]);
        let ious = iou_per_cell(&a, &disjoint).unwrap();
        assert_eq!(ious[&1], 0.0);
        assert_eq!(ious[&2], 0.0);
        // 2-voxel region shifted by one voxel: |∩| = 1, |∪| = 3
        let s = line(vec![0, 1, 1, 0, 0]);
        let t = line(vec![1, 1, 0, 0, 0]);
        assert!((iou_per_cell(&t, &s).unwrap()[&1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(iou_per_cell(&a, &line(vec![0; 4])).is_err());
        assert_eq!(mean_iou(&line(vec![0; 3]), &line(vec![1; 3])).unwrap(), 1.0);
    }
}
