//! Instance segmentation scores (SEG, DET) and a slice-wise kernel inception
//! distance with a pluggable feature extractor.
//!
//! A predicted object S matches a reference object R when
//! `|R ∩ S| > 0.5 |R|`, so each reference object matches at most one
//! prediction.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use crate::volume::{IntensityVolume, LabelVolume};

struct Overlaps {
    gt_size: BTreeMap<u32, usize>,
    pred_size: BTreeMap<u32, usize>,
    /// (gt, pred) -> shared voxels, both non-zero.
    shared: BTreeMap<(u32, u32), usize>,
}

fn overlaps(gt: &LabelVolume, pred: &LabelVolume) -> Result<Overlaps> {
    gt.geometry()
        .ensure_same_shape(pred.geometry(), "segmentation scores")?;
    let mut o = Overlaps {
        gt_size: BTreeMap::new(),
        pred_size: BTreeMap::new(),
        shared: BTreeMap::new(),
    };
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        if g != 0 {
            *o.gt_size.entry(g).or_default() += 1;
        }
        if p != 0 {
            *o.pred_size.entry(p).or_default() += 1;
        }
        if g != 0 && p != 0 {
            *o.shared.entry((g, p)).or_default() += 1;
        }
    }
    if o.gt_size.is_empty() {
        return Err(Error::Empty("reference segmentation has no objects".into()));
    }
    Ok(o)
}

impl Overlaps {
    /// Matched prediction of every reference object, with the shared count.
    fn matches(&self) -> BTreeMap<u32, Option<(u32, usize)>> {
        let mut m: BTreeMap<u32, Option<(u32, usize)>> =
            self.gt_size.keys().map(|&g| (g, None)).collect();
        for (&(g, p), &n) in &self.shared {
            if 2 * n > self.gt_size[&g] {
                m.insert(g, Some((p, n)));
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectMatch {
    pub gt_label: u32,
    pub pred_label: Option<u32>,
    pub iou: f64,
}

/// Per reference object: its matched prediction and IoU (0 when unmatched).
pub fn object_matches(gt: &LabelVolume, pred: &LabelVolume) -> Result<Vec<ObjectMatch>> {
    let o = overlaps(gt, pred)?;
    Ok(o.matches()
        .into_iter()
        .map(|(g, m)| match m {
            Some((p, n)) => ObjectMatch {
                gt_label: g,
                pred_label: Some(p),
                iou: n as f64 / (o.gt_size[&g] + o.pred_size[&p] - n) as f64,
            },
            None => ObjectMatch {
                gt_label: g,
                pred_label: None,
                iou: 0.0,
            },
        })
        .collect())
}

/// Mean IoU over reference objects, unmatched objects scoring 0.
pub fn seg_score(gt: &LabelVolume, pred: &LabelVolume) -> Result<f64> {
    let mut ious: Vec<f64> = object_matches(gt, pred)?.iter().map(|x| x.iou).collect();
    // summing in sorted order makes the score exactly renumbering invariant
    ious.sort_by(f64::total_cmp);
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DetCounts {
    pub FN: usize,
    pub FP: usize,
    pub NS: usize,
    pub n_gt: usize,
}

impl DetCounts {
    /// `5 NS + 10 FN + FP`.
    pub fn aogm_d(&self) -> f64 {
        5.0 * self.NS as f64 + 10.0 * self.FN as f64 + self.FP as f64
    }

    /// Cost of building the reference from nothing.
    pub fn aogm_d0(&self) -> f64 {
        10.0 * self.n_gt as f64
    }

    pub fn det(&self) -> f64 {
        let d0 = self.aogm_d0();
        1.0 - self.aogm_d().min(d0) / d0
    }
}

pub fn det_counts(gt: &LabelVolume, pred: &LabelVolume) -> Result<DetCounts> {
    let o = overlaps(gt, pred)?;
    let mut assigned: BTreeMap<u32, usize> = o.pred_size.keys().map(|&p| (p, 0)).collect();
    let mut fn_ = 0;
    for m in o.matches().values() {
        match m {
            Some((p, _)) => *assigned.get_mut(p).expect("matched prediction exists") += 1,
            None => fn_ += 1,
        }
    }
    Ok(DetCounts {
        FN: fn_,
        FP: assigned.values().filter(|&&n| n == 0).count(),
        NS: assigned.values().map(|&n| n.saturating_sub(1)).sum(),
        n_gt: o.gt_size.len(),
    })
}

pub fn det_score(gt: &LabelVolume, pred: &LabelVolume) -> Result<f64> {
    Ok(det_counts(gt, pred)?.det())
}

/// Unbiased MMD² with the kernel `k(x, y) = (x·y / d + 1)³`.
pub fn mmd2_unbiased(fa: &[Vec<f64>], fb: &[Vec<f64>]) -> Result<f64> {
    let (n, m) = (fa.len(), fb.len());
    if n < 2 || m < 2 {
        return Err(Error::arg(
            "mmd2_unbiased needs at least two samples per set",
        ));
    }
    let d = fa[0].len();
    if d == 0 || fa.iter().chain(fb).any(|v| v.len() != d) {
        return Err(Error::arg(
            "feature vectors must share a non-zero dimension",
        ));
    }
    let k = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (dot / d as f64 + 1.0).powi(3)
    };
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                t += k(&s[i], &s[j]);
            }
        }
        2.0 * t / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in fa {
        for y in fb {
            cross += k(x, y);
        }
    }
    Ok(within(fa) + within(fb) - 2.0 * cross / (n * m) as f64)
}

/// Maps a 2D slice (row-major, `rows × cols`) to a fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, slice: &[f32], rows: usize, cols: usize) -> Vec<f64>;
}

/// Normalized intensity histogram followed by a normalized gradient-magnitude
/// histogram (central differences, one-sided at the edges).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramExtractor {
    pub bins: usize,
    pub intensity_range: (f64, f64),
    pub gradient_max: f64,
}

impl HistogramExtractor {
    pub fn new(bins: usize, intensity_range: (f64, f64), gradient_max: f64) -> Result<Self> {
        if bins == 0 || !(intensity_range.1 > intensity_range.0) || !(gradient_max > 0.0) {
            return Err(Error::arg(
                "histogram extractor needs bins >= 1 and non-empty ranges",
            ));
        }
        Ok(Self {
            bins,
            intensity_range,
            gradient_max,
        })
    }

    /// 64 + 64 bins over the joint intensity range of the given volumes.
    pub fn for_volumes(volumes: &[&IntensityVolume]) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in volumes {
            let (a, b) = v.min_max();
            lo = lo.min(a as f64);
            hi = hi.max(b as f64);
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        Self::new(64, (lo, hi), hi - lo)
    }

    fn bin(&self, x: f64, lo: f64, hi: f64) -> usize {
        let t = ((x - lo) / (hi - lo) * self.bins as f64).floor();
        t.clamp(0.0, self.bins as f64 - 1.0) as usize
    }
}

impl FeatureExtractor for HistogramExtractor {
    fn dim(&self) -> usize {
        2 * self.bins
    }

    fn extract(&self, s: &[f32], rows: usize, cols: usize) -> Vec<f64> {
        let mut h = vec![0.0; 2 * self.bins];
        let n = (rows * cols) as f64;
        let (lo, hi) = self.intensity_range;
        let at = |r: usize, c: usize| s[r * cols + c] as f64;
        let diff = |a: f64, b: f64, span: usize| {
            if span == 0 {
                0.0
            } else {
                (a - b) / span as f64
            }
        };
        for r in 0..rows {
            for c in 0..cols {
                h[self.bin(at(r, c), lo, hi)] += 1.0;
                let (r0, r1) = (r.saturating_sub(1), (r + 1).min(rows - 1));
                let (c0, c1) = (c.saturating_sub(1), (c + 1).min(cols - 1));
                let gy = diff(at(r1, c), at(r0, c), r1 - r0);
                let gx = diff(at(r, c1), at(r, c0), c1 - c0);
                h[self.bins + self.bin(gy.hypot(gx), 0.0, self.gradient_max)] += 1.0;
            }
        }
        h.iter_mut().for_each(|x| *x /= n);
        h
    }
}

/// Features of every slice normal to `axis` (0: xy planes, 1: xz, 2: yz).
pub fn slice_features(
    v: &IntensityVolume,
    axis: usize,
    fx: &dyn FeatureExtractor,
) -> Vec<Vec<f64>> {
    let [nz, ny, nx] = v.shape();
    let n = v.shape()[axis];
    let data = v.data();
    (0..n)
        .into_par_iter()
        .map(|k| {
            let (rows, cols, slice): (usize, usize, Vec<f32>) = match axis {
                0 => (ny, nx, data[k * ny * nx..(k + 1) * ny * nx].to_vec()),
                1 => (
                    nz,
                    nx,
                    (0..nz)
                        .flat_map(|z| (0..nx).map(move |x| (z, x)))
                        .map(|(z, x)| data[(z * ny + k) * nx + x])
                        .collect(),
                ),
                _ => (
                    nz,
                    ny,
                    (0..nz)
                        .flat_map(|z| (0..ny).map(move |y| (z, y)))
                        .map(|(z, y)| data[(z * ny + y) * nx + k])
                        .collect(),
                ),
            };
            fx.extract(&slice, rows, cols)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidResult {
    /// Mean over all subset estimates of all three directions.
    pub kid: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    /// Mean estimate per direction (xy, xz, yz).
    pub per_direction: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KidOptions {
    pub subset_size: usize,
    pub n_subsets: usize,
    pub seed: u64,
}

impl Default for KidOptions {
    fn default() -> Self {
        Self {
            subset_size: 100,
            n_subsets: 10,
            seed: 0,
        }
    }
}

/// Slice-wise KID over the three plane directions. Each estimate draws
/// `min(subset_size, slices)` slices with replacement from each volume, so
/// both subsets are i.i.d. samples of the volumes' slice distributions.
pub fn kid_volumes(
    a: &IntensityVolume,
    b: &IntensityVolume,
    fx: &dyn FeatureExtractor,
    opts: &KidOptions,
) -> Result<KidResult> {
    if a.data().is_empty() || b.data().is_empty() {
        return Err(Error::Empty("KID needs non-empty volumes".into()));
    }
    if opts.subset_size < 2 || opts.n_subsets == 0 {
        return Err(Error::arg("KID needs subset_size >= 2 and n_subsets >= 1"));
    }
    let mut all = Vec::new();
    let mut per_direction = [0.0; 3];
    for axis in 0..3 {
        let fa = slice_features(a, axis, fx);
        let fb = slice_features(b, axis, fx);
        let m = opts.subset_size.min(fa.len()).min(fb.len()).max(2);
        let mut sum = 0.0;
        for s in 0..opts.n_subsets {
            let mut rng = rng_from_seed(derive_seed(opts.seed, (axis * opts.n_subsets + s) as u64));
            let pick = |f: &Vec<Vec<f64>>, rng: &mut crate::seed::SimRng| -> Vec<Vec<f64>> {
                (0..m)
                    .map(|_| f[rng.random_range(0..f.len())].clone())
                    .collect()
            };
            let sa = pick(&fa, &mut rng);
            let sb = pick(&fb, &mut rng);
            let e = mmd2_unbiased(&sa, &sb)?;
            sum += e;
            all.push(e);
        }
        per_direction[axis] = sum / opts.n_subsets as f64;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = if all.len() > 1 {
        all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(KidResult {
        kid: mean,
        std_error: (var / n).sqrt(),
        per_direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Volume, VolumeGeometry};
    use rand_distr::{Distribution, Normal};

    fn line(data: Vec<u32>) -> LabelVolume {
        Volume::from_vec(VolumeGeometry::isotropic([1, 1, data.len()]).unwrap(), data).unwrap()
    }

    #[test]
    fn seg_hand_counts() {
        let gt = line([vec![1; 10], vec![0; 4]].concat());
        assert_eq!(seg_score(&gt, &gt).unwrap(), 1.0);
        assert_eq!(seg_score(&gt, &line(vec![0; 14])).unwrap(), 0.0);
        let pred = line([vec![3; 6], vec![0; 8]].concat());
        assert!((seg_score(&gt, &pred).unwrap() - 0.6).abs() < 1e-15);
        // exactly half is not a match
        let half = line([vec![3; 5], vec![0; 9]].concat());
        assert_eq!(seg_score(&gt, &half).unwrap(), 0.0);
        assert!(seg_score(&line(vec![0; 3]), &line(vec![1; 3])).is_err());
        assert!(seg_score(&gt, &line(vec![0; 3])).is_err());
    }

    #[test]
    fn det_hand_counts() {
        let gt = line(vec![1, 1, 0, 2, 2, 0, 0]);
        assert_eq!(det_score(&gt, &gt).unwrap(), 1.0);
        assert_eq!(det_score(&gt, &line(vec![0; 7])).unwrap(), 0.0);
        let spurious = line(vec![1, 1, 0, 2, 2, 0, 3]);
        let c = det_counts(&gt, &spurious).unwrap();
        assert_eq!((c.FN, c.FP, c.NS, c.n_gt), (0, 1, 0, 2));
        assert!((c.det() - 0.95).abs() < 1e-15);
        // one prediction covering both: one split needed
        let merged = line(vec![4, 4, 4, 4, 4, 0, 0]);
        let c = det_counts(&gt, &merged).unwrap();
        assert_eq!((c.FN, c.FP, c.NS), (0, 0, 1));
        assert!((c.det() - 0.75).abs() < 1e-15);
    }

    fn two_vec_oracle(x: &[f64], y: &[f64]) -> f64 {
        // fa = fb = {x, y}: within terms are k(x,y) each, cross averages all four pairs
        let d = x.len() as f64;
        let k = |a: &[f64], b: &[f64]| {
            (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / d + 1.0).powi(3)
        };
        let kxy = k(x, y);
        2.0 * kxy - 2.0 * (k(x, x) + 2.0 * kxy + k(y, y)) / 4.0
    }

    #[test]
    fn mmd_golden_and_properties() {
        let x = vec![1.0, 0.0];
        let y = vec![0.0, 2.0];
        let s = vec![x.clone(), y.clone()];
        let got = mmd2_unbiased(&s, &s).unwrap();
        assert!((got - two_vec_oracle(&x, &y)).abs() < 1e-12);
        // k(x,x)=1.5³, k(y,y)=3³, k(x,y)=1
        assert!((got - (2.0 - (3.375 + 2.0 + 27.0) / 2.0)).abs() < 1e-12);

        let mut rng = rng_from_seed(2);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| n.sample(&mut rng)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..4).map(|_| n.sample(&mut rng)).collect())
            .collect();
        let ab = mmd2_unbiased(&a, &b).unwrap();
        assert!((ab - mmd2_unbiased(&b, &a).unwrap()).abs() < 1e-12);
        let mut ar = a.clone();
        ar.reverse();
        assert!((ab - mmd2_unbiased(&ar, &b).unwrap()).abs() < 1e-12);
        let shifted: Vec<Vec<f64>> = a
            .iter()
            .map(|v| v.iter().map(|x| x + 2.0).collect())
            .collect();
        assert!(mmd2_unbiased(&a, &shifted).unwrap() > 0.0);
        assert!(mmd2_unbiased(&a[..1], &b).is_err());
        assert!(mmd2_unbiased(&a, &[vec![0.0; 3], vec![0.0; 3]]).is_err());
    }

    #[test]
    fn histogram_features_are_normalized() {
        let fx = HistogramExtractor::new(8, (0.0, 1.0), 1.0).unwrap();
        let s: Vec<f32> = (0..20).map(|i| i as f32 / 20.0).collect();
        let f = fx.extract(&s, 4, 5);
        assert_eq!(f.len(), fx.dim());
        assert!((f[..8].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((f[8..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let flat = fx.extract(&[0.5; 9], 3, 3);
        assert_eq!(flat[4], 1.0);
        assert_eq!(flat[8], 1.0);
    }

    #[test]
    fn slice_directions_have_expected_counts() {
        let geom = VolumeGeometry::isotropic([3, 4, 5]).unwrap();
        let v = Volume::from_vec(geom, (0..60).map(|i| i as f32).collect()).unwrap();
        let fx = HistogramExtractor::for_volumes(&[&v]).unwrap();
        assert_eq!(slice_features(&v, 0, &fx).len(), 3);
        assert_eq!(slice_features(&v, 1, &fx).len(), 4);
        assert_eq!(slice_features(&v, 2, &fx).len(), 5);
    }

    #[test]
    fn kid_is_deterministic_and_near_zero_for_identical_volumes() {
        let mut rng = rng_from_seed(8);
        let geom = VolumeGeometry::isotropic([12, 12, 12]).unwrap();
        let v =
            Volume::from_vec(geom, (0..geom.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
        let fx = HistogramExtractor::for_volumes(&[&v]).unwrap();
        let opts = KidOptions {
            subset_size: 10,
            n_subsets: 10,
            seed: 1,
        };
        let r = kid_volumes(&v, &v, &fx, &opts).unwrap();
        assert!(r.kid.abs() <= 3.0 * r.std_error, "{r:?}");
        assert_eq!(r, kid_volumes(&v, &v, &fx, &opts).unwrap());
    }
}
