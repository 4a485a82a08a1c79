use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::binary::FACE_OFFSETS;
use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// The seven per-cell shape features, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Volume,
    SurfaceArea,
    VaRatio,
    MinorAxisLength,
    MajorAxisLength,
    Sphericity,
    Eccentricity,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Volume,
        Feature::SurfaceArea,
        Feature::VaRatio,
        Feature::MinorAxisLength,
        Feature::MajorAxisLength,
        Feature::Sphericity,
        Feature::Eccentricity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Volume => "volume",
            Feature::SurfaceArea => "surface_area",
            Feature::VaRatio => "va_ratio",
            Feature::MinorAxisLength => "minor_axis_length",
            Feature::MajorAxisLength => "major_axis_length",
            Feature::Sphericity => "sphericity",
            Feature::Eccentricity => "eccentricity",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::Volume => "µm³",
            Feature::SurfaceArea => "µm²",
            Feature::VaRatio | Feature::MinorAxisLength | Feature::MajorAxisLength => "µm",
            Feature::Sphericity | Feature::Eccentricity => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub label: u32,
    pub volume: f64,
    pub surface_area: f64,
    pub va_ratio: f64,
    pub minor_axis_length: f64,
    pub major_axis_length: f64,
    pub sphericity: f64,
    pub eccentricity: f64,
}

impl FeatureRow {
    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::Volume => self.volume,
            Feature::SurfaceArea => self.surface_area,
            Feature::VaRatio => self.va_ratio,
            Feature::MinorAxisLength => self.minor_axis_length,
            Feature::MajorAxisLength => self.major_axis_length,
            Feature::Sphericity => self.sphericity,
            Feature::Eccentricity => self.eccentricity,
        }
    }
}

/// One row per cell, ascending by label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, f: Feature) -> Vec<f64> {
        self.rows.iter().map(|r| r.get(f)).collect()
    }

    pub fn row(&self, label: u32) -> Option<&FeatureRow> {
        self.rows
            .binary_search_by_key(&label, |r| r.label)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label"];
        header.extend(Feature::ALL.iter().map(|f| f.name()));
        let csv_err = |e: csv::Error| Error::Unwritable {
            path: "<csv>".into(),
            source: std::io::Error::other(e.to_string()),
        };
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.label.to_string()];
            rec.extend(Feature::ALL.iter().map(|&f| format!("{:?}", r.get(f))));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|source| Error::Unwritable {
            path: "<csv>".into(),
            source,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Centroid and covariance eigen-frame of a label, in physical `(z, y, x)`
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrincipalFrame {
    pub centroid: [f64; 3],
    /// Unit axes ordered by descending eigenvalue.
    pub axes: [[f64; 3]; 3],
    /// Covariance eigenvalues in µm², descending.
    pub eigenvalues: [f64; 3],
}

impl PrincipalFrame {
    pub fn major_axis(&self) -> Vector3<f64> {
        Vector3::from(self.axes[0])
    }

    /// True when the largest eigenvalue is not separated from the second one,
    /// so the major axis is not well defined.
    pub fn is_degenerate(&self, rel_tol: f64) -> bool {
        let [a, b, _] = self.eigenvalues;
        a <= 0.0 || (a - b) <= rel_tol * a
    }

    /// Full axis lengths `2 * sqrt(5 * λ)` (exact for solid ellipsoids).
    pub fn axis_lengths(&self) -> [f64; 3] {
        self.eigenvalues.map(|l| 2.0 * (5.0 * l.max(0.0)).sqrt())
    }
}

/// Jacobi eigen-decomposition of a symmetric 3x3 matrix. Already-diagonal
/// input (including all-equal eigenvalues) yields the canonical basis, which
/// keeps degenerate frames reproducible.
pub(crate) fn symmetric_eigen(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let vals = [a[0][0], a[1][1], a[2][2]];
    let mut order = [0usize, 1, 2];
    // stable: equal eigenvalues keep canonical order
    order.sort_by(|&i, &j| {
        vals[j]
            .partial_cmp(&vals[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out_vals = [0.0; 3];
    let mut out_axes = [[0.0; 3]; 3];
    for (k, &i) in order.iter().enumerate() {
        out_vals[k] = vals[i].max(0.0);
        let mut axis = [v[0][i], v[1][i], v[2][i]];
        // sign convention: largest component positive
        let big = (0..3)
            .max_by(|&a, &b| axis[a].abs().partial_cmp(&axis[b].abs()).unwrap())
            .unwrap();
        if axis[big] < 0.0 {
            axis = axis.map(|x| -x);
        }
        out_axes[k] = axis;
    }
    (out_vals, out_axes)
}

struct Moments {
    count: usize,
    sum: [f64; 3],
    cross: [[f64; 3]; 3],
    faces: [usize; 3],
}

impl Moments {
    fn new() -> Self {
        Self {
            count: 0,
            sum: [0.0; 3],
            cross: [[0.0; 3]; 3],
            faces: [0; 3],
        }
    }
}

/// Two-pass centred moments for every label.
fn label_moments(v: &LabelVolume) -> Vec<Moments> {
    let geom = *v.geometry();
    let sp = geom.spacing();
    let n = v.max_label() as usize + 1;
    let mut m: Vec<Moments> = (0..n).map(|_| Moments::new()).collect();
    for (i, &l) in v.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = geom.coords(i);
        let e = &mut m[l as usize];
        e.count += 1;
        for a in 0..3 {
            e.sum[a] += c[a] as f64 * sp[a];
        }
        for (k, o) in FACE_OFFSETS.iter().enumerate() {
            let exposed = match geom.offset_index(c, *o) {
                Some(j) => v.data()[j] != l,
                None => true,
            };
            if exposed {
                e.faces[k / 2] += 1;
            }
        }
    }
    let centroids: Vec<[f64; 3]> = m
        .iter()
        .map(|e| {
            if e.count == 0 {
                [0.0; 3]
            } else {
                e.sum.map(|s| s / e.count as f64)
            }
        })
        .collect();
    for (i, &l) in v.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = geom.coords(i);
        let ctr = centroids[l as usize];
        let d = [
            c[0] as f64 * sp[0] - ctr[0],
            c[1] as f64 * sp[1] - ctr[1],
            c[2] as f64 * sp[2] - ctr[2],
        ];
        let e = &mut m[l as usize];
        for a in 0..3 {
            for b in a..3 {
                e.cross[a][b] += d[a] * d[b];
            }
        }
    }
    for (e, ctr) in m.iter_mut().zip(&centroids) {
        e.sum = *ctr;
        for a in 0..3 {
            for b in 0..a {
                e.cross[a][b] = e.cross[b][a];
            }
        }
    }
    m
}

fn frame_from(m: &Moments) -> PrincipalFrame {
    let n = m.count as f64;
    let cov = m.cross.map(|row| row.map(|x| x / n));
    let (eigenvalues, axes) = symmetric_eigen(cov);
    PrincipalFrame {
        centroid: m.sum,
        axes,
        eigenvalues,
    }
}

pub fn principal_axes(v: &LabelVolume, label: u32) -> Result<PrincipalFrame> {
    if label == 0 || label > v.max_label() {
        return Err(Error::MissingLabel(label));
    }
    let m = label_moments(v);
    let e = &m[label as usize];
    if e.count == 0 {
        return Err(Error::MissingLabel(label));
    }
    Ok(frame_from(e))
}

/// Frames of all labels, ascending by label.
pub(crate) fn all_frames(v: &LabelVolume) -> Vec<(u32, usize, PrincipalFrame)> {
    label_moments(v)
        .iter()
        .enumerate()
        .filter(|(_, e)| e.count > 0)
        .map(|(l, e)| (l as u32, e.count, frame_from(e)))
        .collect()
}

/// Compute the seven shape features for every non-zero label.
///
/// Surface area counts exposed voxel faces (towards another label, the medium
/// or the volume border) weighted by the physical face area.
pub fn extract_features(v: &LabelVolume) -> FeatureTable {
    let sp = v.spacing();
    let face_area = [sp[1] * sp[2], sp[0] * sp[2], sp[0] * sp[1]];
    let voxel_volume = v.geometry().voxel_volume();
    let rows = label_moments(v)
        .iter()
        .enumerate()
        .filter(|(_, e)| e.count > 0)
        .map(|(label, e)| {
            let volume = e.count as f64 * voxel_volume;
            let surface_area: f64 = (0..3).map(|a| e.faces[a] as f64 * face_area[a]).sum();
            let lengths = frame_from(e).axis_lengths();
            let (major, minor) = (lengths[0], lengths[2]);
            let eccentricity = if major > 0.0 {
                (1.0 - (minor / major).powi(2)).max(0.0).sqrt()
            } else {
                0.0
            };
            FeatureRow {
                label: label as u32,
                volume,
                surface_area,
                va_ratio: volume / surface_area,
                minor_axis_length: minor,
                major_axis_length: major,
                sphericity: PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / surface_area,
                eccentricity,
            }
        })
        .collect();
    FeatureTable { rows }
}

/// Rotation that maps unit vector `from` onto `to` along the shortest arc.
pub(crate) fn minimal_rotation(from: Vector3<f64>, to: Vector3<f64>) -> Matrix3<f64> {
    let a = from.normalize();
    let b = to.normalize();
    let c = a.dot(&b);
    let axis = a.cross(&b);
    let s = axis.norm();
    if s < 1e-12 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        // antiparallel: rotate by π about any axis orthogonal to `a`
        let helper = if a.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let k = a.cross(&helper).normalize();
        return 2.0 * k * k.transpose() - Matrix3::identity();
    }
    let k = axis / s;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + s * kx + (1.0 - c) * kx * kx
}
