//! Nucleus prototypes and their placement into simulated cells.
//!
//! Each cell receives at most one nucleus: a prototype drawn at random,
//! rotated so its major axis follows the cell's, scaled to a fixed fraction of
//! the cell volume and positioned near the cell centroid. A position is
//! accepted when enough of the nucleus falls inside the cell; the nucleus is
//! then clipped to the cell.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, DType, FileFormat, RawVolume};
use crate::morphology::{minimal_rotation, PrincipalFrame};
use crate::seed::{derive_seed, rng_from_seed};
use crate::volume::{IntensityVolume, LabelVolume, MaskVolume, Volume, VolumeGeometry};

/// Relative eigenvalue gap below which a major axis is treated as undefined.
const DEGENERATE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct NucleusPrototype {
    /// Tight binary crop; 1 inside the nucleus.
    pub mask: MaskVolume,
    /// Intensity on the same grid, zero outside the mask.
    pub intensity: IntensityVolume,
    /// Frame in the crop's physical coordinates.
    pub frame: PrincipalFrame,
    /// Physical volume in µm³.
    pub volume: f64,
}

impl NucleusPrototype {
    /// Build from a mask/intensity pair; the pair is cropped to the mask's
    /// bounding box and intensity outside the mask is zeroed.
    pub fn new(mask: &MaskVolume, intensity: &IntensityVolume) -> Result<Self> {
        mask.geometry()
            .ensure_same_shape(intensity.geometry(), "nucleus prototype")?;
        let (lo, hi) =
            bounding_box(mask).ok_or_else(|| Error::Empty("prototype mask is empty".into()))?;
        let shape = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
        let mask = mask.crop(lo, shape)?.map(|m| (m != 0) as u8);
        let mut intensity = intensity.crop(lo, shape)?;
        for (v, &m) in intensity.data_mut().iter_mut().zip(mask.data()) {
            if m == 0 {
                *v = 0.0;
            }
        }
        let labels = mask.map(|m| m as u32);
        let frame = crate::morphology::principal_axes(&labels, 1)?;
        let count = mask.data().iter().filter(|&&m| m != 0).count();
        Ok(Self {
            volume: count as f64 * mask.geometry().voxel_volume(),
            mask,
            intensity,
            frame,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0).count()
    }
}

fn bounding_box(mask: &MaskVolume) -> Option<([usize; 3], [usize; 3])> {
    let geom = mask.geometry();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &m) in mask.data().iter().enumerate() {
        if m != 0 {
            any = true;
            let c = geom.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    any.then_some((lo, hi))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrototypeDb {
    pub prototypes: Vec<NucleusPrototype>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbIndex {
    format: String,
    version: u32,
    prototypes: Vec<DbEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbEntry {
    mask: String,
    intensity: String,
}

const INDEX_FILE: &str = "index.json";

impl PrototypeDb {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Write the prototypes as RVOL pairs plus `index.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| Error::Unwritable {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::new();
        for (k, p) in self.prototypes.iter().enumerate() {
            let mask = format!("prototype_{k:03}_mask.rvol");
            let intensity = format!("prototype_{k:03}_intensity.rvol");
            io::save_volume(
                &RawVolume::from_mask(&p.mask),
                dir.join(&mask),
                FileFormat::Rvol,
            )?;
            io::save_volume(
                &RawVolume::from_intensity(&p.intensity, DType::F32)?,
                dir.join(&intensity),
                FileFormat::Rvol,
            )?;
            entries.push(DbEntry { mask, intensity });
        }
        let index = DbIndex {
            format: "prototype-db".into(),
            version: 1,
            prototypes: entries,
        };
        let text = serde_json::to_string_pretty(&index).expect("index is serializable");
        io::write_file(&dir.join(INDEX_FILE), text.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index_path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&index_path).map_err(|source| Error::Unreadable {
            path: index_path.clone(),
            source,
        })?;
        let index: DbIndex = serde_json::from_str(&text).map_err(|e| Error::InvalidHeader {
            path: index_path.clone(),
            reason: e.to_string(),
        })?;
        if index.format != "prototype-db" || index.version != 1 {
            return Err(Error::InvalidHeader {
                path: index_path,
                reason: format!("unsupported index {} v{}", index.format, index.version),
            });
        }
        let mut prototypes = Vec::new();
        for e in &index.prototypes {
            let mask = io::load_volume(dir.join(&e.mask))?.volume;
            let mask = mask.into_labels()?.map(|l| (l != 0) as u8);
            let intensity = io::load_volume(dir.join(&e.intensity))?
                .volume
                .into_intensity();
            prototypes.push(NucleusPrototype::new(&mask, &intensity)?);
        }
        Ok(Self { prototypes })
    }
}

/// One prototype per id, in the given order.
pub fn extract_prototypes(
    intensity: &IntensityVolume,
    labels: &LabelVolume,
    ids: &[u32],
) -> Result<PrototypeDb> {
    labels
        .geometry()
        .ensure_same_shape(intensity.geometry(), "extract_prototypes")?;
    let counts = labels.label_counts();
    let mut prototypes = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == 0 || counts.get(id as usize).copied().unwrap_or(0) == 0 {
            return Err(Error::MissingLabel(id));
        }
        let mask = labels.map(|l| (l == id) as u8);
        prototypes.push(NucleusPrototype::new(&mask, intensity)?);
    }
    Ok(PrototypeDb { prototypes })
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= 1e-6) || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::arg(
            "rotation must be orthonormal with determinant +1",
        ));
    }
    Ok(())
}

/// Rotate and isotropically scale a prototype on its own grid spacing.
pub fn resample_prototype(
    p: &NucleusPrototype,
    rotation: &Matrix3<f64>,
    scale: f64,
) -> Result<NucleusPrototype> {
    resample_to(p, rotation, scale, p.mask.spacing())
}

/// Rotate by `rotation` (acting on physical `(z, y, x)` vectors) about the box
/// centre, scale by `scale`, and resample onto a grid with `spacing`: nearest
/// neighbour for the mask, trilinear for the intensity.
pub fn resample_to(
    p: &NucleusPrototype,
    rotation: &Matrix3<f64>,
    scale: f64,
    spacing: [f64; 3],
) -> Result<NucleusPrototype> {
    check_rotation(rotation)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::arg(format!("scale must be > 0, got {scale}")));
    }
    let src_shape = p.mask.shape();
    let src_sp = p.mask.spacing();
    let extent = [0, 1, 2].map(|a| src_shape[a] as f64 * src_sp[a]);
    let out_shape = [0, 1, 2].map(|a| {
        let e: f64 = (0..3)
            .map(|b| rotation[(a, b)].abs() * extent[b])
            .sum::<f64>()
            * scale;
        ((e / spacing[a]) - 1e-9).ceil().max(1.0) as usize
    });
    let geom = VolumeGeometry::new(out_shape, spacing)?;
    let src_c = src_shape.map(|n| (n as f64 - 1.0) / 2.0);
    let out_c = out_shape.map(|n| (n as f64 - 1.0) / 2.0);
    let inv = rotation.transpose() / scale;

    let src_mask = p.mask.data();
    let src_int = p.intensity.data();
    let src_idx = |c: [usize; 3]| (c[0] * src_shape[1] + c[1]) * src_shape[2] + c[2];
    let mut mask = vec![0u8; geom.len()];
    let mut intensity = vec![0.0f32; geom.len()];
    for (i, (m, v)) in mask.iter_mut().zip(intensity.iter_mut()).enumerate() {
        let c = geom.coords(i);
        let u = Vector3::from([0, 1, 2].map(|a| (c[a] as f64 - out_c[a]) * spacing[a]));
        let s = inv * u;
        let q = [0, 1, 2].map(|a| s[a] / src_sp[a] + src_c[a]);
        let nn = q.map(|x| x.round());
        if (0..3).all(|a| nn[a] >= 0.0 && nn[a] < src_shape[a] as f64) {
            let j = src_idx(nn.map(|x| x as usize));
            if src_mask[j] != 0 {
                *m = 1;
                let t = trilinear(src_int, src_shape, q);
                *v = if t > 0.0 { t } else { src_int[j] };
            }
        }
    }
    let mut mask = Volume::from_vec(geom, mask)?;
    let mut intensity = Volume::from_vec(geom, intensity)?;
    if mask.data().iter().all(|&m| m == 0) {
        // shrunk below one voxel: keep the centre voxel
        let c = out_c.map(|x| x.round() as usize);
        let q = src_c;
        mask.set(c[0], c[1], c[2], 1);
        let j = src_idx(q.map(|x| x.round() as usize));
        intensity.set(
            c[0],
            c[1],
            c[2],
            trilinear(src_int, src_shape, q).max(src_int[j]),
        );
    }
    NucleusPrototype::new(&mask, &intensity)
}

fn trilinear(data: &[f32], shape: [usize; 3], q: [f64; 3]) -> f32 {
    let base = q.map(|x| x.floor());
    let frac = [0, 1, 2].map(|a| q[a] - base[a]);
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let bit = (corner >> (2 - a)) & 1;
            let k = base[a] as isize + bit as isize;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            if k < 0 || k >= shape[a] as isize {
                inside = false;
            } else {
                idx[a] = k as usize;
            }
        }
        if inside && w > 0.0 {
            acc += w * data[(idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]] as f64;
        }
    }
    acc as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementConfig {
    /// Target nucleus volume over cell volume.
    pub nc_volume_ratio: f64,
    /// Fraction of the nucleus that must lie inside the cell.
    pub overlap_threshold: f64,
    /// Std. dev. of the centre offset as a fraction of the cell's equivalent radius.
    pub position_sigma_factor: f64,
    pub max_position_attempts: usize,
    pub max_prototype_attempts: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            nc_volume_ratio: 0.4,
            overlap_threshold: 0.8,
            position_sigma_factor: 0.25,
            max_position_attempts: 10,
            max_prototype_attempts: 5,
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nc_volume_ratio > 0.0 && self.nc_volume_ratio < 1.0) {
            return Err(Error::arg("nc_volume_ratio must be in (0, 1)"));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::arg("overlap_threshold must be in (0, 1]"));
        }
        if !(self.position_sigma_factor > 0.0 && self.position_sigma_factor.is_finite()) {
            return Err(Error::arg("position_sigma_factor must be > 0"));
        }
        if self.max_position_attempts == 0 || self.max_prototype_attempts == 0 {
            return Err(Error::arg("attempt counts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionAttempt {
    /// Grid index of the resampled nucleus box's first voxel.
    pub origin: [i64; 3],
    /// Fraction of nucleus voxels inside the cell, before clipping.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeAttempt {
    pub prototype: usize,
    pub scale: f64,
    pub positions: Vec<PositionAttempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlacement {
    pub label: u32,
    pub placed: bool,
    pub cell_voxels: usize,
    /// Voxels written after clipping.
    pub nucleus_voxels: usize,
    pub attempts: Vec<PrototypeAttempt>,
}

impl CellPlacement {
    pub fn achieved_ratio(&self) -> f64 {
        self.nucleus_voxels as f64 / self.cell_voxels as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub seed: u64,
    pub config: PlacementConfig,
    pub cells: Vec<CellPlacement>,
    pub skipped: Vec<u32>,
    pub placed: usize,
}

#[derive(Debug, Clone)]
pub struct Placement {
    pub phantom: IntensityVolume,
    pub nuclei: LabelVolume,
    pub report: PlacementReport,
}

/// Rotation mapping the prototype's major axis onto the cell's; identity when
/// either axis is undefined.
pub fn alignment_rotation(prototype: &PrincipalFrame, cell: &PrincipalFrame) -> Matrix3<f64> {
    if prototype.is_degenerate(DEGENERATE_TOL) || cell.is_degenerate(DEGENERATE_TOL) {
        return Matrix3::identity();
    }
    let from = prototype.major_axis();
    let mut to = cell.major_axis();
    // axes are sign-free; take the shorter arc
    if from.dot(&to) < 0.0 {
        to = -to;
    }
    minimal_rotation(from, to)
}

/// Place at most one nucleus per cell, cells in ascending label order. Cell
/// `l` draws from its own stream `derive_seed(seed, l)`.
pub fn place_nuclei(
    cells: &LabelVolume,
    db: &PrototypeDb,
    cfg: &PlacementConfig,
    seed: u64,
) -> Result<Placement> {
    cfg.validate()?;
    if db.is_empty() {
        return Err(Error::Empty("prototype database is empty".into()));
    }
    let geom = *cells.geometry();
    let spacing = geom.spacing();
    let voxel_volume = geom.voxel_volume();
    let mut phantom = Volume::filled(geom, 0.0f32);
    let mut nuclei = Volume::filled(geom, 0u32);
    let mut report = PlacementReport {
        seed,
        config: *cfg,
        cells: Vec::new(),
        skipped: Vec::new(),
        placed: 0,
    };
    let frames = crate::morphology::all_frames(cells);
    if frames.is_empty() {
        return Err(Error::Empty("cell volume has no cells".into()));
    }
    for (label, count, frame) in frames {
        let mut rng = rng_from_seed(derive_seed(seed, label as u64));
        let cell_volume = count as f64 * voxel_volume;
        let radius = (3.0 * cell_volume / (4.0 * PI)).cbrt();
        let offset =
            Normal::new(0.0, cfg.position_sigma_factor * radius).expect("sigma is positive");
        let mut entry = CellPlacement {
            label,
            placed: false,
            cell_voxels: count,
            nucleus_voxels: 0,
            attempts: Vec::new(),
        };
        'prototypes: for _ in 0..cfg.max_prototype_attempts {
            let k = rng.random_range(0..db.len());
            let proto = &db.prototypes[k];
            let rot = alignment_rotation(&proto.frame, &frame);
            let (scale, nucleus) =
                fit_scale(proto, &rot, cfg.nc_volume_ratio * count as f64, spacing)?;
            let mut attempt = PrototypeAttempt {
                prototype: k,
                scale,
                positions: Vec::new(),
            };
            let ns = nucleus.mask.shape();
            for _ in 0..cfg.max_position_attempts {
                let centre: [f64; 3] =
                    [0, 1, 2].map(|a| (frame.centroid[a] + offset.sample(&mut rng)) / spacing[a]);
                let origin =
                    [0, 1, 2].map(|a| (centre[a] - (ns[a] as f64 - 1.0) / 2.0).round() as i64);
                let overlap = overlap_fraction(cells, label, &nucleus.mask, origin);
                attempt.positions.push(PositionAttempt { origin, overlap });
                if overlap >= cfg.overlap_threshold {
                    entry.nucleus_voxels =
                        stamp(&mut phantom, &mut nuclei, cells, label, &nucleus, origin);
                    entry.placed = true;
                    entry.attempts.push(attempt);
                    break 'prototypes;
                }
            }
            entry.attempts.push(attempt);
        }
        if entry.placed {
            report.placed += 1;
        } else {
            report.skipped.push(label);
        }
        report.cells.push(entry);
    }
    Ok(Placement {
        phantom,
        nuclei,
        report,
    })
}

/// Resample at the scale giving `target_voxels`; nearest-neighbour
/// rounding on small masks can miss it noticeably, so the analytic scale is
/// corrected a few times and the closest count wins.
fn fit_scale(
    proto: &NucleusPrototype,
    rot: &Matrix3<f64>,
    target_voxels: f64,
    spacing: [f64; 3],
) -> Result<(f64, NucleusPrototype)> {
    // nearest-neighbour counts jump with the sampling phase, so the analytic
    // scale is refined by a bracketed search around it
    let voxel_volume: f64 = spacing.iter().product();
    let analytic = (target_voxels * voxel_volume / proto.volume).cbrt();
    let candidates = std::iter::once(1.0).chain((0..=120).map(|k| 0.7 + 0.005 * k as f64));
    let mut best: Option<(f64, f64, NucleusPrototype)> = None;
    for f in candidates {
        let scale = analytic * f;
        let n = resample_to(proto, rot, scale, spacing)?;
        let err = (n.voxel_count() as f64 - target_voxels).abs();
        let better = match &best {
            None => true,
            Some(b) => {
                err < b.0 || (err == b.0 && (scale - analytic).abs() < (b.1 - analytic).abs())
            }
        };
        if better {
            best = Some((err, scale, n));
        }
        if err <= 0.01 * target_voxels {
            break;
        }
    }
    let (_, scale, n) = best.expect("at least one resampling");
    Ok((scale, n))
}

/// Visit every mask voxel at `origin` that falls inside the grid.
fn for_each_voxel(
    shape: [usize; 3],
    mask: &MaskVolume,
    origin: [i64; 3],
    mut f: impl FnMut(Option<usize>, usize),
) {
    let geom = mask.geometry();
    for (j, &m) in mask.data().iter().enumerate() {
        if m == 0 {
            continue;
        }
        let c = geom.coords(j);
        let g: [i64; 3] = [0, 1, 2].map(|a| origin[a] + c[a] as i64);
        let inside = (0..3).all(|a| g[a] >= 0 && g[a] < shape[a] as i64);
        let idx =
            inside.then(|| ((g[0] as usize * shape[1]) + g[1] as usize) * shape[2] + g[2] as usize);
        f(idx, j);
    }
}

/// Fraction of the nucleus voxels that land on `label` in `cells`.
pub fn overlap_fraction(
    cells: &LabelVolume,
    label: u32,
    mask: &MaskVolume,
    origin: [i64; 3],
) -> f64 {
    let data = cells.data();
    let (mut total, mut hit) = (0usize, 0usize);
    for_each_voxel(cells.shape(), mask, origin, |idx, _| {
        total += 1;
        if idx.is_some_and(|i| data[i] == label) {
            hit += 1;
        }
    });
    hit as f64 / total as f64
}

fn stamp(
    phantom: &mut IntensityVolume,
    nuclei: &mut LabelVolume,
    cells: &LabelVolume,
    label: u32,
    nucleus: &NucleusPrototype,
    origin: [i64; 3],
) -> usize {
    let mut written = 0;
    let (cd, nd, pd) = (cells.data(), nuclei.data_mut(), phantom.data_mut());
    let intensity = nucleus.intensity.data();
    for_each_voxel(cells.shape(), &nucleus.mask, origin, |idx, j| {
        if let Some(i) = idx {
            if cd[i] == label {
                nd[i] = label;
                pd[i] += intensity[j];
                written += 1;
            }
        }
    });
    written
}
