//! Volume file I/O.
//!
//! Two formats are supported:
//!
//! * uncompressed grayscale multi-page TIFF with 8 or 16 bits per sample, one
//!   page per z-plane;
//! * RVOL, a JSON header (`*.rvol`) next to a raw little-endian payload
//!   (`*.raw`) in z-major order. RVOL handles `u8`, `u16`, `u32` and `f32`.
//!
//! Both round-trip voxel data bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{ifd::Value, Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, Rational, TiffEncoder};
use tiff::tags::{ResolutionUnit, Tag};
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, LabelVolume, MaskVolume, Volume, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    U32,
    F32,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::U8 => "u8",
            DType::U16 => "u16",
            DType::U32 => "u32",
            DType::F32 => "f32",
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::U32 | DType::F32 => 4,
        }
    }

    /// Largest representable value; `None` for floating point.
    pub fn max_value(self) -> Option<f64> {
        match self {
            DType::U8 => Some(u8::MAX as f64),
            DType::U16 => Some(u16::MAX as f64),
            DType::U32 => Some(u32::MAX as f64),
            DType::F32 => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
    F32(Vec<f32>),
}

impl VolumeData {
    pub fn dtype(&self) -> DType {
        match self {
            VolumeData::U8(_) => DType::U8,
            VolumeData::U16(_) => DType::U16,
            VolumeData::U32(_) => DType::U32,
            VolumeData::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::U16(v) => v.len(),
            VolumeData::U32(v) => v.len(),
            VolumeData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VolumeData::U8(v) => v.clone(),
            VolumeData::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VolumeData::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VolumeData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::U8 => VolumeData::U8(bytes.to_vec()),
            DType::U16 => VolumeData::U16(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            DType::U32 => VolumeData::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F32 => VolumeData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

/// A volume as stored on disk, before it is interpreted as labels or
/// intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub geometry: VolumeGeometry,
    pub data: VolumeData,
}

impl RawVolume {
    pub fn new(geometry: VolumeGeometry, data: VolumeData) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                geometry.shape()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Narrow a label volume to `dtype`, failing if any label does not fit.
    pub fn from_labels(v: &LabelVolume, dtype: DType) -> Result<Self> {
        let max = v.max_label();
        let limit = match dtype {
            DType::F32 => (1u64 << 24) as f64,
            other => other.max_value().unwrap_or(f64::MAX),
        };
        if max as f64 > limit {
            return Err(Error::ValueOverflow {
                value: max as f64,
                dtype: dtype.name(),
            });
        }
        let d = v.data();
        let data = match dtype {
            DType::U8 => VolumeData::U8(d.iter().map(|&l| l as u8).collect()),
            DType::U16 => VolumeData::U16(d.iter().map(|&l| l as u16).collect()),
            DType::U32 => VolumeData::U32(d.to_vec()),
            DType::F32 => VolumeData::F32(d.iter().map(|&l| l as f32).collect()),
        };
        Ok(Self {
            geometry: *v.geometry(),
            data,
        })
    }

    /// Convert intensities to `dtype`. Integer targets round to nearest and
    /// reject values outside the representable range.
    pub fn from_intensity(v: &IntensityVolume, dtype: DType) -> Result<Self> {
        v.ensure_finite()?;
        let d = v.data();
        if let Some(max) = dtype.max_value() {
            let (lo, hi) = v.min_max();
            for bad in [lo, hi] {
                let r = (bad as f64).round();
                if r < 0.0 || r > max {
                    return Err(Error::ValueOverflow {
                        value: bad as f64,
                        dtype: dtype.name(),
                    });
                }
            }
        }
        let data = match dtype {
            DType::U8 => VolumeData::U8(d.iter().map(|&x| x.round() as u8).collect()),
            DType::U16 => VolumeData::U16(d.iter().map(|&x| x.round() as u16).collect()),
            DType::U32 => VolumeData::U32(d.iter().map(|&x| x.round() as u32).collect()),
            DType::F32 => VolumeData::F32(d.to_vec()),
        };
        Ok(Self {
            geometry: *v.geometry(),
            data,
        })
    }

    pub fn from_mask(v: &MaskVolume) -> Self {
        Self {
            geometry: *v.geometry(),
            data: VolumeData::U8(v.data().to_vec()),
        }
    }

    /// Interpret as labels. Floating point data must hold non-negative
    /// integers.
    pub fn into_labels(self) -> Result<LabelVolume> {
        let data: Vec<u32> = match self.data {
            VolumeData::U8(v) => v.into_iter().map(u32::from).collect(),
            VolumeData::U16(v) => v.into_iter().map(u32::from).collect(),
            VolumeData::U32(v) => v,
            VolumeData::F32(v) => {
                if let Some(bad) = v.iter().find(|x| !(x.fract() == 0.0 && **x >= 0.0)) {
                    return Err(Error::arg(format!(
                        "floating point volume holds non-label value {bad}"
                    )));
                }
                v.into_iter().map(|x| x as u32).collect()
            }
        };
        Volume::from_vec(self.geometry, data)
    }

    pub fn into_intensity(self) -> IntensityVolume {
        let data: Vec<f32> = match self.data {
            VolumeData::U8(v) => v.into_iter().map(f32::from).collect(),
            VolumeData::U16(v) => v.into_iter().map(f32::from).collect(),
            VolumeData::U32(v) => v.into_iter().map(|x| x as f32).collect(),
            VolumeData::F32(v) => v,
        };
        Volume::from_vec(self.geometry, data).expect("length checked at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Tiff,
    Rvol,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("tif") | Some("tiff") => Ok(FileFormat::Tiff),
            Some("rvol") => Ok(FileFormat::Rvol),
            _ => Err(Error::arg(format!(
                "cannot infer volume format of `{}` (expected .tif, .tiff or .rvol)",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Tiff => "tif",
            FileFormat::Rvol => "rvol",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub volume: RawVolume,
    /// Soft problems, e.g. missing spacing metadata.
    pub warnings: Vec<String>,
}

/// Load a TIFF or RVOL volume, dispatching on the file extension.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    match FileFormat::from_path(path)? {
        FileFormat::Tiff => read_tiff(path),
        FileFormat::Rvol => read_rvol(path).map(|volume| Loaded {
            volume,
            warnings: Vec::new(),
        }),
    }
}

pub fn save_volume(v: &RawVolume, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Unwritable {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    match format {
        FileFormat::Tiff => write_tiff(v, path),
        FileFormat::Rvol => write_rvol(v, path),
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<(LabelVolume, Vec<String>)> {
    let loaded = load_volume(path)?;
    Ok((loaded.volume.into_labels()?, loaded.warnings))
}

pub fn load_intensity(path: impl AsRef<Path>) -> Result<(IntensityVolume, DType, Vec<String>)> {
    let loaded = load_volume(path)?;
    let dtype = loaded.volume.dtype();
    Ok((loaded.volume.into_intensity(), dtype, loaded.warnings))
}

/// Save labels as 16-bit TIFF or 32-bit RVOL.
pub fn save_labels(v: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = FileFormat::from_path(path)?;
    let dtype = match format {
        FileFormat::Tiff => DType::U16,
        FileFormat::Rvol => DType::U32,
    };
    save_volume(&RawVolume::from_labels(v, dtype)?, path, format)
}

/// Save intensities as 16-bit TIFF (rounded) or `f32` RVOL.
pub fn save_intensity(v: &IntensityVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = FileFormat::from_path(path)?;
    let dtype = match format {
        FileFormat::Tiff => DType::U16,
        FileFormat::Rvol => DType::F32,
    };
    save_volume(&RawVolume::from_intensity(v, dtype)?, path, format)
}

pub fn save_mask(v: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_volume(&RawVolume::from_mask(v), path, FileFormat::from_path(path)?)
}

// --- RVOL -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RvolHeader {
    format: String,
    version: u32,
    shape: [usize; 3],
    spacing: [f64; 3],
    dtype: DType,
    byte_order: String,
    order: String,
    payload: String,
}

/// Payload path belonging to an RVOL header path.
pub fn rvol_payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn write_rvol(v: &RawVolume, path: &Path) -> Result<()> {
    let payload_path = rvol_payload_path(path);
    let header = RvolHeader {
        format: "rvol".into(),
        version: 1,
        shape: v.geometry.shape(),
        spacing: v.geometry.spacing(),
        dtype: v.dtype(),
        byte_order: "little".into(),
        order: "zyx".into(),
        payload: payload_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
    };
    let unwritable = |source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(path, json + "\n").map_err(unwritable)?;
    std::fs::write(&payload_path, v.data.to_le_bytes()).map_err(|source| Error::Unwritable {
        path: payload_path.clone(),
        source,
    })
}

fn read_rvol(path: &Path) -> Result<RawVolume> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let invalid = |reason: String| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason,
    };
    let header: RvolHeader = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    if header.format != "rvol" {
        return Err(invalid(format!(
            "format is `{}`, expected `rvol`",
            header.format
        )));
    }
    if header.version != 1 {
        return Err(invalid(format!("unsupported version {}", header.version)));
    }
    if header.byte_order != "little" {
        return Err(invalid(format!(
            "unsupported byte order `{}`",
            header.byte_order
        )));
    }
    if header.order != "zyx" {
        return Err(invalid(format!(
            "unsupported axis order `{}`",
            header.order
        )));
    }
    let geometry =
        VolumeGeometry::new(header.shape, header.spacing).map_err(|e| invalid(e.to_string()))?;
    let payload_path = path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&header.payload);
    let bytes = std::fs::read(&payload_path).map_err(|source| Error::Unreadable {
        path: payload_path.clone(),
        source,
    })?;
    let expected = geometry.len() * header.dtype.byte_size();
    if bytes.len() != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            reason: format!(
                "shape {:?} of {} needs {expected} bytes, payload has {}",
                header.shape,
                header.dtype.name(),
                bytes.len()
            ),
        });
    }
    RawVolume::new(geometry, VolumeData::from_le_bytes(header.dtype, &bytes))
}

// --- TIFF -----------------------------------------------------------------

const SPACING_KEY: &str = "cellsynth_spacing=";

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(source) => Error::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        tiff::TiffError::UnsupportedError(u) => Error::UnsupportedTiff {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        other => Error::MalformedTiff {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn write_tiff(v: &RawVolume, path: &Path) -> Result<()> {
    if !matches!(v.dtype(), DType::U8 | DType::U16) {
        return Err(Error::UnsupportedTiff {
            path: path.to_path_buf(),
            reason: format!(
                "{} samples; TIFF output supports u8 and u16",
                v.dtype().name()
            ),
        });
    }
    let file = File::create(path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })?;
    let werr = |e: tiff::TiffError| match e {
        tiff::TiffError::IoError(source) => Error::Unwritable {
            path: path.to_path_buf(),
            source,
        },
        other => Error::MalformedTiff {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(werr)?;
    let [nz, ny, nx] = v.geometry.shape();
    let [sz, sy, sx] = v.geometry.spacing();
    let description = format!(
        "ImageJ=1.11a\nimages={nz}\nslices={nz}\nunit=micron\nspacing={sz}\n{SPACING_KEY}{sz:?},{sy:?},{sx:?}\n"
    );
    let plane = ny * nx;
    let resolution = |s: f64| Rational {
        n: 1_000_000,
        d: ((s * 1_000_000.0).round() as u32).max(1),
    };
    for z in 0..nz {
        macro_rules! page {
            ($ct:ty, $data:expr) => {{
                let mut image = encoder
                    .new_image::<$ct>(nx as u32, ny as u32)
                    .map_err(werr)?;
                if z == 0 {
                    image
                        .encoder()
                        .write_tag(Tag::ImageDescription, description.as_str())
                        .map_err(werr)?;
                }
                image.resolution_unit(ResolutionUnit::None);
                image.x_resolution(resolution(sx));
                image.y_resolution(resolution(sy));
                image
                    .write_data(&$data[z * plane..(z + 1) * plane])
                    .map_err(werr)?;
            }};
        }
        match &v.data {
            VolumeData::U8(d) => page!(colortype::Gray8, d),
            VolumeData::U16(d) => page!(colortype::Gray16, d),
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn parse_spacing(description: &str, xres: Option<f64>, yres: Option<f64>) -> Option<[f64; 3]> {
    let mut imagej_z = None;
    for line in description.lines() {
        if let Some(rest) = line.strip_prefix(SPACING_KEY) {
            let parts: Vec<f64> = rest
                .split(',')
                .filter_map(|p| p.trim().parse().ok())
                .collect();
            if parts.len() == 3 {
                return Some([parts[0], parts[1], parts[2]]);
            }
        } else if let Some(rest) = line.strip_prefix("spacing=") {
            imagej_z = rest.trim().parse::<f64>().ok();
        }
    }
    match (imagej_z, xres, yres) {
        (Some(z), Some(x), Some(y)) if x > 0.0 && y > 0.0 => Some([z, 1.0 / y, 1.0 / x]),
        _ => None,
    }
}

fn rational_tag(value: Option<Value>) -> Option<f64> {
    match value? {
        Value::Rational(n, d) if d != 0 => Some(n as f64 / d as f64),
        _ => None,
    }
}

fn read_tiff(path: &Path) -> Result<Loaded> {
    let file = File::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
    if &magic[..2] != b"II" && &magic[..2] != b"MM" {
        return Err(Error::MalformedTiff {
            path: path.to_path_buf(),
            reason: "missing TIFF byte-order mark".into(),
        });
    }
    let file = File::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut decoder = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());

    let mut dims: Option<(u32, u32)> = None;
    let mut spacing = None;
    let mut data: Option<VolumeData> = None;
    let mut pages = 0usize;
    loop {
        let compression = decoder
            .find_tag_unsigned::<u16>(Tag::Compression)
            .map_err(|e| tiff_err(path, e))?
            .unwrap_or(1);
        if compression != 1 {
            return Err(Error::UnsupportedTiff {
                path: path.to_path_buf(),
                reason: format!("compressed page {pages} (compression scheme {compression})"),
            });
        }
        let color = decoder.colortype().map_err(|e| tiff_err(path, e))?;
        if !matches!(color, ColorType::Gray(8) | ColorType::Gray(16)) {
            return Err(Error::UnsupportedTiff {
                path: path.to_path_buf(),
                reason: format!(
                    "page {pages} has color type {color:?}; only 8/16-bit grayscale is supported"
                ),
            });
        }
        let page_dims = decoder.dimensions().map_err(|e| tiff_err(path, e))?;
        match dims {
            None => {
                dims = Some(page_dims);
                let description = decoder
                    .find_tag(Tag::ImageDescription)
                    .map_err(|e| tiff_err(path, e))?
                    .and_then(|v| v.into_string().ok())
                    .unwrap_or_default();
                let xres = rational_tag(
                    decoder
                        .find_tag(Tag::XResolution)
                        .map_err(|e| tiff_err(path, e))?,
                );
                let yres = rational_tag(
                    decoder
                        .find_tag(Tag::YResolution)
                        .map_err(|e| tiff_err(path, e))?,
                );
                spacing = parse_spacing(&description, xres, yres);
            }
            Some(d) if d != page_dims => {
                return Err(Error::HeaderMismatch {
                    path: path.to_path_buf(),
                    reason: format!("page {pages} is {page_dims:?}, first page is {d:?}"),
                })
            }
            _ => {}
        }
        let page = decoder.read_image().map_err(|e| tiff_err(path, e))?;
        match (&mut data, page) {
            (None, DecodingResult::U8(p)) => data = Some(VolumeData::U8(p)),
            (None, DecodingResult::U16(p)) => data = Some(VolumeData::U16(p)),
            (Some(VolumeData::U8(acc)), DecodingResult::U8(p)) => acc.extend(p),
            (Some(VolumeData::U16(acc)), DecodingResult::U16(p)) => acc.extend(p),
            _ => {
                return Err(Error::UnsupportedTiff {
                    path: path.to_path_buf(),
                    reason: format!("page {pages} changes sample type"),
                })
            }
        }
        pages += 1;
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(|e| tiff_err(path, e))?;
    }
    let (w, h) = dims.expect("at least one page");
    let mut warnings = Vec::new();
    let spacing = match spacing {
        Some(s) => s,
        None => {
            warnings.push(format!(
                "`{}` carries no spacing metadata; assuming 1 µm isotropic voxels",
                path.display()
            ));
            [1.0; 3]
        }
    };
    let geometry = VolumeGeometry::new([pages, h as usize, w as usize], spacing).map_err(|e| {
        Error::MalformedTiff {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    let volume = RawVolume::new(geometry, data.expect("at least one page")).map_err(|e| {
        Error::HeaderMismatch {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    Ok(Loaded { volume, warnings })
}

/// Write `bytes` atomically enough for our purposes: create parent dirs first.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Unwritable {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut f = File::create(path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{derive_seed, rng_from_seed};
    use proptest::prelude::*;
    use rand::Rng;

    fn geom(shape: [usize; 3]) -> VolumeGeometry {
        VolumeGeometry::new(shape, [2.0, 0.5, 0.25]).unwrap()
    }

    #[test]
    fn three_page_u16_tiff_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.tif");
        let raw = RawVolume::new(
            geom([3, 2, 2]),
            VolumeData::U16(vec![0, 1, 65535, 3, 4, 5, 6, 7, 8, 9, 1000, 40000]),
        )
        .unwrap();
        save_volume(&raw, &path, FileFormat::Tiff).unwrap();
        let loaded = load_volume(&path).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.volume, raw);
    }

    #[test]
    fn label_overflow_for_16_bit_tiff() {
        let v = Volume::from_vec(geom([1, 1, 2]), vec![1u32, 70000]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = save_labels(&v, dir.path().join("l.tif")).unwrap_err();
        assert!(matches!(err, Error::ValueOverflow { .. }));
        // 32-bit RVOL carries it fine
        save_labels(&v, dir.path().join("l.rvol")).unwrap();
        let (back, _) = load_labels(dir.path().join("l.rvol")).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn empty_medium_round_trips_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::filled(geom([2, 3, 4]), 0u32);
        for name in ["m.tif", "m.rvol"] {
            let p = dir.path().join(name);
            save_labels(&v, &p).unwrap();
            assert_eq!(load_labels(&p).unwrap().0, v);
        }
        let bytes = std::fs::read(dir.path().join("m.raw")).unwrap();
        assert!(bytes.iter().all(|&b| b == 0));
    }

    #[test]
    fn rvol_header_payload_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rvol");
        let v = Volume::filled(geom([2, 2, 2]), 5u32);
        save_labels(&v, &p).unwrap();
        std::fs::write(dir.path().join("bad.raw"), [0u8; 12]).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::HeaderMismatch { .. })));
    }

    #[test]
    fn rvol_invalid_header_and_missing_file_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.rvol");
        std::fs::write(&p, "{\"format\":\"rvol\"}").unwrap();
        assert!(matches!(load_volume(&p), Err(Error::InvalidHeader { .. })));
        assert!(matches!(
            load_volume(dir.path().join("none.rvol")),
            Err(Error::Unreadable { .. })
        ));
    }

    #[test]
    fn tiff_without_spacing_gets_default_and_warning() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plain.tif");
        let file = File::create(&p).unwrap();
        let mut enc = TiffEncoder::new(BufWriter::new(file)).unwrap();
        for z in 0..2u8 {
            enc.write_image::<colortype::Gray8>(3, 1, &[z, z + 1, z + 2])
                .unwrap();
        }
        drop(enc);
        let loaded = load_volume(&p).unwrap();
        assert_eq!(loaded.volume.geometry.spacing(), [1.0; 3]);
        assert_eq!(loaded.volume.geometry.shape(), [2, 1, 3]);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn compressed_and_rgb_tiffs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.tif");
        let mut enc = TiffEncoder::new(BufWriter::new(File::create(&p).unwrap())).unwrap();
        enc.write_image::<colortype::RGB8>(1, 1, &[1, 2, 3])
            .unwrap();
        drop(enc);
        assert!(matches!(
            load_volume(&p),
            Err(Error::UnsupportedTiff { .. })
        ));

        let p = dir.path().join("lzw.tif");
        let mut enc = TiffEncoder::new(BufWriter::new(File::create(&p).unwrap()))
            .unwrap()
            .with_compression(tiff::encoder::Compression::Lzw);
        enc.write_image::<colortype::Gray8>(2, 2, &[1, 2, 3, 4])
            .unwrap();
        drop(enc);
        assert!(matches!(
            load_volume(&p),
            Err(Error::UnsupportedTiff { .. })
        ));

        let p = dir.path().join("garbage.tif");
        std::fs::write(&p, b"not a tiff at all").unwrap();
        assert!(matches!(load_volume(&p), Err(Error::MalformedTiff { .. })));
    }

    #[test]
    fn random_f32_rvol_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_from_seed(11);
        let data: Vec<f32> = (0..4 * 5 * 6)
            .map(|_| f32::from_bits(rng.random::<u32>() & 0x7F7F_FFFF))
            .collect();
        let raw = RawVolume::new(geom([4, 5, 6]), VolumeData::F32(data)).unwrap();
        let p = dir.path().join("f.rvol");
        save_volume(&raw, &p, FileFormat::Rvol).unwrap();
        let expected: Vec<u8> = match &raw.data {
            VolumeData::F32(d) => d.iter().flat_map(|x| x.to_le_bytes()).collect(),
            _ => unreachable!(),
        };
        assert_eq!(std::fs::read(dir.path().join("f.raw")).unwrap(), expected);
        let back = load_volume(&p).unwrap().volume;
        assert_eq!(back.geometry, raw.geometry);
        match (back.data, raw.data) {
            (VolumeData::F32(a), VolumeData::F32(b)) => {
                assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()))
            }
            _ => panic!("dtype changed"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_u16_volumes_round_trip_both_formats(
            dims in prop::array::uniform3(1usize..6), seed in any::<u64>()
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<u16> = (0..n as u64).map(|i| derive_seed(seed, i) as u16).collect();
            let raw = RawVolume::new(geom(dims), VolumeData::U16(data)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            for fmt in [FileFormat::Tiff, FileFormat::Rvol] {
                let p = dir.path().join(format!("v.{}", fmt.extension()));
                save_volume(&raw, &p, fmt).unwrap();
                prop_assert_eq!(&load_volume(&p).unwrap().volume, &raw);
            }
        }
    }
}
