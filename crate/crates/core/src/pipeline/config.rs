use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cpm::CpmParams;
use crate::error::{Error, Result};
use crate::fixtures::{NucleiSpec, SpheroidSpec};
use crate::imaging::ImagingConfig;
use crate::io::FileFormat;
use crate::metrics::KidOptions;
use crate::nuclei::PlacementConfig;
use crate::postproc::PostprocConfig;
use crate::scan::ScanGrid;

/// The full job description. Every section is optional in the file and
/// falls back to its defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub io: IoConfig,
    pub preprocess: PreprocessConfig,
    pub cpm: CpmSection,
    pub scan: ScanSection,
    pub placement: PlacementSection,
    pub imaging: ImagingConfig,
    pub postproc: PostprocConfig,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Segmented cell labels (TIFF or RVOL).
    pub input: Option<PathBuf>,
    /// Generated stand-in for `input` when no file is given.
    pub synthetic_input: Option<SpheroidSpec>,
    /// Simulated cell labels, input of `synth` and `postproc`.
    pub cells: Option<PathBuf>,
    /// Intensity phantom, input of `image`.
    pub phantom: Option<PathBuf>,
    /// Nucleus prediction or binary label channel, input of `postproc`.
    pub prediction: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub format: FileFormat,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic_input: None,
            cells: None,
            phantom: None,
            prediction: None,
            output_dir: PathBuf::from("out"),
            format: FileFormat::Rvol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub min_voxels: usize,
    pub min_z_span: usize,
    /// Closing and dilation radius; 0 skips both.
    pub close_dilate_radius: usize,
    /// z spacing to upsample towards; `None` targets the x spacing.
    pub target_z_spacing: Option<f64>,
    /// Compute the feature table on the upsampled labels.
    pub features_after_upsample: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_voxels: 5,
            min_z_span: 4,
            close_dilate_radius: 1,
            target_z_spacing: None,
            features_after_upsample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpmSection {
    pub params: CpmParams,
    pub n_mcs: u64,
    /// Base seed; every random stream of a run derives from it.
    pub seed: u64,
    /// Save a lattice snapshot every this many MCS (0: final state only).
    pub snapshot_every: u64,
    /// Independent pipeline runs, each with its own derived seed.
    pub runs: usize,
    /// Worker threads for multi-run pipelines; 0 uses all cores.
    pub workers: usize,
}

impl Default for CpmSection {
    fn default() -> Self {
        Self {
            params: CpmParams::best(),
            n_mcs: 1000,
            seed: 0,
            snapshot_every: 0,
            runs: 1,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub grid: ScanGrid,
    pub n_mcs: u64,
    pub base_seed: u64,
    pub workers: usize,
    pub replicates: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            grid: ScanGrid::reference(),
            n_mcs: 1000,
            base_seed: 0,
            workers: 0,
            replicates: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementSection {
    pub config: PlacementConfig,
    /// Directory written by `PrototypeDb::save`.
    pub prototype_dir: Option<PathBuf>,
    /// Annotated source image and labels to extract prototypes from.
    pub prototype_intensity: Option<PathBuf>,
    pub prototype_labels: Option<PathBuf>,
    /// Label ids to extract; empty takes every label.
    pub prototype_ids: Vec<u32>,
    /// Generated prototypes used when no other source is configured.
    pub synthetic_prototypes: NucleiSpec,
}

impl Default for PlacementSection {
    fn default() -> Self {
        Self {
            config: PlacementConfig::default(),
            prototype_dir: None,
            prototype_intensity: None,
            prototype_labels: None,
            prototype_ids: Vec::new(),
            synthetic_prototypes: NucleiSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub ground_truth: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    /// Both set: also compute KID between them.
    pub real_image: Option<PathBuf>,
    pub synthetic_image: Option<PathBuf>,
    pub kid: KidOptions,
}

/// Config paths whose defaults are not fixed by any published value. Runs
/// flag them in the manifest when they were left at their defaults.
pub const UNSTATED_DEFAULTS: &[&str] = &[
    "placement.config.nc_volume_ratio",
    "placement.config.overlap_threshold",
    "placement.config.position_sigma_factor",
    "placement.config.max_position_attempts",
    "placement.config.max_prototype_attempts",
    "postproc.binarize_threshold",
    "postproc.opening_radius",
    "imaging.attenuation_mu",
    "imaging.psf_sigma",
    "imaging.photon_gain",
    "imaging.read_noise_sigma",
    "evaluate.kid.subset_size",
    "evaluate.kid.n_subsets",
    "scan.replicates",
    "scan.n_mcs",
];

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl PipelineConfig {
    /// Strict parse of a JSON document; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })
    }

    pub fn from_value(v: Value) -> Result<Self> {
        serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            schema(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })
    }

    /// Read a config file; a missing file is an I/O error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { path: key, message } => {
                schema(key, format!("{message} (in {})", path.display()))
            }
            other => other,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config is serializable")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// Apply `key.path=value` overrides. The value is parsed as JSON when
    /// possible and taken as a string otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = self.to_value();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| schema(o, "override must have the form key.path=value"))?;
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, key, value)?;
        }
        Self::from_value(v)
    }

    /// Paths from [`UNSTATED_DEFAULTS`] that still hold their default value.
    pub fn defaults_in_use(&self) -> Vec<String> {
        let cur = self.to_value();
        let def = Self::default().to_value();
        UNSTATED_DEFAULTS
            .iter()
            .filter(|p| lookup(&cur, p) == lookup(&def, p))
            .map(|p| p.to_string())
            .collect()
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |v, k| v.get(k))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(schema(key, "empty path segment"));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let here = parts[..=i].join(".");
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| schema(&here, "cannot descend into a non-object value"))?;
        if i + 1 == parts.len() {
            // unknown leaf keys are left for the strict parse to reject,
            // except where the parent section is absent entirely
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(
            PipelineConfig::from_json("{}").unwrap(),
            PipelineConfig::default()
        );
        let round = PipelineConfig::from_json(&PipelineConfig::default().to_json()).unwrap();
        assert_eq!(round, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err =
            PipelineConfig::from_json(r#"{"cpm": {"params": {"lambda_volum": 1.0}}}"#).unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert!(path.starts_with("cpm.params"), "{path}");
                assert!(message.contains("lambda_volum"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = PipelineConfig::from_json(r#"{"imaging": {"photon_gain": "x"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "imaging.photon_gain"));
    }

    #[test]
    fn overrides_match_edited_config() {
        let edited = PipelineConfig::from_json(r#"{"cpm": {"n_mcs": 7, "params": {"temperature": 12.5}}, "io": {"output_dir": "x/y"}}"#).unwrap();
        let set = PipelineConfig::default()
            .with_overrides(&[
                "cpm.n_mcs=7",
                "cpm.params.temperature=12.5",
                "io.output_dir=x/y",
            ])
            .unwrap();
        assert_eq!(set, edited);
        assert!(PipelineConfig::default()
            .with_overrides(&["cpm.nmcs=7"])
            .is_err());
        assert!(PipelineConfig::default()
            .with_overrides(&["cpm.n_mcs"])
            .is_err());
        assert!(PipelineConfig::default()
            .with_overrides(&["cpm.n_mcs.x=1"])
            .is_err());
        let opt = PipelineConfig::default()
            .with_overrides(&[
                "io.synthetic_input.shape=[8,8,8]",
                "io.synthetic_input.n_cells=3",
                "io.synthetic_input.radius_fraction=0.9",
                "io.synthetic_input.seed=1",
            ])
            .unwrap();
        assert_eq!(opt.io.synthetic_input.unwrap().n_cells, 3);
    }

    #[test]
    fn flags_unstated_defaults() {
        let d = PipelineConfig::default();
        assert_eq!(d.defaults_in_use().len(), UNSTATED_DEFAULTS.len());
        let c = d.with_overrides(&["postproc.opening_radius=2"]).unwrap();
        assert!(!c
            .defaults_in_use()
            .contains(&"postproc.opening_radius".to_string()));
    }
}
