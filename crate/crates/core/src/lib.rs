pub mod cpm;
pub mod error;
pub mod fixtures;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod nuclei;
pub mod pipeline;
pub mod postproc;
pub mod scan;
pub mod seed;
pub mod volume;

pub use error::{Error, ErrorKind, Result};
pub use volume::{IntensityVolume, LabelVolume, MaskVolume, Volume, VolumeGeometry};
