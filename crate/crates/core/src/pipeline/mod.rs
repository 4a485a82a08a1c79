//! Config-driven orchestration: every stage of the generator as a
//! subcommand that reads its inputs from a [`PipelineConfig`], writes volumes,
//! tables and plots to an output directory and records a manifest there.

mod config;
pub mod svg;

pub use config::{
    CpmSection, EvaluateSection, IoConfig, PipelineConfig, PlacementSection, PreprocessConfig,
    ScanSection, UNSTATED_DEFAULTS,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpm::{CpmState, RunStats, TargetAssignment};
use crate::error::{Error, Result};
use crate::fixtures::{ellipsoid_nuclei, voronoi_spheroid};
use crate::imaging::simulate_imaging;
use crate::io::{self, DType, FileFormat, RawVolume};
use crate::metrics::{
    det_counts, kid_volumes, object_matches, seg_score, DetCounts, HistogramExtractor, KidResult,
    ObjectMatch,
};
use crate::morphology::{
    clean_labels, close_and_dilate, extract_features, iou_per_cell, FeatureTable,
};
use crate::nuclei::{extract_prototypes, place_nuclei, PrototypeDb};
use crate::postproc::instance_labels;
use crate::scan::{feature_distances, grid_scan, ScanOptions};
use crate::seed::derive_seed;
use crate::volume::{IntensityVolume, LabelVolume};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Preprocess,
    Features,
    Simulate,
    Scan,
    Synth,
    Image,
    Postproc,
    Evaluate,
    Pipeline,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Preprocess,
        Stage::Features,
        Stage::Simulate,
        Stage::Scan,
        Stage::Synth,
        Stage::Image,
        Stage::Postproc,
        Stage::Evaluate,
        Stage::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Features => "features",
            Stage::Simulate => "simulate",
            Stage::Scan => "scan",
            Stage::Synth => "synth",
            Stage::Image => "image",
            Stage::Postproc => "postproc",
            Stage::Evaluate => "evaluate",
            Stage::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown subcommand `{s}`")))
    }
}

/// Record of one output directory, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: Stage,
    /// Fully resolved config, defaults included.
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Files written, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    /// Parameters left at defaults that no published value backs.
    pub unstated_defaults: Vec<String>,
}

/// Collects the files of one output directory.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    format: FileFormat,
    outputs: Vec<String>,
    warnings: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>, format: FileFormat) -> Self {
        Self {
            dir: dir.into(),
            format,
            outputs: Vec::new(),
            warnings: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn volume_path(&mut self, stem: &str) -> PathBuf {
        let name = format!("{stem}.{}", self.format.extension());
        let path = self.dir.join(&name);
        self.outputs.push(name);
        path
    }

    pub fn labels(&mut self, stem: &str, v: &LabelVolume) -> Result<PathBuf> {
        let path = self.volume_path(stem);
        io::save_labels(v, &path)?;
        Ok(path)
    }

    pub fn intensity(&mut self, stem: &str, v: &IntensityVolume, dtype: DType) -> Result<PathBuf> {
        let path = self.volume_path(stem);
        io::save_volume(&RawVolume::from_intensity(v, dtype)?, &path, self.format)?;
        Ok(path)
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        io::write_file(&path, content.as_bytes())?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable output");
        s.push('\n');
        self.text(name, &s)
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    /// Write `manifest.json` and return it.
    pub fn finish(self, stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
        let manifest = Manifest {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            subcommand: stage,
            config: cfg.clone(),
            seeds: self.seeds,
            outputs: self.outputs,
            warnings: self.warnings,
            unstated_defaults: cfg.defaults_in_use(),
        };
        let mut s = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        s.push('\n');
        io::write_file(&self.dir.join("manifest.json"), s.as_bytes())?;
        Ok(manifest)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config {
        path: key.to_string(),
        message: "required by this subcommand but not set".into(),
    })
}

fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{section}: {m}")),
        other => other,
    })
}

/// Check every section's value ranges; messages name the section.
pub fn validate(cfg: &PipelineConfig) -> Result<()> {
    in_section("cpm.params", cfg.cpm.params.validate())?;
    in_section("scan.grid.base", cfg.scan.grid.base.validate())?;
    in_section("placement.config", cfg.placement.config.validate())?;
    in_section("imaging", cfg.imaging.validate())?;
    in_section("postproc", cfg.postproc.validate())?;
    if cfg.cpm.runs == 0 {
        return Err(Error::arg("cpm.runs: must be >= 1"));
    }
    if cfg.scan.replicates == 0 {
        return Err(Error::arg("scan.replicates: must be >= 1"));
    }
    if let Some(z) = cfg.preprocess.target_z_spacing {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::arg("preprocess.target_z_spacing: must be positive"));
        }
    }
    Ok(())
}

/// Cell labels from `io.input`, or generated from `io.synthetic_input`.
pub fn load_input(cfg: &PipelineConfig, art: &mut Artifacts) -> Result<LabelVolume> {
    if let Some(path) = &cfg.io.input {
        let (v, warnings) = io::load_labels(path)?;
        warnings.into_iter().for_each(|w| art.warn(w));
        return Ok(v);
    }
    if let Some(spec) = &cfg.io.synthetic_input {
        art.seed("synthetic_input", spec.seed);
        return voronoi_spheroid(spec);
    }
    Err(Error::Config {
        path: "io.input".into(),
        message: "set either io.input or io.synthetic_input".into(),
    })
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub labels: LabelVolume,
    pub features: FeatureTable,
    pub z_factor: usize,
}

/// Nearest-neighbour z upsampling factor bringing the z spacing closest to
/// `target` (default: the x spacing).
pub fn z_upsample_factor(spacing: [f64; 3], target: Option<f64>) -> usize {
    let t = target.unwrap_or(spacing[2]);
    ((spacing[0] / t).round() as usize).max(1)
}

/// Clean small or flat labels, close and dilate, then upsample along z.
pub fn preprocess_labels(v: &LabelVolume, p: &PreprocessConfig) -> Result<Preprocessed> {
    let cleaned = clean_labels(v, p.min_voxels, p.min_z_span);
    if cleaned.labels().is_empty() {
        return Err(Error::Empty(
            "no label survives preprocess.min_voxels / preprocess.min_z_span".into(),
        ));
    }
    let closed = if p.close_dilate_radius > 0 {
        close_and_dilate(&cleaned, p.close_dilate_radius)?
    } else {
        cleaned
    };
    let z_factor = z_upsample_factor(closed.spacing(), p.target_z_spacing);
    let labels = closed.upsample_z(z_factor)?;
    let features = extract_features(if p.features_after_upsample {
        &labels
    } else {
        &closed
    });
    Ok(Preprocessed {
        labels,
        features,
        z_factor,
    })
}

/// One CPM run with the same seeding as a scan record: lattice stream `seed`,
/// targets from `derive_seed(seed, 0)`.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub initial_energy: f64,
    pub targets: TargetAssignment,
    pub snapshots: Vec<(u64, LabelVolume)>,
    pub cells: LabelVolume,
    pub borders: LabelVolume,
    pub stats: RunStats,
    pub start_features: FeatureTable,
    pub end_features: FeatureTable,
    pub wasserstein: [f64; 7],
    pub mean_iou: f64,
    pub metric_m: f64,
    pub vanished: Vec<u32>,
}

#[derive(Debug, Clone, Serialize)]
struct SimulationSummary<'a> {
    seed: u64,
    target_seed: u64,
    n_mcs: u64,
    params: &'a crate::cpm::CpmParams,
    initial_energy: f64,
    final_energy: f64,
    wasserstein: BTreeMap<&'static str, f64>,
    mean_w: f64,
    mean_iou: f64,
    metric_m: f64,
    vanished_cells: &'a [u32],
    targets: &'a TargetAssignment,
    stats: &'a RunStats,
}

pub fn simulate(initial: &LabelVolume, cpm: &CpmSection, seed: u64) -> Result<Simulation> {
    let mut state = CpmState::new(initial.clone(), cpm.params, seed)?;
    let targets = state.assign_targets(derive_seed(seed, 0))?;
    state.verify_caches()?;
    let initial_energy = state.energy();
    let run = state.run_mcs(cpm.n_mcs, cpm.snapshot_every);
    state.verify_caches()?;
    let cells = state.lattice().clone();
    let start_features = extract_features(initial);
    let end_features = extract_features(&cells);
    let wasserstein = feature_distances(&start_features, &end_features)?;
    let ious: Vec<f64> = iou_per_cell(initial, &cells)?.into_values().collect();
    let mean_iou = ious.iter().sum::<f64>() / ious.len().max(1) as f64;
    let mean_w = wasserstein.iter().sum::<f64>() / 7.0;
    Ok(Simulation {
        initial_energy,
        targets,
        snapshots: run
            .snapshots
            .into_iter()
            .map(|s| (s.mcs, s.lattice))
            .collect(),
        borders: state.export_borders(),
        vanished: state.vanished_cells(),
        cells,
        stats: run.stats,
        start_features,
        end_features,
        wasserstein,
        mean_iou,
        metric_m: mean_w * mean_iou,
    })
}

fn write_simulation(
    sim: &Simulation,
    cpm: &CpmSection,
    seed: u64,
    art: &mut Artifacts,
) -> Result<()> {
    if cpm.snapshot_every > 0 {
        for (mcs, lattice) in &sim.snapshots {
            art.labels(&format!("snapshots/cells_mcs{mcs:06}"), lattice)?;
        }
    }
    art.labels("cells", &sim.cells)?;
    art.labels("borders", &sim.borders)?;
    art.text("features_start.csv", &sim.start_features.to_csv_string())?;
    art.text("features_end.csv", &sim.end_features.to_csv_string())?;
    art.text(
        "features.svg",
        &svg::feature_histograms(&sim.start_features, &sim.end_features, 20),
    )?;
    art.text(
        "energy.svg",
        &svg::energy_trace(sim.initial_energy, &sim.stats.energy_trace),
    )?;
    let mean_w = sim.wasserstein.iter().sum::<f64>() / 7.0;
    let summary = SimulationSummary {
        seed,
        target_seed: derive_seed(seed, 0),
        n_mcs: cpm.n_mcs,
        params: &cpm.params,
        initial_energy: sim.initial_energy,
        final_energy: sim
            .stats
            .energy_trace
            .last()
            .copied()
            .unwrap_or(sim.initial_energy),
        wasserstein: crate::morphology::Feature::ALL
            .into_iter()
            .zip(sim.wasserstein)
            .map(|(f, w)| (f.name(), w))
            .collect(),
        mean_w,
        mean_iou: sim.mean_iou,
        metric_m: sim.metric_m,
        vanished_cells: &sim.vanished,
        targets: &sim.targets,
        stats: &sim.stats,
    };
    if !sim.vanished.is_empty() {
        art.warn(format!(
            "{} cells vanished during simulation",
            sim.vanished.len()
        ));
    }
    art.json("simulation.json", &summary)?;
    Ok(())
}

/// Prototype source, in order of precedence: `prototype_dir`, the annotated
/// pair `prototype_intensity` + `prototype_labels`, the synthetic generator.
pub fn load_prototypes(p: &PlacementSection, art: &mut Artifacts) -> Result<PrototypeDb> {
    if let Some(dir) = &p.prototype_dir {
        return PrototypeDb::load(dir);
    }
    match (&p.prototype_intensity, &p.prototype_labels) {
        (Some(i), Some(l)) => {
            let (img, _, w1) = io::load_intensity(i)?;
            let (lab, w2) = io::load_labels(l)?;
            w1.into_iter().chain(w2).for_each(|w| art.warn(w));
            let ids = if p.prototype_ids.is_empty() {
                lab.labels()
            } else {
                p.prototype_ids.clone()
            };
            extract_prototypes(&img, &lab, &ids)
        }
        (Some(_), None) => Err(Error::Config {
            path: "placement.prototype_labels".into(),
            message: "required together with placement.prototype_intensity".into(),
        }),
        (None, Some(_)) => Err(Error::Config {
            path: "placement.prototype_intensity".into(),
            message: "required together with placement.prototype_labels".into(),
        }),
        (None, None) => {
            art.seed("synthetic_prototypes", p.synthetic_prototypes.seed);
            let (img, lab) = ellipsoid_nuclei(&p.synthetic_prototypes)?;
            extract_prototypes(&img, &lab, &lab.labels())
        }
    }
}

/// SEG, DET and per-object matches of a labelled prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub seg: f64,
    pub det: f64,
    pub counts: DetCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kid: Option<KidResult>,
    #[serde(skip)]
    pub objects: Vec<ObjectMatch>,
}

pub fn evaluate_labels(gt: &LabelVolume, pred: &LabelVolume) -> Result<Evaluation> {
    let objects = object_matches(gt, pred)?;
    let seg = seg_score(gt, pred)?;
    let counts = det_counts(gt, pred)?;
    Ok(Evaluation {
        seg,
        det: counts.det(),
        counts,
        kid: None,
        objects,
    })
}

fn objects_csv(objects: &[ObjectMatch]) -> String {
    let mut s = String::from("gt_label,pred_label,iou\n");
    for m in objects {
        let pred = m.pred_label.map(|p| p.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{pred},{}\n", m.gt_label, m.iou));
    }
    s
}

/// Per-run seeds of the `pipeline` subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    pub run: u64,
    pub cpm: u64,
    pub placement: u64,
    pub imaging: u64,
}

impl RunSeeds {
    pub fn for_run(base: u64, r: usize) -> Self {
        let run = derive_seed(base, r as u64);
        Self {
            run,
            cpm: derive_seed(run, 0),
            placement: derive_seed(run, 2),
            imaging: derive_seed(run, 3),
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        b = b.num_threads(workers);
    }
    b.build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))
}

/// Progress lines go to stderr unless `quiet`.
#[derive(Debug, Clone, Copy)]
pub struct Reporter {
    pub quiet: bool,
}

impl Reporter {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Run one subcommand and write its outputs under `io.output_dir`.
pub fn run(stage: Stage, cfg: &PipelineConfig, reporter: Reporter) -> Result<Manifest> {
    validate(cfg)?;
    let mut art = Artifacts::new(&cfg.io.output_dir, cfg.io.format);
    match stage {
        Stage::Preprocess => {
            let input = load_input(cfg, &mut art)?;
            let pre = preprocess_labels(&input, &cfg.preprocess)?;
            reporter.say(format!(
                "preprocess: {} cells, z upsampled x{}",
                pre.features.len(),
                pre.z_factor
            ));
            art.labels("preprocessed", &pre.labels)?;
            art.text("features.csv", &pre.features.to_csv_string())?;
        }
        Stage::Features => {
            let input = load_input(cfg, &mut art)?;
            let table = extract_features(&input);
            reporter.say(format!("features: {} cells", table.len()));
            art.text("features.csv", &table.to_csv_string())?;
        }
        Stage::Simulate => {
            let input = load_input(cfg, &mut art)?;
            art.seed("cpm", cfg.cpm.seed);
            art.seed("targets", derive_seed(cfg.cpm.seed, 0));
            reporter.say(format!(
                "simulate: {} MCS on {:?}",
                cfg.cpm.n_mcs,
                input.shape()
            ));
            let sim = simulate(&input, &cfg.cpm, cfg.cpm.seed)?;
            reporter.say(format!("simulate: m = {:.4}", sim.metric_m));
            write_simulation(&sim, &cfg.cpm, cfg.cpm.seed, &mut art)?;
        }
        Stage::Scan => {
            let input = load_input(cfg, &mut art)?;
            let opts = ScanOptions {
                n_mcs: cfg.scan.n_mcs,
                base_seed: cfg.scan.base_seed,
                workers: cfg.scan.workers,
                replicates: cfg.scan.replicates,
            };
            art.seed("scan_base", opts.base_seed);
            reporter.say(format!(
                "scan: {} parameter sets, {} MCS each",
                cfg.scan.grid.len(),
                opts.n_mcs
            ));
            let report = grid_scan(&input, &cfg.scan.grid, &opts)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            art.text("scan.csv", &String::from_utf8(csv).expect("csv is utf-8"))?;
            art.text("scan.json", &report.to_json())?;
            if let Some(b) = report.best() {
                reporter.say(format!(
                    "scan: best m = {:.4} at grid index {}",
                    b.metric_m, b.grid_index
                ));
            }
        }
        Stage::Synth => {
            let cells_path = cfg.io.cells.as_ref().or(cfg.io.input.as_ref());
            let cells = match cells_path {
                Some(p) => {
                    let (v, w) = io::load_labels(p)?;
                    w.into_iter().for_each(|w| art.warn(w));
                    v
                }
                None => load_input(cfg, &mut art)?,
            };
            synth_stage(&cells, cfg, cfg.cpm.seed, &mut art, reporter)?;
        }
        Stage::Image => {
            let (phantom, _, w) = io::load_intensity(required(&cfg.io.phantom, "io.phantom")?)?;
            w.into_iter().for_each(|w| art.warn(w));
            image_stage(&phantom, cfg, cfg.cpm.seed, &mut art)?;
        }
        Stage::Postproc => {
            let (pred, dtype, w1) =
                io::load_intensity(required(&cfg.io.prediction, "io.prediction")?)?;
            let (cells, w2) = io::load_labels(required(&cfg.io.cells, "io.cells")?)?;
            w1.into_iter().chain(w2).for_each(|w| art.warn(w));
            let pred_max = dtype.max_value().unwrap_or(1.0);
            let labels = instance_labels(&pred, &cells, &cfg.postproc, pred_max)?;
            reporter.say(format!("postproc: {} instances", labels.labels().len()));
            art.labels("instances", &labels)?;
        }
        Stage::Evaluate => evaluate_stage(cfg, &mut art, reporter)?,
        Stage::Pipeline => return run_pipeline(cfg, art, reporter),
    }
    art.finish(stage, cfg)
}

fn synth_stage(
    cells: &LabelVolume,
    cfg: &PipelineConfig,
    seed: u64,
    art: &mut Artifacts,
    reporter: Reporter,
) -> Result<crate::nuclei::Placement> {
    let db = load_prototypes(&cfg.placement, art)?;
    art.seed("placement", seed);
    let placement = place_nuclei(cells, &db, &cfg.placement.config, seed)?;
    reporter.say(format!(
        "synth: placed {} nuclei, skipped {}",
        placement.report.placed,
        placement.report.skipped.len()
    ));
    if !placement.report.skipped.is_empty() {
        art.warn(format!(
            "{} cells received no nucleus",
            placement.report.skipped.len()
        ));
    }
    art.intensity("phantom", &placement.phantom, DType::F32)?;
    art.labels("nuclei", &placement.nuclei)?;
    art.json("placement.json", &placement.report)?;
    Ok(placement)
}

fn image_stage(
    phantom: &IntensityVolume,
    cfg: &PipelineConfig,
    seed: u64,
    art: &mut Artifacts,
) -> Result<IntensityVolume> {
    art.seed("imaging", seed);
    let run = simulate_imaging(phantom, &cfg.imaging, seed)?;
    art.intensity("image", &run.image, cfg.imaging.output_dtype)?;
    Ok(run.image)
}

fn evaluate_stage(cfg: &PipelineConfig, art: &mut Artifacts, reporter: Reporter) -> Result<()> {
    let e = &cfg.evaluate;
    let mut eval = match (&e.ground_truth, &e.prediction) {
        (None, None) => None,
        (gt, pred) => {
            let (gt, w1) = io::load_labels(required(gt, "evaluate.ground_truth")?)?;
            let (pred, w2) = io::load_labels(required(pred, "evaluate.prediction")?)?;
            w1.into_iter().chain(w2).for_each(|w| art.warn(w));
            Some(evaluate_labels(&gt, &pred)?)
        }
    };
    let kid = match (&e.real_image, &e.synthetic_image) {
        (None, None) => None,
        (real, synth) => {
            let (a, _, w1) = io::load_intensity(required(real, "evaluate.real_image")?)?;
            let (b, _, w2) = io::load_intensity(required(synth, "evaluate.synthetic_image")?)?;
            w1.into_iter().chain(w2).for_each(|w| art.warn(w));
            art.seed("kid", e.kid.seed);
            let fx = HistogramExtractor::for_volumes(&[&a, &b])?;
            Some(kid_volumes(&a, &b, &fx, &e.kid)?)
        }
    };
    match (&mut eval, kid) {
        (None, None) => {
            return Err(Error::Config {
                path: "evaluate".into(),
                message: "set ground_truth + prediction, real_image + synthetic_image, or both"
                    .into(),
            })
        }
        (Some(ev), kid) => {
            ev.kid = kid;
            reporter.say(format!("evaluate: SEG {:.4}, DET {:.4}", ev.seg, ev.det));
            art.text("objects.csv", &objects_csv(&ev.objects))?;
            art.json("evaluation.json", ev)?;
        }
        (None, Some(kid)) => {
            reporter.say(format!(
                "evaluate: KID {:.5} ± {:.5}",
                kid.kid, kid.std_error
            ));
            art.json("evaluation.json", &serde_json::json!({ "kid": kid }))?;
        }
    }
    Ok(())
}

/// preprocess → simulate → synth → image → postproc → evaluate, once per
/// run. Runs go to `run_XXX/` and share the preprocessed input.
fn run_pipeline(cfg: &PipelineConfig, mut art: Artifacts, reporter: Reporter) -> Result<Manifest> {
    let input = load_input(cfg, &mut art)?;
    let pre = preprocess_labels(&input, &cfg.preprocess)?;
    reporter.say(format!(
        "pipeline: {} cells after preprocessing, {} runs",
        pre.features.len(),
        cfg.cpm.runs
    ));
    art.labels("preprocessed", &pre.labels)?;
    art.text("features.csv", &pre.features.to_csv_string())?;
    art.seed("base", cfg.cpm.seed);

    let pool = pool(cfg.cpm.workers)?;
    let results: Vec<Result<(String, RunSeeds)>> = pool.install(|| {
        (0..cfg.cpm.runs)
            .into_par_iter()
            .map(|r| {
                let seeds = RunSeeds::for_run(cfg.cpm.seed, r);
                let name = format!("run_{r:03}");
                let mut run_art = Artifacts::new(art.dir().join(&name), cfg.io.format);
                pipeline_run(&pre.labels, cfg, seeds, &mut run_art, reporter)?;
                run_art.finish(Stage::Pipeline, cfg)?;
                reporter.say(format!("pipeline: {name} done"));
                Ok((name, seeds))
            })
            .collect()
    });
    for res in results {
        let (name, seeds) = res?;
        art.outputs.push(format!("{name}/manifest.json"));
        art.seed(&format!("{name}.cpm"), seeds.cpm);
        art.seed(&format!("{name}.placement"), seeds.placement);
        art.seed(&format!("{name}.imaging"), seeds.imaging);
    }
    art.finish(Stage::Pipeline, cfg)
}

fn pipeline_run(
    initial: &LabelVolume,
    cfg: &PipelineConfig,
    seeds: RunSeeds,
    art: &mut Artifacts,
    reporter: Reporter,
) -> Result<()> {
    art.seed("run", seeds.run);
    art.seed("cpm", seeds.cpm);
    art.seed("targets", derive_seed(seeds.cpm, 0));
    let sim = simulate(initial, &cfg.cpm, seeds.cpm)?;
    write_simulation(&sim, &cfg.cpm, seeds.cpm, art)?;
    let placement = synth_stage(&sim.cells, cfg, seeds.placement, art, reporter)?;
    image_stage(&placement.phantom, cfg, seeds.imaging, art)?;
    // the placed nuclei mask stands in for a predicted binary label channel
    let pred = placement.nuclei.map(|l| (l != 0) as u8 as f32);
    let instances = instance_labels(&pred, &sim.cells, &cfg.postproc, 1.0)?;
    art.labels("instances", &instances)?;
    let eval = evaluate_labels(&placement.nuclei, &instances)?;
    art.text("objects.csv", &objects_csv(&eval.objects))?;
    art.json("evaluation.json", &eval)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::SpheroidSpec;
    use crate::volume::{Volume, VolumeGeometry};

    fn small_config(dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.io.output_dir = dir.to_path_buf();
        cfg.io.synthetic_input = Some(SpheroidSpec {
            shape: [16, 16, 16],
            n_cells: 6,
            radius_fraction: 0.9,
            seed: 3,
        });
        cfg.cpm.n_mcs = 3;
        cfg.placement.synthetic_prototypes.n_nuclei = 3;
        cfg
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn z_factor_rounds_to_target() {
        assert_eq!(z_upsample_factor([2.0, 0.5, 0.5], None), 4);
        assert_eq!(z_upsample_factor([1.0, 1.0, 1.0], None), 1);
        assert_eq!(z_upsample_factor([0.3, 1.0, 1.0], None), 1);
        assert_eq!(z_upsample_factor([2.0, 0.5, 0.5], Some(1.0)), 2);
    }

    #[test]
    fn preprocess_upsamples_and_keeps_large_cells() {
        let geom = VolumeGeometry::new([4, 8, 8], [2.0, 1.0, 1.0]).unwrap();
        let mut v = Volume::filled(geom, 0u32);
        for z in 0..4 {
            for y in 1..6 {
                for x in 1..6 {
                    v.set(z, y, x, 1);
                }
            }
        }
        v.set(0, 7, 7, 2);
        let p = preprocess_labels(&v, &PreprocessConfig::default()).unwrap();
        assert_eq!(p.z_factor, 2);
        assert_eq!(p.labels.shape(), [8, 8, 8]);
        assert_eq!(p.labels.labels(), vec![1]);
        assert_eq!(p.features.len(), 1);
        let tiny = Volume::filled(geom, 0u32);
        assert!(matches!(
            preprocess_labels(&tiny, &PreprocessConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn missing_required_path_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let err = run(Stage::Image, &cfg, Reporter { quiet: true }).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "io.phantom"));
        let mut c = cfg.clone();
        c.io.synthetic_input = None;
        let err = run(Stage::Features, &c, Reporter { quiet: true }).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "io.input"));
        c.cpm.params.temperature = -1.0;
        let err = run(Stage::Features, &c, Reporter { quiet: true }).unwrap_err();
        assert!(err.to_string().contains("cpm.params"), "{err}");
    }

    #[test]
    fn pipeline_writes_a_complete_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let m = run(Stage::Pipeline, &cfg, Reporter { quiet: true }).unwrap();
        assert_eq!(m.config, cfg);
        assert!(m.seeds.contains_key("run_000.cpm"));
        let run_dir = dir.path().join("run_000");
        for f in [
            "cells.rvol",
            "borders.rvol",
            "nuclei.rvol",
            "phantom.rvol",
            "image.rvol",
            "instances.rvol",
            "features_start.csv",
            "features_end.csv",
            "features.svg",
            "energy.svg",
            "simulation.json",
            "placement.json",
            "evaluation.json",
            "manifest.json",
        ] {
            assert!(run_dir.join(f).exists(), "missing {f}");
        }
        let text = std::fs::read_to_string(run_dir.join("manifest.json")).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.seeds["cpm"], RunSeeds::for_run(0, 0).cpm);
    }
}
