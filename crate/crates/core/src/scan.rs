//! Grid search over CPM parameters.
//!
//! Each parameter set is scored by
//! `m = mean_k W_k · mean_i IoU_i`, where `W_k` is the 1-Wasserstein distance
//! between the start and end distributions of shape feature `k`, and `IoU_i`
//! compares cell `i` at the start and end of the run.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpm::{CpmParams, CpmState};
use crate::error::{Error, Result};
use crate::morphology::{extract_features, iou_per_cell, wasserstein_1d, Feature, FeatureTable};
use crate::seed::derive_seed;
use crate::volume::LabelVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    /// Position in the Cartesian product, in enumeration order.
    pub grid_index: usize,
    pub params: CpmParams,
    /// W_k in [`Feature::ALL`] order.
    pub wasserstein: [f64; 7],
    pub mean_w: f64,
    /// Per-cell IoU of every cell present at the start, ascending label order
    /// (concatenated over replicates).
    pub ious: Vec<f64>,
    pub mean_iou: f64,
    pub metric_m: f64,
    pub seed: u64,
    pub n_mcs: u64,
    pub replicates: usize,
    pub vanished_cells: usize,
    pub wall_time_s: f64,
}

impl ScanRecord {
    /// Recompute m from the stored W_k and IoU values.
    pub fn recomputed_metric(&self) -> f64 {
        mean(&self.wasserstein) * mean(&self.ious)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// W_k between two feature tables. An empty ensemble is treated as a single
/// cell whose features are all zero.
pub fn feature_distances(start: &FeatureTable, end: &FeatureTable) -> Result<[f64; 7]> {
    let mut w = [0.0; 7];
    for (k, f) in Feature::ALL.into_iter().enumerate() {
        let mut a = start.column(f);
        let mut b = end.column(f);
        if a.is_empty() {
            a.push(0.0);
        }
        if b.is_empty() {
            b.push(0.0);
        }
        w[k] = wasserstein_1d(&a, &b)?;
    }
    Ok(w)
}

struct Replicate {
    w: [f64; 7],
    ious: Vec<f64>,
    vanished: usize,
}

fn run_replicate(
    initial: &LabelVolume,
    start: &FeatureTable,
    p: CpmParams,
    n_mcs: u64,
    seed: u64,
) -> Result<Replicate> {
    let mut state = CpmState::new(initial.clone(), p, seed)?;
    state.assign_targets(derive_seed(seed, 0))?;
    state.run_mcs(n_mcs, 0);
    let end = state.lattice();
    let w = feature_distances(start, &extract_features(end))?;
    // cells that vanished are absent from `end` and score IoU 0
    let ious = iou_per_cell(initial, end)?.into_values().collect();
    Ok(Replicate {
        w,
        ious,
        vanished: state.vanished_cells().len(),
    })
}

/// Score one parameter set with a single seeded run.
pub fn evaluate_params(
    initial: &LabelVolume,
    p: CpmParams,
    n_mcs: u64,
    seed: u64,
) -> Result<ScanRecord> {
    evaluate_replicated(initial, p, n_mcs, seed, 1)
}

/// Score one parameter set over `replicates` runs. With one replicate the run
/// uses `seed` directly; otherwise replicate `r` uses `derive_seed(seed, r + 1)`.
/// W_k are averaged over replicates and IoUs pooled.
pub fn evaluate_replicated(
    initial: &LabelVolume,
    p: CpmParams,
    n_mcs: u64,
    seed: u64,
    replicates: usize,
) -> Result<ScanRecord> {
    if initial.labels().is_empty() {
        return Err(Error::Empty("the initial lattice has no cells".into()));
    }
    if replicates == 0 {
        return Err(Error::arg("replicates must be >= 1"));
    }
    let clock = Instant::now();
    let start = extract_features(initial);
    let mut w = [0.0; 7];
    let mut ious = Vec::new();
    let mut vanished = 0;
    for r in 0..replicates {
        let s = if replicates == 1 {
            seed
        } else {
            derive_seed(seed, r as u64 + 1)
        };
        let rep = run_replicate(initial, &start, p, n_mcs, s)?;
        for k in 0..7 {
            w[k] += rep.w[k] / replicates as f64;
        }
        ious.extend(rep.ious);
        vanished += rep.vanished;
    }
    let mean_w = mean(&w);
    let mean_iou = mean(&ious);
    Ok(ScanRecord {
        grid_index: 0,
        params: p,
        wasserstein: w,
        mean_w,
        ious,
        mean_iou,
        metric_m: mean_w * mean_iou,
        seed,
        n_mcs,
        replicates,
        vanished_cells: vanished,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

/// Value lists for the four scanned parameters. Temperature and neighbour
/// orders come from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanGrid {
    pub lambda_volume: Vec<f64>,
    pub lambda_surface: Vec<f64>,
    pub j_cell_cell: Vec<f64>,
    pub j_cell_medium: Vec<f64>,
    #[serde(default)]
    pub base: CpmParams,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self::reference()
    }
}

impl ScanGrid {
    /// The 6 × 6 × 6 × 3 grid of the reference scan.
    pub fn reference() -> Self {
        let lambdas = vec![0.001, 2.0, 4.0, 6.0, 8.0, 10.0];
        Self {
            lambda_volume: lambdas.clone(),
            lambda_surface: lambdas,
            j_cell_cell: vec![0.0001, 2.0, 4.0, 6.0, 8.0, 10.0],
            j_cell_medium: vec![10.0, 55.0, 100.0],
            base: CpmParams::best(),
        }
    }

    /// A grid holding exactly one parameter set.
    pub fn single(p: CpmParams) -> Self {
        Self {
            lambda_volume: vec![p.lambda_volume],
            lambda_surface: vec![p.lambda_surface],
            j_cell_cell: vec![p.j_cell_cell],
            j_cell_medium: vec![p.j_cell_medium],
            base: p,
        }
    }

    pub fn len(&self) -> usize {
        self.lambda_volume.len()
            * self.lambda_surface.len()
            * self.j_cell_cell.len()
            * self.j_cell_medium.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product; λ_V varies slowest, J_cm fastest.
    pub fn combinations(&self) -> Vec<CpmParams> {
        let mut out = Vec::with_capacity(self.len());
        for &lambda_volume in &self.lambda_volume {
            for &lambda_surface in &self.lambda_surface {
                for &j_cell_cell in &self.j_cell_cell {
                    for &j_cell_medium in &self.j_cell_medium {
                        out.push(CpmParams {
                            lambda_volume,
                            lambda_surface,
                            j_cell_cell,
                            j_cell_medium,
                            ..self.base
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOptions {
    pub n_mcs: u64,
    pub base_seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub replicates: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            n_mcs: 1000,
            base_seed: 0,
            workers: 0,
            replicates: 1,
        }
    }
}

/// Ranked scan output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub options: ScanOptions,
    pub grid: ScanGrid,
    /// Ascending by m; ties keep grid order.
    pub records: Vec<ScanRecord>,
}

/// Evaluate every grid combination, combination `i` seeded with
/// `derive_seed(base_seed, i)`, and rank by m.
pub fn grid_scan(initial: &LabelVolume, grid: &ScanGrid, opts: &ScanOptions) -> Result<ScanReport> {
    if grid.is_empty() {
        return Err(Error::arg("scan grid has no combinations"));
    }
    let combos = grid.combinations();
    for p in &combos {
        p.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    let mut records = pool.install(|| {
        combos
            .par_iter()
            .enumerate()
            .map(|(i, &p)| {
                let seed = derive_seed(opts.base_seed, i as u64);
                evaluate_replicated(initial, p, opts.n_mcs, seed, opts.replicates).map(|mut r| {
                    r.grid_index = i;
                    r
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rank(&mut records);
    Ok(ScanReport {
        options: *opts,
        grid: grid.clone(),
        records,
    })
}

fn rank(records: &mut [ScanRecord]) {
    records.sort_by(|a, b| {
        a.metric_m
            .total_cmp(&b.metric_m)
            .then(a.grid_index.cmp(&b.grid_index))
    });
}

impl ScanReport {
    pub fn best(&self) -> Option<&ScanRecord> {
        self.records.first()
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = [
            "rank",
            "grid_index",
            "lambda_volume",
            "lambda_surface",
            "j_cell_cell",
            "j_cell_medium",
            "temperature",
        ]
        .map(String::from)
        .to_vec();
        h.extend(Feature::ALL.iter().map(|f| format!("w_{}", f.name())));
        h.extend(
            [
                "mean_w",
                "mean_iou",
                "m",
                "seed",
                "n_mcs",
                "vanished_cells",
                "wall_time_s",
            ]
            .map(String::from),
        );
        h
    }

    /// One row per combination, in rank order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidState(format!("csv: {e}"));
        out.write_record(Self::csv_header()).map_err(csv_err)?;
        for (rank, r) in self.records.iter().enumerate() {
            let p = &r.params;
            let mut row = vec![
                (rank + 1).to_string(),
                r.grid_index.to_string(),
                p.lambda_volume.to_string(),
                p.lambda_surface.to_string(),
                p.j_cell_cell.to_string(),
                p.j_cell_medium.to_string(),
                p.temperature.to_string(),
            ];
            row.extend(r.wasserstein.iter().map(|w| w.to_string()));
            row.extend([
                r.mean_w.to_string(),
                r.mean_iou.to_string(),
                r.metric_m.to_string(),
                r.seed.to_string(),
                r.n_mcs.to_string(),
                r.vanished_cells.to_string(),
                format!("{:.3}", r.wall_time_s),
            ]);
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush()
            .map_err(|e| Error::InvalidState(format!("csv: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scan report is always serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config {
            path: "scan report".into(),
            message: e.to_string(),
        })
    }
}
