//! N × β sweep harness.
//!
//! For every (method, N, β, seed) cell: build pairs at that N, fine-tune
//! against the seed's reference model, sample per condition and score mode
//! separation. Cells are independent and run data-parallel; per-cell
//! failures are flagged in the grid instead of aborting it. Pairs depend on
//! (seed, N) only and references on the seed only, so methods and β values
//! are compared on identical data.

use crate::data::PreferencePairSet;
use crate::error::{Error, Result};
use crate::eval::{emit_scatter_svg, MetricsReport};
use crate::par;
use crate::pipeline::{
    evaluate_checkpoint, make_pairs, make_unpaired_pairs, pretrain_toy_reference, ToyConfig,
};
use crate::train::{finetune, Checkpoint, Method};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    /// Total pair counts (must be multiples of the class count).
    pub n_values: Vec<usize>,
    pub beta_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: ToyConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty()
            || self.n_values.is_empty()
            || self.beta_values.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::InvalidConfig("sweep axes must be non-empty".into()));
        }
        if self.methods.contains(&Method::Pretrain) {
            return Err(Error::InvalidConfig("sweep methods must be finetune methods".into()));
        }
        for &n in &self.n_values {
            if n == 0 || n % self.base.classes != 0 {
                return Err(Error::InvalidConfig(format!(
                    "N={n} is not a positive multiple of {} classes",
                    self.base.classes
                )));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.methods.len() * self.n_values.len() * self.beta_values.len() * self.seeds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub n_total: usize,
    pub beta: f64,
    pub seed: u64,
    pub status: CellStatus,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.status == CellStatus::Ok)
    }

    pub fn cell(&self, method: Method, n_total: usize, beta: f64, seed: u64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| {
            c.method == method && c.n_total == n_total && c.beta == beta && c.seed == seed
        })
    }

    /// Mean consistency of the Ok cells selected by `filter`.
    pub fn mean_consistency(&self, filter: impl Fn(&SweepCell) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| filter(c) && c.status == CellStatus::Ok)
            .filter_map(|c| c.metrics.as_ref().map(|m| m.condition_consistency))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,N,beta,seed,consistency,centroid_shift,status\n");
        for c in &self.cells {
            let (cons, shift) = match &c.metrics {
                Some(m) => (
                    crate::data::fmt_f64(m.condition_consistency),
                    crate::data::fmt_f64(m.centroid_shift),
                ),
                None => (String::new(), String::new()),
            };
            let status = match &c.status {
                CellStatus::Ok => "ok".to_string(),
                CellStatus::Failed(msg) => format!("failed: {}", msg.replace([',', '\n'], ";")),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.method, c.n_total, c.beta, c.seed, cons, shift, status
            ));
        }
        out
    }
}

pub fn cell_artifact_stem(method: Method, n_total: usize, beta: f64, seed: u64) -> String {
    format!("sweep_{method}_N{n_total}_b{beta}_s{seed}")
}

struct CellJob {
    method: Method,
    n_total: usize,
    beta: f64,
    seed: u64,
}

fn run_cell(
    cfg: &SweepConfig,
    job: &CellJob,
    reference: &Checkpoint,
    pairs: &PreferencePairSet,
    unpaired: Option<&PreferencePairSet>,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let base = &cfg.base;
    let set = if job.method == Method::DdspoEfficient {
        unpaired.ok_or_else(|| Error::InvalidInput("missing unpaired set".into()))?
    } else {
        pairs
    };
    let train_cfg = base.finetune_config(job.method, job.beta, job.seed);
    let tuned = finetune(reference, set, &train_cfg)?;
    let (samples, report) = evaluate_checkpoint(base, &tuned.checkpoint, job.seed)?;
    let stem = cell_artifact_stem(job.method, job.n_total, job.beta, job.seed);
    emit_scatter_svg(&samples, &base.mixture()?, &out_dir.join(format!("{stem}.svg")))?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidInput(format!("serialize metrics: {e}")))?;
    crate::data::write_atomic(&out_dir.join(format!("{stem}.metrics.json")), json.as_bytes())?;
    Ok(report)
}

/// Run the full grid, writing one SVG and one metrics JSON per cell plus
/// `grid.csv` under `out_dir`. Returns the grid with per-cell status.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<SweepGrid> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // One reference per seed, shared by every cell of that seed.
    let refs: Vec<Result<Checkpoint>> = par::map_slice(&cfg.seeds, |&seed| {
        pretrain_toy_reference(&cfg.base, seed).map(|out| out.checkpoint)
    });

    // One pair set per (seed, N), shared across methods and β values.
    struct PairsEntry {
        paired: Result<PreferencePairSet>,
        unpaired: Option<Result<PreferencePairSet>>,
    }
    let needs_unpaired = cfg.methods.contains(&Method::DdspoEfficient);
    let pair_jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|si| (0..cfg.n_values.len()).map(move |ni| (si, ni)))
        .collect();
    let pair_sets: Vec<PairsEntry> = par::map_slice(&pair_jobs, |&(si, ni)| {
        let per_class = cfg.n_values[ni] / cfg.base.classes;
        let reference = refs[si].as_ref().ok();
        PairsEntry {
            paired: make_pairs(&cfg.base, reference, per_class, cfg.seeds[si]),
            unpaired: needs_unpaired
                .then(|| make_unpaired_pairs(&cfg.base, reference, per_class, cfg.seeds[si])),
        }
    });
    let pair_index =
        |si: usize, ni: usize| -> usize { si * cfg.n_values.len() + ni };

    let mut jobs = Vec::with_capacity(cfg.cell_count());
    for &method in &cfg.methods {
        for (ni, &n_total) in cfg.n_values.iter().enumerate() {
            for &beta in &cfg.beta_values {
                for (si, &seed) in cfg.seeds.iter().enumerate() {
                    jobs.push((CellJob { method, n_total, beta, seed }, si, ni));
                }
            }
        }
    }

    let cells: Vec<SweepCell> = par::map_slice(&jobs, |(job, si, ni)| {
        let outcome = (|| -> Result<MetricsReport> {
            let reference = refs[*si]
                .as_ref()
                .map_err(|e| Error::InvalidInput(format!("reference pretrain failed: {e}")))?;
            let entry = &pair_sets[pair_index(*si, *ni)];
            let paired = entry
                .paired
                .as_ref()
                .map_err(|e| Error::InvalidInput(format!("pair construction failed: {e}")))?;
            let unpaired = match &entry.unpaired {
                Some(Ok(set)) => Some(set),
                Some(Err(e)) => {
                    return Err(Error::InvalidInput(format!(
                        "unpaired construction failed: {e}"
                    )))
                }
                None => None,
            };
            run_cell(cfg, job, reference, paired, unpaired, out_dir)
        })();
        match outcome {
            Ok(metrics) => SweepCell {
                method: job.method,
                n_total: job.n_total,
                beta: job.beta,
                seed: job.seed,
                status: CellStatus::Ok,
                metrics: Some(metrics),
            },
            Err(e) => SweepCell {
                method: job.method,
                n_total: job.n_total,
                beta: job.beta,
                seed: job.seed,
                status: CellStatus::Failed(e.to_string()),
                metrics: None,
            },
        }
    });

    let grid = SweepGrid { cells };
    crate::data::write_atomic(&out_dir.join("grid.csv"), grid.to_csv().as_bytes())?;
    Ok(grid)
}
