//! Command implementations.
//!
//! Every command resolves its settings as flags > `--config` file > built-in
//! defaults, writes the manifest, then runs. The `--config` file holds the
//! same field names as the flags (JSON object; unknown fields rejected).

use crate::manifest::{prepare_out_dir, resolve_input, write_manifest};
use crate::{flag_error, run_error, CliError, CliResult};
use clap::Args;
use prefdiff_core::data::{
    self, load_dataset_csv, load_pairs_csv, save_dataset_csv, save_pairs_csv, DataRecord,
    ToyDataset,
};
use prefdiff_core::eval::{compute_metrics, emit_scatter_svg};
use prefdiff_core::net::NetConfig;
use prefdiff_core::pipeline::{self, PairSource, ToyConfig};
use prefdiff_core::schedule::ScheduleDescriptor;
use prefdiff_core::selfcheck::{run_all, SelfCheckOptions};
use prefdiff_core::sweep::{run_sweep, SweepConfig};
use prefdiff_core::train::{
    finetune as train_finetune, load_checkpoint, pretrain_reference, save_checkpoint, Method,
    TrainConfig,
};
use prefdiff_core::Point2;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Merge flags over config-file values field by field.
macro_rules! merge_over_file {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {{
        let mut merged = $file;
        $( if $flags.$field.is_some() { merged.$field = $flags.$field.clone(); } )*
        merged.out = $flags.out.clone();
        merged.config = None;
        merged
    }};
}

fn load_config_file<T: Default + for<'de> Deserialize<'de>>(
    path: Option<&PathBuf>,
) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Flags(format!("config {}: {e}", p.display())))
        }
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_trace_csv(path: &Path, trace: &[f64]) -> CliResult<()> {
    let mut out = String::from("step,loss\n");
    for (i, loss) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i, data::fmt_f64(*loss)));
    }
    write_text(path, &out)
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|_| CliError::Flags(format!("bad {what} entry {item:?}")))
        })
        .collect()
}

fn bucket_by_class(ds: &ToyDataset, classes: usize) -> CliResult<Vec<Vec<Point2>>> {
    let mut buckets = vec![Vec::new(); classes];
    for rec in &ds.records {
        buckets[rec.class_id].push(rec.x0);
    }
    Ok(buckets)
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataArgs {
    /// Number of ring classes (>= 2).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Ring radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Per-mode standard deviation.
    #[arg(long)]
    pub std: Option<f64>,
    /// Clean samples per class.
    #[arg(long = "n-per-class")]
    pub n_per_class: Option<usize>,
    /// Extra jitter applied to the corrupted copy.
    #[arg(long = "extra-std")]
    pub extra_std: Option<f64>,
    /// Label contamination rate in [0,1].
    #[arg(long)]
    pub contamination: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// JSON file with the same fields; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn gen_data(args: GenDataArgs) -> CliResult<()> {
    let file: GenDataArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; classes, radius, std, n_per_class, extra_std, contamination, seed);
    let classes = a.classes.unwrap_or(6);
    let radius = a.radius.unwrap_or(2.0);
    let std = a.std.unwrap_or(0.18);
    let n_per_class = a.n_per_class.unwrap_or(2000);
    let extra_std = a.extra_std.unwrap_or(0.12);
    let contamination = a.contamination.unwrap_or(0.2);
    let seed = a.seed.unwrap_or(0);

    let mixture = data::build_ring_mixture(classes, radius, std).map_err(flag_error)?;
    if !(0.0..=1.0).contains(&contamination) || extra_std < 0.0 || n_per_class == 0 {
        return Err(CliError::Flags(
            "need n-per-class >= 1, extra-std >= 0, contamination in [0,1]".into(),
        ));
    }
    let out_dir = prepare_out_dir(&a.out)?;
    write_manifest(
        &out_dir,
        "gen-data",
        seed,
        json!({
            "classes": classes, "radius": radius, "std": std,
            "n_per_class": n_per_class, "extra_std": extra_std,
            "contamination": contamination,
        }),
        &[],
    )?;

    let clean = data::sample_clean(&mixture, n_per_class, seed);
    let corrupted =
        data::corrupt_dataset(&clean, &mixture, extra_std, contamination, seed).map_err(run_error)?;
    save_dataset_csv(&clean, &out_dir.join("clean.csv")).map_err(run_error)?;
    save_dataset_csv(&corrupted, &out_dir.join("train.csv")).map_err(run_error)?;
    println!(
        "wrote {} clean and {} corrupted records to {}",
        clean.records.len(),
        corrupted.records.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-pairs
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenPairsArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub std: Option<f64>,
    /// Preference pairs per class.
    #[arg(long = "n-pairs-per-class")]
    pub n_pairs_per_class: Option<usize>,
    /// Offset of the perturbed condition c⁻ on the ring.
    #[arg(long = "neighbor-offset")]
    pub neighbor_offset: Option<usize>,
    /// Where winners/losers come from: clean | reference.
    #[arg(long = "pair-source")]
    pub pair_source: Option<String>,
    /// Borrow positives of other classes as losers instead of drawing them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub unpaired: Option<bool>,
    /// Reference checkpoint (required for --pair-source reference).
    #[arg(long = "ref")]
    pub ref_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn gen_pairs(args: GenPairsArgs) -> CliResult<()> {
    let file: GenPairsArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; classes, radius, std, n_pairs_per_class,
        neighbor_offset, pair_source, unpaired, ref_ckpt, seed);
    let classes = a.classes.unwrap_or(6);
    let radius = a.radius.unwrap_or(2.0);
    let std = a.std.unwrap_or(0.18);
    let n_pairs_per_class = a.n_pairs_per_class.unwrap_or(2);
    let neighbor_offset = a.neighbor_offset.unwrap_or(1);
    let unpaired = a.unpaired.unwrap_or(false);
    let seed = a.seed.unwrap_or(0);
    let pair_source = match a.pair_source.as_deref().unwrap_or("reference") {
        "clean" => PairSource::Clean,
        "reference" => PairSource::Reference,
        other => return Err(CliError::Flags(format!("unknown pair-source {other:?}"))),
    };
    if pair_source == PairSource::Reference && a.ref_ckpt.is_none() {
        return Err(CliError::Flags(
            "--pair-source reference requires --ref <checkpoint>".into(),
        ));
    }

    let cfg = ToyConfig {
        classes,
        radius,
        std,
        neighbor_offset,
        pair_source,
        ..ToyConfig::default()
    };
    cfg.mixture().map_err(flag_error)?;

    let mut inputs = Vec::new();
    let reference = match &a.ref_ckpt {
        Some(p) => {
            let abs = resolve_input(p)?;
            inputs.push(abs.clone());
            Some(load_checkpoint(&abs).map_err(run_error)?)
        }
        None => None,
    };
    let out_dir = prepare_out_dir(&a.out)?;
    let input_refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &out_dir,
        "gen-pairs",
        seed,
        json!({
            "classes": classes, "radius": radius, "std": std,
            "n_pairs_per_class": n_pairs_per_class,
            "neighbor_offset": neighbor_offset,
            "pair_source": pair_source, "unpaired": unpaired,
        }),
        &input_refs,
    )?;

    let pairs = if unpaired {
        pipeline::make_unpaired_pairs(&cfg, reference.as_ref(), n_pairs_per_class, seed)
    } else {
        pipeline::make_pairs(&cfg, reference.as_ref(), n_pairs_per_class, seed)
    }
    .map_err(run_error)?;
    save_pairs_csv(&pairs, &out_dir.join("pairs.csv")).map_err(run_error)?;
    println!("wrote {} pairs to {}", pairs.pairs.len(), out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainArgs {
    /// Training dataset CSV (x,y,c).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Diffusion steps T.
    #[arg(long = "num-steps")]
    pub num_steps: Option<usize>,
    #[arg(long = "beta-start")]
    pub beta_start: Option<f64>,
    #[arg(long = "beta-end")]
    pub beta_end: Option<f64>,
    #[arg(long = "hidden-width")]
    pub hidden_width: Option<usize>,
    #[arg(long = "hidden-layers")]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn pretrain(args: PretrainArgs) -> CliResult<()> {
    let file: PretrainArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; data, classes, steps, batch_size, learning_rate,
        seed, num_steps, beta_start, beta_end, hidden_width, hidden_layers);
    let data_path = a
        .data
        .as_ref()
        .ok_or_else(|| CliError::Flags("--data is required".into()))?;
    let classes = a.classes.unwrap_or(6);
    let seed = a.seed.unwrap_or(0);
    let schedule = ScheduleDescriptor {
        num_steps: a.num_steps.unwrap_or(100),
        beta_start: a.beta_start.unwrap_or(1e-4),
        beta_end: a.beta_end.unwrap_or(0.05),
    };
    let schedule = prefdiff_core::NoiseSchedule::try_from(schedule).map_err(flag_error)?;
    let net_cfg = NetConfig {
        num_classes: classes,
        hidden_width: a.hidden_width.unwrap_or(128),
        hidden_layers: a.hidden_layers.unwrap_or(2),
        ..NetConfig::default()
    };
    net_cfg.validate().map_err(flag_error)?;
    let train_cfg = TrainConfig {
        steps: a.steps.unwrap_or(4000),
        batch_size: a.batch_size.unwrap_or(256),
        learning_rate: a.learning_rate.unwrap_or(1e-3),
        ..TrainConfig::pretrain_default(seed)
    };
    train_cfg.validate().map_err(flag_error)?;
    if train_cfg.learning_rate <= 0.0 {
        return Err(CliError::Flags("--lr must be > 0".into()));
    }

    let data_abs = resolve_input(data_path)?;
    let out_dir = prepare_out_dir(&a.out)?;
    write_manifest(
        &out_dir,
        "pretrain",
        seed,
        json!({
            "classes": classes,
            "schedule": schedule.descriptor(),
            "net": net_cfg,
            "train": train_cfg,
        }),
        &[&data_abs],
    )?;

    let dataset = load_dataset_csv(&data_abs, classes).map_err(run_error)?;
    let output =
        pretrain_reference(&dataset, &net_cfg, &schedule, &train_cfg).map_err(run_error)?;
    save_checkpoint(&output.checkpoint, &out_dir.join("ref.ckpt.json")).map_err(run_error)?;
    write_trace_csv(&out_dir.join("trace.csv"), &output.trace)?;
    println!(
        "pretrained {} steps, final loss {:.6}",
        output.trace.len(),
        output.checkpoint.loss_summary.final_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneArgs {
    /// One of: ddpo, dspo, dspo-cpp, ddspo, ddspo-efficient.
    #[arg(long)]
    pub method: Option<String>,
    /// Reference checkpoint.
    #[arg(long = "ref")]
    pub ref_ckpt: Option<PathBuf>,
    /// Preference pairs CSV.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Regularization strength β.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "warmup-steps")]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treat the DSPO gate as a constant during backprop (default true).
    #[arg(long = "dspo-gate-stop-gradient", num_args = 0..=1, default_missing_value = "true")]
    pub dspo_gate_stop_gradient: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn finetune(args: FinetuneArgs) -> CliResult<()> {
    let file: FinetuneArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; method, ref_ckpt, pairs, beta, steps, batch_size,
        learning_rate, warmup_steps, seed, dspo_gate_stop_gradient);
    let method = Method::from_str(
        a.method
            .as_deref()
            .ok_or_else(|| CliError::Flags("--method is required".into()))?,
    )
    .map_err(flag_error)?;
    if method == Method::Pretrain {
        return Err(CliError::Flags("use the pretrain command instead".into()));
    }
    let ref_path = a
        .ref_ckpt
        .as_ref()
        .ok_or_else(|| CliError::Flags("--ref is required".into()))?;
    let pairs_path = a
        .pairs
        .as_ref()
        .ok_or_else(|| CliError::Flags("--pairs is required".into()))?;
    let seed = a.seed.unwrap_or(0);
    let mut train_cfg = TrainConfig {
        steps: a.steps.unwrap_or(600),
        batch_size: a.batch_size.unwrap_or(64),
        learning_rate: a.learning_rate.unwrap_or(5e-4),
        warmup_steps: a.warmup_steps.unwrap_or(50),
        ..TrainConfig::finetune_default(method, a.beta.unwrap_or(400.0), seed)
    };
    train_cfg.loss.dspo_gate_stop_gradient = a.dspo_gate_stop_gradient.unwrap_or(true);
    train_cfg.validate().map_err(flag_error)?;
    if train_cfg.learning_rate <= 0.0 {
        return Err(CliError::Flags("--lr must be > 0".into()));
    }

    let ref_abs = resolve_input(ref_path)?;
    let pairs_abs = resolve_input(pairs_path)?;
    let out_dir = prepare_out_dir(&a.out)?;
    write_manifest(
        &out_dir,
        "finetune",
        seed,
        json!({ "train": train_cfg }),
        &[&ref_abs, &pairs_abs],
    )?;

    let reference = load_checkpoint(&ref_abs).map_err(run_error)?;
    let classes = reference.net.config.num_classes;
    let pairs = load_pairs_csv(&pairs_abs, classes).map_err(run_error)?;
    let output = train_finetune(&reference, &pairs, &train_cfg).map_err(run_error)?;
    save_checkpoint(&output.checkpoint, &out_dir.join("model.ckpt.json")).map_err(run_error)?;
    write_trace_csv(&out_dir.join("trace.csv"), &output.trace)?;
    println!(
        "fine-tuned {method} for {} steps, final loss {:.6}",
        output.trace.len(),
        output.checkpoint.loss_summary.final_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Samples per conditioning class.
    #[arg(long = "per-class")]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn sample(args: SampleArgs) -> CliResult<()> {
    let file: SampleArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; ckpt, per_class, seed);
    let ckpt_path = a
        .ckpt
        .as_ref()
        .ok_or_else(|| CliError::Flags("--ckpt is required".into()))?;
    let per_class = a.per_class.unwrap_or(300);
    if per_class == 0 {
        return Err(CliError::Flags("--per-class must be >= 1".into()));
    }
    let seed = a.seed.unwrap_or(0);

    let ckpt_abs = resolve_input(ckpt_path)?;
    let out_dir = prepare_out_dir(&a.out)?;
    write_manifest(
        &out_dir,
        "sample",
        seed,
        json!({ "per_class": per_class }),
        &[&ckpt_abs],
    )?;

    let ckpt = load_checkpoint(&ckpt_abs).map_err(run_error)?;
    let buckets = pipeline::sample_by_condition(&ckpt, per_class, seed).map_err(run_error)?;
    let records: Vec<DataRecord> = buckets
        .iter()
        .enumerate()
        .flat_map(|(class_id, bucket)| {
            bucket.iter().map(move |&x0| DataRecord { x0, class_id })
        })
        .collect();
    let ds = ToyDataset { records };
    save_dataset_csv(&ds, &out_dir.join("samples.csv")).map_err(run_error)?;
    println!("sampled {} points to {}", ds.records.len(), out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Samples CSV (x,y,c).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub std: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let file: EvalArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; samples, classes, radius, std);
    let samples_path = a
        .samples
        .as_ref()
        .ok_or_else(|| CliError::Flags("--samples is required".into()))?;
    let classes = a.classes.unwrap_or(6);
    let radius = a.radius.unwrap_or(2.0);
    let std = a.std.unwrap_or(0.18);
    let mixture = data::build_ring_mixture(classes, radius, std).map_err(flag_error)?;

    let samples_abs = resolve_input(samples_path)?;
    let out_dir = prepare_out_dir(&a.out)?;
    write_manifest(
        &out_dir,
        "eval",
        0,
        json!({ "classes": classes, "radius": radius, "std": std }),
        &[&samples_abs],
    )?;

    let ds = load_dataset_csv(&samples_abs, classes).map_err(run_error)?;
    let buckets = bucket_by_class(&ds, classes)?;
    let report = compute_metrics(&buckets, &mixture).map_err(run_error)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Input(format!("serialize metrics: {e}")))?;
    write_text(&out_dir.join("metrics.json"), &json)?;
    emit_scatter_svg(&buckets, &mixture, &out_dir.join("scatter.svg")).map_err(run_error)?;
    println!(
        "consistency {:.4}, centroid shift {:.4}",
        report.condition_consistency, report.centroid_shift
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    /// Comma list of methods, e.g. ddpo,dspo,ddspo.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma list of total pair counts.
    #[arg(long = "N")]
    pub n_values: Option<String>,
    /// Comma list of β values.
    #[arg(long = "beta")]
    pub beta_values: Option<String>,
    /// Comma list of seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long = "n-per-class")]
    pub n_per_class: Option<usize>,
    #[arg(long = "pretrain-steps")]
    pub pretrain_steps: Option<usize>,
    #[arg(long = "finetune-steps")]
    pub finetune_steps: Option<usize>,
    #[arg(long = "samples-per-condition")]
    pub samples_per_condition: Option<usize>,
    #[arg(long = "hidden-width")]
    pub hidden_width: Option<usize>,
    #[arg(long = "hidden-layers")]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn sweep(args: SweepArgs) -> CliResult<()> {
    let file: SweepArgs = load_config_file(args.config.as_ref())?;
    let a = merge_over_file!(args, file; methods, n_values, beta_values, seeds, classes,
        n_per_class, pretrain_steps, finetune_steps, samples_per_condition,
        hidden_width, hidden_layers);
    let methods: Vec<Method> = a
        .methods
        .as_deref()
        .unwrap_or("ddpo,dspo,ddspo")
        .split(',')
        .map(|m| Method::from_str(m.trim()).map_err(flag_error))
        .collect::<CliResult<_>>()?;
    let n_values: Vec<usize> = parse_list(a.n_values.as_deref().unwrap_or("12,120,1200"), "N")?;
    let beta_values: Vec<f64> =
        parse_list(a.beta_values.as_deref().unwrap_or("200,400,800"), "beta")?;
    let seeds: Vec<u64> = parse_list(a.seeds.as_deref().unwrap_or("0"), "seed")?;

    let mut base = ToyConfig::default();
    if let Some(c) = a.classes {
        base.classes = c;
        base.net.num_classes = c;
    }
    if let Some(v) = a.n_per_class {
        base.n_per_class = v;
    }
    if let Some(v) = a.pretrain_steps {
        base.pretrain_steps = v;
    }
    if let Some(v) = a.finetune_steps {
        base.finetune_steps = v;
    }
    if let Some(v) = a.samples_per_condition {
        base.samples_per_condition = v;
    }
    if let Some(v) = a.hidden_width {
        base.net.hidden_width = v;
    }
    if let Some(v) = a.hidden_layers {
        base.net.hidden_layers = v;
    }
    let cfg = SweepConfig {
        methods,
        n_values,
        beta_values,
        seeds,
        base,
    };
    cfg.validate().map_err(flag_error)?;

    let out_dir = prepare_out_dir(&a.out)?;
    write_manifest(
        &out_dir,
        "sweep",
        cfg.seeds[0],
        serde_json::to_value(&cfg).map_err(|e| CliError::Flags(e.to_string()))?,
        &[],
    )?;

    let grid = run_sweep(&cfg, &out_dir).map_err(run_error)?;
    let flagged = grid
        .cells
        .iter()
        .filter(|c| c.status != prefdiff_core::sweep::CellStatus::Ok)
        .count();
    println!(
        "sweep finished: {} cells, {} flagged; grid at {}",
        grid.cells.len(),
        flagged,
        out_dir.join("grid.csv").display()
    );
    if flagged > 0 {
        return Err(CliError::PartialSweep(flagged));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// selfcheck
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Default)]
pub struct SelfcheckArgs {
    /// Test hook: corrupt analytic gradients so the gradient check fails.
    #[arg(long = "corrupt-gradient", hide = true)]
    pub corrupt_gradient: bool,
}

pub fn selfcheck(args: SelfcheckArgs) -> CliResult<()> {
    let started = std::time::Instant::now();
    let results = run_all(&SelfCheckOptions {
        corrupt_gradient: args.corrupt_gradient,
    });
    let mut all_passed = true;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {} — {}", r.name, r.detail);
        all_passed &= r.passed;
    }
    println!(
        "selfcheck: {}/{} checks passed in {:.1}s",
        results.iter().filter(|r| r.passed).count(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if all_passed {
        Ok(())
    } else {
        Err(CliError::SelfcheckFailed)
    }
}
