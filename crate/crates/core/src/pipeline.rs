//! End-to-end toy pipeline: corrupted training corpus → reference model →
//! preference pairs → fine-tuned student → per-condition samples and
//! metrics. One [`ToyConfig`] pins every default so the sweep harness, the
//! CLI and the acceptance suite run the same protocol.

use crate::data::{
    self, build_preference_pairs, build_unpaired_negatives, MixtureSpec, PreferencePairSet,
    ToyDataset,
};
use crate::diffusion::{ancestral_step, sample};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricsReport};
use crate::net::{NetConfig, NetPredictor, NetworkParams};
use crate::point::Point2;
use crate::rng::{derive_seed, salt, standard_normal_point};
use crate::schedule::{NoiseSchedule, ScheduleDescriptor};
use crate::train::{finetune, pretrain_reference, Checkpoint, Method, TrainConfig, TrainOutput};
use serde::{Deserialize, Serialize};

/// Where preference winners/losers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    /// Draws from the clean ground-truth mixture (default).
    Clean,
    /// Full reverse-chain draws from the reference model.
    Reference,
}

/// All toy-experiment defaults in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub classes: usize,
    pub radius: f64,
    pub std: f64,
    pub n_per_class: usize,
    pub extra_std: f64,
    pub contamination: f64,
    pub schedule: ScheduleDescriptor,
    pub net: NetConfig,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub finetune_steps: usize,
    pub finetune_batch: usize,
    pub finetune_lr: f64,
    pub warmup_steps: usize,
    pub neighbor_offset: usize,
    pub pair_source: PairSource,
    pub samples_per_condition: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let schedule = NoiseSchedule::toy_default();
        ToyConfig {
            classes: 6,
            radius: 2.0,
            std: 0.18,
            n_per_class: 2000,
            extra_std: 0.12,
            contamination: 0.2,
            schedule: schedule.descriptor(),
            net: NetConfig::default(),
            pretrain_steps: 4000,
            pretrain_batch: 256,
            pretrain_lr: 1e-3,
            finetune_steps: 600,
            finetune_batch: 64,
            finetune_lr: 5e-4,
            warmup_steps: 50,
            neighbor_offset: 1,
            pair_source: PairSource::Reference,
            samples_per_condition: 300,
        }
    }
}

impl ToyConfig {
    pub fn mixture(&self) -> Result<MixtureSpec> {
        data::build_ring_mixture(self.classes, self.radius, self.std)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::try_from(self.schedule)
    }

    fn net_config(&self) -> NetConfig {
        NetConfig {
            num_classes: self.classes,
            ..self.net
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch,
            learning_rate: self.pretrain_lr,
            ..TrainConfig::pretrain_default(seed)
        }
    }

    pub fn finetune_config(&self, method: Method, beta: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.finetune_steps,
            batch_size: self.finetune_batch,
            learning_rate: self.finetune_lr,
            warmup_steps: self.warmup_steps,
            ..TrainConfig::finetune_default(method, beta, seed)
        }
    }
}

/// Clean mixture draw plus its corrupted variant.
pub fn make_training_data(cfg: &ToyConfig, seed: u64) -> Result<(ToyDataset, ToyDataset)> {
    let mixture = cfg.mixture()?;
    let clean = data::sample_clean(&mixture, cfg.n_per_class, seed);
    let corrupted = data::corrupt_dataset(&clean, &mixture, cfg.extra_std, cfg.contamination, seed)?;
    Ok((clean, corrupted))
}

/// Pretrain the reference model on the corrupted corpus.
pub fn pretrain_toy_reference(cfg: &ToyConfig, seed: u64) -> Result<TrainOutput> {
    let (_, corrupted) = make_training_data(cfg, seed)?;
    let schedule = cfg.noise_schedule()?;
    pretrain_reference(
        &corrupted,
        &cfg.net_config(),
        &schedule,
        &cfg.pretrain_config(seed),
    )
}

/// One full reverse-chain draw for a class, consuming noise from `rng`.
fn reverse_chain_draw(
    params: &NetworkParams,
    schedule: &NoiseSchedule,
    class_id: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Point2 {
    let predictor = NetPredictor {
        params,
        num_steps: schedule.num_steps(),
    };
    let mut x = standard_normal_point(rng);
    for t in (1..=schedule.num_steps()).rev() {
        let noise = if t > 1 {
            standard_normal_point(rng)
        } else {
            Point2::ZERO
        };
        x = ancestral_step(schedule, &predictor, x, t, class_id, noise)
            .expect("t in range by construction");
    }
    x
}

/// Paired preference data: winners for class c, losers for the neighboring
/// class, drawn either from the clean mixture or from the reference model.
pub fn make_pairs(
    cfg: &ToyConfig,
    reference: Option<&Checkpoint>,
    n_pairs_per_class: usize,
    seed: u64,
) -> Result<PreferencePairSet> {
    let mixture = cfg.mixture()?;
    match cfg.pair_source {
        PairSource::Clean => build_preference_pairs(
            |k, rng| data::sample_class(&mixture, k, rng),
            |k, rng| data::sample_class(&mixture, k, rng),
            cfg.classes,
            n_pairs_per_class,
            cfg.neighbor_offset,
            seed,
        ),
        PairSource::Reference => {
            let ckpt = reference.ok_or_else(|| {
                Error::InvalidConfig(
                    "pair_source=reference requires a reference checkpoint".into(),
                )
            })?;
            let params = ckpt.params()?;
            let schedule = ckpt.schedule()?;
            build_preference_pairs(
                |k, rng| reverse_chain_draw(&params, &schedule, k, rng),
                |k, rng| reverse_chain_draw(&params, &schedule, k, rng),
                cfg.classes,
                n_pairs_per_class,
                cfg.neighbor_offset,
                seed,
            )
        }
    }
}

/// Unpaired variant of [`make_pairs`]: reuse the paired winners as
/// positives and borrow losers among them.
pub fn make_unpaired_pairs(
    cfg: &ToyConfig,
    reference: Option<&Checkpoint>,
    n_pairs_per_class: usize,
    seed: u64,
) -> Result<PreferencePairSet> {
    let paired = make_pairs(cfg, reference, n_pairs_per_class, seed)?;
    let positives: Vec<(Point2, usize)> =
        paired.pairs.iter().map(|p| (p.x0_w, p.class_id)).collect();
    build_unpaired_negatives(&positives, cfg.neighbor_offset, seed)
}

/// Fine-tune `method` against the reference on pairs built for `n_total`
/// total pairs. `n_total` must divide evenly across classes.
pub fn finetune_toy(
    cfg: &ToyConfig,
    reference: &Checkpoint,
    method: Method,
    n_total_pairs: usize,
    beta: f64,
    seed: u64,
) -> Result<TrainOutput> {
    if n_total_pairs == 0 || !n_total_pairs.is_multiple_of(cfg.classes) {
        return Err(Error::InvalidConfig(format!(
            "total pair count {n_total_pairs} must be a positive multiple of {} classes",
            cfg.classes
        )));
    }
    let per_class = n_total_pairs / cfg.classes;
    let pairs = if method == Method::DdspoEfficient {
        make_unpaired_pairs(cfg, Some(reference), per_class, seed)?
    } else {
        make_pairs(cfg, Some(reference), per_class, seed)?
    };
    finetune(reference, &pairs, &cfg.finetune_config(method, beta, seed))
}

/// Sample `per_condition` points for every class from a checkpoint.
/// Class k uses seed stream derive(seed, SAMPLE) ⊕ k, so per-class draws are
/// independent and reproducible.
pub fn sample_by_condition(
    ckpt: &Checkpoint,
    per_condition: usize,
    seed: u64,
) -> Result<Vec<Vec<Point2>>> {
    let params = ckpt.params()?;
    let schedule = ckpt.schedule()?;
    let predictor = NetPredictor {
        params: &params,
        num_steps: schedule.num_steps(),
    };
    let base = derive_seed(seed, salt::SAMPLE);
    Ok((0..params.config.num_classes)
        .map(|k| {
            sample(
                &schedule,
                &predictor,
                k,
                per_condition,
                derive_seed(base, k as u64),
            )
        })
        .collect())
}

/// Samples plus the metrics report for one checkpoint.
pub fn evaluate_checkpoint(
    cfg: &ToyConfig,
    ckpt: &Checkpoint,
    seed: u64,
) -> Result<(Vec<Vec<Point2>>, MetricsReport)> {
    let mixture = cfg.mixture()?;
    let samples = sample_by_condition(ckpt, cfg.samples_per_condition, seed)?;
    let report = compute_metrics(&samples, &mixture)?;
    Ok((samples, report))
}
