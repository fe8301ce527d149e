//! Training objectives: pretraining MSE, Diffusion-DPO, DDSPO (generic and
//! practical), DSPO and DSPO+CPP.
//!
//! All losses are pure batch functions of the student parameters, the frozen
//! reference parameters and a [`PreferenceMicrobatch`] slice, reduced by the
//! arithmetic mean. The sigmoid family shares one core,
//!
//!   −log σ(−β·[(‖tʷ−ε_θʷ‖² − ‖tʷ−ε_refʷ‖²) − (‖tˡ−ε_θˡ‖² − ‖tˡ−ε_refˡ‖²)]),
//!
//! where the targets tʷ, tˡ are the forward noises for Diffusion-DPO and the
//! denoising score targets ε⋆ for DDSPO — Diffusion-DPO is the ε⋆ := ε
//! special case and the two paths are bitwise identical by construction.
//! −log σ(z) is evaluated as softplus(−z) = log1p(exp(−|z|)) + max(−z, 0),
//! which stays finite for |z| up to 1e4 and beyond.
//!
//! Every loss has an `_and_grad` variant returning the exact reverse-mode
//! gradient for the θ-dependent terms; reference evaluations are never
//! traced, so reference parameters cannot receive gradient.

use crate::diffusion::forward_diffuse;
use crate::error::{Error, Result};
use crate::net::{predict_eps, predict_eps_traced, ForwardTrace, Gradients, NetworkParams};
use crate::par;
use crate::point::Point2;
use crate::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};

/// SNR weighting convention: the per-term weight λ_t is replaced by 1 and
/// absorbed into β.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerTermWeighting {
    #[default]
    Constant,
}

/// DSPO's A(t) weight, fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DspoWeightA {
    #[default]
    One,
}

/// Shared knobs of all preference objectives. Serializes as
/// `{"beta": …, "dspo_gate_stop_gradient": …}`; the weighting conventions
/// are compile-time fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Regularization strength; the sigmoid's temperature.
    pub beta: f64,
    /// Treat the DSPO gate σ(·) as a constant during backprop (default).
    #[serde(default = "default_stop_gradient")]
    pub dspo_gate_stop_gradient: bool,
    #[serde(skip)]
    pub per_term_weighting: PerTermWeighting,
    #[serde(skip)]
    pub dspo_weight_a: DspoWeightA,
}

fn default_stop_gradient() -> bool {
    true
}

impl LossConfig {
    pub fn new(beta: f64) -> Self {
        LossConfig {
            beta,
            dspo_gate_stop_gradient: true,
            per_term_weighting: PerTermWeighting::Constant,
            dspo_weight_a: DspoWeightA::One,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::InvalidConfig("beta must be > 0".into()));
        }
        Ok(())
    }
}

/// One preference tuple at one timestep: noised winner/loser, the forward
/// noises that produced them, and (for the ε⋆ losses) the denoising score
/// targets.
#[derive(Debug, Clone, Copy)]
pub struct PreferenceMicrobatch {
    pub t: usize,
    pub class_id: usize,
    pub neg_class_id: usize,
    pub x_t_w: Point2,
    pub x_t_l: Point2,
    pub eps_fwd_w: Point2,
    pub eps_fwd_l: Point2,
    pub eps_star_w: Option<Point2>,
    pub eps_star_l: Option<Point2>,
}

/// One pretraining example: clean sample, class, forward noise and timestep.
#[derive(Debug, Clone, Copy)]
pub struct PretrainExample {
    pub x0: Point2,
    pub class_id: usize,
    pub eps: Point2,
    pub t: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus(x) = log(1 + e^x), overflow-free.
pub(crate) fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

// ---------------------------------------------------------------------------
// Prediction-level cores (shared by all net-level losses and directly
// testable: perturbing a single prediction exercises the monotonicity
// properties without touching network parameters).
// ---------------------------------------------------------------------------

/// Raw term values of one sigmoid-family item.
#[derive(Debug, Clone, Copy)]
pub struct SigmoidTerms {
    pub target_w: Point2,
    pub pred_w: Point2,
    pub ref_w: Point2,
    pub target_l: Point2,
    pub pred_l: Point2,
    pub ref_l: Point2,
}

impl SigmoidTerms {
    fn bracket(&self) -> f64 {
        let win = (self.target_w - self.pred_w).norm_sq() - (self.target_w - self.ref_w).norm_sq();
        let lose = (self.target_l - self.pred_l).norm_sq() - (self.target_l - self.ref_l).norm_sq();
        win - lose
    }
}

/// Mean of −log σ(−β·bracket) over the items.
pub fn sigmoid_pref_loss_from_predictions(beta: f64, items: &[SigmoidTerms]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = items.iter().map(|it| softplus(beta * it.bracket())).sum();
    Ok(sum / items.len() as f64)
}

/// Raw term values of one DSPO-style item. `reward_target_*` is the forward
/// noise in stock DSPO and ε⋆ in the CPP variant; the regression anchor is
/// always the winning forward noise.
#[derive(Debug, Clone, Copy)]
pub struct DspoTerms {
    pub anchor_noise_w: Point2,
    pub pred_w: Point2,
    pub ref_w: Point2,
    pub pred_l: Point2,
    pub ref_l: Point2,
    pub reward_target_w: Point2,
    pub reward_target_l: Point2,
}

fn implicit_reward(target: Point2, pred: Point2, reference: Point2) -> f64 {
    (target - pred).norm_sq() - (target - reference).norm_sq()
}

impl DspoTerms {
    /// (per-item loss, residual u, gate g, z = r_w − r_l)
    fn eval(&self, beta: f64) -> (f64, Point2, f64, f64) {
        let r_w = implicit_reward(self.reward_target_w, self.pred_w, self.ref_w);
        let r_l = implicit_reward(self.reward_target_l, self.pred_l, self.ref_l);
        let z = r_w - r_l;
        let gate = 1.0 - sigmoid(z);
        let u = (self.pred_w - self.anchor_noise_w) - (self.pred_w - self.ref_w).scale(beta * gate);
        (u.norm_sq(), u, gate, z)
    }
}

/// Mean of ‖(ε_θʷ−εʷ) − β·(1−σ(r_w−r_l))·(ε_θʷ−ε_refʷ)‖² over the items.
pub fn dspo_loss_from_predictions(beta: f64, items: &[DspoTerms]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = items.iter().map(|it| it.eval(beta).0).sum();
    Ok(sum / items.len() as f64)
}

// ---------------------------------------------------------------------------
// Pretraining MSE
// ---------------------------------------------------------------------------

/// Mean over the batch of ‖ε − ε_θ(x_t, t, c)‖² with x_t produced by the
/// forward process from the recorded noise.
pub fn pretrain_mse_loss(
    params: &NetworkParams,
    schedule: &NoiseSchedule,
    batch: &[PretrainExample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let num_steps = schedule.num_steps();
    let mut sum = 0.0;
    for ex in batch {
        let x_t = forward_diffuse(schedule, ex.x0, ex.t, ex.eps)?;
        let pred = predict_eps(params, x_t, ex.t, num_steps, ex.class_id)?;
        sum += (ex.eps - pred).norm_sq();
    }
    Ok(sum / batch.len() as f64)
}

pub fn pretrain_mse_loss_and_grad(
    params: &NetworkParams,
    schedule: &NoiseSchedule,
    batch: &[PretrainExample],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let num_steps = schedule.num_steps();
    let inv_n = 1.0 / batch.len() as f64;
    accumulate_chunked(batch, |ex, out| {
        let x_t = forward_diffuse(schedule, ex.x0, ex.t, ex.eps)?;
        let (pred, trace) = predict_eps_traced(params, x_t, ex.t, num_steps, ex.class_id)?;
        let diff = ex.eps - pred;
        // d/dpred ‖ε − pred‖² = −2(ε − pred)
        out.push((trace, diff.scale(-2.0 * inv_n)));
        Ok(diff.norm_sq() * inv_n)
    }, params)
}

// ---------------------------------------------------------------------------
// Sigmoid family: Diffusion-DPO, DDSPO, practical DDSPO
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum SigmoidTarget {
    /// tʷ, tˡ are the forward noises (Diffusion-DPO).
    ForwardNoise,
    /// tʷ, tˡ are the ε⋆ fields of the microbatch (DDSPO).
    Star,
}

fn sigmoid_terms(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    num_steps: usize,
    item: &PreferenceMicrobatch,
    which: SigmoidTarget,
) -> Result<SigmoidTerms> {
    let (target_w, target_l) = match which {
        SigmoidTarget::ForwardNoise => (item.eps_fwd_w, item.eps_fwd_l),
        SigmoidTarget::Star => (
            item.eps_star_w.ok_or(Error::MissingTargets)?,
            item.eps_star_l.ok_or(Error::MissingTargets)?,
        ),
    };
    Ok(SigmoidTerms {
        target_w,
        pred_w: predict_eps(params, item.x_t_w, item.t, num_steps, item.class_id)?,
        ref_w: predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)?,
        target_l,
        pred_l: predict_eps(params, item.x_t_l, item.t, num_steps, item.class_id)?,
        ref_l: predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.class_id)?,
    })
}

fn sigmoid_family_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
    which: SigmoidTarget,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms = batch
        .iter()
        .map(|item| sigmoid_terms(params, ref_params, num_steps, item, which))
        .collect::<Result<Vec<_>>>()?;
    sigmoid_pref_loss_from_predictions(cfg.beta, &terms)
}

fn sigmoid_family_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
    which: SigmoidTarget,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_n = 1.0 / batch.len() as f64;
    let beta = cfg.beta;
    accumulate_chunked(batch, |item, out| {
        let (target_w, target_l) = match which {
            SigmoidTarget::ForwardNoise => (item.eps_fwd_w, item.eps_fwd_l),
            SigmoidTarget::Star => (
                item.eps_star_w.ok_or(Error::MissingTargets)?,
                item.eps_star_l.ok_or(Error::MissingTargets)?,
            ),
        };
        let (pred_w, trace_w) =
            predict_eps_traced(params, item.x_t_w, item.t, num_steps, item.class_id)?;
        let ref_w = predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)?;
        let (pred_l, trace_l) =
            predict_eps_traced(params, item.x_t_l, item.t, num_steps, item.class_id)?;
        let ref_l = predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.class_id)?;
        let terms = SigmoidTerms {
            target_w,
            pred_w,
            ref_w,
            target_l,
            pred_l,
            ref_l,
        };
        let bracket = terms.bracket();
        // d softplus(β·b)/db = σ(β·b)·β
        let coeff = sigmoid(beta * bracket) * beta * inv_n;
        out.push((trace_w, (pred_w - target_w).scale(2.0 * coeff)));
        out.push((trace_l, (pred_l - target_l).scale(-2.0 * coeff)));
        Ok(softplus(beta * bracket) * inv_n)
    }, params)
}

/// Diffusion-DPO in score space: targets are the forward noises.
pub fn diffusion_dpo_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<f64> {
    sigmoid_family_loss(params, ref_params, cfg, num_steps, batch, SigmoidTarget::ForwardNoise)
}

pub fn diffusion_dpo_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<(f64, Gradients)> {
    sigmoid_family_loss_and_grad(params, ref_params, cfg, num_steps, batch, SigmoidTarget::ForwardNoise)
}

/// DDSPO: same functional form with the denoising score targets ε⋆ replacing
/// the forward noises.
pub fn ddspo_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<f64> {
    sigmoid_family_loss(params, ref_params, cfg, num_steps, batch, SigmoidTarget::Star)
}

pub fn ddspo_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<(f64, Gradients)> {
    sigmoid_family_loss_and_grad(params, ref_params, cfg, num_steps, batch, SigmoidTarget::Star)
}

/// Denoising score targets from the frozen reference:
/// ε⋆ʷ = ε_ref(x_tʷ, t, c) and ε⋆ˡ = ε_ref(x_tˡ, t, c⁻). No gradient flows
/// into the reference (evaluations are untraced by construction).
pub fn make_reference_score_targets(
    ref_params: &NetworkParams,
    schedule: &NoiseSchedule,
    x_t_w: Point2,
    x_t_l: Point2,
    t: usize,
    class_id: usize,
    neg_class_id: usize,
) -> Result<(Point2, Point2)> {
    let num_steps = schedule.num_steps();
    let w = predict_eps(ref_params, x_t_w, t, num_steps, class_id)?;
    let l = predict_eps(ref_params, x_t_l, t, num_steps, neg_class_id)?;
    Ok((w, l))
}

/// Practical DDSPO: ε⋆ taken from the reference model under the original and
/// perturbed conditions. The winning branch's ‖ε_refʷ−ε_refʷ‖² term is
/// identically zero, so the reference prediction at (x_tʷ, c) serves as both
/// target and reference in a single evaluation.
pub fn practical_ddspo_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms = batch
        .iter()
        .map(|item| practical_terms(params, ref_params, num_steps, item))
        .collect::<Result<Vec<_>>>()?;
    sigmoid_pref_loss_from_predictions(cfg.beta, &terms)
}

fn practical_terms(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    num_steps: usize,
    item: &PreferenceMicrobatch,
) -> Result<SigmoidTerms> {
    let ref_w = predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)?;
    let target_l = predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.neg_class_id)?;
    Ok(SigmoidTerms {
        target_w: ref_w,
        pred_w: predict_eps(params, item.x_t_w, item.t, num_steps, item.class_id)?,
        ref_w,
        target_l,
        pred_l: predict_eps(params, item.x_t_l, item.t, num_steps, item.class_id)?,
        ref_l: predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.class_id)?,
    })
}

pub fn practical_ddspo_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_n = 1.0 / batch.len() as f64;
    let beta = cfg.beta;
    accumulate_chunked(batch, |item, out| {
        let ref_w = predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)?;
        let target_l =
            predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.neg_class_id)?;
        let ref_l = predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.class_id)?;
        let (pred_w, trace_w) =
            predict_eps_traced(params, item.x_t_w, item.t, num_steps, item.class_id)?;
        let (pred_l, trace_l) =
            predict_eps_traced(params, item.x_t_l, item.t, num_steps, item.class_id)?;
        let terms = SigmoidTerms {
            target_w: ref_w,
            pred_w,
            ref_w,
            target_l,
            pred_l,
            ref_l,
        };
        let bracket = terms.bracket();
        let coeff = sigmoid(beta * bracket) * beta * inv_n;
        out.push((trace_w, (pred_w - ref_w).scale(2.0 * coeff)));
        out.push((trace_l, (pred_l - target_l).scale(-2.0 * coeff)));
        Ok(softplus(beta * bracket) * inv_n)
    }, params)
}

// ---------------------------------------------------------------------------
// DSPO family
// ---------------------------------------------------------------------------

/// Implicit reward r_θ = ‖t − ε_θ(x_t,t,c)‖² − ‖t − ε_ref(x_t,t,c)‖² for a
/// given target (forward noise in stock DSPO, ε⋆ in the CPP variant).
pub fn dspo_implicit_reward(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    num_steps: usize,
    x_t: Point2,
    t: usize,
    class_id: usize,
    eps_target: Point2,
) -> Result<f64> {
    let pred = predict_eps(params, x_t, t, num_steps, class_id)?;
    let reference = predict_eps(ref_params, x_t, t, num_steps, class_id)?;
    Ok(implicit_reward(eps_target, pred, reference))
}

#[derive(Clone, Copy)]
enum DspoRewardTarget {
    ForwardNoise,
    Star,
}

fn dspo_terms(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    num_steps: usize,
    item: &PreferenceMicrobatch,
    which: DspoRewardTarget,
) -> Result<DspoTerms> {
    let (reward_target_w, reward_target_l) = match which {
        DspoRewardTarget::ForwardNoise => (item.eps_fwd_w, item.eps_fwd_l),
        DspoRewardTarget::Star => (
            item.eps_star_w.ok_or(Error::MissingTargets)?,
            item.eps_star_l.ok_or(Error::MissingTargets)?,
        ),
    };
    Ok(DspoTerms {
        anchor_noise_w: item.eps_fwd_w,
        pred_w: predict_eps(params, item.x_t_w, item.t, num_steps, item.class_id)?,
        ref_w: predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)?,
        pred_l: predict_eps(params, item.x_t_l, item.t, num_steps, item.class_id)?,
        ref_l: predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.class_id)?,
        reward_target_w,
        reward_target_l,
    })
}

fn dspo_family_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
    which: DspoRewardTarget,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms = batch
        .iter()
        .map(|item| dspo_terms(params, ref_params, num_steps, item, which))
        .collect::<Result<Vec<_>>>()?;
    dspo_loss_from_predictions(cfg.beta, &terms)
}

fn dspo_family_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
    which: DspoRewardTarget,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_n = 1.0 / batch.len() as f64;
    let beta = cfg.beta;
    let stop_gradient = cfg.dspo_gate_stop_gradient;
    accumulate_chunked(batch, |item, out| {
        let (reward_target_w, reward_target_l) = match which {
            DspoRewardTarget::ForwardNoise => (item.eps_fwd_w, item.eps_fwd_l),
            DspoRewardTarget::Star => (
                item.eps_star_w.ok_or(Error::MissingTargets)?,
                item.eps_star_l.ok_or(Error::MissingTargets)?,
            ),
        };
        let (pred_w, trace_w) =
            predict_eps_traced(params, item.x_t_w, item.t, num_steps, item.class_id)?;
        let ref_w = predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)?;
        let (pred_l, trace_l) =
            predict_eps_traced(params, item.x_t_l, item.t, num_steps, item.class_id)?;
        let ref_l = predict_eps(ref_params, item.x_t_l, item.t, num_steps, item.class_id)?;
        let terms = DspoTerms {
            anchor_noise_w: item.eps_fwd_w,
            pred_w,
            ref_w,
            pred_l,
            ref_l,
            reward_target_w,
            reward_target_l,
        };
        let (loss, u, gate, z) = terms.eval(beta);
        // Direct path: u depends on pred_w through the anchor residual and
        // the repulsion term.
        let mut d_w = u.scale(2.0 * (1.0 - beta * gate) * inv_n);
        if !stop_gradient {
            // Gate path: g = 1 − σ(z), z = r_w − r_l.
            let dloss_dg = -2.0 * beta * u.dot(pred_w - ref_w);
            let sig = sigmoid(z);
            let dg_dz = -sig * (1.0 - sig);
            let c = dloss_dg * dg_dz * inv_n;
            d_w = d_w + (pred_w - reward_target_w).scale(2.0 * c);
            let d_l = (pred_l - reward_target_l).scale(-2.0 * c);
            out.push((trace_l, d_l));
        }
        out.push((trace_w, d_w));
        Ok(loss * inv_n)
    }, params)
}

/// DSPO with the forward-noise implicit reward and the winning-branch
/// regression anchor. The sigmoid gate is a constant during backprop unless
/// `dspo_gate_stop_gradient` is false.
pub fn dspo_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<f64> {
    dspo_family_loss(params, ref_params, cfg, num_steps, batch, DspoRewardTarget::ForwardNoise)
}

pub fn dspo_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<(f64, Gradients)> {
    dspo_family_loss_and_grad(params, ref_params, cfg, num_steps, batch, DspoRewardTarget::ForwardNoise)
}

/// DSPO with contrastive-policy-pair rewards: every r_θ evaluation uses the
/// ε⋆ targets, while the regression anchor keeps the winning forward noise.
pub fn dspo_cpp_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<f64> {
    dspo_family_loss(params, ref_params, cfg, num_steps, batch, DspoRewardTarget::Star)
}

pub fn dspo_cpp_loss_and_grad(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    cfg: &LossConfig,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
) -> Result<(f64, Gradients)> {
    dspo_family_loss_and_grad(params, ref_params, cfg, num_steps, batch, DspoRewardTarget::Star)
}

// ---------------------------------------------------------------------------
// Chunked batch evaluation
// ---------------------------------------------------------------------------

/// Evaluate `per_item` over the batch, collecting per-item loss shares and
/// trace contributions, then backprop chunk by chunk. The chunk layout is a
/// fixed function of the batch size, so results are bitwise identical
/// between the parallel and sequential builds.
fn accumulate_chunked<T: Sync>(
    items: &[T],
    per_item: impl Fn(&T, &mut Vec<(ForwardTrace, Point2)>) -> Result<f64> + Sync,
    params: &NetworkParams,
) -> Result<(f64, Gradients)> {
    const CHUNKS: usize = 8;
    let chunk_size = items.len().div_ceil(CHUNKS).max(1);
    let chunks: Vec<&[T]> = items.chunks(chunk_size).collect();
    let partials: Vec<Result<(f64, Gradients)>> = par::map_slice(&chunks, |chunk| {
        let mut contributions = Vec::with_capacity(chunk.len() * 2);
        let mut loss = 0.0;
        for item in chunk.iter() {
            loss += per_item(item, &mut contributions)?;
        }
        let grads = crate::net::backprop(params, &contributions)?;
        Ok((loss, grads))
    });
    let mut total_loss = 0.0;
    let mut total = Gradients::zeros(&params.config);
    for partial in partials {
        let (loss, grads) = partial?;
        total_loss += loss;
        total.add_assign(&grads)?;
    }
    Ok((total_loss, total))
}
