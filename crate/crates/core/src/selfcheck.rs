//! Fast invariant suite: finite-difference gradient checks, the ln 2
//! identities, the DDSPO → Diffusion-DPO reduction and the Gaussian-oracle
//! sampler statistics. The CLI's `selfcheck` command runs these; the
//! acceptance tests reuse them with larger instance counts.
//!
//! The finite-difference oracle below evaluates losses only through their
//! forward path, never through `backprop`, so it stays independent of the
//! gradients it checks.

use crate::diffusion::{sample, GaussianOracle};
use crate::error::Result;
use crate::net::{init_network, Gradients, NetConfig, NetworkParams};
use crate::objectives::{
    self, LossConfig, PreferenceMicrobatch, PretrainExample,
};
use crate::point::Point2;
use crate::rng::{standard_normal_point, stream_rng};
use crate::schedule::NoiseSchedule;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfCheckOptions {
    /// Test hook: perturb analytic gradients so the gradient check must
    /// fail. Exercises the failure path of the release gate.
    pub corrupt_gradient: bool,
}

/// Central finite differences of `loss` over every parameter entry.
pub fn finite_difference_gradients(
    params: &NetworkParams,
    h: f64,
    loss: impl Fn(&NetworkParams) -> f64,
) -> Gradients {
    let mut work = params.clone();
    let mut fd = Gradients::zeros(&params.config);
    let n_slices = fd.slices().len();
    for si in 0..n_slices {
        for k in 0..fd.slices()[si].len() {
            let orig = work.slices()[si][k];
            work.slices_mut()[si][k] = orig + h;
            let up = loss(&work);
            work.slices_mut()[si][k] = orig - h;
            let down = loss(&work);
            work.slices_mut()[si][k] = orig;
            fd.slices_mut()[si][k] = (up - down) / (2.0 * h);
        }
    }
    fd
}

/// Max over entries of |a − b| / max(|a|, |b|, 1e-6). The floor keeps
/// entries whose true gradient is zero (e.g. embeddings of classes absent
/// from the batch) from dividing by rounding noise.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    let mut max_rel: f64 = 0.0;
    for (sa, sb) in a.slices().iter().zip(b.slices().iter()) {
        for (x, y) in sa.iter().zip(sb.iter()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

fn check_net_config() -> NetConfig {
    NetConfig {
        hidden_width: 8,
        hidden_layers: 2,
        num_classes: 4,
        time_embed_dim: 4,
        class_embed_dim: 3,
    }
}

fn random_microbatch(seed: u64, n: usize) -> Vec<PreferenceMicrobatch> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let x_t_w = standard_normal_point(&mut rng).scale(1.5);
            let x_t_l = standard_normal_point(&mut rng).scale(1.5);
            let eps_fwd_w = standard_normal_point(&mut rng);
            let eps_fwd_l = standard_normal_point(&mut rng);
            let eps_star_w = standard_normal_point(&mut rng);
            let eps_star_l = standard_normal_point(&mut rng);
            PreferenceMicrobatch {
                t: rng.random_range(1..=100),
                class_id: rng.random_range(0..4),
                neg_class_id: rng.random_range(0..4),
                x_t_w,
                x_t_l,
                eps_fwd_w,
                eps_fwd_l,
                eps_star_w: Some(eps_star_w),
                eps_star_l: Some(eps_star_l),
            }
        })
        .collect()
}

type LossAndGrad = fn(
    &NetworkParams,
    &NetworkParams,
    &LossConfig,
    usize,
    &[PreferenceMicrobatch],
) -> Result<(f64, Gradients)>;

type LossOnly =
    fn(&NetworkParams, &NetworkParams, &LossConfig, usize, &[PreferenceMicrobatch]) -> Result<f64>;

const SIGMOID_LOSSES: [(&str, LossAndGrad, LossOnly); 3] = [
    ("diffusion_dpo", objectives::diffusion_dpo_loss_and_grad, objectives::diffusion_dpo_loss),
    ("ddspo", objectives::ddspo_loss_and_grad, objectives::ddspo_loss),
    ("practical_ddspo", objectives::practical_ddspo_loss_and_grad, objectives::practical_ddspo_loss),
];

const DSPO_LOSSES: [(&str, bool, LossAndGrad, LossOnly); 2] = [
    ("dspo", false, objectives::dspo_loss_and_grad, objectives::dspo_loss),
    ("dspo_cpp", true, objectives::dspo_cpp_loss_and_grad, objectives::dspo_cpp_loss),
];

/// 1 − σ(r_w − r_l) per item at the given parameters, via the public
/// implicit-reward op.
fn dspo_gate_values(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
    star_targets: bool,
) -> Vec<f64> {
    batch
        .iter()
        .map(|item| {
            let (tw, tl) = if star_targets {
                (item.eps_star_w.expect("stars"), item.eps_star_l.expect("stars"))
            } else {
                (item.eps_fwd_w, item.eps_fwd_l)
            };
            let r_w = objectives::dspo_implicit_reward(
                params, ref_params, num_steps, item.x_t_w, item.t, item.class_id, tw,
            )
            .expect("valid item");
            let r_l = objectives::dspo_implicit_reward(
                params, ref_params, num_steps, item.x_t_l, item.t, item.class_id, tl,
            )
            .expect("valid item");
            1.0 - objectives::sigmoid(r_w - r_l)
        })
        .collect()
}

/// The objective whose gradient the stop-gradient DSPO configuration is
/// defined to produce: the per-item gate frozen at the base parameters.
fn dspo_pinned_gate_loss(
    params: &NetworkParams,
    ref_params: &NetworkParams,
    beta: f64,
    num_steps: usize,
    batch: &[PreferenceMicrobatch],
    gates: &[f64],
) -> f64 {
    let sum: f64 = batch
        .iter()
        .zip(gates)
        .map(|(item, &g)| {
            let pw = crate::net::predict_eps(params, item.x_t_w, item.t, num_steps, item.class_id)
                .expect("valid item");
            let rw =
                crate::net::predict_eps(ref_params, item.x_t_w, item.t, num_steps, item.class_id)
                    .expect("valid item");
            ((pw - item.eps_fwd_w) - (pw - rw).scale(beta * g)).norm_sq()
        })
        .sum();
    sum / batch.len() as f64
}

/// Finite-difference check for every implemented loss over `instances`
/// random (network, batch) draws each: pretraining MSE, the sigmoid family,
/// and the DSPO family with the gate both differentiated (plain FD) and
/// stopped (FD of the gate-frozen objective).
pub fn gradient_check(instances: usize, corrupt: bool) -> CheckResult {
    let h = 1e-5;
    let threshold = 1e-4;
    let schedule = NoiseSchedule::toy_default();
    let cfg = check_net_config();
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    let corruption = if corrupt { 1e-2 } else { 0.0 };

    for i in 0..instances {
        let seed = 1000 + i as u64;
        let student = init_network(&cfg, seed).expect("valid config");
        let reference = init_network(&cfg, seed + 500).expect("valid config");
        let batch = random_microbatch(seed, 3);
        let lc = LossConfig::new(1.5);

        let mut record = |name: &'static str, rel: f64| {
            if rel > worst {
                worst = rel;
                worst_name = name;
            }
        };

        // pretraining MSE
        let pretrain: Vec<PretrainExample> = batch
            .iter()
            .map(|m| PretrainExample {
                x0: m.x_t_w,
                class_id: m.class_id,
                eps: m.eps_fwd_w,
                t: m.t,
            })
            .collect();
        let (_, mut analytic) =
            objectives::pretrain_mse_loss_and_grad(&student, &schedule, &pretrain)
                .expect("valid batch");
        analytic.layers[0].weight[0] += corruption;
        let fd = finite_difference_gradients(&student, h, |p| {
            objectives::pretrain_mse_loss(p, &schedule, &pretrain).expect("valid batch")
        });
        record("pretrain_mse", max_relative_error(&analytic, &fd));

        for (name, lg, l) in SIGMOID_LOSSES {
            let (_, mut analytic) =
                lg(&student, &reference, &lc, 100, &batch).expect("valid batch");
            analytic.layers[0].weight[0] += corruption;
            let fd = finite_difference_gradients(&student, h, |p| {
                l(p, &reference, &lc, 100, &batch).expect("valid batch")
            });
            record(name, max_relative_error(&analytic, &fd));
        }

        for (name, star, lg, l) in DSPO_LOSSES {
            // gate differentiated: plain finite differences of the loss
            let through = LossConfig {
                dspo_gate_stop_gradient: false,
                ..lc
            };
            let (_, mut analytic) =
                lg(&student, &reference, &through, 100, &batch).expect("valid batch");
            analytic.layers[0].weight[0] += corruption;
            let fd = finite_difference_gradients(&student, h, |p| {
                l(p, &reference, &through, 100, &batch).expect("valid batch")
            });
            record(name, max_relative_error(&analytic, &fd));

            // gate stopped: finite differences of the gate-frozen objective
            let (_, mut analytic) =
                lg(&student, &reference, &lc, 100, &batch).expect("valid batch");
            analytic.layers[0].weight[0] += corruption;
            let gates = dspo_gate_values(&student, &reference, 100, &batch, star);
            let fd = finite_difference_gradients(&student, h, |p| {
                dspo_pinned_gate_loss(p, &reference, lc.beta, 100, &batch, &gates)
            });
            record(name, max_relative_error(&analytic, &fd));
        }
    }
    CheckResult::new(
        "gradient_check",
        worst < threshold,
        format!("max relative error {worst:.3e} (worst: {worst_name}, threshold {threshold:.0e})"),
    )
}

/// Student == reference ⇒ every sigmoid-family loss equals ln 2.
pub fn ln2_identity_check(batches: usize) -> CheckResult {
    let cfg = check_net_config();
    let mut worst: f64 = 0.0;
    for i in 0..batches {
        let net = init_network(&cfg, 2000 + i as u64).expect("valid config");
        let batch = random_microbatch(3000 + i as u64, 8);
        let lc = LossConfig::new(250.0 + i as f64);
        for (_, _, loss) in SIGMOID_LOSSES.iter() {
            let v = loss(&net, &net, &lc, 100, &batch).expect("valid batch");
            worst = worst.max((v - std::f64::consts::LN_2).abs());
        }
    }
    CheckResult::new(
        "ln2_identity",
        worst < 1e-9,
        format!("max |loss - ln 2| = {worst:.3e} over {batches} batches (tolerance 1e-9)"),
    )
}

/// ε⋆ := forward noises turns DDSPO into Diffusion-DPO, bitwise.
pub fn reduction_check(batches: usize, corrupt: bool) -> CheckResult {
    let cfg = check_net_config();
    let mut exact = 0usize;
    for i in 0..batches {
        let student = init_network(&cfg, 4000 + i as u64).expect("valid config");
        let reference = init_network(&cfg, 5000 + i as u64).expect("valid config");
        let mut batch = random_microbatch(6000 + i as u64, 4);
        for item in batch.iter_mut() {
            item.eps_star_w = Some(item.eps_fwd_w);
            item.eps_star_l = Some(item.eps_fwd_l);
        }
        let lc = LossConfig::new(3.0);
        let mut a = objectives::ddspo_loss(&student, &reference, &lc, 100, &batch)
            .expect("valid batch");
        if corrupt {
            a += 1e-9;
        }
        let b = objectives::diffusion_dpo_loss(&student, &reference, &lc, 100, &batch)
            .expect("valid batch");
        if a.to_bits() == b.to_bits() {
            exact += 1;
        }
    }
    CheckResult::new(
        "ddspo_reduces_to_diffusion_dpo",
        exact == batches,
        format!("{exact}/{batches} batches bitwise equal"),
    )
}

/// Full-chain sampling with the closed-form optimal predictor for
/// N((2,0), 0.1²I) reproduces the data's mean and per-axis std.
pub fn sampler_oracle_check(n_chains: usize) -> CheckResult {
    let schedule = NoiseSchedule::toy_default();
    let target = Point2::new(2.0, 0.0);
    let oracle = GaussianOracle {
        schedule: &schedule,
        mean: target,
        std: 0.1,
    };
    let pts = sample(&schedule, &oracle, 0, n_chains, 20_240);
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Point2::ZERO, |a, p| a + *p).scale(1.0 / n);
    let std_axis = |get: &dyn Fn(&Point2) -> f64| {
        let m = pts.iter().map(&get).sum::<f64>() / n;
        (pts.iter().map(|p| (get(p) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let std_x = std_axis(&|p: &Point2| p.x);
    let std_y = std_axis(&|p: &Point2| p.y);
    let mean_ok = mean.dist(target) < 0.05;
    let std_ok = (std_x - 0.1).abs() < 0.015 && (std_y - 0.1).abs() < 0.015;
    CheckResult::new(
        "gaussian_oracle_sampler",
        mean_ok && std_ok,
        format!(
            "mean ({:.4}, {:.4}) [within 0.05 of (2,0)], std ({std_x:.4}, {std_y:.4}) [within 15% of 0.1]",
            mean.x, mean.y
        ),
    )
}

/// The scalar-surrogate loss values, frozen from
/// scripts/scalar_loss_oracle.py.
pub fn scalar_surrogate_check() -> CheckResult {
    use objectives::{
        dspo_loss_from_predictions, sigmoid_pref_loss_from_predictions, DspoTerms, SigmoidTerms,
    };
    let p = |v: f64| Point2::new(v, 0.0);
    let cases: [(&str, f64, f64); 5] = [
        (
            "diffusion_dpo",
            sigmoid_pref_loss_from_predictions(
                2.0,
                &[SigmoidTerms {
                    target_w: p(0.3),
                    pred_w: p(0.1),
                    ref_w: p(0.5),
                    target_l: p(-0.2),
                    pred_l: p(0.0),
                    ref_l: p(-0.1),
                }],
            )
            .expect("one item"),
            0.6635971130761409,
        ),
        (
            "ddspo",
            sigmoid_pref_loss_from_predictions(
                1.0,
                &[SigmoidTerms {
                    target_w: p(0.0),
                    pred_w: p(0.1),
                    ref_w: p(0.2),
                    target_l: p(1.0),
                    pred_l: p(0.5),
                    ref_l: p(0.4),
                }],
            )
            .expect("one item"),
            0.7339469673175899,
        ),
        (
            "practical_ddspo",
            sigmoid_pref_loss_from_predictions(
                1.0,
                &[SigmoidTerms {
                    target_w: p(0.2),
                    pred_w: p(0.4),
                    ref_w: p(0.2),
                    target_l: p(-0.3),
                    pred_l: p(-0.1),
                    ref_l: p(0.1),
                }],
            )
            .expect("one item"),
            0.7763437730407398,
        ),
        (
            "dspo",
            dspo_loss_from_predictions(
                1.0,
                &[DspoTerms {
                    anchor_noise_w: p(0.0),
                    pred_w: p(0.2),
                    ref_w: p(0.1),
                    pred_l: p(0.5),
                    ref_l: p(0.3),
                    reward_target_w: p(0.0),
                    reward_target_l: p(0.0),
                }],
            )
            .expect("one item"),
            0.021536903628411257,
        ),
        (
            "dspo_cpp",
            dspo_loss_from_predictions(
                1.0,
                &[DspoTerms {
                    anchor_noise_w: p(0.0),
                    pred_w: p(0.1),
                    ref_w: p(0.2),
                    pred_l: p(0.5),
                    ref_l: p(0.4),
                    reward_target_w: p(0.0),
                    reward_target_l: p(1.0),
                }],
            )
            .expect("one item"),
            0.021904315532531103,
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, got, want) in cases {
        worst = worst.max((got - want).abs());
        lines.push(format!("{name}={got:.6}"));
    }
    CheckResult::new(
        "scalar_surrogates",
        worst < 1e-4,
        format!("{} (max dev {worst:.2e})", lines.join(", ")),
    )
}

/// The fast release-gate suite.
pub fn run_all(opts: &SelfCheckOptions) -> Vec<CheckResult> {
    vec![
        gradient_check(3, opts.corrupt_gradient),
        ln2_identity_check(10),
        reduction_check(20, false),
        scalar_surrogate_check(),
        sampler_oracle_check(10_000),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_on_fresh_build() {
        for check in run_all(&SelfCheckOptions::default()) {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }

    #[test]
    fn corrupted_gradient_hook_fails_the_gate() {
        let result = gradient_check(1, true);
        assert!(!result.passed);
    }
}
