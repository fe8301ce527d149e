//! Forward noising process and the Gaussian ancestral reverse sampler.
//!
//! Forward: x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε with ε ~ N(0, I).
//! Reverse: x_{t−1} ~ N(μ_θ(x_t, t), σ̃_t² I) with the standard posterior mean
//! μ = (x_t − β_t/√(1−ᾱ_t)·ε̂) / √(1−β_t) and σ̃_t² = β_t(1−ᾱ_{t−1})/(1−ᾱ_t).

use crate::error::Result;
use crate::par;
use crate::point::Point2;
use crate::rng::{standard_normal_point, stream_rng};
use crate::schedule::NoiseSchedule;

/// A conditional ε-predictor ε(x_t, t, c). Implementations must be pure and
/// callable from multiple threads; `t` is a valid step index and `class_id`
/// is validated by the caller.
pub trait EpsPredictor: Sync {
    fn predict(&self, x_t: Point2, t: usize, class_id: usize) -> Point2;
}

impl<F> EpsPredictor for F
where
    F: Fn(Point2, usize, usize) -> Point2 + Sync,
{
    fn predict(&self, x_t: Point2, t: usize, class_id: usize) -> Point2 {
        self(x_t, t, class_id)
    }
}

/// Noise a clean sample to step `t` using the supplied ε draw.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    x0: Point2,
    t: usize,
    eps: Point2,
) -> Result<Point2> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    Ok(x0.scale(ab.sqrt()) + eps.scale((1.0 - ab).sqrt()))
}

/// Invert the forward map given a noise estimate:
/// x₀ ≈ (x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t.
pub fn predict_x0_from_eps(
    schedule: &NoiseSchedule,
    x_t: Point2,
    t: usize,
    eps_hat: Point2,
) -> Result<Point2> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    Ok((x_t - eps_hat.scale((1.0 - ab).sqrt())).scale(1.0 / ab.sqrt()))
}

/// One reverse transition x_t → x_{t−1}. The caller supplies the standard
/// normal `noise` draw; it is ignored at t = 1 where the posterior variance
/// vanishes and the final step is deterministic.
pub fn ancestral_step(
    schedule: &NoiseSchedule,
    eps_fn: &dyn EpsPredictor,
    x_t: Point2,
    t: usize,
    class_id: usize,
    noise: Point2,
) -> Result<Point2> {
    schedule.check_step(t)?;
    let beta = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    let eps_hat = eps_fn.predict(x_t, t, class_id);
    let mean = (x_t - eps_hat.scale(beta / (1.0 - ab).sqrt())).scale(1.0 / (1.0 - beta).sqrt());
    if t == 1 {
        return Ok(mean);
    }
    Ok(mean + noise.scale(schedule.posterior_std(t)))
}

/// Run the full reverse chain from x_T ~ N(0, I) down to x₀, `n` times.
/// Chains are independent; chain `i` draws from stream `i` of `rng_seed`, so
/// the output is deterministic in (inputs, seed) and identical whether the
/// chains run in parallel or sequentially. `n = 0` returns an empty list.
pub fn sample<P: EpsPredictor>(
    schedule: &NoiseSchedule,
    eps_fn: &P,
    class_id: usize,
    n: usize,
    rng_seed: u64,
) -> Vec<Point2> {
    par::map_indexed(n, |chain| {
        let mut rng = stream_rng(rng_seed, chain as u64);
        let mut x = standard_normal_point(&mut rng);
        for t in (1..=schedule.num_steps()).rev() {
            let noise = if t > 1 {
                standard_normal_point(&mut rng)
            } else {
                Point2::ZERO
            };
            x = ancestral_step(schedule, eps_fn, x, t, class_id, noise)
                .expect("t in 1..=T by construction");
        }
        x
    })
}

/// Closed-form optimal ε-predictor for isotropic Gaussian data N(mean, std²I):
/// ε*(x_t, t) = (x_t − √ᾱ_t·mean) · √(1−ᾱ_t) / (ᾱ_t·std² + 1 − ᾱ_t).
/// Ignores the conditioning class.
#[derive(Debug, Clone, Copy)]
pub struct GaussianOracle<'a> {
    pub schedule: &'a NoiseSchedule,
    pub mean: Point2,
    pub std: f64,
}

impl EpsPredictor for GaussianOracle<'_> {
    fn predict(&self, x_t: Point2, t: usize, _class_id: usize) -> Point2 {
        let ab = self.schedule.alpha_bar(t);
        let var_t = ab * self.std * self.std + 1.0 - ab;
        (x_t - self.mean.scale(ab.sqrt())).scale((1.0 - ab).sqrt() / var_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy() -> NoiseSchedule {
        NoiseSchedule::toy_default()
    }

    #[test]
    fn forward_identity_at_negligible_noise() {
        // alpha_bar -> 1 limit: a single near-zero beta leaves x0 untouched.
        let s = NoiseSchedule::linear(1, 1e-12, 1e-12).unwrap();
        let x0 = Point2::new(1.5, -2.0);
        let xt = forward_diffuse(&s, x0, 1, Point2::new(3.0, -3.0)).unwrap();
        assert!(xt.dist(x0) < 1e-5);
    }

    #[test]
    fn forward_hand_value() {
        // alpha_bar = 0.72 at t = 2 of the {0.1, 0.2} prefix.
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        let xt = forward_diffuse(&s, Point2::new(1.0, 0.0), 2, Point2::new(0.5, -0.5)).unwrap();
        assert!((xt.x - 1.113103).abs() < 1e-6);
        assert!((xt.y - (-0.264575)).abs() < 1e-6);
    }

    #[test]
    fn forward_zero_signal() {
        let s = toy();
        let eps = Point2::new(0.3, -0.7);
        for t in [1, 50, 100] {
            let xt = forward_diffuse(&s, Point2::ZERO, t, eps).unwrap();
            let scale = (1.0 - s.alpha_bar(t)).sqrt();
            assert!(xt.dist(eps.scale(scale)) < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_out_of_range_t() {
        let s = toy();
        assert!(forward_diffuse(&s, Point2::ZERO, 0, Point2::ZERO).is_err());
        assert!(forward_diffuse(&s, Point2::ZERO, 101, Point2::ZERO).is_err());
        assert!(predict_x0_from_eps(&s, Point2::ZERO, 0, Point2::ZERO).is_err());
    }

    #[test]
    fn predict_x0_inverts_forward() {
        let s = toy();
        let x0 = Point2::new(0.8, -1.4);
        let eps = Point2::new(-0.2, 1.1);
        for t in 1..=s.num_steps() {
            let xt = forward_diffuse(&s, x0, t, eps).unwrap();
            let rec = predict_x0_from_eps(&s, xt, t, eps).unwrap();
            assert!(rec.dist(x0) < 1e-9, "t={t}");
        }
    }

    #[test]
    fn predict_x0_hand_value_and_pure_rescale() {
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        let xt = Point2::new(1.113103, -0.264575);
        let rec = predict_x0_from_eps(&s, xt, 2, Point2::new(0.5, -0.5)).unwrap();
        assert!(rec.dist(Point2::new(1.0, 0.0)) < 1e-6);
        // eps_hat = 0 is a pure rescale by 1/sqrt(alpha_bar)
        let rec0 = predict_x0_from_eps(&s, xt, 2, Point2::ZERO).unwrap();
        assert!(rec0.dist(xt.scale(1.0 / 0.72f64.sqrt())) < 1e-15);
    }

    #[test]
    fn ancestral_step_single_step_inversion() {
        // T = 1: a perfect prediction recovers x0 exactly.
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        let x0 = Point2::new(-0.4, 2.2);
        let eps = Point2::new(0.9, -0.1);
        let xt = forward_diffuse(&s, x0, 1, eps).unwrap();
        let perfect = move |_x: Point2, _t: usize, _c: usize| eps;
        let out = ancestral_step(&s, &perfect, xt, 1, 0, Point2::ZERO).unwrap();
        assert!(out.dist(x0) < 1e-12);
    }

    #[test]
    fn ancestral_step_beta_to_zero_is_identity() {
        let s = NoiseSchedule::linear(3, 1e-12, 1e-12).unwrap();
        let zero_pred = |_x: Point2, _t: usize, _c: usize| Point2::ZERO;
        let x = Point2::new(1.0, -1.0);
        let out = ancestral_step(&s, &zero_pred, x, 2, 0, Point2::ZERO).unwrap();
        assert!(out.dist(x) < 1e-9);
    }

    #[test]
    fn sampler_is_deterministic_and_handles_n0() {
        let s = toy();
        let oracle = GaussianOracle {
            schedule: &s,
            mean: Point2::new(2.0, 0.0),
            std: 0.1,
        };
        let a = sample(&s, &oracle, 0, 16, 99);
        let b = sample(&s, &oracle, 0, 16, 99);
        assert_eq!(a, b);
        assert!(sample(&s, &oracle, 0, 0, 99).is_empty());
        // different seeds diverge
        let c = sample(&s, &oracle, 0, 16, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn forward_marginal_variance_matches_theory() {
        // Var(x_t) = alpha_bar * v + (1 - alpha_bar) for x0 with per-axis
        // variance v; checked at 3 standard errors with 10_000 draws.
        let s = toy();
        let v = 0.25;
        let n = 10_000;
        for t in [5, 50, 100] {
            let ab = s.alpha_bar(t);
            let expected = ab * v + (1.0 - ab);
            let mut rng = stream_rng(7, t as u64);
            let mut xs = Vec::with_capacity(n);
            for _ in 0..n {
                let x0 = Point2::new(
                    rng.sample::<f64, _>(StandardNormal) * v.sqrt(),
                    rng.sample::<f64, _>(StandardNormal) * v.sqrt(),
                );
                let eps = Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                xs.push(forward_diffuse(&s, x0, t, eps).unwrap().x);
            }
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            // SE of a sample variance of a normal: var * sqrt(2/(n-1))
            let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!(
                (var - expected).abs() < 3.0 * se,
                "t={t}: var={var} expected={expected}"
            );
        }
    }

    #[test]
    fn gaussian_oracle_chain_matches_data_distribution() {
        let s = toy();
        let target = Point2::new(2.0, 0.0);
        let oracle = GaussianOracle {
            schedule: &s,
            mean: target,
            std: 0.1,
        };
        let pts = sample(&s, &oracle, 0, 10_000, 1234);
        let n = pts.len() as f64;
        let mean = pts
            .iter()
            .fold(Point2::ZERO, |acc, p| acc + *p)
            .scale(1.0 / n);
        assert!(mean.dist(target) < 0.05, "mean={mean:?}");
        for axis in 0..2 {
            let get = |p: &Point2| if axis == 0 { p.x } else { p.y };
            let m = pts.iter().map(&get).sum::<f64>() / n;
            let std = (pts.iter().map(|p| (get(p) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(
                (std - 0.1).abs() < 0.015,
                "axis {axis}: std={std}, want within 15% of 0.1"
            );
        }
    }
}
