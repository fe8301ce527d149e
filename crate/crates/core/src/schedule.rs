//! Discrete-time variance schedule.
//!
//! A `NoiseSchedule` holds `T` variance increments β_t ∈ (0,1) for steps
//! t = 1..T together with the cumulative signal coefficients
//! ᾱ_t = ∏_{s≤t}(1−β_s). The convention ᾱ_0 = 1 makes t = 0 mean clean data,
//! so `alpha_bar` accepts t ∈ 0..=T while β accessors require t ∈ 1..=T.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

/// Serializable description of a linear schedule. Derived arrays are
/// recomputed on load, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDescriptor {
    #[serde(rename = "T")]
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl NoiseSchedule {
    /// Linear β schedule, endpoints included.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::InvalidSchedule("num_steps must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = if num_steps == 1 {
            vec![beta_start]
        } else {
            (0..num_steps)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                })
                .collect()
        };
        let mut alphas_bar = Vec::with_capacity(num_steps);
        let mut prod = 1.0;
        for &beta in &betas {
            prod *= 1.0 - beta;
            alphas_bar.push(prod);
        }
        Ok(NoiseSchedule {
            num_steps,
            beta_start,
            beta_end,
            betas,
            alphas_bar,
        })
    }

    /// Default toy schedule: T = 100, β from 1e-4 to 0.05.
    pub fn toy_default() -> Self {
        NoiseSchedule::linear(100, 1e-4, 0.05).expect("valid default schedule")
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps {
            return Err(Error::StepOutOfRange {
                t,
                num_steps: self.num_steps,
            });
        }
        Ok(())
    }

    /// β_t for t ∈ 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for t ∈ 0..=T, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    /// Reverse-process standard deviation at step t:
    /// sqrt(β_t · (1−ᾱ_{t−1}) / (1−ᾱ_t)). Zero at t = 1 because ᾱ_0 = 1,
    /// so the final denoising step is deterministic.
    pub fn posterior_std(&self, t: usize) -> f64 {
        let var = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        var.sqrt()
    }

    pub fn descriptor(&self) -> ScheduleDescriptor {
        ScheduleDescriptor {
            num_steps: self.num_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }
}

impl TryFrom<ScheduleDescriptor> for NoiseSchedule {
    type Error = Error;
    fn try_from(d: ScheduleDescriptor) -> Result<Self> {
        NoiseSchedule::linear(d.num_steps, d.beta_start, d.beta_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_product() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.beta(1), 0.1);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn cumulative_product_by_hand() {
        // betas {0.1, 0.2, 0.3, 0.4} -> alphas_bar {0.9, 0.72, 0.504, 0.3024}
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        let expected = [0.9, 0.72, 0.504, 0.3024];
        for (t, want) in expected.iter().enumerate() {
            assert!((s.alpha_bar(t + 1) - want).abs() < 1e-12, "t={}", t + 1);
        }
    }

    #[test]
    fn constant_schedule() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert!((s.alpha_bar(1) - 0.5).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
    }

    #[test]
    fn alpha_bar_recurrence_and_monotonicity() {
        let s = NoiseSchedule::toy_default();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=s.num_steps() {
            let recurrence = s.alpha_bar(t - 1) * (1.0 - s.beta(t));
            assert!((s.alpha_bar(t) - recurrence).abs() < 1e-15);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
        }
    }

    #[test]
    fn posterior_std_zero_at_final_step() {
        let s = NoiseSchedule::toy_default();
        assert_eq!(s.posterior_std(1), 0.0);
        assert!(s.posterior_std(2) > 0.0);
    }

    #[test]
    fn descriptor_round_trip() {
        let s = NoiseSchedule::linear(37, 2e-4, 0.07).unwrap();
        let json = serde_json::to_string(&s.descriptor()).unwrap();
        assert!(json.contains("\"T\":37"));
        let d: ScheduleDescriptor = serde_json::from_str(&json).unwrap();
        let s2 = NoiseSchedule::try_from(d).unwrap();
        assert_eq!(s, s2);
    }
}
