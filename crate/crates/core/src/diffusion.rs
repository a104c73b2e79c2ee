//! DDPM mathematics on latent vectors.
//!
//! Time steps are 1-based: `t ∈ 1..=T`, and table index `t − 1` holds the
//! values for step `t`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Beta endpoints of the reference 1000-step linear schedule.
pub const REFERENCE_BETA_START: f64 = 1e-4;
pub const REFERENCE_BETA_END: f64 = 0.02;
pub const REFERENCE_STEPS: usize = 1000;

/// Loss weight `λ_t = 1 / (k + SNR_t)^γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2Weighting {
    pub k: f64,
    pub gamma: f64,
}

impl Default for P2Weighting {
    fn default() -> Self {
        Self { k: 1.0, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    p2: P2Weighting,
}

impl DiffusionSchedule {
    /// Betas linearly interpolated from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(beta)
    }

    /// The reference linear schedule rescaled by `1000 / steps`, so that a
    /// short chain reaches roughly the same terminal `ᾱ_T` as the 1000-step one.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let (start, end) = scaled_linear_endpoints(steps);
        Self::linear(steps, start, end)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            p2: P2Weighting::default(),
        })
    }

    pub fn with_p2(mut self, p2: P2Weighting) -> Self {
        self.p2 = p2;
        self
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn p2(&self) -> P2Weighting {
        self.p2
    }

    fn index(&self, t: usize) -> Result<usize> {
        if (1..=self.steps()).contains(&t) {
            Ok(t - 1)
        } else {
            Err(Error::StepOutOfRange {
                t,
                steps: self.steps(),
            })
        }
    }

    /// One Markov step `x_t = √(1−β_t) x_{t−1} + √β_t ε`.
    pub fn forward_step(&self, x_prev: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let i = self.index(t)?;
        check_len("noise", x_prev.len(), eps.len())?;
        Ok(axpby(self.alpha[i].sqrt(), x_prev, self.beta[i].sqrt(), eps))
    }

    /// Closed-form jump `x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε`.
    pub fn diffuse_to(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let i = self.index(t)?;
        check_len("noise", x0.len(), eps.len())?;
        let ab = self.alpha_bar[i];
        Ok(axpby(ab.sqrt(), x0, (1.0 - ab).sqrt(), eps))
    }

    /// Reverse-process mean given a noise prediction:
    /// `μ = (x_t − (1−α_t)/√(1−ᾱ_t) · ε̂) / √α_t`.
    pub fn posterior_mean(&self, x_t: &[f64], t: usize, eps_pred: &[f64]) -> Result<Vec<f64>> {
        let i = self.index(t)?;
        check_len("noise prediction", x_t.len(), eps_pred.len())?;
        let inv_sqrt_alpha = 1.0 / self.alpha[i].sqrt();
        let eps_coef = self.beta[i] / (1.0 - self.alpha_bar[i]).sqrt();
        Ok(axpby(inv_sqrt_alpha, x_t, -inv_sqrt_alpha * eps_coef, eps_pred))
    }

    pub fn snr(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar[self.index(t)?];
        Ok(ab / (1.0 - ab))
    }

    pub fn p2_weight(&self, t: usize) -> Result<f64> {
        Ok((self.p2.k + self.snr(t)?).powf(-self.p2.gamma))
    }

    /// `λ_t · mean((ε̂ − ε)²)`.
    pub fn p2_loss(&self, eps_pred: &[f64], eps_true: &[f64], t: usize) -> Result<f64> {
        check_len("noise prediction", eps_true.len(), eps_pred.len())?;
        if eps_pred.is_empty() {
            return Err(Error::InvalidArgument("empty latent vector".into()));
        }
        let mse = eps_pred
            .iter()
            .zip(eps_true)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / eps_pred.len() as f64;
        Ok(self.p2_weight(t)? * mse)
    }

    /// Ancestral sampling of `n` chains of dimension `dim`.
    ///
    /// `x_T ~ N(0, I)`, then `x_{t−1} = μ(x_t, t) + √β_t z` with `z = 0` on the
    /// last step. All randomness comes from `rng` in a fixed order (initial
    /// draws chain by chain, then per step chain by chain), so a seeded
    /// generator reproduces the output exactly. Denoiser calls within one step
    /// run in parallel.
    pub fn sample<F, R>(&self, denoiser: F, rng: &mut R, n: usize, dim: usize) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&[f64], usize) -> Result<Vec<f64>> + Sync,
        R: Rng + ?Sized,
    {
        let mut xs: Vec<Vec<f64>> = (0..n).map(|_| standard_normal(rng, dim)).collect();
        for t in (1..=self.steps()).rev() {
            let sigma = self.beta[t - 1].sqrt();
            let preds = xs
                .par_iter()
                .map(|x| {
                    let eps = denoiser(x, t)?;
                    check_len("denoiser output", dim, eps.len())?;
                    Ok(eps)
                })
                .collect::<Result<Vec<_>>>()?;
            for (x, eps) in xs.iter_mut().zip(&preds) {
                let mut next = self.posterior_mean(x, t, eps)?;
                if t > 1 {
                    for v in next.iter_mut() {
                        *v += sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                *x = next;
            }
        }
        Ok(xs)
    }
}

/// Endpoints used by [`DiffusionSchedule::scaled_linear`].
pub fn scaled_linear_endpoints(steps: usize) -> (f64, f64) {
    let scale = REFERENCE_STEPS as f64 / steps.max(1) as f64;
    (
        (REFERENCE_BETA_START * scale).min(0.5),
        (REFERENCE_BETA_END * scale).min(0.999),
    )
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn axpby(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| a * x + b * y).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = DiffusionSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.beta(), &[0.5]);
        assert_eq!(s.alpha_bar(), &[0.5]);
    }

    #[test]
    fn golden_terminal_alpha_bar() {
        // 50-digit product: 0.13218275425061778970108589083420137848...
        let s = DiffusionSchedule::linear(200, 1e-4, 0.02).unwrap();
        assert_abs_diff_eq!(s.alpha_bar()[199], 0.132_182_754_250_617_79, epsilon = 1e-13);
        assert!(s.alpha_bar().windows(2).all(|w| w[1] < w[0]));
        assert_abs_diff_eq!(s.beta()[199], 0.02, epsilon = 1e-16);
    }

    #[test]
    fn invalid_schedules() {
        assert!(DiffusionSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(DiffusionSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(DiffusionSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(DiffusionSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(DiffusionSchedule::from_betas(vec![0.1, 0.0]).is_err());
    }

    #[test]
    fn scaled_linear_reaches_noise() {
        for steps in [50, 200, 1000] {
            let s = DiffusionSchedule::scaled_linear(steps).unwrap();
            assert!(s.alpha_bar()[steps - 1] < 1e-3, "T={steps}");
        }
        assert_eq!(scaled_linear_endpoints(1000), (1e-4, 0.02));
    }

    #[test]
    fn forward_step_cases() {
        // β = 0.19 on step 1 of a two-step schedule.
        let s = DiffusionSchedule::from_betas(vec![0.19, 0.5]).unwrap();
        let x = s.forward_step(&[1.0, 0.0], 1, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(x[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.19f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.435_889_894_354_067_4, epsilon = 1e-12);
        assert!(s.forward_step(&[1.0, 0.0], 0, &[0.0, 1.0]).is_err());
        assert!(s.forward_step(&[1.0, 0.0], 3, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn diffuse_to_cases() {
        let s = DiffusionSchedule::linear(10, 0.01, 0.2).unwrap();
        let ab = s.alpha_bar()[4];
        let from_zero = s.diffuse_to(&[0.0, 0.0], 5, &[1.0, -2.0]).unwrap();
        assert_abs_diff_eq!(from_zero[1], -2.0 * (1.0 - ab).sqrt(), epsilon = 1e-15);
        let no_noise = s.diffuse_to(&[3.0, 1.0], 5, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(no_noise[0], 3.0 * ab.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn posterior_mean_cases() {
        let s = DiffusionSchedule::from_betas(vec![0.19]).unwrap();
        let mu = s.posterior_mean(&[1.0], 1, &[1.0]).unwrap();
        assert_abs_diff_eq!(mu[0], 0.626_789_006_273_258_4, epsilon = 1e-12);
        let mu = s.posterior_mean(&[2.0], 1, &[0.0]).unwrap();
        assert_abs_diff_eq!(mu[0], 2.0 / 0.9, epsilon = 1e-12);
    }

    #[test]
    fn p2_loss_cases() {
        let s = DiffusionSchedule::from_betas(vec![0.5]).unwrap();
        assert_eq!(s.p2_weight(1).unwrap(), 0.5);
        let loss = s.p2_loss(&[1.0; 10], &[0.0; 10], 1).unwrap();
        assert_abs_diff_eq!(loss, 0.5, epsilon = 1e-15);
        assert_eq!(s.p2_loss(&[0.3; 4], &[0.3; 4], 1).unwrap(), 0.0);
        assert!(s.p2_loss(&[0.3; 4], &[0.3; 3], 1).is_err());
    }

    #[test]
    fn single_step_sampling_with_zero_denoiser() {
        let s = DiffusionSchedule::from_betas(vec![0.19]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = s.sample(|x, _| Ok(vec![0.0; x.len()]), &mut rng, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in &out {
            let x1 = standard_normal(&mut rng, 3);
            for (a, b) in x.iter().zip(&x1) {
                assert_abs_diff_eq!(*a, b / 0.9, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_propagates_errors() {
        let s = DiffusionSchedule::linear(20, 0.01, 0.1).unwrap();
        let den = |x: &[f64], t: usize| Ok(x.iter().map(|v| 0.1 * v * t as f64).collect());
        let a = s.sample(den, &mut ChaCha8Rng::seed_from_u64(9), 5, 4).unwrap();
        let b = s.sample(den, &mut ChaCha8Rng::seed_from_u64(9), 5, 4).unwrap();
        assert_eq!(a, b);
        let bad = |_: &[f64], _: usize| Ok(vec![0.0; 2]);
        assert!(s.sample(bad, &mut ChaCha8Rng::seed_from_u64(9), 2, 4).is_err());
    }
}
