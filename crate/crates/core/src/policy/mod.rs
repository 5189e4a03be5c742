//! Conditional DDPM action policy and the planar manipulation testbed.

pub mod net;
pub mod rollout;
pub mod sim;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use net::{train_policy, PolicyNet, PolicyTrainConfig};
pub use rollout::{ObsSource, RolloutOutcome};
pub use sim::{scripted_expert, SimState, TaskKind};

/// Largest per-step noise variance.
pub const BETA_MAX: f64 = 0.999;

/// DDPM coefficient tables. Entry `k - 1` belongs to diffusion step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// `1 - alpha_bar`.
    pub beta_bar: Vec<f64>,
    /// Reverse-step scale `1 / sqrt(1 - beta_k)`.
    pub alpha: Vec<f64>,
    /// Reverse-step noise-prediction weight `beta_k / sqrt(1 - alpha_bar_k)`.
    pub gamma: Vec<f64>,
    /// Reverse-step noise standard deviation (posterior variance); zero at `k = 1`.
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine schedule with offset `s = 0.008`.
    pub fn cosine(steps: usize) -> Self {
        let s = 0.008;
        let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let betas = (1..=steps).map(|k| (1.0 - f(k as f64) / f(k as f64 - 1.0)).min(BETA_MAX)).collect();
        Self::from_betas(betas).expect("cosine betas lie in (0, 1)")
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidConfig("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let beta_bar: Vec<f64> = alpha_bar.iter().map(|a| 1.0 - a).collect();
        let alpha = beta.iter().map(|b| 1.0 / (1.0 - b).sqrt()).collect();
        let gamma = beta.iter().zip(&beta_bar).map(|(b, bb)| b / bb.sqrt()).collect();
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 0.0 } else { beta_bar[i - 1] };
                (beta[i] * prev / beta_bar[i]).sqrt()
            })
            .collect();
        Ok(Self {
            steps: beta.len(),
            beta,
            alpha_bar,
            beta_bar,
            alpha,
            gamma,
            sigma,
        })
    }

    fn index(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.steps {
            return Err(Error::Domain(format!("diffusion step {k} outside 1..={}", self.steps)));
        }
        Ok(k - 1)
    }
}

/// `sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps`.
pub fn forward_noise(a0: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = sched.index(k)?;
    if a0.len() != eps.len() {
        return Err(Error::DimensionMismatch(format!("action {} vs noise {}", a0.len(), eps.len())));
    }
    Ok(noise_with(a0, eps, sched.alpha_bar[i]))
}

fn noise_with(a0: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    a0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// Inverts [`forward_noise`] given the noise.
pub fn predict_a0(a_k: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = sched.index(k)?;
    let (a, b) = (sched.alpha_bar[i].sqrt(), sched.beta_bar[i].sqrt());
    Ok(a_k.iter().zip(eps).map(|(x, e)| (x - b * e) / a).collect())
}

/// Conditioning of the policy: object-centric feature `s` and robot state `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyObservation {
    pub s: Vec<f64>,
    pub q: Vec<f64>,
}

impl PolicyObservation {
    pub fn flat(&self) -> Vec<f64> {
        self.s.iter().chain(&self.q).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.s.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

/// Noise-prediction network `eps(a_k, k, s, q)`.
pub trait NoisePredictor {
    fn predict(&self, a_k: &[f64], k: usize, obs: &PolicyObservation) -> Vec<f64>;
}

impl<F: Fn(&[f64], usize, &PolicyObservation) -> Vec<f64>> NoisePredictor for F {
    fn predict(&self, a_k: &[f64], k: usize, obs: &PolicyObservation) -> Vec<f64> {
        self(a_k, k, obs)
    }
}

/// One reverse step: `alpha_k (a_k - gamma_k eps) + sigma_k z`.
pub fn denoise_step(a_k: &[f64], k: usize, obs: &PolicyObservation, net: &impl NoisePredictor, sched: &NoiseSchedule, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let i = sched.index(k)?;
    let eps = net.predict(a_k, k, obs);
    if eps.len() != a_k.len() {
        return Err(Error::DimensionMismatch(format!("predicted noise {} for action {}", eps.len(), a_k.len())));
    }
    let (alpha, gamma, sigma) = (sched.alpha[i], sched.gamma[i], sched.sigma[i]);
    Ok(a_k
        .iter()
        .zip(&eps)
        .map(|(a, e)| {
            let mean = alpha * (a - gamma * e);
            if sigma > 0.0 {
                mean + sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                mean
            }
        })
        .collect())
}

/// Full reverse pass from standard normal noise.
pub fn sample_actions(net: &impl NoisePredictor, sched: &NoiseSchedule, obs: &PolicyObservation, len: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut a: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    for k in (1..=sched.steps).rev() {
        a = denoise_step(&a, k, obs, net, sched, rng)?;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs() -> PolicyObservation {
        PolicyObservation { s: vec![0.1, 0.2], q: vec![0.3] }
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = NoiseSchedule::cosine(100);
        assert_eq!(s.steps, 100);
        assert!(s.alpha_bar[0] > 0.99 && s.alpha_bar[0] < 1.0);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar.iter().all(|a| *a > 0.0 && *a <= 1.0));
        assert_eq!(s.sigma[0], 0.0);
        assert!(s.sigma[1..].iter().all(|v| *v > 0.0));
        for i in 0..100 {
            assert!((s.alpha_bar[i] + s.beta_bar[i] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_noise_examples() {
        let sched = NoiseSchedule::from_betas(vec![0.75, 0.5]).unwrap();
        assert_eq!(sched.alpha_bar[0], 0.25);
        let v = forward_noise(&[1.0], 1, &[1.0], &sched).unwrap();
        assert!((v[0] - (0.5 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((v[0] - 1.3660254037844386).abs() < 1e-12);
        assert_eq!(noise_with(&[0.7, -0.2], &[5.0, 6.0], 1.0), vec![0.7, -0.2]);
        assert_eq!(noise_with(&[0.7, -0.2], &[5.0, 6.0], 0.0), vec![5.0, 6.0]);
        assert!(forward_noise(&[1.0], 0, &[1.0], &sched).is_err());
        assert!(forward_noise(&[1.0], 3, &[1.0], &sched).is_err());
    }

    #[test]
    fn zero_prediction_scales_by_alpha() {
        let sched = NoiseSchedule::cosine(100);
        let zero = |a: &[f64], _: usize, _: &PolicyObservation| vec![0.0; a.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = [0.4, -1.2, 2.0];
        let out = denoise_step(&a, 1, &obs(), &zero, &sched, &mut rng).unwrap();
        for (o, x) in out.iter().zip(&a) {
            assert!((o - sched.alpha[0] * x).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_denoiser_recovers_target() {
        let sched = NoiseSchedule::cosine(100);
        let target = vec![0.3, -0.7, 0.05, 0.9];
        let t = target.clone();
        let s = sched.clone();
        let exact = move |a: &[f64], k: usize, _: &PolicyObservation| {
            let (ab, bb) = (s.alpha_bar[k - 1], s.beta_bar[k - 1]);
            a.iter().zip(&t).map(|(x, x0)| (x - ab.sqrt() * x0) / bb.sqrt()).collect::<Vec<_>>()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = sample_actions(&exact, &sched, &obs(), 4, &mut rng).unwrap();
        for (o, x) in out.iter().zip(&target) {
            assert!((o - x).abs() < 1e-2, "{out:?}");
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_actions(&exact, &sched, &obs(), 4, &mut rng2).unwrap(), out);
    }
}
