//! Noise-prediction MLP and its training loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{noise_with, NoisePredictor, NoiseSchedule, PolicyObservation};
use crate::error::{Error, Result};

/// Demonstrations: per episode, one observation and one action per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDataset {
    pub horizon: usize,
    pub action_dim: usize,
    /// Length of `s` followed by `q`.
    pub obs_dim: usize,
    /// Length of the `q` tail of each observation.
    pub q_dim: usize,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl PolicyDataset {
    pub fn new(horizon: usize, action_dim: usize, obs_dim: usize, q_dim: usize) -> Self {
        Self {
            horizon,
            action_dim,
            obs_dim,
            q_dim,
            episodes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.action_dim == 0 || self.q_dim > self.obs_dim {
            return Err(Error::InvalidConfig("dataset needs a positive horizon and action dim, and q_dim <= obs_dim".into()));
        }
        for (i, e) in self.episodes.iter().enumerate() {
            if e.observations.len() != e.actions.len() {
                return Err(Error::DimensionMismatch(format!("episode {i}: {} observations, {} actions", e.observations.len(), e.actions.len())));
            }
            if e.observations.iter().any(|o| o.len() != self.obs_dim) || e.actions.iter().any(|a| a.len() != self.action_dim) {
                return Err(Error::DimensionMismatch(format!("episode {i} has records of the wrong width")));
            }
        }
        Ok(())
    }

    pub fn split(&self, obs: &[f64]) -> PolicyObservation {
        let n = self.obs_dim - self.q_dim;
        PolicyObservation {
            s: obs[..n].to_vec(),
            q: obs[n..].to_vec(),
        }
    }

    /// `(observation, action sequence)` pairs; sequences running past the end
    /// of an episode repeat its last action.
    pub fn samples(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for e in &self.episodes {
            for t in 0..e.actions.len() {
                let seq = (0..self.horizon).flat_map(|h| e.actions[(t + h).min(e.actions.len() - 1)].iter().copied()).collect();
                out.push((e.observations[t].clone(), seq));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub horizon: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub q_dim: usize,
    pub emb_dim: usize,
    pub layers: Vec<Dense>,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = if half > 1 { (-(10000f64.ln()) * i as f64 / (half - 1) as f64).exp() } else { 1.0 };
        out[i] = (k as f64 * f).sin();
        out[half + i] = (k as f64 * f).cos();
    }
    out
}

impl PolicyNet {
    pub fn new(horizon: usize, action_dim: usize, obs_dim: usize, q_dim: usize, emb_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let out = horizon * action_dim;
        let mut dims = vec![out + emb_dim + obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(out);
        let layers = dims
            .windows(2)
            .map(|d| {
                let a = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Dense {
                    w: DMatrix::from_fn(d[1], d[0], |_, _| rng.random_range(-a..a)),
                    b: DVector::zeros(d[1]),
                }
            })
            .collect();
        Self {
            horizon,
            action_dim,
            obs_dim,
            q_dim,
            emb_dim,
            layers,
            obs_mean: vec![0.0; obs_dim],
            obs_std: vec![1.0; obs_dim],
        }
    }

    pub fn action_len(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn input_column(&self, a_k: &[f64], k: usize, obs: &[f64], col: &mut [f64]) {
        let n = self.action_len();
        col[..n].copy_from_slice(a_k);
        col[n..n + self.emb_dim].copy_from_slice(&step_embedding(k, self.emb_dim));
        for (i, v) in obs.iter().enumerate() {
            col[n + self.emb_dim + i] = (v - self.obs_mean[i]) / self.obs_std[i];
        }
    }

    /// Pre-activations and activations of every layer for a batch of columns.
    fn forward(&self, x: DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = vec![x];
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * act.last().expect("input present");
            for mut c in z.column_iter_mut() {
                c += &l.b;
            }
            let a = if li + 1 < self.layers.len() { z.map(silu) } else { z.clone() };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

impl NoisePredictor for PolicyNet {
    fn predict(&self, a_k: &[f64], k: usize, obs: &PolicyObservation) -> Vec<f64> {
        let flat = obs.flat();
        let mut col = vec![0.0; self.action_len() + self.emb_dim + self.obs_dim];
        self.input_column(a_k, k, &flat, &mut col);
        let (_, act) = self.forward(DMatrix::from_column_slice(col.len(), 1, &col));
        act.last().expect("output present").as_slice().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub emb_dim: usize,
    pub seed: u64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 256,
            lr: 1e-2,
            hidden: vec![256, 256],
            emb_dim: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub net: PolicyNet,
    /// Minibatch loss of every step.
    pub losses: Vec<f64>,
}

/// Minibatch MSE between sampled and predicted noise, optimized with Adam.
pub fn train_policy(dataset: &PolicyDataset, sched: &NoiseSchedule, cfg: &PolicyTrainConfig) -> Result<TrainedPolicy> {
    dataset.validate()?;
    let samples = dataset.samples();
    if samples.is_empty() {
        return Err(Error::InvalidConfig("policy training needs a nonempty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.emb_dim % 2 != 0 {
        return Err(Error::InvalidConfig("batch_size must be positive and emb_dim even".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyNet::new(dataset.horizon, dataset.action_dim, dataset.obs_dim, dataset.q_dim, cfg.emb_dim, &cfg.hidden, &mut rng);
    let n = samples.len() as f64;
    for d in 0..dataset.obs_dim {
        let mean = samples.iter().map(|s| s.0[d]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.0[d] - mean).powi(2)).sum::<f64>() / n;
        net.obs_mean[d] = mean;
        net.obs_std[d] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
    }

    let len = net.action_len();
    let in_dim = len + net.emb_dim + net.obs_dim;
    let b = cfg.batch_size;
    let mut m: Vec<f64> = vec![0.0; net.param_count()];
    let mut v: Vec<f64> = vec![0.0; net.param_count()];
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut x = DMatrix::zeros(in_dim, b);
    let mut eps = DMatrix::zeros(len, b);
    for step in 0..cfg.steps {
        for j in 0..b {
            let (obs, a0) = &samples[rng.random_range(0..samples.len())];
            let k = rng.random_range(1..=sched.steps);
            let e: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let a_k = noise_with(a0, &e, sched.alpha_bar[k - 1]);
            let mut col = vec![0.0; in_dim];
            net.input_column(&a_k, k, obs, &mut col);
            x.column_mut(j).copy_from_slice(&col);
            eps.column_mut(j).copy_from_slice(&e);
        }
        let (pre, act) = net.forward(x.clone());
        let diff = act.last().expect("output present") - &eps;
        let loss = diff.norm_squared() / (len * b) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { term: "policy loss", step });
        }
        losses.push(loss);

        // Backward pass.
        let mut g = diff * (2.0 / (len * b) as f64);
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(net.layers.len());
        for li in (0..net.layers.len()).rev() {
            if li + 1 < net.layers.len() {
                g.zip_apply(&pre[li], |gv, z| *gv *= silu_grad(z));
            }
            let gw = &g * act[li].transpose();
            let gb = g.column_sum();
            if li > 0 {
                g = net.layers[li].w.transpose() * &g;
            }
            grads.push((gw, gb));
        }
        grads.reverse();

        // Adam.
        let t = (step + 1) as i32;
        let (b1, b2) = (0.9f64, 0.999f64);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        // Cosine decay to zero over the run.
        let lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        let mut off = 0;
        for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads) {
            for (p, gv) in layer.w.iter_mut().chain(layer.b.iter_mut()).zip(gw.iter().chain(gb.iter())) {
                m[off] = b1 * m[off] + (1.0 - b1) * gv;
                v[off] = b2 * v[off] + (1.0 - b2) * gv * gv;
                *p -= lr * (m[off] / c1) / ((v[off] / c2).sqrt() + 1e-8);
                off += 1;
            }
        }
    }
    Ok(TrainedPolicy { net, losses })
}
