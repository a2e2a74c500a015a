//! Clipped-surrogate policy optimisation over rollouts of an [`Environment`].

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Episode, SupervisoryAction, ACTION_DIM};
use crate::error::{Error, Result};
use crate::policy::{mlp_backward, mlp_forward, NetShape, PolicyParameters};
use crate::scalar::Real;

/// Episodic environment with vector observations and actions in [-1, 1].
pub trait Environment<T> {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Bounds used to min-max normalise observations, stored with the policy.
    fn obs_bounds(&self) -> Vec<T>;
    fn reset(&mut self, seed: u64) -> Result<Vec<T>>;
    /// Returns (observation, reward, done).
    fn step(&mut self, action: &[T]) -> Result<(Vec<T>, T, bool)>;
}

impl<T: Real> Environment<T> for Episode<T> {
    fn obs_dim(&self) -> usize {
        crate::env::OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACTION_DIM
    }

    fn obs_bounds(&self) -> Vec<T> {
        crate::env::observation_bounds(self.config()).to_vec()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<T>> {
        Ok(Episode::reset(self, seed)?.0.to_vec())
    }

    fn step(&mut self, action: &[T]) -> Result<(Vec<T>, T, bool)> {
        if action.len() != ACTION_DIM {
            return Err(Error::Contract(format!("action has {} components", action.len())));
        }
        let r = Episode::step(self, &SupervisoryAction([action[0], action[1], action[2]]))?;
        Ok((r.observation.0.to_vec(), r.reward, r.done))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlHyperparams<T> {
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    /// Transitions collected per update.
    pub steps: usize,
    pub clip_ratio: T,
    pub gamma: T,
    pub gae_lambda: T,
    pub entropy_coef: T,
    pub value_coef: T,
    pub max_grad_norm: T,
    /// Multiplies rewards before advantage estimation; value targets live on this scale.
    pub reward_scale: T,
    pub init_log_std: T,
    pub hidden: Vec<usize>,
}

impl<T: Real> Default for RlHyperparams<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(3e-4),
            batch_size: 64,
            epochs: 10,
            steps: 2048,
            clip_ratio: T::lit(0.2),
            gamma: T::lit(0.99),
            gae_lambda: T::lit(0.95),
            entropy_coef: T::zero(),
            value_coef: T::lit(0.5),
            max_grad_norm: T::lit(0.5),
            reward_scale: T::one(),
            init_log_std: T::zero(),
            hidden: vec![128, 128],
        }
    }
}

impl<T: Real> RlHyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("rl: {m}")));
        if !(self.gamma > T::zero() && self.gamma <= T::one()) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.gae_lambda >= T::zero() && self.gae_lambda <= T::one()) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_ratio > T::zero()) {
            return bad(format!("clip_ratio must be positive, got {}", self.clip_ratio));
        }
        if !(self.learning_rate > T::zero()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.steps == 0 || self.epochs == 0 {
            return bad("batch_size, steps and epochs must be >= 1".into());
        }
        if self.batch_size > self.steps {
            return bad(format!("batch_size {} exceeds steps {}", self.batch_size, self.steps));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be nonempty and positive".into());
        }
        for (n, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v >= T::zero()) || !v.is_finite() {
                return bad(format!("{n} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Transitions gathered between two updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer<T> {
    pub observations: Vec<Vec<T>>,
    /// Pre-squash Gaussian samples; the executed action is `tanh` of these.
    pub actions: Vec<Vec<T>>,
    pub log_probs: Vec<T>,
    pub rewards: Vec<T>,
    pub values: Vec<T>,
    pub dones: Vec<bool>,
}

impl<T: Real> RolloutBuffer<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if [self.observations.len(), self.actions.len(), self.log_probs.len(), self.values.len(), self.dones.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Contract("rollout buffer sequences differ in length".into()));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Contract("non-finite reward in rollout buffer".into()));
        }
        Ok(())
    }
}

/// Generalised advantage estimates and returns. `last_value` bootstraps the
/// step after the final transition when it is not terminal.
pub fn gae<T: Real>(rewards: &[T], values: &[T], dones: &[bool], last_value: T, gamma: T, lambda: T) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must have equal length");
    let mut adv = vec![T::zero(); n];
    let mut next_adv = T::zero();
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (adv, ret)
}

/// Zero mean, unit (population) variance.
pub fn normalize_advantages<T: Real>(adv: &mut [T]) {
    if adv.is_empty() {
        return;
    }
    let n = T::from_usize_lossy(adv.len());
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|a| (*a - mean) * (*a - mean)).sum::<T>() / n;
    let std = var.sqrt() + T::lit(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

fn half_log_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Log-density of the squashed action `tanh(z)` where `z ~ N(mean, exp(log_std))`.
pub fn log_prob<T: Real>(pre_mean: &[T], log_std: &[T], z: &[T]) -> T {
    let mut lp = T::zero();
    for ((m, ls), zi) in pre_mean.iter().zip(log_std).zip(z) {
        let u = (*zi - *m) / ls.exp();
        let t = zi.tanh();
        lp += -T::lit(0.5) * u * u - *ls - half_log_two_pi::<T>() - (T::one() - t * t + T::lit(1e-6)).ln();
    }
    lp
}

/// Entropy of the (unsquashed) diagonal Gaussian.
pub fn gaussian_entropy<T: Real>(log_std: &[T]) -> T {
    log_std.iter().map(|ls| *ls + T::lit(0.5) + half_log_two_pi::<T>()).sum()
}

/// Per-sample clipped surrogate `min(rho A, clip(rho, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate<T: Real>(ratio: T, advantage: T, clip: T) -> T {
    let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    /// Negated mean clipped surrogate.
    pub policy: T,
    /// Mean squared value error.
    pub value: T,
    pub entropy: T,
    pub total: T,
    pub approx_kl: T,
    pub clip_fraction: T,
}

/// Weights of the three loss terms; zeroing two isolates the third.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub policy: T,
    pub value: T,
    pub entropy: T,
}

/// One minibatch view used by the loss.
pub struct Minibatch<'a, T> {
    pub observations: Vec<&'a [T]>,
    pub actions: Vec<&'a [T]>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

/// Loss `w_p * policy + w_v * value - w_e * entropy` and its gradient with
/// respect to the flat parameter vector.
pub fn loss_and_grad<T: Real>(
    params: &PolicyParameters<T>,
    batch: &Minibatch<'_, T>,
    clip: T,
    w: LossWeights<T>,
) -> (LossParts<T>, Vec<T>) {
    let data = params.flat();
    let mut grad = vec![T::zero(); data.len()];
    let actor = params.actor_layers();
    let critic = params.critic_layers();
    let log_std = params.log_std().to_vec();
    let ls_offset = params.layout().iter().find(|s| s.name == "log_std").expect("log_std block").offset;
    let n = batch.observations.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut parts = LossParts::<T>::default();
    let mut clipped_count = 0usize;
    let mut trace = Vec::new();

    for i in 0..n {
        let obs = batch.observations[i];
        let z = batch.actions[i];
        let adv = batch.advantages[i];

        trace.clear();
        let mean = mlp_forward(data, &actor, obs, Some(&mut trace));
        let lp = log_prob(&mean, &log_std, z);
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let surr = clipped_surrogate(ratio, adv, clip);
        parts.policy -= surr * inv_n;
        let log_ratio = lp - batch.old_log_probs[i];
        parts.approx_kl += ((ratio - T::one()) - log_ratio) * inv_n;
        if (ratio - T::one()).abs() > clip {
            clipped_count += 1;
        }
        // d(-surr)/d(lp): only the unclipped branch carries gradient.
        let d_lp = if ratio * adv <= clipped_surrogate(ratio, adv, clip) { -(ratio * adv) * inv_n * w.policy } else { T::zero() };
        if d_lp != T::zero() {
            let mut d_mean = vec![T::zero(); mean.len()];
            for j in 0..mean.len() {
                let var = (log_std[j] + log_std[j]).exp();
                let diff = z[j] - mean[j];
                d_mean[j] = d_lp * diff / var;
                grad[ls_offset + j] += d_lp * (diff * diff / var - T::one());
            }
            mlp_backward(data, &mut grad, &actor, &trace, &d_mean);
        }

        trace.clear();
        let v = mlp_forward(data, &critic, obs, Some(&mut trace))[0];
        let err = v - batch.returns[i];
        parts.value += err * err * inv_n;
        if w.value != T::zero() {
            let d_v = T::lit(2.0) * err * inv_n * w.value;
            mlp_backward(data, &mut grad, &critic, &trace, &[d_v]);
        }
    }

    parts.entropy = gaussian_entropy(&log_std);
    for j in 0..log_std.len() {
        grad[ls_offset + j] -= w.entropy;
    }
    parts.total = w.policy * parts.policy + w.value * parts.value - w.entropy * parts.entropy;
    parts.clip_fraction = T::from_usize_lossy(clipped_count) * inv_n;
    (parts, grad)
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<T: Real>(grad: &mut [T], max_norm: T) -> T {
    let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
    if max_norm > T::zero() && norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Runs `epochs` passes of shuffled minibatch updates over `buffer`.
pub fn ppo_update<T: Real>(
    params: &mut PolicyParameters<T>,
    optimizer: &mut Adam<T>,
    buffer: &RolloutBuffer<T>,
    last_value: T,
    hp: &RlHyperparams<T>,
    rng: &mut impl Rng,
) -> Result<LossParts<T>> {
    buffer.check()?;
    if buffer.is_empty() {
        return Ok(LossParts::default());
    }
    let rewards: Vec<T> = buffer.rewards.iter().map(|r| *r * hp.reward_scale).collect();
    let (mut adv, returns) = gae(&rewards, &buffer.values, &buffer.dones, last_value, hp.gamma, hp.gae_lambda);
    normalize_advantages(&mut adv);
    let weights = LossWeights { policy: T::one(), value: hp.value_coef, entropy: hp.entropy_coef };
    let mut idx: Vec<usize> = (0..buffer.len()).collect();
    let mut sum = LossParts::<T>::default();
    let mut batches = 0usize;
    for epoch in 0..hp.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(hp.batch_size) {
            let mb = Minibatch {
                observations: chunk.iter().map(|&i| buffer.observations[i].as_slice()).collect(),
                actions: chunk.iter().map(|&i| buffer.actions[i].as_slice()).collect(),
                old_log_probs: chunk.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: chunk.iter().map(|&i| adv[i]).collect(),
                returns: chunk.iter().map(|&i| returns[i]).collect(),
            };
            let (parts, mut grad) = loss_and_grad(params, &mb, hp.clip_ratio, weights);
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}, batch {batches}: policy {} value {} entropy {}",
                    parts.policy, parts.value, parts.entropy
                )));
            }
            clip_grad_norm(&mut grad, hp.max_grad_norm);
            optimizer.step(params.flat_mut(), &grad);
            sum.policy += parts.policy;
            sum.value += parts.value;
            sum.entropy += parts.entropy;
            sum.total += parts.total;
            sum.approx_kl += parts.approx_kl;
            sum.clip_fraction += parts.clip_fraction;
            batches += 1;
        }
    }
    let k = T::from_usize_lossy(batches);
    Ok(LossParts {
        policy: sum.policy / k,
        value: sum.value / k,
        entropy: sum.entropy / k,
        total: sum.total / k,
        approx_kl: sum.approx_kl / k,
        clip_fraction: sum.clip_fraction / k,
    })
}

/// Samples a pre-squash action and its log-probability.
pub fn sample_action<T: Real>(pre_mean: &[T], log_std: &[T], rng: &mut impl Rng) -> (Vec<T>, T) {
    let z: Vec<T> = pre_mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let e: f64 = rng.sample(StandardNormal);
            *m + ls.exp() * T::lit(e)
        })
        .collect();
    let lp = log_prob(pre_mean, log_std, &z);
    (z, lp)
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow<T> {
    pub update: usize,
    pub episodes: usize,
    /// Mean return of the (up to) ten most recently completed episodes.
    pub mean_episode_reward: T,
    pub loss: LossParts<T>,
}

pub const CURVE_HEADER: &str = "update,episodes,mean_episode_reward,policy_loss,value_loss,entropy,approx_kl,clip_fraction";

impl<T: Real> CurveRow<T> {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.update,
            self.episodes,
            self.mean_episode_reward,
            self.loss.policy,
            self.loss.value,
            self.loss.entropy,
            self.loss.approx_kl,
            self.loss.clip_fraction
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: PolicyParameters<T>,
    pub curve: Vec<CurveRow<T>>,
}

const RETURN_WINDOW: usize = 10;

/// Alternates rollout collection and [`ppo_update`] until `episodes`
/// episodes have completed. Reproducible given `seed`.
pub fn train<T: Real, E: Environment<T>>(env: &mut E, hp: &RlHyperparams<T>, episodes: usize, seed: u64) -> Result<TrainOutcome<T>> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetShape::new(env.obs_dim(), &hp.hidden, env.act_dim());
    let mut params = PolicyParameters::init(shape, hp.init_log_std, &env.obs_bounds(), &mut rng)?;
    let mut optimizer = Adam::new(params.flat().len(), hp.learning_rate);
    let mut curve = Vec::new();
    if episodes == 0 {
        return Ok(TrainOutcome { params, curve });
    }

    let mut completed = 0usize;
    let mut recent: Vec<T> = Vec::new();
    let mut obs = env.reset(rng.next_u64())?;
    let mut ep_return = T::zero();
    while completed < episodes {
        let mut buf = RolloutBuffer::default();
        let mut last_value = T::zero();
        for _ in 0..hp.steps {
            let out = params.forward(&obs)?;
            let (z, lp) = sample_action(&out.pre_mean, &out.log_std, &mut rng);
            let action: Vec<T> = z.iter().map(|v| v.tanh()).collect();
            let (next, r, done) = env.step(&action)?;
            buf.observations.push(obs);
            buf.actions.push(z);
            buf.log_probs.push(lp);
            buf.rewards.push(r);
            buf.values.push(out.value);
            buf.dones.push(done);
            ep_return += r;
            if done {
                completed += 1;
                recent.push(ep_return);
                if recent.len() > RETURN_WINDOW {
                    recent.remove(0);
                }
                ep_return = T::zero();
                if completed >= episodes {
                    obs = next;
                    break;
                }
                obs = env.reset(rng.next_u64())?;
            } else {
                obs = next;
            }
        }
        if !buf.dones.last().copied().unwrap_or(true) {
            last_value = params.forward(&obs)?.value;
        }
        let loss = ppo_update(&mut params, &mut optimizer, &buf, last_value, hp, &mut rng)?;
        let mean = if recent.is_empty() {
            T::nan()
        } else {
            recent.iter().copied().sum::<T>() / T::from_usize_lossy(recent.len())
        };
        log::debug!("update {} episodes {completed} mean reward {mean}", curve.len());
        curve.push(CurveRow { update: curve.len(), episodes: completed, mean_episode_reward: mean, loss });
    }
    Ok(TrainOutcome { params, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    /// O(T^2) direct summation of the lambda-weighted TD residuals.
    fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let value_at = |k: usize| if k < n { v[k] } else { last };
        let delta: Vec<f64> = (0..n).map(|k| r[k] + if d[k] { 0.0 } else { g * value_at(k + 1) } - v[k]).collect();
        (0..n)
            .map(|t| {
                let mut s = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    s += w * delta[k];
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                s
            })
            .collect()
    }

    #[test]
    fn gae_examples() {
        let (a, r) = gae(&[1.0f64], &[0.0], &[true], 5.0, 0.99, 0.95);
        assert_eq!((a[0], r[0]), (1.0, 1.0));
        let rw = [1.0, -2.0, 0.5];
        let vs = [0.3, 0.1, -0.4];
        let (a, _) = gae(&rw, &vs, &[false, false, false], 2.0, 0.0, 0.95);
        for i in 0..3 {
            assert_eq!(a[i], rw[i] - vs[i]);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0f64, 2.5, 0.2), 2.5);
        assert!((clipped_surrogate(1.5f64, 2.0, 0.2) - 1.2 * 2.0).abs() < 1e-15);
        assert!((clipped_surrogate(0.5f64, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn advantage_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a: Vec<f64> = (0..500).map(|_| rng.random_range(-30.0..80.0)).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-8);
        assert!((var - 1.0).abs() < 1e-6);
    }

    fn small_batch(params: &PolicyParameters<f64>, seed: u64, shift: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = Vec::new();
        let mut acts = Vec::new();
        let mut old = Vec::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        for _ in 0..8 {
            let o: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = params.forward(&o).unwrap();
            let (z, lp) = sample_action(&out.pre_mean, &out.log_std, &mut rng);
            obs.push(o);
            acts.push(z);
            old.push(if shift > 0.0 { lp + rng.random_range(-shift..shift) } else { lp });
            adv.push(rng.random_range(-2.0..2.0));
            ret.push(rng.random_range(-3.0..3.0));
        }
        (obs, acts, old, adv, ret)
    }

    fn check_gradient(w: LossWeights<f64>, shift: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = NetShape::new(12, &[4, 4], 3);
        let n = shape.param_count();
        let mut params = PolicyParameters::from_flat(shape, (0..n).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
        params.block_mut("log_std").copy_from_slice(&[-0.3, 0.1, -0.6]);
        let (obs, acts, old, adv, ret) = small_batch(&params, seed + 1, shift);
        let mb = Minibatch {
            observations: obs.iter().map(|v| v.as_slice()).collect(),
            actions: acts.iter().map(|v| v.as_slice()).collect(),
            old_log_probs: old.clone(),
            advantages: adv.clone(),
            returns: ret.clone(),
        };
        let (_, grad) = loss_and_grad(&params, &mb, 0.2, w);
        let h = 1e-5;
        let mut checked = 0;
        for i in 0..n {
            let mut p = params.clone();
            p.flat_mut()[i] += h;
            let up = loss_and_grad(&p, &mb, 0.2, w).0.total;
            p.flat_mut()[i] -= 2.0 * h;
            let down = loss_and_grad(&p, &mb, 0.2, w).0.total;
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / scale <= 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
            if grad[i].abs() > 1e-6 {
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn gradient_check_policy_term() {
        check_gradient(LossWeights { policy: 1.0, value: 0.0, entropy: 0.0 }, 0.05, 11);
    }

    #[test]
    fn gradient_check_policy_term_with_clipping() {
        check_gradient(LossWeights { policy: 1.0, value: 0.0, entropy: 0.0 }, 0.6, 12);
    }

    #[test]
    fn gradient_check_value_term() {
        check_gradient(LossWeights { policy: 0.0, value: 1.0, entropy: 0.0 }, 0.0, 13);
    }

    #[test]
    fn gradient_check_entropy_term() {
        check_gradient(LossWeights { policy: 0.0, value: 0.0, entropy: 1.0 }, 0.0, 14);
    }

    #[test]
    fn on_policy_surrogate_is_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = NetShape::new(12, &[8, 8], 3);
        let n = shape.param_count();
        let params = PolicyParameters::from_flat(shape, (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let (obs, acts, old, adv, ret) = small_batch(&params, 22, 0.0);
        let mb = Minibatch {
            observations: obs.iter().map(|v| v.as_slice()).collect(),
            actions: acts.iter().map(|v| v.as_slice()).collect(),
            old_log_probs: old,
            advantages: adv.clone(),
            returns: ret,
        };
        let (parts, _) = loss_and_grad(&params, &mb, 0.2, LossWeights { policy: 1.0, value: 0.0, entropy: 0.0 });
        let mean_adv = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((-parts.policy - mean_adv).abs() < 1e-12);
        assert_eq!(parts.clip_fraction, 0.0);
        for (lp_old, (o, z)) in mb.old_log_probs.iter().zip(obs.iter().zip(&acts)) {
            let out = params.forward(o).unwrap();
            let ratio = (log_prob(&out.pre_mean, &out.log_std, z) - lp_old).exp();
            assert_eq!(ratio, 1.0);
        }
    }

    #[test]
    fn sampled_actions_are_squashed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (z, lp) = sample_action(&[3.0f64, -2.0, 0.0], &[1.5, 0.5, 2.0], &mut rng);
            assert!(lp.is_finite());
            assert!(z.iter().all(|v| v.tanh().abs() <= 1.0));
        }
    }

    /// One-dimensional target-matching task: observe a target in [-1, 1],
    /// reward is minus the distance between action and target.
    struct Toy {
        rng: ChaCha8Rng,
        target: f64,
        t: usize,
    }

    impl Environment<f64> for Toy {
        fn obs_dim(&self) -> usize {
            1
        }
        fn act_dim(&self) -> usize {
            1
        }
        fn obs_bounds(&self) -> Vec<f64> {
            vec![1.0]
        }
        fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
            self.t = 0;
            self.target = self.rng.random_range(-0.8..0.8);
            Ok(vec![self.target])
        }
        fn step(&mut self, a: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
            let r = -(a[0] - self.target).abs();
            self.t += 1;
            self.target = self.rng.random_range(-0.8..0.8);
            Ok((vec![self.target], r, self.t >= 8))
        }
    }

    fn toy() -> Toy {
        Toy { rng: ChaCha8Rng::seed_from_u64(0), target: 0.0, t: 0 }
    }

    fn toy_hp() -> RlHyperparams<f64> {
        RlHyperparams {
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 4,
            steps: 256,
            hidden: vec![16, 16],
            ..RlHyperparams::default()
        }
    }

    #[test]
    fn toy_task_improves() {
        let out = train(&mut toy(), &toy_hp(), 32 * 12, 3).unwrap();
        assert!(out.curve.len() >= 11);
        let first = out.curve[0].mean_episode_reward;
        let tenth = out.curve[10].mean_episode_reward;
        assert!(tenth > first, "{first} -> {tenth}");
    }

    #[test]
    fn training_is_reproducible_and_zero_budget_is_identity() {
        let a = train(&mut toy(), &toy_hp(), 100, 8).unwrap();
        let b = train(&mut toy(), &toy_hp(), 100, 8).unwrap();
        assert_eq!(a.curve.iter().map(|c| c.csv_row()).collect::<Vec<_>>(), b.curve.iter().map(|c| c.csv_row()).collect::<Vec<_>>());
        assert_eq!(a.params, b.params);
        let z = train(&mut toy(), &toy_hp(), 0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let init = PolicyParameters::init(NetShape::new(1, &[16, 16], 1), 0.0, &[1.0], &mut rng).unwrap();
        assert_eq!(z.params, init);
        assert!(z.curve.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn gae_matches_direct_summation(
            data in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, proptest::bool::weighted(0.1)), 100),
            last in -10.0f64..10.0, g in 0.0f64..1.0, l in 0.0f64..1.0,
        ) {
            let r: Vec<f64> = data.iter().map(|d| d.0).collect();
            let v: Vec<f64> = data.iter().map(|d| d.1).collect();
            let d: Vec<bool> = data.iter().map(|d| d.2).collect();
            let (a, ret) = gae(&r, &v, &d, last, g, l);
            let o = gae_oracle(&r, &v, &d, last, g, l);
            for t in 0..r.len() {
                prop_assert!((a[t] - o[t]).abs() < 1e-10);
                prop_assert_eq!(ret[t], a[t] + v[t]);
            }
        }
    }
}
