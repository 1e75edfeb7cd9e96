//! Per-task success classifiers trained in the loop and the rewards derived
//! from them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::milestones::{AugmentConfig, TaskId};
use crate::nn::{stack, Activation, Adam, AdamConfig, LayerSpec, Mlp, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of each batch drawn from the positive examples.
    pub positive_fraction: f64,
    pub mixup_alpha: f64,
    pub label_smoothing: f64,
    pub reward_floor: f64,
    /// Negatives come from this many most recent transitions of the task's buffer.
    pub negative_window: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 512, 512],
            dropout: 0.5,
            lr: 3e-4,
            batch_size: 256,
            positive_fraction: 0.5,
            mixup_alpha: 10.0,
            label_smoothing: 0.1,
            reward_floor: -10.0,
            negative_window: 50_000,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("classifier: {m}")));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad("positive_fraction must lie in (0, 1)");
        }
        if !(self.mixup_alpha > 0.0) {
            return bad("mixup_alpha must be positive");
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1]");
        }
        if !(self.reward_floor < 0.0) {
            return bad("reward_floor must be negative");
        }
        if self.negative_window == 0 {
            return bad("negative_window must be positive");
        }
        Ok(())
    }

    /// Positive and negative counts per update batch.
    pub fn split(&self) -> (usize, usize) {
        let pos = ((self.batch_size as f64 * self.positive_fraction).round() as usize).clamp(1, self.batch_size - 1);
        (pos, self.batch_size - pos)
    }
}

/// `p^o_z(o | s)` for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessClassifier {
    pub net: Mlp,
    pub opt: Adam,
    pub task: TaskId,
}

/// `y(1 − α) + α/2`.
pub fn smooth_label(y: f64, alpha: f64) -> f64 {
    y * (1.0 - alpha) + alpha / 2.0
}

/// `log σ(z)` without overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `max(log p, floor)` for a classifier logit.
pub fn reward_from_logit(logit: f64, floor: f64) -> f64 {
    let r = log_sigmoid(logit);
    if r.is_nan() {
        floor
    } else {
        r.max(floor)
    }
}

/// Convex combination of one labeled pair.
pub fn mix_pair(a: &(Observation, f64), b: &(Observation, f64), lambda: f64) -> (Observation, f64) {
    let mut obs = [0.0; OBS_DIM];
    for d in 0..OBS_DIM {
        obs[d] = lambda * a.0[d] + (1.0 - lambda) * b.0[d];
    }
    (obs, lambda * a.1 + (1.0 - lambda) * b.1)
}

/// Pairs each element with a uniformly drawn partner and mixes them with
/// `λ ~ Beta(alpha, alpha)`.
pub fn mixup<R: Rng + ?Sized>(batch: &[(Observation, f64)], alpha: f64, rng: &mut R) -> Result<Vec<(Observation, f64)>> {
    if batch.is_empty() {
        return Err(Error::Domain("mixup of an empty batch".into()));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Domain(format!("mixup alpha {alpha}: {e}")))?;
    Ok(batch
        .iter()
        .map(|a| {
            let j = rng.random_range(0..batch.len());
            let lambda = beta.sample(rng);
            mix_pair(a, &batch[j], lambda)
        })
        .collect())
}

impl SuccessClassifier {
    pub fn new<R: Rng + ?Sized>(task: TaskId, cfg: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        let specs = stack(OBS_DIM, &cfg.hidden, 1, |i, o| {
            LayerSpec::dense(i, o, Activation::Relu).with_dropout(cfg.dropout)
        });
        let net = Mlp::new(&specs, rng)?;
        let opt = Adam::new(&net, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        Ok(Self { net, opt, task })
    }

    pub fn logit(&self, obs: &Observation) -> Result<f64> {
        Ok(self.net.predict_one(obs)?[0])
    }

    pub fn logits(&self, obs: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.predict(obs)?.data)
    }

    pub fn probability(&self, obs: &Observation) -> Result<f64> {
        Ok(sigmoid(self.logit(obs)?))
    }

    /// Eval-mode reward in `[floor, 0]`.
    pub fn reward(&self, obs: &Observation, cfg: &ClassifierConfig) -> Result<f64> {
        Ok(reward_from_logit(self.logit(obs)?, cfg.reward_floor))
    }

    pub fn rewards(&self, obs: &Matrix, cfg: &ClassifierConfig) -> Result<Vec<f64>> {
        Ok(self.logits(obs)?.into_iter().map(|z| reward_from_logit(z, cfg.reward_floor)).collect())
    }

    /// Draws `cfg.split()` positives and negatives with replacement, then runs
    /// [`SuccessClassifier::update_batch`].
    #[allow(clippy::too_many_arguments)]
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        positives: &[Observation],
        negatives: &[Observation],
        cfg: &ClassifierConfig,
        augment: &AugmentConfig,
        bounds: &EnvConfig,
        rng: &mut R,
    ) -> Result<f64> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Domain("classifier update needs positives and negatives".into()));
        }
        let (np, nn) = cfg.split();
        let pos: Vec<Observation> = (0..np).map(|_| positives[rng.random_range(0..positives.len())]).collect();
        let neg: Vec<Observation> = (0..nn).map(|_| negatives[rng.random_range(0..negatives.len())]).collect();
        self.update_batch(&pos, &neg, cfg, augment, bounds, rng)
    }

    /// One Adam step on smoothed, mixed-up binary cross-entropy. Positives are
    /// augmented; negatives are real experience and used as given.
    pub fn update_batch<R: Rng + ?Sized>(
        &mut self,
        positives: &[Observation],
        negatives: &[Observation],
        cfg: &ClassifierConfig,
        augment: &AugmentConfig,
        bounds: &EnvConfig,
        rng: &mut R,
    ) -> Result<f64> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Domain("classifier update needs positives and negatives".into()));
        }
        let hi = smooth_label(1.0, cfg.label_smoothing);
        let lo = smooth_label(0.0, cfg.label_smoothing);
        let mut batch: Vec<(Observation, f64)> = Vec::with_capacity(positives.len() + negatives.len());
        batch.extend(positives.iter().map(|o| (augment.augment(o, bounds, rng), hi)));
        batch.extend(negatives.iter().map(|o| (*o, lo)));
        let batch = mixup(&batch, cfg.mixup_alpha, rng)?;

        let mut x = Matrix::zeros(batch.len(), OBS_DIM);
        for (r, (o, _)) in batch.iter().enumerate() {
            x.row_mut(r).copy_from_slice(o);
        }
        let trace = self.net.forward_batch(&x, Mode::Train, rng)?;
        let z = &trace.output().data;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = Matrix::zeros(batch.len(), 1);
        for (i, (_, y)) in batch.iter().enumerate() {
            loss += softplus(z[i]) - y * z[i];
            grad.data[i] = (sigmoid(z[i]) - y) / n;
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("classifier loss"));
        }
        let (grads, _) = self.net.backward(&trace, &grad)?;
        self.opt.step(&mut self.net, &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small() -> ClassifierConfig {
        ClassifierConfig { hidden: vec![64, 64, 64], ..Default::default() }
    }

    /// Points on either side of the hyperplane `w·x = 0` with a margin.
    fn separable(n: usize, seed: u64) -> (Vec<Observation>, Vec<Observation>) {
        let w = [1.0, -0.5, 0.25, 0.0, 0.7, -0.3, 0.2, 0.1];
        let mut rng = crate::rng::stream(seed, 0);
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        while pos.len() < n || neg.len() < n {
            let x: Observation = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            if s > 0.2 && pos.len() < n {
                pos.push(x);
            } else if s < -0.2 && neg.len() < n {
                neg.push(x);
            }
        }
        (pos, neg)
    }

    /// Plain logistic regression by gradient descent.
    fn logistic_oracle(pos: &[Observation], neg: &[Observation]) -> impl Fn(&Observation) -> bool {
        let mut w = [0.0; OBS_DIM + 1];
        for _ in 0..2000 {
            let mut g = [0.0; OBS_DIM + 1];
            for (set, y) in [(pos, 1.0), (neg, 0.0)] {
                for x in set {
                    let z = w[OBS_DIM] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                    let e = sigmoid(z) - y;
                    for d in 0..OBS_DIM {
                        g[d] += e * x[d];
                    }
                    g[OBS_DIM] += e;
                }
            }
            let n = (pos.len() + neg.len()) as f64;
            for d in 0..=OBS_DIM {
                w[d] -= 1.0 * g[d] / n;
            }
        }
        move |x| w[OBS_DIM] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0
    }

    fn no_noise() -> AugmentConfig {
        AugmentConfig { sigma: 0.0, ..Default::default() }
    }

    #[test]
    fn smoothing_maps_one_to_point_nine_five() {
        assert!((smooth_label(1.0, 0.1) - 0.95).abs() < 1e-15);
        assert!((smooth_label(0.0, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn mixup_identity_and_convexity() {
        let a = ([0.3; OBS_DIM], 1.0);
        let b = ([-0.8; OBS_DIM], 0.0);
        assert_eq!(mix_pair(&a, &b, 1.0), a);
        let c = ([0.1; OBS_DIM], 1.0);
        let mut rng = crate::rng::stream(0, 0);
        for _ in 0..100 {
            let l: f64 = rng.random();
            assert_eq!(mix_pair(&a, &c, l).1, 1.0);
        }
        let out = mixup(&[a, c], 10.0, &mut rng).unwrap();
        assert!(out.iter().all(|(_, y)| *y == 1.0));
        assert!(matches!(mixup(&[], 10.0, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn beta_ten_ten_is_centered() {
        let beta = Beta::new(10.0, 10.0).unwrap();
        let mut rng = crate::rng::stream(5, 0);
        let mean = (0..100_000).map(|_| beta.sample(&mut rng)).sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn reward_limits() {
        assert!(reward_from_logit(50.0, -10.0) <= 0.0);
        assert!(reward_from_logit(50.0, -10.0) > -1e-20);
        // p = e^-12 is far below the floor.
        let z = libm::log(libm::exp(-12.0) / (1.0 - libm::exp(-12.0)));
        assert_eq!(reward_from_logit(z, -10.0), -10.0);
        assert_eq!(reward_from_logit(f64::NEG_INFINITY, -10.0), -10.0);
        assert_eq!(reward_from_logit(f64::INFINITY, -10.0), 0.0);
    }

    #[test]
    fn reward_is_monotone_in_logit_for_random_obs() {
        let cfg = small();
        let clf = SuccessClassifier::new(TaskId(0), &cfg, &mut crate::rng::stream(1, 0)).unwrap();
        let mut rng = crate::rng::stream(2, 0);
        for _ in 0..1000 {
            let a: Observation = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let b: Observation = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let (za, zb) = (clf.logit(&a).unwrap(), clf.logit(&b).unwrap());
            let (ra, rb) = (clf.reward(&a, &cfg).unwrap(), clf.reward(&b, &cfg).unwrap());
            assert!((-10.0..=0.0).contains(&ra));
            if za > zb {
                assert!(ra >= rb);
            }
            assert_eq!(ra, clf.reward(&a, &cfg).unwrap());
        }
    }

    #[test]
    fn learns_separable_sets_and_loss_drops() {
        let (pos, neg) = separable(400, 3);
        let (tp, tn) = separable(200, 4);
        let oracle = logistic_oracle(&pos, &neg);
        let oracle_acc = tp.iter().filter(|x| oracle(x)).count() + tn.iter().filter(|x| !oracle(x)).count();
        assert!(oracle_acc as f64 >= 0.95 * 400.0, "oracle {oracle_acc}");

        let cfg = small();
        let mut rng = crate::rng::stream(6, 0);
        let mut clf = SuccessClassifier::new(TaskId(0), &cfg, &mut rng).unwrap();
        let mut early = 0.0;
        let mut late = 0.0;
        for step in 0..500 {
            let loss = clf.update(&pos, &neg, &cfg, &no_noise(), &EnvConfig::default(), &mut rng).unwrap();
            if step < 10 {
                early += loss / 10.0;
            }
            if step >= 490 {
                late += loss / 10.0;
            }
        }
        assert!(late < early, "{late} vs {early}");
        let acc = tp.iter().filter(|x| clf.probability(x).unwrap() > 0.5).count()
            + tn.iter().filter(|x| clf.probability(x).unwrap() <= 0.5).count();
        assert!(acc as f64 >= 0.95 * 400.0, "{acc}/400");
    }

    #[test]
    fn identical_sets_stay_undecided() {
        let (pos, _) = separable(200, 8);
        let cfg = small();
        let mut rng = crate::rng::stream(9, 0);
        let mut clf = SuccessClassifier::new(TaskId(0), &cfg, &mut rng).unwrap();
        for _ in 0..300 {
            clf.update(&pos, &pos, &cfg, &no_noise(), &EnvConfig::default(), &mut rng).unwrap();
        }
        let mean = pos.iter().map(|x| clf.probability(x).unwrap()).sum::<f64>() / pos.len() as f64;
        assert!((0.4..=0.6).contains(&mean), "{mean}");
    }

    #[test]
    fn updating_one_task_leaves_another_untouched() {
        let cfg = small();
        let mut rng = crate::rng::stream(10, 0);
        let mut a = SuccessClassifier::new(TaskId(0), &cfg, &mut rng).unwrap();
        let b = SuccessClassifier::new(TaskId(1), &cfg, &mut rng).unwrap();
        let b0 = b.clone();
        let (pos, neg) = separable(20, 1);
        a.update(&pos, &neg, &cfg, &AugmentConfig::default(), &EnvConfig::default(), &mut rng).unwrap();
        assert_eq!(b, b0);
    }

    #[test]
    fn default_batch_is_half_positive() {
        assert_eq!(ClassifierConfig::default().split(), (128, 128));
        ClassifierConfig::default().validate().unwrap();
        assert!(ClassifierConfig { mixup_alpha: 0.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn reward_bounded(z in -1e6f64..1e6) {
            let r = reward_from_logit(z, -10.0);
            prop_assert!((-10.0..=0.0).contains(&r));
        }
    }
}
