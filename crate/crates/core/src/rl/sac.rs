use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Batch;
use crate::env::{EnvConfig, Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::milestones::AugmentConfig;
use crate::nn::{stack, Activation, Adam, AdamConfig, ForwardTrace, LayerSpec, Mlp, Mode};
use crate::rewards::softplus;

const LN_2: f64 = core::f64::consts::LN_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub critic_dropout: f64,
    pub critic_layer_norm: bool,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Augmentations averaged in the Q estimate (M).
    pub q_augmentations: usize,
    /// Augmentations averaged in the target (L).
    pub target_augmentations: usize,
    pub lr: f64,
    pub init_temperature: f64,
    /// Scale applied to the actor's freshly initialized output layer.
    pub actor_output_scale: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Defaults to `-ACTION_DIM` when absent.
    pub target_entropy: Option<f64>,
    /// Subtract `α·log π` inside the bootstrap target.
    pub entropy_bonus: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            critic_dropout: 0.01,
            critic_layer_norm: true,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            q_augmentations: 2,
            target_augmentations: 2,
            lr: 3e-4,
            init_temperature: 0.1,
            actor_output_scale: 1e-2,
            log_std_min: -5.0,
            log_std_max: 2.0,
            target_entropy: None,
            entropy_bonus: true,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("sac: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.critic_dropout) {
            return bad("critic_dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.q_augmentations == 0 || self.target_augmentations == 0 {
            return bad("batch_size and augmentation counts must be positive");
        }
        if !(self.lr > 0.0) || !(self.init_temperature > 0.0) {
            return bad("lr and init_temperature must be positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        Ok(())
    }

    pub fn entropy_target(&self) -> f64 {
        self.target_entropy.unwrap_or(-(ACTION_DIM as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub target_mean: f64,
}

/// Soft actor-critic with twin dropout/layer-norm critics and
/// augmentation-averaged value estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    /// State noise `f(s, ν)` applied to every critic and actor input.
    pub augment: AugmentConfig,
    pub bounds: EnvConfig,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub log_alpha: f64,
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub alpha_opt: Adam,
    pub updates: u64,
}

/// Tanh-squashed Gaussian draws plus what the reparameterized gradient needs.
struct Squashed {
    actions: Matrix,
    log_prob: Vec<f64>,
    u: Matrix,
    eps: Matrix,
    std: Matrix,
    /// d log_std / d raw head output.
    clamp_grad: Matrix,
}

/// `log(1 − tanh(u)²)` without cancellation.
fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Rows `[obs | action]` fed to the critics.
pub fn critic_input(obs: &Matrix, actions: &Matrix) -> Matrix {
    let mut x = Matrix::zeros(obs.rows, obs.cols + actions.cols);
    for r in 0..obs.rows {
        let row = x.row_mut(r);
        row[..obs.cols].copy_from_slice(obs.row(r));
        row[obs.cols..].copy_from_slice(actions.row(r));
    }
    x
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(config: SacConfig, augment: AugmentConfig, bounds: EnvConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        let actor_specs = stack(OBS_DIM, &config.hidden, 2 * ACTION_DIM, |i, o| LayerSpec::dense(i, o, Activation::Relu));
        let mut actor = Mlp::new(&actor_specs, rng)?;
        actor.scale_output_layer(config.actor_output_scale);
        let critic_specs = stack(OBS_DIM + ACTION_DIM, &config.hidden, 1, |i, o| {
            let s = LayerSpec::dense(i, o, Activation::Relu).with_dropout(config.critic_dropout);
            if config.critic_layer_norm {
                s.with_layer_norm()
            } else {
                s
            }
        });
        let critics = [Mlp::new(&critic_specs, rng)?, Mlp::new(&critic_specs, rng)?];
        let targets = critics.clone();
        let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
        Ok(Self {
            actor_opt: Adam::new(&actor, adam),
            critic_opts: [Adam::new(&critics[0], adam), Adam::new(&critics[1], adam)],
            alpha_opt: Adam::for_shapes([1], adam),
            log_alpha: libm::log(config.init_temperature),
            config,
            augment,
            bounds,
            actor,
            critics,
            targets,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        libm::exp(self.log_alpha)
    }

    /// Tanh-squashed Gaussian sample, or `tanh(mean)` when not stochastic.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, stochastic: bool, rng: &mut R) -> Result<[f64; ACTION_DIM]> {
        let head = self.actor.predict_one(obs)?;
        let mut a = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            a[d] = if stochastic {
                let (ls, _) = self.log_std(head[ACTION_DIM + d]);
                libm::tanh(head[d] + libm::exp(ls) * crate::rng::normal(rng))
            } else {
                libm::tanh(head[d])
            };
        }
        Ok(a)
    }

    /// Soft clamp of the raw head into `[log_std_min, log_std_max]` and its slope.
    fn log_std(&self, raw: f64) -> (f64, f64) {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let t = libm::tanh(raw);
        (lo + 0.5 * (hi - lo) * (t + 1.0), 0.5 * (hi - lo) * (1.0 - t * t))
    }

    fn squash<R: Rng + ?Sized>(&self, head: &Matrix, rng: &mut R) -> Squashed {
        let n = head.rows;
        let mut s = Squashed {
            actions: Matrix::zeros(n, ACTION_DIM),
            log_prob: vec![0.0; n],
            u: Matrix::zeros(n, ACTION_DIM),
            eps: Matrix::zeros(n, ACTION_DIM),
            std: Matrix::zeros(n, ACTION_DIM),
            clamp_grad: Matrix::zeros(n, ACTION_DIM),
        };
        for i in 0..n {
            let h = head.row(i);
            let mut lp = 0.0;
            for d in 0..ACTION_DIM {
                let (ls, cg) = self.log_std(h[ACTION_DIM + d]);
                let std = libm::exp(ls);
                let eps = crate::rng::normal(rng);
                let u = h[d] + std * eps;
                lp += -0.5 * eps * eps - ls - HALF_LN_2PI - log1m_tanh2(u);
                let k = i * ACTION_DIM + d;
                s.actions.data[k] = libm::tanh(u);
                s.u.data[k] = u;
                s.eps.data[k] = eps;
                s.std.data[k] = std;
                s.clamp_grad.data[k] = cg;
            }
            s.log_prob[i] = lp;
        }
        s
    }

    /// Policy draws and their log-probabilities for each row of `obs`.
    pub fn sample_actions<R: Rng + ?Sized>(&self, obs: &Matrix, rng: &mut R) -> Result<(Matrix, Vec<f64>)> {
        let head = self.actor.predict(obs)?;
        let s = self.squash(&head, rng);
        Ok((s.actions, s.log_prob))
    }

    fn augment_rows<R: Rng + ?Sized>(&self, m: &Matrix, rng: &mut R) -> Matrix {
        let mut out = m.clone();
        if self.augment.sigma == 0.0 && !self.augment.clip_to_valid {
            return out;
        }
        for r in 0..m.rows {
            let o: Observation = m.row(r).try_into().expect("observation rows");
            out.row_mut(r).copy_from_slice(&self.augment.augment(&o, &self.bounds, rng));
        }
        out
    }

    /// `y_i = r_i + γ·(1/L)·Σ_l [min_j Q̄_j(f(s'_i), a') − α·log π(a'|f(s'_i))]`.
    pub fn compute_target<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let n = batch.len();
        let alpha = if self.config.entropy_bonus { self.alpha() } else { 0.0 };
        let l = self.config.target_augmentations;
        let mut acc = vec![0.0; n];
        for _ in 0..l {
            let s = self.augment_rows(&batch.next_obs, rng);
            let (a, logp) = self.sample_actions(&s, rng)?;
            let x = critic_input(&s, &a);
            let q1 = self.targets[0].forward_batch(&x, Mode::Train, rng)?;
            let q2 = self.targets[1].forward_batch(&x, Mode::Train, rng)?;
            for i in 0..n {
                acc[i] += q1.output().data[i].min(q2.output().data[i]) - alpha * logp[i];
            }
        }
        let gamma = self.config.gamma;
        let y: Vec<f64> = (0..n)
            .map(|i| batch.rewards[i] + if batch.done[i] { 0.0 } else { gamma * acc[i] / l as f64 })
            .collect();
        crate::error::ensure_finite(&y, "bootstrap target")?;
        Ok(y)
    }

    /// Q estimates for each row, averaged over `M` augmentations with fresh
    /// dropout masks, as trained by [`SacAgent::critic_update`].
    fn q_inputs<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Matrix {
        let n = batch.len();
        let m = self.config.q_augmentations;
        let mut x = Matrix::zeros(n * m, OBS_DIM + ACTION_DIM);
        for k in 0..m {
            let s = self.augment_rows(&batch.obs, rng);
            for i in 0..n {
                let row = x.row_mut(k * n + i);
                row[..OBS_DIM].copy_from_slice(s.row(i));
                row[OBS_DIM..].copy_from_slice(batch.actions.row(i));
            }
        }
        x
    }

    /// One Adam step per critic on the mean squared residual; returns the
    /// mean loss over both critics.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, targets: &[f64], rng: &mut R) -> Result<f64> {
        let n = batch.len();
        if n == 0 || targets.len() != n {
            return Err(Error::Shape(format!("{} targets for a batch of {n}", targets.len())));
        }
        let m = self.config.q_augmentations;
        let x = self.q_inputs(batch, rng);
        let mut total = 0.0;
        for j in 0..2 {
            let trace = self.critics[j].forward_batch(&x, Mode::Train, rng)?;
            let out = &trace.output().data;
            let mut grad = Matrix::zeros(n * m, 1);
            let mut loss = 0.0;
            for i in 0..n {
                let q = (0..m).map(|k| out[k * n + i]).sum::<f64>() / m as f64;
                let d = q - targets[i];
                loss += d * d;
                for k in 0..m {
                    grad.data[k * n + i] = 2.0 * d / (n * m) as f64;
                }
            }
            let loss = loss / n as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("critic loss"));
            }
            let (grads, _) = self.critics[j].backward(&trace, &grad)?;
            self.critic_opts[j].step(&mut self.critics[j], &grads)?;
            total += loss;
        }
        Ok(total / 2.0)
    }

    /// Reparameterized actor loss `mean(α·log π − min_j Q_j)` on states `s`,
    /// its parameter gradient, and the sampled log-probabilities.
    pub(crate) fn actor_objective<R: Rng + ?Sized>(&self, s: &Matrix, rng: &mut R) -> Result<(f64, Mlp, Vec<f64>)> {
        let n = s.rows;
        let alpha = self.alpha();
        let trace = self.actor.forward_batch(s, Mode::Train, rng)?;
        let sq = self.squash(trace.output(), rng);
        let x = critic_input(s, &sq.actions);
        let traces: [ForwardTrace; 2] = [
            self.critics[0].forward_batch(&x, Mode::Train, rng)?,
            self.critics[1].forward_batch(&x, Mode::Train, rng)?,
        ];
        let nf = n as f64;
        let mut loss = 0.0;
        let mut gq = [Matrix::zeros(n, 1), Matrix::zeros(n, 1)];
        for i in 0..n {
            let (q1, q2) = (traces[0].output().data[i], traces[1].output().data[i]);
            let j = if q1 <= q2 { 0 } else { 1 };
            loss += alpha * sq.log_prob[i] - q1.min(q2);
            gq[j].data[i] = -1.0 / nf;
        }
        let loss = loss / nf;
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let ga = [self.critics[0].backward_input(&traces[0], &gq[0])?, self.critics[1].backward_input(&traces[1], &gq[1])?];
        let width = OBS_DIM + ACTION_DIM;
        let mut head_grad = Matrix::zeros(n, 2 * ACTION_DIM);
        for i in 0..n {
            let row = head_grad.row_mut(i);
            for d in 0..ACTION_DIM {
                let k = i * ACTION_DIM + d;
                let col = i * width + OBS_DIM + d;
                let dl_da = ga[0].data[col] + ga[1].data[col];
                let a = sq.actions.data[k];
                // d log π / du = 2·tanh(u); d log π / d log σ = −1 at fixed u.
                let dl_du = dl_da * (1.0 - a * a) + alpha / nf * 2.0 * libm::tanh(sq.u.data[k]);
                let dl_dlogstd = dl_du * sq.std.data[k] * sq.eps.data[k] - alpha / nf;
                row[d] = dl_du;
                row[ACTION_DIM + d] = dl_dlogstd * sq.clamp_grad.data[k];
            }
        }
        let (grads, _) = self.actor.backward(&trace, &head_grad)?;
        Ok((loss, grads, sq.log_prob))
    }

    /// Reparameterized actor step against the per-sample minimum critic,
    /// then one temperature step. Returns `(actor_loss, alpha_loss)`.
    pub fn actor_and_alpha_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let alpha = self.alpha();
        let s = self.augment_rows(&batch.obs, rng);
        let (actor_loss, grads, logp) = self.actor_objective(&s, rng)?;
        let mean_logp = logp.iter().sum::<f64>() / logp.len() as f64;
        // Temperature loss α·(−log π − H̄); its gradient in log α carries the same factor α.
        let alpha_loss = alpha * (-mean_logp - self.config.entropy_target());
        if !alpha_loss.is_finite() {
            return Err(Error::NonFinite("temperature loss"));
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        let mut la = [self.log_alpha];
        self.alpha_opt.step_slices(&mut [&mut la[..]], &[&[alpha_loss][..]])?;
        self.log_alpha = la[0];
        Ok((actor_loss, alpha_loss))
    }

    /// `target ← (1 − τ)·target + τ·online` for both critics.
    pub fn polyak_update(&mut self) {
        let tau = self.config.tau;
        for j in 0..2 {
            self.targets[j].lerp_toward(&self.critics[j], tau);
        }
    }

    /// Target, critic, actor/temperature, then Polyak: one full learner step.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let y = self.compute_target(batch, rng)?;
        let critic_loss = self.critic_update(batch, &y, rng)?;
        let (actor_loss, alpha_loss) = self.actor_and_alpha_update(batch, rng)?;
        self.polyak_update();
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            target_mean: y.iter().sum::<f64>() / y.len() as f64,
        })
    }
}
