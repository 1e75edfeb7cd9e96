use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{stack, Activation, Adam, AdamConfig, LayerSpec, Mlp, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RndConfig {
    pub hidden: Vec<usize>,
    pub embedding: usize,
    pub lr: f64,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256], embedding: 64, lr: 3e-4 }
    }
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            1.0
        } else {
            libm::sqrt(self.m2 / (self.count - 1) as f64)
        }
    }
}

/// Random network distillation: a trained predictor chasing a frozen
/// random embedding. Its error is high on rarely visited states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RndModule {
    pub target: Mlp,
    pub predictor: Mlp,
    pub opt: Adam,
    /// Statistics of every raw error seen in training, used to scale rewards.
    pub stats: RunningStats,
}

impl RndModule {
    pub fn new<R: Rng + ?Sized>(cfg: &RndConfig, rng: &mut R) -> Result<Self> {
        let specs = stack(OBS_DIM, &cfg.hidden, cfg.embedding, |i, o| LayerSpec::dense(i, o, Activation::Relu));
        let target = Mlp::new(&specs, rng)?;
        let predictor = Mlp::new(&specs, rng)?;
        let opt = Adam::new(&predictor, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        Ok(Self { target, predictor, opt, stats: RunningStats::default() })
    }

    /// Mean squared embedding error per row.
    pub fn raw_errors(&self, obs: &Matrix) -> Result<Vec<f64>> {
        let t = self.target.predict(obs)?;
        let p = self.predictor.predict(obs)?;
        Ok(t.iter_rows().zip(p.iter_rows()).map(|(a, b)| sq_err(a, b)).collect())
    }

    /// Error scaled by the running standard deviation of training errors; never negative.
    pub fn rewards(&self, obs: &Matrix) -> Result<Vec<f64>> {
        let s = self.stats.std().max(1e-8);
        Ok(self.raw_errors(obs)?.into_iter().map(|e| e / s).collect())
    }

    pub fn reward(&self, obs: &Observation) -> Result<f64> {
        Ok(self.rewards(&Matrix::from_vec(1, OBS_DIM, obs.to_vec())?)?[0])
    }

    /// One Adam step of the predictor toward the frozen target; returns the mean error.
    pub fn update<R: Rng + ?Sized>(&mut self, obs: &Matrix, rng: &mut R) -> Result<f64> {
        let t = self.target.predict(obs)?;
        let trace = self.predictor.forward_batch(obs, Mode::Train, rng)?;
        let p = trace.output();
        let k = p.cols as f64;
        let n = p.rows as f64;
        let mut grad = Matrix::zeros(p.rows, p.cols);
        let mut total = 0.0;
        for r in 0..p.rows {
            let e = sq_err(p.row(r), t.row(r));
            self.stats.push(e);
            total += e;
            for (g, (a, b)) in grad.row_mut(r).iter_mut().zip(p.row(r).iter().zip(t.row(r))) {
                *g = 2.0 * (a - b) / (k * n);
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("rnd loss"));
        }
        let (grads, _) = self.predictor.backward(&trace, &grad)?;
        self.opt.step(&mut self.predictor, &grads)?;
        Ok(total / n)
    }
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
