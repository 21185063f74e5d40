use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{to_channels, EnergyModelParams};
use crate::error::{Error, Result};

/// Per-noise-level loss weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    InvSigma,
    Uniform,
}

impl Weighting {
    fn gamma(self, sigma: f64) -> f64 {
        match self {
            Weighting::InvSigma => 1.0 / sigma,
            Weighting::Uniform => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma_min: 1e-3,
            sigma_max: 0.2,
            epochs: 80,
            learning_rate: 1e-4,
            batch_size: 32,
            weighting: Weighting::InvSigma,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min >= 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::Config(format!(
                "noise range must satisfy 0 <= sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.sigma_min == 0.0 && self.weighting == Weighting::InvSigma {
            return Err(Error::Config(
                "1/sigma weighting needs sigma_min > 0".into(),
            ));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EnergyModelParams,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// CSV with columns epoch, mean_loss, wall_seconds. With `with_time`
    /// false the wall-clock column is 0.
    pub fn log_csv(&self, with_time: bool) -> String {
        let mut out = String::from("epoch,mean_loss,wall_seconds\n");
        for e in &self.log {
            out.push_str(&format!(
                "{},{:.10e},{:.3}\n",
                e.epoch,
                e.mean_loss,
                if with_time { e.wall_seconds } else { 0.0 }
            ));
        }
        out
    }
}

/// Loss `gamma(sigma) ||score(u + sigma z) - sigma z||^2` for one clean slice
/// and its gradient with respect to all weights.
///
/// With `w = 2 gamma (g - sigma z)` held fixed, the weight gradient equals the
/// gradient of `<e, w - J w>` where `e = u~ - psi(u~)` and `J` is the Jacobian of
/// `psi`. That needs one forward pass, one tangent pass and one reverse sweep
/// through both.
pub fn training_loss_and_grad(
    params: &EnergyModelParams,
    clean: ArrayView2<Complex64>,
    sigma: f64,
    noise: ArrayView2<Complex64>,
    weighting: Weighting,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    if clean.dim() != noise.dim() {
        return Err(Error::domain("noise and slice shapes differ"));
    }
    let mut grad = vec![0.0; params.weights.len()];
    let loss = accumulate_example(params, clean, sigma, noise, weighting, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_example(
    params: &EnergyModelParams,
    clean: ArrayView2<Complex64>,
    sigma: f64,
    noise: ArrayView2<Complex64>,
    weighting: Weighting,
    grad: &mut [f64],
) -> Result<f64> {
    let (h, w) = clean.dim();
    let target = to_channels(noise)? * sigma;
    let noisy = to_channels(clean)? + &target;
    let net = params.network();
    let residual = params.arch.residual;

    let tape = net.forward(&noisy, h, w);
    let e = if residual {
        tape.output.mapv(|v| -v)
    } else {
        &noisy - &tape.output
    };
    let jte = net.vjp_input(&tape, &e);
    let score = if residual { -jte } else { &e - &jte };

    let gamma = weighting.gamma(sigma);
    let diff = &score - &target;
    let loss = gamma * diff.iter().map(|v| v * v).sum::<f64>();
    let wdir = diff * (2.0 * gamma);

    let tangent = net.jvp(&tape, &wdir);
    // q = w - J_psi w
    let q = if residual {
        -&tangent.output
    } else {
        &wdir - &tangent.output
    };
    let seed_out = -q;
    let seed_tan = -e;
    net.dual_param_grad(&tape, &tangent, &seed_out, &seed_tan, grad);
    Ok(loss)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Multi-scale denoising score matching with Adam.
pub fn train_score_matching(
    params: &EnergyModelParams,
    slices: &[Array2<Complex64>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    params.validate()?;
    cfg.validate()?;
    if slices.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    for (i, s) in slices.iter().enumerate() {
        let peak = s.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !(peak <= 1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "training slice {i} has max magnitude {peak}, expected <= 1"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = params.clone();
    let mut adam = Adam::new(theta.weights.len());
    let mut grad = vec![0.0; theta.weights.len()];
    let mut order: Vec<usize> = (0..slices.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let clean = &slices[i];
                // sigma in (sigma_min, sigma_max]
                let sigma = cfg.sigma_max - rng.gen::<f64>() * (cfg.sigma_max - cfg.sigma_min);
                let noise = Array2::from_shape_simple_fn(clean.dim(), || {
                    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                });
                batch_loss += accumulate_example(
                    &theta,
                    clean.view(),
                    sigma,
                    noise.view(),
                    cfg.weighting,
                    &mut grad,
                )?;
            }
            let n = batch.len() as f64;
            if !batch_loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    step,
                    message: format!("non-finite loss or gradient (batch loss {batch_loss})"),
                });
            }
            grad.iter_mut().for_each(|g| *g /= n);
            adam.step(&mut theta.weights, &grad, cfg.learning_rate);
            epoch_loss += batch_loss;
        }
        log.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / slices.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { params: theta, log })
}
