//! MAP reconstruction of the spatial factor under the learned prior by
//! variable splitting, plus the quadratic and wavelet-sparsity baselines.
//!
//! All solvers work on a [`DcProblem`], which holds the measured data and the
//! normal operator after two optional rescalings: the operator is divided by
//! its largest eigenvalue so regularization weights are scale free, and the
//! data are scaled so the least-squares-fitted adjoint image peaks at 1, the
//! range the prior was trained on. Results are mapped back to data units.

mod baselines;
mod cg;
mod splitting;

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_4d, EnergyModelParams};
use crate::error::{Error, Result};
use crate::forward::{
    subspace_adjoint, subspace_forward, CoilMaps, KSpaceData, NormalOperator, SpatialFactor,
    Trajectory,
};

pub use baselines::{
    baseline_quadratic, baseline_wavelet, haar_forward, haar_inverse, soft_threshold, WaveletTrace,
};
pub use cg::{conjugate_gradient, CgOutcome};
pub use splitting::{map_reconstruct, u_update, z_objective, z_update, ZUpdate};

/// Outer iteration from which a coupling weight applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaStep {
    pub from_iter: usize,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// Prior weight.
    pub lambda: f64,
    /// Coupling weight per outer iteration; the last entry at or before an
    /// iteration applies.
    pub beta_schedule: Vec<BetaStep>,
    pub outer_iters: usize,
    pub prox_steps: usize,
    pub prox_step_size: f64,
    /// Stop the Z-update early once the gradient norm drops below this (0 disables).
    pub prox_grad_tol: f64,
    pub cg_max_iters: usize,
    /// Exit when `||r_k|| / ||r_0||` falls to this value.
    pub cg_residual_tol: f64,
    /// Reject a Z-update that raises its own objective.
    pub descent_safeguard: bool,
    pub normalize_operator: bool,
    pub normalize_magnitude: bool,
    pub power_iters: usize,
    pub quadratic_mu: f64,
    /// CG limits of the quadratic baseline, which is solved to convergence.
    pub baseline_cg_max_iters: usize,
    pub baseline_cg_tol: f64,
    pub wavelet_gamma: f64,
    pub wavelet_iters: usize,
    pub wavelet_momentum: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            lambda: 2e-4,
            beta_schedule: vec![
                BetaStep {
                    from_iter: 0,
                    beta: 1e-4,
                },
                BetaStep {
                    from_iter: 28,
                    beta: 4e-4,
                },
                BetaStep {
                    from_iter: 29,
                    beta: 8e-4,
                },
            ],
            outer_iters: 30,
            prox_steps: 2,
            prox_step_size: 0.1,
            prox_grad_tol: 0.0,
            cg_max_iters: 30,
            cg_residual_tol: 0.05,
            descent_safeguard: true,
            normalize_operator: true,
            normalize_magnitude: true,
            power_iters: 20,
            quadratic_mu: 1e-5,
            baseline_cg_max_iters: 500,
            baseline_cg_tol: 1e-4,
            wavelet_gamma: 2e-4,
            wavelet_iters: 60,
            wavelet_momentum: false,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if self.beta_schedule.first().map(|b| b.from_iter) != Some(0) {
            return bad("beta_schedule must start at iteration 0");
        }
        if self
            .beta_schedule
            .windows(2)
            .any(|w| w[1].from_iter <= w[0].from_iter)
        {
            return bad("beta_schedule iterations must increase");
        }
        if self
            .beta_schedule
            .iter()
            .any(|b| !(b.beta > 0.0 && b.beta.is_finite()))
        {
            return bad("beta values must be positive");
        }
        if !(self.prox_step_size > 0.0 && self.prox_step_size.is_finite()) {
            return bad("prox_step_size must be positive");
        }
        if !(self.cg_residual_tol >= 0.0 && self.cg_residual_tol < 1.0)
            || !(self.baseline_cg_tol >= 0.0 && self.baseline_cg_tol < 1.0)
        {
            return bad("CG tolerances must lie in [0, 1)");
        }
        if self.power_iters == 0 {
            return bad("power_iters must be positive");
        }
        if !(self.quadratic_mu > 0.0 && self.wavelet_gamma >= 0.0) {
            return bad("quadratic_mu must be positive and wavelet_gamma non-negative");
        }
        Ok(())
    }

    pub fn beta_at(&self, iter: usize) -> f64 {
        self.beta_schedule
            .iter()
            .rev()
            .find(|b| b.from_iter <= iter)
            .map_or(self.beta_schedule[0].beta, |b| b.beta)
    }
}

/// Measured data and encoding operator in solver units.
pub struct DcProblem {
    pub traj: Trajectory,
    pub coils: CoilMaps,
    pub v: Array2<f64>,
    normal: NormalOperator,
    /// `A^H b V^T` in solver units.
    pub rhs: SpatialFactor,
    /// `||b||^2` in solver units.
    pub b_norm_sqr: f64,
    /// Scaled data in solver units are `sqrt(op_scale) * data_scale * b`.
    pub op_scale: f64,
    pub data_scale: f64,
    /// Largest eigenvalue of the normal operator in solver units.
    pub lipschitz: f64,
    b: KSpaceData,
}

impl DcProblem {
    pub fn new(
        b: &KSpaceData,
        v: ArrayView2<f64>,
        traj: &Trajectory,
        coils: &CoilMaps,
        cfg: &ReconConfig,
    ) -> Result<Self> {
        b.check_against(traj, coils)?;
        if !b
            .samples
            .iter()
            .all(|x| x.re.is_finite() && x.im.is_finite())
        {
            return Err(Error::domain("k-space data contain non-finite values"));
        }
        let normal = NormalOperator::new(traj, coils, v)?;
        let (lmax, change) = normal.max_eigenvalue(cfg.power_iters)?;
        if !(lmax.is_finite() && lmax > 0.0 && change <= 0.05) {
            return Err(Error::solver(
                "power iteration",
                format!("did not converge (estimate {lmax}, last relative change {change})"),
            ));
        }
        let op_scale = if cfg.normalize_operator {
            1.0 / lmax
        } else {
            1.0
        };
        let raw_rhs = subspace_adjoint(b.samples.view(), v, traj, coils)?;
        let mut p = DcProblem {
            traj: traj.clone(),
            coils: coils.clone(),
            v: v.to_owned(),
            normal,
            rhs: raw_rhs.scaled(op_scale),
            b_norm_sqr: op_scale * b.norm_sqr(),
            op_scale,
            data_scale: 1.0,
            lipschitz: lmax * op_scale,
            b: b.clone(),
        };
        if cfg.normalize_magnitude {
            let init = p.adjoint_init()?;
            let peak = init.max_abs();
            if peak > 0.0 {
                let s = 1.0 / peak;
                p.data_scale = s;
                p.rhs = p.rhs.scaled(s);
                p.b_norm_sqr *= s * s;
            }
        }
        Ok(p)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.coils.shape()
    }

    pub fn rank(&self) -> usize {
        self.v.nrows()
    }

    /// Normal operator in solver units.
    pub fn gram(&self, u: &SpatialFactor) -> Result<SpatialFactor> {
        Ok(self.normal.apply(u)?.scaled(self.op_scale))
    }

    /// Adjoint image `A^H b V^T` times the scalar that best fits the data.
    pub fn adjoint_init(&self) -> Result<SpatialFactor> {
        let g = self.gram(&self.rhs)?;
        let denom = self.rhs.inner(&g).re;
        if denom <= 0.0 {
            return Ok(self.rhs.clone());
        }
        Ok(self.rhs.scaled(self.rhs.norm_sqr() / denom))
    }

    /// `1/2 ||A(UV) - b||^2` in solver units via the normal operator.
    pub fn data_term(&self, u: &SpatialFactor) -> Result<f64> {
        let g = self.gram(u)?;
        Ok(self.data_term_with_gram(u, &g))
    }

    pub(crate) fn data_term_with_gram(&self, u: &SpatialFactor, gu: &SpatialFactor) -> f64 {
        (0.5 * u.inner(gu).re - u.inner(&self.rhs).re + 0.5 * self.b_norm_sqr).max(0.0)
    }

    /// Same quantity by explicit forward simulation.
    pub fn data_term_direct(&self, u: &SpatialFactor) -> Result<f64> {
        let mut r = subspace_forward(u, self.v.view(), &self.traj, &self.coils)?.samples;
        let s = Complex64::new(self.data_scale, 0.0);
        r.zip_mut_with(&self.b.samples, |a, &bb| *a -= s * bb);
        Ok(0.5 * self.op_scale * r.iter().map(|x| x.norm_sqr()).sum::<f64>())
    }

    /// Maps a solver-unit factor back to data units.
    pub fn unscale(&self, u: &SpatialFactor) -> SpatialFactor {
        u.scaled(1.0 / self.data_scale)
    }
}

/// Terms of the split objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitTerms {
    pub data: f64,
    pub coupling: f64,
    pub prior: f64,
}

impl SplitTerms {
    pub fn total(&self) -> f64 {
        self.data + self.coupling + self.prior
    }
}

pub(crate) fn diff_norm_sqr(a: &SpatialFactor, b: &SpatialFactor) -> f64 {
    ndarray::Zip::from(&a.0)
        .and(&b.0)
        .fold(0.0, |acc, x, y| acc + (x - y).norm_sqr())
}

/// `1/2 ||A(UV) - b||^2 + beta ||U - Z||^2 + lambda I(Z)`.
pub fn split_objective(
    problem: &DcProblem,
    params: &EnergyModelParams,
    u: &SpatialFactor,
    z: &SpatialFactor,
    lambda: f64,
    beta: f64,
) -> Result<SplitTerms> {
    u.check_like(z)?;
    let prior = if lambda == 0.0 {
        0.0
    } else {
        lambda * energy_4d(params, z)?
    };
    Ok(SplitTerms {
        data: problem.data_term(u)?,
        coupling: beta * diff_norm_sqr(u, z),
        prior,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// 0 for the initial point, `n` after the n-th alternation.
    pub iteration: usize,
    pub beta: f64,
    pub data: f64,
    pub coupling: f64,
    pub prior: f64,
    pub objective: f64,
    pub cg_iters: usize,
    pub cg_rel_residual: f64,
    pub z_accepted: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    /// CSV, one row per record. With `with_time` false the wall-clock column is 0.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from(
            "iteration,beta,data,coupling,prior,objective,cg_iters,cg_rel_residual,z_accepted,wall_seconds\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.6e},{},{:.3}\n",
                r.iteration,
                r.beta,
                r.data,
                r.coupling,
                r.prior,
                r.objective,
                r.cg_iters,
                r.cg_rel_residual,
                r.z_accepted,
                if with_time { r.wall_seconds } else { 0.0 }
            ));
        }
        out
    }

    pub(crate) fn push(
        &mut self,
        iteration: usize,
        beta: f64,
        terms: SplitTerms,
        cg: Option<&CgOutcome>,
        z_accepted: bool,
        start: Instant,
    ) -> Result<()> {
        let objective = terms.total();
        if ![terms.data, terms.coupling, terms.prior, objective]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::solver(
                format!("outer iteration {iteration}"),
                format!("non-finite objective {terms:?}"),
            ));
        }
        self.records.push(TraceRecord {
            iteration,
            beta,
            data: terms.data,
            coupling: terms.coupling,
            prior: terms.prior,
            objective,
            cg_iters: cg.map_or(0, |c| c.iterations),
            cg_rel_residual: cg.map_or(0.0, |c| c.rel_residual),
            z_accepted,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::forward::{make_coil_maps, make_radial_trajectory};
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_factor(shape: [usize; 3], rank: usize, seed: u64) -> SpatialFactor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpatialFactor(Array4::from_shape_simple_fn(
            (shape[0], shape[1], shape[2], rank),
            || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        ))
    }

    /// Small undersampled radial instance with an orthonormal 2-row basis.
    pub fn instance(seed: u64) -> (KSpaceData, Array2<f64>, Trajectory, CoilMaps, SpatialFactor) {
        let shape = [8, 8, 4];
        let traj = make_radial_trajectory(6, 2, 8, 8, seed)
            .unwrap()
            .stack_of_stars(4)
            .unwrap();
        let coils = make_coil_maps(shape, 2).unwrap();
        let mut v = Array2::zeros((2, 6));
        for t in 0..6 {
            let a = t as f64 * 0.5;
            v[[0, t]] = 1.0 / 6f64.sqrt();
            v[[1, t]] = a.cos();
        }
        // Orthonormalize the second row against the first.
        let d: f64 = (0..6).map(|t| v[[0, t]] * v[[1, t]]).sum();
        for t in 0..6 {
            v[[1, t]] -= d * v[[0, t]];
        }
        let n: f64 = (0..6).map(|t| v[[1, t]] * v[[1, t]]).sum::<f64>().sqrt();
        v.row_mut(1).mapv_inplace(|x| x / n);
        let truth = random_factor(shape, 2, seed + 100);
        let b = subspace_forward(&truth, v.view(), &traj, &coils).unwrap();
        (b, v, traj, coils, truth)
    }
}
