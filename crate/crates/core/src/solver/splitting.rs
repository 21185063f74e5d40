use std::time::Instant;

use ndarray::ArrayView2;
use num_complex::Complex64;

use super::{diff_norm_sqr, CgOutcome, DcProblem, ReconConfig, SolverTrace, SplitTerms};
use crate::energy::{energy_4d, energy_and_score_4d, EnergyModelParams};
use crate::error::{Error, Result};
use crate::forward::{CoilMaps, KSpaceData, SpatialFactor, Trajectory};

#[derive(Clone, Debug)]
pub struct ZUpdate {
    pub z: SpatialFactor,
    pub steps_taken: usize,
}

/// `||U - Z||^2 + (lambda / beta) I(Z)`, the denoising subproblem.
pub fn z_objective(
    u: &SpatialFactor,
    z: &SpatialFactor,
    params: &EnergyModelParams,
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let prior = if lambda == 0.0 {
        0.0
    } else {
        energy_4d(params, z)?
    };
    Ok(diff_norm_sqr(u, z) + lambda / beta * prior)
}

/// Steepest descent on the denoising subproblem, started at `Z = U`.
pub fn z_update(
    u: &SpatialFactor,
    params: &EnergyModelParams,
    cfg: &ReconConfig,
    beta: f64,
) -> Result<ZUpdate> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    let mut z = u.clone();
    if cfg.lambda == 0.0 {
        return Ok(ZUpdate { z, steps_taken: 0 });
    }
    let weight = cfg.lambda / beta;
    let mut steps_taken = 0;
    for step in 0..cfg.prox_steps {
        let (_, score) = energy_and_score_4d(params, &z)?;
        // grad = 2 (Z - U) + (lambda / 2 beta)(score_x + score_y)
        let mut grad = score.scaled(weight);
        ndarray::Zip::from(&mut grad.0)
            .and(&z.0)
            .and(&u.0)
            .for_each(|g, &zv, &uv| *g += (zv - uv) * 2.0);
        if cfg.prox_grad_tol > 0.0 && grad.norm() <= cfg.prox_grad_tol {
            break;
        }
        z.axpy(Complex64::new(-cfg.prox_step_size, 0.0), &grad);
        steps_taken += 1;
        if !z.is_finite() {
            return Err(Error::solver(
                format!("z-update step {step}"),
                "iterate became non-finite",
            ));
        }
    }
    Ok(ZUpdate { z, steps_taken })
}

/// Solves `(G + 2 beta I) U = A^H b V^T + 2 beta Z` by CG from `warm_start`.
pub fn u_update(
    problem: &DcProblem,
    z: &SpatialFactor,
    cfg: &ReconConfig,
    beta: f64,
    warm_start: &SpatialFactor,
) -> Result<CgOutcome> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    z.check_like(&problem.rhs)?;
    let mut rhs = problem.rhs.clone();
    rhs.axpy(Complex64::new(2.0 * beta, 0.0), z);
    super::conjugate_gradient(
        |x| {
            let mut g = problem.gram(x)?;
            g.axpy(Complex64::new(2.0 * beta, 0.0), x);
            Ok(g)
        },
        &rhs,
        warm_start,
        cfg.cg_max_iters,
        cfg.cg_residual_tol,
    )
}

/// Alternating minimization of the split objective. Returns the spatial
/// factor in data units and the per-iteration trace (in solver units).
pub fn map_reconstruct(
    b: &KSpaceData,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
    params: &EnergyModelParams,
    cfg: &ReconConfig,
) -> Result<(SpatialFactor, SolverTrace)> {
    cfg.validate()?;
    params.validate()?;
    let start = Instant::now();
    let problem = DcProblem::new(b, v, traj, coils, cfg)?;
    let lambda = cfg.lambda;
    let prior_of = |z: &SpatialFactor| -> Result<f64> {
        Ok(if lambda == 0.0 {
            0.0
        } else {
            lambda * energy_4d(params, z)?
        })
    };

    let mut u = problem.adjoint_init()?;
    let mut z = u.clone();
    let mut prior_z = prior_of(&z)?;
    let mut trace = SolverTrace::default();
    let terms = SplitTerms {
        data: problem.data_term(&u)?,
        coupling: 0.0,
        prior: prior_z,
    };
    trace.push(0, cfg.beta_at(0), terms, None, true, start)?;

    for n in 0..cfg.outer_iters {
        let beta = cfg.beta_at(n);
        let candidate = z_update(&u, params, cfg, beta)?.z;
        let prior_c = prior_of(&candidate)?;
        let accepted = !cfg.descent_safeguard
            || beta * diff_norm_sqr(&u, &candidate) + prior_c
                <= beta * diff_norm_sqr(&u, &z) + prior_z;
        if accepted {
            z = candidate;
            prior_z = prior_c;
        }
        let cg = u_update(&problem, &z, cfg, beta, &u)?;
        u = cg.x.clone();
        let terms = SplitTerms {
            data: problem.data_term(&u)?,
            coupling: beta * diff_norm_sqr(&u, &z),
            prior: prior_z,
        };
        trace.push(n + 1, beta, terms, Some(&cg), accepted, start)?;
    }
    Ok((problem.unscale(&u), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{init_network, Activation, NetworkArch};
    use crate::forward::{make_cartesian_trajectory, make_coil_maps, subspace_forward};
    use crate::solver::test_support::{instance, random_factor};
    use crate::solver::BetaStep;
    use ndarray::Array2;

    fn small_model(seed: u64) -> EnergyModelParams {
        let arch = NetworkArch::from_channels(&[2, 4, 2], 3, Activation::Silu, true);
        let mut p = init_network(&arch, seed).unwrap();
        // Push away from the identity so the prior is active.
        p.weights.iter_mut().for_each(|w| *w *= 3.0);
        p
    }

    fn rel_err(a: &SpatialFactor, b: &SpatialFactor) -> f64 {
        diff_norm_sqr(a, b).sqrt() / b.norm()
    }

    #[test]
    fn z_update_trivial_cases() {
        let u = random_factor([6, 6, 4], 2, 1);
        let cfg0 = ReconConfig {
            lambda: 0.0,
            ..ReconConfig::default()
        };
        assert_eq!(z_update(&u, &small_model(1), &cfg0, 1e-4).unwrap().z, u);
        let id = crate::energy::EnergyModelParams::zeros(NetworkArch::from_channels(
            &[2, 4, 2],
            3,
            Activation::Silu,
            true,
        ))
        .unwrap();
        assert_eq!(
            z_update(&u, &id, &ReconConfig::default(), 1e-4).unwrap().z,
            u
        );
        assert!(z_update(&u, &id, &ReconConfig::default(), 0.0).is_err());
    }

    #[test]
    fn converged_z_update_descends() {
        let u = random_factor([6, 6, 4], 2, 2).scaled(0.5);
        let model = small_model(2);
        let cfg = ReconConfig {
            lambda: 2e-4,
            prox_steps: 50,
            prox_step_size: 0.05,
            ..ReconConfig::default()
        };
        let beta = 1e-4;
        let z = z_update(&u, &model, &cfg, beta).unwrap().z;
        let before = z_objective(&u, &u, &model, cfg.lambda, beta).unwrap();
        let after = z_objective(&u, &z, &model, cfg.lambda, beta).unwrap();
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn u_update_large_beta_returns_z() {
        let (b, v, traj, coils, _) = instance(3);
        let p = DcProblem::new(&b, v.view(), &traj, &coils, &ReconConfig::default()).unwrap();
        let z = random_factor(p.shape(), 2, 4);
        let out = u_update(
            &p,
            &z,
            &ReconConfig::default(),
            1e6,
            &SpatialFactor::zeros(p.shape(), 2),
        )
        .unwrap();
        assert!(rel_err(&out.x, &z) < 1e-3);
    }

    #[test]
    fn u_update_reduces_its_objective_and_respects_cap() {
        let (b, v, traj, coils, _) = instance(5);
        let cfg = ReconConfig::default();
        let p = DcProblem::new(&b, v.view(), &traj, &coils, &cfg).unwrap();
        let z = random_factor(p.shape(), 2, 6).scaled(0.1);
        let warm = random_factor(p.shape(), 2, 7).scaled(0.1);
        let beta = 1e-2;
        let obj = |u: &SpatialFactor| p.data_term(u).unwrap() + beta * diff_norm_sqr(u, &z);
        let out = u_update(&p, &z, &cfg, beta, &warm).unwrap();
        assert!(out.iterations <= cfg.cg_max_iters);
        assert!(obj(&out.x) <= obj(&warm));
    }

    #[test]
    fn system_is_hermitian_positive_definite() {
        let (b, v, traj, coils, _) = instance(8);
        let p = DcProblem::new(&b, v.view(), &traj, &coils, &ReconConfig::default()).unwrap();
        let beta = 1e-4;
        let m = |x: &SpatialFactor| {
            let mut g = p.gram(x).unwrap();
            g.axpy(Complex64::new(2.0 * beta, 0.0), x);
            g
        };
        for s in 0..5 {
            let x = random_factor(p.shape(), 2, 20 + s);
            let y = random_factor(p.shape(), 2, 40 + s);
            assert!(x.inner(&m(&x)).re > 0.0);
            let lhs = y.inner(&m(&x));
            let rhs = x.inner(&m(&y)).conj();
            assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
        }
    }

    #[test]
    fn exact_recovery_on_full_cartesian_sampling() {
        let shape = [8, 8, 4];
        let traj = make_cartesian_trajectory(4, 8, 8)
            .unwrap()
            .stack_of_stars(4)
            .unwrap();
        let coils = make_coil_maps(shape, 2).unwrap();
        let v = Array2::from_shape_fn((2, 4), |(r, t)| if r == t { 1.0 } else { 0.0 });
        let truth = random_factor(shape, 2, 9);
        let b = subspace_forward(&truth, v.view(), &traj, &coils).unwrap();
        let cfg = ReconConfig {
            cg_max_iters: 200,
            cg_residual_tol: 1e-12,
            ..ReconConfig::default()
        };
        let p = DcProblem::new(&b, v.view(), &traj, &coils, &cfg).unwrap();
        let out = u_update(
            &p,
            &SpatialFactor::zeros(shape, 2),
            &cfg,
            0.0,
            &SpatialFactor::zeros(shape, 2),
        )
        .unwrap();
        assert!(rel_err(&p.unscale(&out.x), &truth) < 1e-6);

        // Full MAP loop with the prior switched off.
        let map_cfg = ReconConfig {
            lambda: 0.0,
            outer_iters: 3,
            ..cfg
        };
        let (u, _) =
            map_reconstruct(&b, v.view(), &traj, &coils, &small_model(1), &map_cfg).unwrap();
        assert!(rel_err(&u, &truth) < 1e-3);
    }

    #[test]
    fn split_objective_descends_at_fixed_beta() {
        let (b, v, traj, coils, _) = instance(11);
        let cfg = ReconConfig {
            outer_iters: 6,
            beta_schedule: vec![
                BetaStep {
                    from_iter: 0,
                    beta: 1e-3,
                },
                BetaStep {
                    from_iter: 4,
                    beta: 4e-3,
                },
            ],
            lambda: 2e-3,
            ..ReconConfig::default()
        };
        let (u, trace) =
            map_reconstruct(&b, v.view(), &traj, &coils, &small_model(4), &cfg).unwrap();
        assert!(u.is_finite());
        assert_eq!(trace.records.len(), 7);
        for w in trace.records.windows(2) {
            assert!(w[1].cg_iters <= cfg.cg_max_iters);
            if w[0].beta == w[1].beta {
                assert!(w[1].objective <= w[0].objective * (1.0 + 1e-8), "{:?}", w);
            }
        }
        let csv = trace.to_csv(false);
        assert_eq!(csv.lines().count(), 8);
    }
}
