use ndarray::{ArrayView2, ArrayViewMut1, Axis};
use num_complex::Complex64;

use super::{DcProblem, ReconConfig};
use crate::error::{Error, Result};
use crate::forward::{CoilMaps, KSpaceData, SpatialFactor, Trajectory};

/// `argmin 1/2 ||A(UV) - b||^2 + mu ||U||^2` by CG from zero, using the
/// baseline CG limits.
pub fn baseline_quadratic(
    b: &KSpaceData,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
    mu: f64,
    cfg: &ReconConfig,
) -> Result<SpatialFactor> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("mu must be positive, got {mu}")));
    }
    let problem = DcProblem::new(b, v, traj, coils, cfg)?;
    let zero = SpatialFactor::zeros(problem.shape(), problem.rank());
    let cg_cfg = ReconConfig {
        cg_max_iters: cfg.baseline_cg_max_iters,
        cg_residual_tol: cfg.baseline_cg_tol,
        ..cfg.clone()
    };
    let out = super::u_update(&problem, &zero, &cg_cfg, mu, &zero)?;
    Ok(problem.unscale(&out.x))
}

fn haar_axis(mut lane: ArrayViewMut1<Complex64>, buf: &mut Vec<Complex64>, inverse: bool) {
    let n = lane.len();
    let half = n / 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    buf.clear();
    buf.extend(lane.iter().copied());
    if !inverse {
        for i in 0..half {
            let (a, b) = (buf[2 * i], buf[2 * i + 1]);
            lane[i] = (a + b) * s;
            lane[half + (n - 2 * half) + i] = (a - b) * s;
        }
        if n % 2 == 1 {
            // Odd length: the last sample passes through between the bands.
            lane[half] = buf[n - 1];
        }
    } else {
        let hi0 = half + (n - 2 * half);
        for i in 0..half {
            let (l, h) = (buf[i], buf[hi0 + i]);
            lane[2 * i] = (l + h) * s;
            lane[2 * i + 1] = (l - h) * s;
        }
        if n % 2 == 1 {
            lane[n - 1] = buf[half];
        }
    }
}

fn haar_3d(u: &SpatialFactor, inverse: bool) -> SpatialFactor {
    let mut out = u.clone();
    let mut buf = Vec::new();
    let axes: [usize; 3] = if inverse { [2, 1, 0] } else { [0, 1, 2] };
    for ax in axes {
        for lane in out.0.lanes_mut(Axis(ax)) {
            haar_axis(lane, &mut buf, inverse);
        }
    }
    out
}

/// Single-level orthonormal 3D Haar transform of every basis volume.
pub fn haar_forward(u: &SpatialFactor) -> SpatialFactor {
    haar_3d(u, false)
}

pub fn haar_inverse(c: &SpatialFactor) -> SpatialFactor {
    haar_3d(c, true)
}

/// Prox of `t |.|` on a complex value: shrink the magnitude by `t`.
pub fn soft_threshold(x: Complex64, t: f64) -> Complex64 {
    let m = x.norm();
    if m <= t {
        Complex64::new(0.0, 0.0)
    } else {
        x * ((m - t) / m)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WaveletTrace {
    /// Composite objective before the first and after every iteration (solver units).
    pub objective: Vec<f64>,
}

fn l1_norm(u: &SpatialFactor) -> f64 {
    haar_forward(u).0.iter().map(|c| c.norm()).sum()
}

/// Proximal gradient on `1/2 ||A(UV) - b||^2 + gamma ||W U||_1` with step
/// `1 / L`, optionally with Nesterov momentum, started from zero.
pub fn baseline_wavelet(
    b: &KSpaceData,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
    gamma_w: f64,
    iters: usize,
    cfg: &ReconConfig,
) -> Result<(SpatialFactor, WaveletTrace)> {
    if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
        return Err(Error::domain(format!(
            "wavelet weight must be >= 0, got {gamma_w}"
        )));
    }
    let problem = DcProblem::new(b, v, traj, coils, cfg)?;
    let step = 1.0 / problem.lipschitz;
    let objective = |u: &SpatialFactor, gu: &SpatialFactor| {
        problem.data_term_with_gram(u, gu) + gamma_w * l1_norm(u)
    };

    let mut u = SpatialFactor::zeros(problem.shape(), problem.rank());
    let mut gu = problem.gram(&u)?;
    let mut trace = WaveletTrace {
        objective: vec![objective(&u, &gu)],
    };
    let mut y = u.clone();
    let mut gy = gu.clone();
    let mut t = 1.0f64;
    for it in 0..iters {
        // grad = G y - A^H b
        let mut g = gy.clone();
        g.axpy(Complex64::new(-1.0, 0.0), &problem.rhs);
        let mut x = y.clone();
        x.axpy(Complex64::new(-step, 0.0), &g);
        let mut c = haar_forward(&x);
        c.0.mapv_inplace(|v| soft_threshold(v, gamma_w * step));
        let next = haar_inverse(&c);
        if !next.is_finite() {
            return Err(Error::solver(
                format!("wavelet iteration {it}"),
                "iterate became non-finite",
            ));
        }
        let g_next = problem.gram(&next)?;
        if cfg.wavelet_momentum {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let w = (t - 1.0) / t_next;
            y = next.scaled(1.0 + w);
            y.axpy(Complex64::new(-w, 0.0), &u);
            gy = g_next.scaled(1.0 + w);
            gy.axpy(Complex64::new(-w, 0.0), &gu);
            t = t_next;
        } else {
            y = next.clone();
            gy = g_next.clone();
        }
        u = next;
        gu = g_next;
        trace.objective.push(objective(&u, &gu));
    }
    Ok((problem.unscale(&u), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::diff_norm_sqr;
    use crate::solver::splitting::map_reconstruct;
    use crate::solver::test_support::{instance, random_factor};

    #[test]
    fn haar_is_orthonormal_for_even_and_odd_sizes() {
        for shape in [[4, 6, 2], [5, 3, 7]] {
            let u = random_factor(shape, 2, 1);
            let c = haar_forward(&u);
            assert!((c.norm() - u.norm()).abs() < 1e-12 * u.norm());
            let back = haar_inverse(&c);
            assert!(diff_norm_sqr(&back, &u).sqrt() < 1e-12 * u.norm());
        }
    }

    #[test]
    fn haar_of_constant_volume_concentrates_in_lowpass() {
        let mut u = SpatialFactor::zeros([2, 2, 2], 1);
        u.0.fill(Complex64::new(1.0, 0.0));
        let c = haar_forward(&u);
        assert!((c.0[[0, 0, 0, 0]].re - 8f64.sqrt()).abs() < 1e-12);
        assert!(c.0.iter().skip(1).all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn soft_threshold_is_the_scalar_prox() {
        // argmin_y 1/2 |y - x|^2 + t |y| for real x: sign(x) max(|x| - t, 0).
        for &(x, t) in &[(1.5, 0.5), (-0.3, 0.5), (-2.0, 0.25), (0.0, 1.0)] {
            let closed: f64 = if f64::abs(x) <= t {
                0.0
            } else {
                x - t * f64::signum(x)
            };
            assert!((soft_threshold(Complex64::new(x, 0.0), t).re - closed).abs() < 1e-15);
        }
        let z = Complex64::new(3.0, 4.0);
        assert!((soft_threshold(z, 1.0) - Complex64::new(2.4, 3.2)).norm() < 1e-15);
    }

    #[test]
    fn quadratic_limits() {
        let (b, v, traj, coils, _) = instance(1);
        let cfg = ReconConfig::default();
        let huge = baseline_quadratic(&b, v.view(), &traj, &coils, 1e12, &cfg).unwrap();
        let normal = baseline_quadratic(&b, v.view(), &traj, &coils, 1e-3, &cfg).unwrap();
        assert!(huge.norm() < 1e-9 * normal.norm());
        let zero_b = KSpaceData {
            samples: b.samples.mapv(|_| Complex64::new(0.0, 0.0)),
            noise_sigma: 0.0,
        };
        assert_eq!(
            baseline_quadratic(&zero_b, v.view(), &traj, &coils, 1e-3, &cfg)
                .unwrap()
                .max_abs(),
            0.0
        );
    }

    #[test]
    fn quadratic_matches_unregularized_map_loop() {
        // Dense sampling so the least-squares problem is well posed.
        let shape = [6, 6, 2];
        let traj = crate::forward::make_radial_trajectory(4, 12, 12, 6, 3)
            .unwrap()
            .stack_of_stars(2)
            .unwrap();
        let coils = crate::forward::make_coil_maps(shape, 2).unwrap();
        let v = ndarray::Array2::from_shape_fn((2, 4), |(r, t)| {
            if r == 0 {
                0.5
            } else {
                [0.5, -0.5, 0.5, -0.5][t]
            }
        });
        let truth = random_factor(shape, 2, 5);
        let b = crate::forward::subspace_forward(&truth, v.view(), &traj, &coils).unwrap();
        let cfg = ReconConfig {
            lambda: 0.0,
            outer_iters: 10,
            cg_max_iters: 300,
            cg_residual_tol: 1e-10,
            baseline_cg_max_iters: 300,
            baseline_cg_tol: 1e-10,
            ..ReconConfig::default()
        };
        let q = baseline_quadratic(&b, v.view(), &traj, &coils, 1e-9, &cfg).unwrap();
        let dummy =
            crate::energy::EnergyModelParams::zeros(crate::energy::NetworkArch::default()).unwrap();
        let (m, _) = map_reconstruct(&b, v.view(), &traj, &coils, &dummy, &cfg).unwrap();
        let rel = diff_norm_sqr(&q, &m).sqrt() / q.norm();
        assert!(rel < 1e-6, "{rel}");
        assert!(diff_norm_sqr(&q, &truth).sqrt() / truth.norm() < 1e-5);
    }

    #[test]
    fn wavelet_objective_never_increases() {
        let (b, v, traj, coils, _) = instance(2);
        let cfg = ReconConfig::default();
        for gamma in [0.0, 0.02] {
            let (_, trace) =
                baseline_wavelet(&b, v.view(), &traj, &coils, gamma, 25, &cfg).unwrap();
            for w in trace.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{gamma}: {w:?}");
            }
        }
        let (huge, _) = baseline_wavelet(&b, v.view(), &traj, &coils, 1e9, 5, &cfg).unwrap();
        assert_eq!(huge.max_abs(), 0.0);
    }
}
