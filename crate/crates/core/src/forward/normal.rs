//! Normal operator `G(U) = A^H(A(U V)) V^T` of the subspace encoding.
//!
//! For stack-of-stars frames (every frame samples each integer kz residue
//! once with the same in-plane pattern) the z-direction of `A^H A` is a
//! scaled identity and the in-plane part is a convolution with the point
//! spread function `P(d) = sum_k exp(2 pi i k . d / M)`. Folding the temporal
//! basis into the kernels gives `R x R` convolution kernels that are applied
//! exactly by FFT on a twice-oversampled grid, with no interpolation. Other
//! trajectories fall back to the direct operator.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nudft::group_by_kz;
use super::subspace::{check_operands, subspace_adjoint, subspace_forward};
use super::{CoilMaps, SpatialFactor, Trajectory};
use crate::error::{Error, Result};
use crate::fft::Fft2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalRoute {
    Toeplitz,
    Direct,
}

enum Route {
    Toeplitz {
        /// Spectra of the `R x R` kernels on the `2Mx x 2My` grid, row-major in `(r, r')`.
        kernels: Vec<Vec<Complex64>>,
        fft: Fft2,
    },
    Direct {
        traj: Trajectory,
        v: Array2<f64>,
    },
}

pub struct NormalOperator {
    shape: [usize; 3],
    rank: usize,
    coils: CoilMaps,
    route: Route,
}

/// In-plane coordinates shared by all kz planes, if the frame is a complete
/// stack over the integer kz residues modulo `nz`.
fn stacked_plane(frame: &[[f64; 3]], nz: usize) -> Option<Vec<[f64; 2]>> {
    let groups = group_by_kz(frame);
    if groups.len() != nz {
        return None;
    }
    let mut seen = vec![false; nz];
    for g in &groups {
        if g.kz.fract() != 0.0 {
            return None;
        }
        let res = (g.kz as i64).rem_euclid(nz as i64) as usize;
        if std::mem::replace(&mut seen[res], true) {
            return None;
        }
    }
    let first = &groups[0].samples;
    for g in &groups[1..] {
        if g.samples.len() != first.len() {
            return None;
        }
        for (&a, &b) in first.iter().zip(&g.samples) {
            if frame[a][0] != frame[b][0] || frame[a][1] != frame[b][1] {
                return None;
            }
        }
    }
    Some(first.iter().map(|&i| [frame[i][0], frame[i][1]]).collect())
}

/// Lag phasors `exp(2 pi i k d / n)` on a length-`2n` circular lag axis.
fn lag_phasors(k: f64, n: usize) -> Vec<Complex64> {
    (0..2 * n)
        .map(|i| {
            if i == n {
                // Lag +-n never couples two voxels of the unpadded grid.
                Complex64::new(0.0, 0.0)
            } else {
                let d = if i < n {
                    i as f64
                } else {
                    i as f64 - 2.0 * n as f64
                };
                Complex64::cis(2.0 * PI * k * d / n as f64)
            }
        })
        .collect()
}

impl NormalOperator {
    /// Builds the fastest exact route available for the trajectory.
    pub fn new(traj: &Trajectory, coils: &CoilMaps, v: ArrayView2<f64>) -> Result<Self> {
        let shape = coils.shape();
        check_operands(shape, v.nrows(), v, traj, coils)?;
        let [nx, ny, nz] = shape;
        let planes: Option<Vec<Vec<[f64; 2]>>> =
            traj.frames().iter().map(|f| stacked_plane(f, nz)).collect();
        let Some(planes) = planes else {
            return Self::direct(traj, coils, v);
        };

        let rank = v.nrows();
        let (gx, gy) = (2 * nx, 2 * ny);
        let mut kernels = vec![vec![Complex64::new(0.0, 0.0); gx * gy]; rank * rank];
        let mut psf = vec![Complex64::new(0.0, 0.0); gx * gy];
        for (tau, plane) in planes.iter().enumerate() {
            psf.fill(Complex64::new(0.0, 0.0));
            for k in plane {
                let px = lag_phasors(k[0], nx);
                let py = lag_phasors(k[1], ny);
                for (row, &a) in psf.chunks_exact_mut(gy).zip(&px) {
                    for (p, &b) in row.iter_mut().zip(&py) {
                        *p += a * b;
                    }
                }
            }
            for r in 0..rank {
                for q in r..rank {
                    let w = nz as f64 * v[[r, tau]] * v[[q, tau]];
                    if w != 0.0 {
                        for (kk, p) in kernels[r * rank + q].iter_mut().zip(&psf) {
                            *kk += w * p;
                        }
                    }
                }
            }
        }
        let fft = Fft2::new(gx, gy);
        let mut scratch = fft.scratch();
        for r in 0..rank {
            for q in r..rank {
                fft.forward(&mut kernels[r * rank + q], gx, &mut scratch);
                if q != r {
                    kernels[q * rank + r] = kernels[r * rank + q].clone();
                }
            }
        }
        Ok(NormalOperator {
            shape,
            rank,
            coils: coils.clone(),
            route: Route::Toeplitz { kernels, fft },
        })
    }

    /// Normal operator evaluated as adjoint-of-forward with the direct NUDFT.
    pub fn direct(traj: &Trajectory, coils: &CoilMaps, v: ArrayView2<f64>) -> Result<Self> {
        let shape = coils.shape();
        check_operands(shape, v.nrows(), v, traj, coils)?;
        Ok(NormalOperator {
            shape,
            rank: v.nrows(),
            coils: coils.clone(),
            route: Route::Direct {
                traj: traj.clone(),
                v: v.to_owned(),
            },
        })
    }

    pub fn route(&self) -> NormalRoute {
        match self.route {
            Route::Toeplitz { .. } => NormalRoute::Toeplitz,
            Route::Direct { .. } => NormalRoute::Direct,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, u: &SpatialFactor) -> Result<SpatialFactor> {
        if u.shape() != self.shape || u.rank() != self.rank {
            return Err(Error::domain(format!(
                "spatial factor {:?}x{} does not match operator {:?}x{}",
                u.shape(),
                u.rank(),
                self.shape,
                self.rank
            )));
        }
        match &self.route {
            Route::Direct { traj, v } => {
                let b = subspace_forward(u, v.view(), traj, &self.coils)?;
                subspace_adjoint(b.samples.view(), v.view(), traj, &self.coils)
            }
            Route::Toeplitz { kernels, fft } => Ok(self.apply_toeplitz(u, kernels, fft)),
        }
    }

    fn apply_toeplitz(
        &self,
        u: &SpatialFactor,
        kernels: &[Vec<Complex64>],
        fft: &Fft2,
    ) -> SpatialFactor {
        let [nx, ny, nz] = self.shape;
        let rank = self.rank;
        let (gy, glen) = (2 * ny, fft.len());
        let norm = 1.0 / glen as f64;
        let mut scratch = fft.scratch();
        let u_flat = u.0.as_slice().expect("standard layout");
        let mut out = SpatialFactor::zeros(self.shape, rank);
        let out_flat = out.0.as_slice_mut().expect("standard layout");
        let idx = |x: usize, y: usize, z: usize| (x * ny + y) * nz + z;

        let mut spectra = vec![Complex64::new(0.0, 0.0); rank * nz * glen];
        let mut acc = vec![Complex64::new(0.0, 0.0); glen];
        for c in 0..self.coils.n_coils() {
            let sens = self.coils.coil(c);
            let sens = sens.as_standard_layout();
            let s = sens.as_slice().expect("standard layout");
            for r in 0..rank {
                for z in 0..nz {
                    let buf = &mut spectra[(r * nz + z) * glen..(r * nz + z + 1) * glen];
                    buf.fill(Complex64::new(0.0, 0.0));
                    for x in 0..nx {
                        for y in 0..ny {
                            let i = idx(x, y, z);
                            buf[x * gy + y] = s[i] * u_flat[i * rank + r];
                        }
                    }
                    fft.forward(buf, nx, &mut scratch);
                }
            }
            for r in 0..rank {
                for z in 0..nz {
                    acc.fill(Complex64::new(0.0, 0.0));
                    for q in 0..rank {
                        let k = &kernels[r * rank + q];
                        let f = &spectra[(q * nz + z) * glen..(q * nz + z + 1) * glen];
                        for ((a, &kk), &ff) in acc.iter_mut().zip(k).zip(f) {
                            *a += kk * ff;
                        }
                    }
                    fft.inverse(&mut acc, nx, &mut scratch);
                    for x in 0..nx {
                        for y in 0..ny {
                            let i = idx(x, y, z);
                            out_flat[i * rank + r] += s[i].conj() * acc[x * gy + y] * norm;
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest eigenvalue by power iteration from a fixed pseudo-random start.
    /// Returns the estimate and the relative change over the final iteration.
    pub fn max_eigenvalue(&self, iters: usize) -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x = SpatialFactor::zeros(self.shape, self.rank);
        x.0.mapv_inplace(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let n = x.norm();
        x = x.scaled(1.0 / n);
        let (mut est, mut change) = (0.0, f64::INFINITY);
        for _ in 0..iters.max(1) {
            let y = self.apply(&x)?;
            let lam = x.inner(&y).re;
            let ny = y.norm();
            if !ny.is_finite() || ny == 0.0 {
                est = lam;
                break;
            }
            change = ((lam - est) / lam).abs();
            est = lam;
            x = y.scaled(1.0 / ny);
        }
        Ok((est, change))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_cartesian_trajectory, make_coil_maps, make_radial_trajectory};
    use ndarray::Array4;

    fn random_factor(seed: u64, shape: [usize; 3], rank: usize) -> SpatialFactor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpatialFactor(Array4::from_shape_simple_fn(
            (shape[0], shape[1], shape[2], rank),
            || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        ))
    }

    fn rel_diff(a: &SpatialFactor, b: &SpatialFactor) -> f64 {
        let mut d = a.clone();
        d.axpy(Complex64::new(-1.0, 0.0), b);
        d.norm() / b.norm()
    }

    #[test]
    fn toeplitz_matches_direct_route() {
        let shape = [6, 5, 4];
        let traj = make_radial_trajectory(7, 2, 8, 6, 3)
            .unwrap()
            .stack_of_stars(4)
            .unwrap();
        let coils = make_coil_maps(shape, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Array2::from_shape_simple_fn((2, 7), || rng.gen_range(-1.0..1.0));
        let fast = NormalOperator::new(&traj, &coils, v.view()).unwrap();
        assert_eq!(fast.route(), NormalRoute::Toeplitz);
        let slow = NormalOperator::direct(&traj, &coils, v.view()).unwrap();
        let u = random_factor(2, shape, 2);
        let a = fast.apply(&u).unwrap();
        let b = slow.apply(&u).unwrap();
        assert!(rel_diff(&a, &b) < 1e-11, "{}", rel_diff(&a, &b));
    }

    #[test]
    fn non_stacked_trajectory_uses_direct_route() {
        let shape = [4, 4, 2];
        let frames = vec![vec![[0.5, 0.25, 0.0], [1.0, -1.0, 0.5]]; 3];
        let traj = Trajectory::from_frames(frames, 1, 2, 1).unwrap();
        let coils = CoilMaps::unit(shape);
        let v = Array2::ones((1, 3));
        let op = NormalOperator::new(&traj, &coils, v.view()).unwrap();
        assert_eq!(op.route(), NormalRoute::Direct);
    }

    #[test]
    fn cartesian_normal_operator_is_scaled_identity() {
        let shape = [4, 6, 2];
        let traj = make_cartesian_trajectory(3, 4, 6)
            .unwrap()
            .stack_of_stars(2)
            .unwrap();
        let coils = CoilMaps::unit(shape);
        // Orthonormal rows.
        let s = 1.0 / 3f64.sqrt();
        let v = ndarray::arr2(&[[s, s, s], [1.0 / 2f64.sqrt(), 0.0, -1.0 / 2f64.sqrt()]]);
        let op = NormalOperator::new(&traj, &coils, v.view()).unwrap();
        assert_eq!(op.route(), NormalRoute::Toeplitz);
        let u = random_factor(3, shape, 2);
        let g = op.apply(&u).unwrap();
        assert!(rel_diff(&g, &u.scaled(48.0)) < 1e-12);
        let (lam, _) = op.max_eigenvalue(5).unwrap();
        assert!((lam - 48.0).abs() < 1e-9);
    }
}
