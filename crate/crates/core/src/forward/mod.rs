//! Radial trajectories, coil sensitivities and the multichannel Fourier
//! encoding of a subspace-factorized image series.
//!
//! Gradients of real losses with respect to complex unknowns follow one
//! convention throughout the crate: the complex number `dL/da + i dL/db`
//! for `u = a + ib`, i.e. twice the Wirtinger derivative `dL/du*`. With it
//! the gradient of `1/2 ||A x - b||^2` is `A^H (A x - b)`.

pub mod coils;
pub mod normal;
pub mod nudft;
pub mod subspace;
pub mod trajectory;

use ndarray::{Array3, Array4, ArrayView3, ArrayViewMut3, Axis, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use coils::{make_coil_maps, CoilMaps};
pub use normal::{NormalOperator, NormalRoute};
pub use nudft::{nudft_adjoint, nudft_forward};
pub use subspace::{subspace_adjoint, subspace_forward, subspace_gradient};
pub use trajectory::{make_cartesian_trajectory, make_radial_trajectory, Trajectory};

/// Spatial coefficients of the temporal basis, shape `(Mx, My, Mz, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFactor(pub Array4<Complex64>);

impl SpatialFactor {
    pub fn zeros(shape: [usize; 3], rank: usize) -> Self {
        SpatialFactor(Array4::zeros((shape[0], shape[1], shape[2], rank)))
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.0.shape();
        [s[0], s[1], s[2]]
    }

    pub fn rank(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn basis(&self, r: usize) -> ArrayView3<'_, Complex64> {
        self.0.index_axis(Axis(3), r)
    }

    pub fn basis_mut(&mut self, r: usize) -> ArrayViewMut3<'_, Complex64> {
        self.0.index_axis_mut(Axis(3), r)
    }

    /// `sum conj(self) * other`.
    pub fn inner(&self, other: &SpatialFactor) -> Complex64 {
        Zip::from(&self.0)
            .and(&other.0)
            .fold(Complex64::new(0.0, 0.0), |acc, a, b| acc + a.conj() * b)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: Complex64, x: &SpatialFactor) {
        Zip::from(&mut self.0)
            .and(&x.0)
            .for_each(|s, v| *s += a * v);
    }

    pub fn scaled(&self, a: f64) -> SpatialFactor {
        SpatialFactor(self.0.mapv(|v| v * a))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Image at one frame: `sum_r u_r * v[r, frame]`.
    pub(crate) fn combine(&self, weights: impl Iterator<Item = f64>) -> Array3<Complex64> {
        let s = self.shape();
        let mut out = Array3::zeros((s[0], s[1], s[2]));
        for (r, w) in weights.enumerate() {
            if w != 0.0 {
                out.scaled_add(Complex64::new(w, 0.0), &self.basis(r));
            }
        }
        out
    }

    pub fn check_like(&self, other: &SpatialFactor) -> Result<()> {
        if self.0.shape() != other.0.shape() {
            return Err(Error::domain(format!(
                "spatial factor shapes differ: {:?} vs {:?}",
                self.0.shape(),
                other.0.shape()
            )));
        }
        Ok(())
    }
}

/// Multichannel samples, shape `(frames, samples_per_frame, coils)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    pub samples: Array3<Complex64>,
    /// Standard deviation of each real and imaginary noise component.
    pub noise_sigma: f64,
}

impl KSpaceData {
    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn check_against(&self, traj: &Trajectory, coils: &CoilMaps) -> Result<()> {
        let expected = (traj.n_frames(), traj.samples_per_frame(), coils.n_coils());
        if self.samples.dim() != expected {
            return Err(Error::domain(format!(
                "k-space shape {:?} does not match trajectory/coils {:?}",
                self.samples.dim(),
                expected
            )));
        }
        Ok(())
    }
}
