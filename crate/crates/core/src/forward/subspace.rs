use ndarray::{s, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;

use super::{nudft_adjoint, nudft_forward, CoilMaps, KSpaceData, SpatialFactor, Trajectory};
use crate::error::{Error, Result};

pub(crate) fn check_operands(
    shape: [usize; 3],
    rank: usize,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
) -> Result<()> {
    if v.nrows() != rank {
        return Err(Error::domain(format!(
            "basis has {} rows, spatial factor rank is {rank}",
            v.nrows()
        )));
    }
    if v.ncols() != traj.n_frames() {
        return Err(Error::domain(format!(
            "basis has {} frames, trajectory has {}",
            v.ncols(),
            traj.n_frames()
        )));
    }
    if coils.shape() != shape {
        return Err(Error::domain(format!(
            "coil maps {:?} do not match spatial shape {:?}",
            coils.shape(),
            shape
        )));
    }
    Ok(())
}

/// `A(U V)`: frame `tau` is the NUDFT of `sum_r u_r v[r, tau]`.
pub fn subspace_forward(
    u: &SpatialFactor,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
) -> Result<KSpaceData> {
    check_operands(u.shape(), u.rank(), v, traj, coils)?;
    let mut samples = Array3::zeros((traj.n_frames(), traj.samples_per_frame(), coils.n_coils()));
    for tau in 0..traj.n_frames() {
        let img = u.combine(v.column(tau).iter().copied());
        let b = nudft_forward(img.view(), traj.frame(tau), coils)?;
        samples.slice_mut(s![tau, .., ..]).assign(&b);
    }
    Ok(KSpaceData {
        samples,
        noise_sigma: 0.0,
    })
}

/// `A^H(b) V^T` arranged per basis coefficient.
pub fn subspace_adjoint(
    b: ArrayView3<Complex64>,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
) -> Result<SpatialFactor> {
    let shape = coils.shape();
    check_operands(shape, v.nrows(), v, traj, coils)?;
    if b.dim() != (traj.n_frames(), traj.samples_per_frame(), coils.n_coils()) {
        return Err(Error::domain(format!(
            "k-space shape {:?} does not match trajectory/coils",
            b.dim()
        )));
    }
    let mut out = SpatialFactor::zeros(shape, v.nrows());
    for tau in 0..traj.n_frames() {
        let img = nudft_adjoint(b.slice(s![tau, .., ..]), traj.frame(tau), coils, shape)?;
        for r in 0..v.nrows() {
            let w = v[[r, tau]];
            if w != 0.0 {
                out.basis_mut(r).scaled_add(Complex64::new(w, 0.0), &img);
            }
        }
    }
    Ok(out)
}

/// Gradient of `1/2 ||A(U V) - b||^2` with respect to `U`:
/// `grad_r = sum_tau v[r, tau] A_tau^H (A_tau(U v_tau) - b_tau)`.
pub fn subspace_gradient(
    u: &SpatialFactor,
    v: ArrayView2<f64>,
    traj: &Trajectory,
    coils: &CoilMaps,
    b: &KSpaceData,
) -> Result<SpatialFactor> {
    b.check_against(traj, coils)?;
    let mut resid = subspace_forward(u, v, traj, coils)?.samples;
    resid -= &b.samples;
    subspace_adjoint(resid.view(), v, traj, coils)
}
