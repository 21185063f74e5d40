use std::collections::BTreeMap;

use ndarray::{s, Array1, Array3, Array4, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Phantom;
use crate::error::{Error, Result};
use crate::forward::{nudft_forward, CoilMaps, KSpaceData, SpatialFactor, Trajectory};
use crate::seqsim::{simulate_ir_signal, SequenceParams, TemporalBasis};

/// Noise-free image series of a phantom: voxel `v` at frame `tau` holds
/// `PD(v) * s(T1(v))[tau]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub phantom: Phantom,
    /// Shape `(Mx, My, Mz, T)`.
    pub series: Array4<f64>,
}

impl GroundTruth {
    pub fn new(phantom: &Phantom, seq: &SequenceParams) -> Result<Self> {
        let mut cache: BTreeMap<u64, Array1<f64>> = BTreeMap::new();
        let [nx, ny, nz] = phantom.shape();
        let t = seq.n_echoes_per_block;
        let mut series = Array4::zeros((nx, ny, nz, t));
        for ((x, y, z), &inside) in phantom.support_mask.indexed_iter() {
            if !inside {
                continue;
            }
            let t1 = phantom.t1_map[[x, y, z]];
            let sig = match cache.get(&t1.to_bits()) {
                Some(s) => s,
                None => {
                    let s = simulate_ir_signal(t1, seq)?;
                    cache.entry(t1.to_bits()).or_insert(s)
                }
            };
            let pd = phantom.proton_density[[x, y, z]];
            series
                .slice_mut(s![x, y, z, ..])
                .assign(&sig.mapv(|v| v * pd));
        }
        Ok(GroundTruth {
            phantom: phantom.clone(),
            series,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.series.shape()[3]
    }

    pub fn frame(&self, tau: usize) -> Array3<f64> {
        self.series.index_axis(Axis(3), tau).to_owned()
    }

    /// Projection of the series onto the temporal basis.
    pub fn spatial_factor(&self, basis: &TemporalBasis) -> Result<SpatialFactor> {
        if basis.n_frames() != self.n_frames() {
            return Err(Error::domain(
                "basis and ground truth differ in frame count",
            ));
        }
        let s = self.series.shape();
        let flat = self
            .series
            .view()
            .into_shape_with_order((s[0] * s[1] * s[2], s[3]))
            .map_err(|e| Error::domain(e.to_string()))?;
        let coeffs = flat.dot(&basis.v.t());
        let u = coeffs
            .mapv(|v| Complex64::new(v, 0.0))
            .into_shape_with_order((s[0], s[1], s[2], basis.rank()))
            .map_err(|e| Error::domain(e.to_string()))?;
        Ok(SpatialFactor(u))
    }
}

/// Frame-by-frame Fourier encoding of the true series plus i.i.d. complex
/// Gaussian noise (std `noise_sigma` on each real and imaginary part).
pub fn synthesize_kspace(
    phantom: &Phantom,
    seq: &SequenceParams,
    traj: &Trajectory,
    coils: &CoilMaps,
    noise_sigma: f64,
    seed: u64,
) -> Result<(KSpaceData, GroundTruth)> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::domain(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    if traj.n_frames() != seq.n_echoes_per_block {
        return Err(Error::domain(format!(
            "trajectory has {} frames, sequence has {} echoes",
            traj.n_frames(),
            seq.n_echoes_per_block
        )));
    }
    if coils.shape() != phantom.shape() {
        return Err(Error::domain("coil maps and phantom differ in shape"));
    }
    let truth = GroundTruth::new(phantom, seq)?;
    let mut samples =
        ndarray::Array3::zeros((traj.n_frames(), traj.samples_per_frame(), coils.n_coils()));
    for tau in 0..traj.n_frames() {
        let img = truth
            .series
            .index_axis(Axis(3), tau)
            .mapv(|v| Complex64::new(v, 0.0));
        let b = nudft_forward(img.view(), traj.frame(tau), coils)?;
        samples.slice_mut(s![tau, .., ..]).assign(&b);
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in samples.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(re, im) * noise_sigma;
        }
    }
    Ok((
        KSpaceData {
            samples,
            noise_sigma,
        },
        truth,
    ))
}

/// Keeps the first `spokes` spokes of every kz plane of a stacked radial
/// acquisition: the retrospectively undersampled data and trajectory.
pub fn subset_spokes(
    b: &KSpaceData,
    traj: &Trajectory,
    spokes: usize,
) -> Result<(KSpaceData, Trajectory)> {
    if spokes == 0 || spokes > traj.spokes_per_frame {
        return Err(Error::domain(format!(
            "cannot keep {spokes} of {} spokes",
            traj.spokes_per_frame
        )));
    }
    let (l, s_all, planes) = (traj.readout_len, traj.spokes_per_frame, traj.n_kz);
    if l * s_all * planes != traj.samples_per_frame() {
        return Err(Error::domain(
            "trajectory layout is not planes x spokes x readout",
        ));
    }
    let keep: Vec<usize> = (0..planes)
        .flat_map(|p| (0..spokes * l).map(move |i| p * s_all * l + i))
        .collect();
    let frames = traj
        .frames()
        .iter()
        .map(|f| keep.iter().map(|&i| f[i]).collect())
        .collect();
    let sub_traj = Trajectory::from_frames(frames, spokes, l, planes)?;
    let samples = b.samples.select(Axis(1), &keep);
    Ok((
        KSpaceData {
            samples,
            noise_sigma: b.noise_sigma,
        },
        sub_traj,
    ))
}
