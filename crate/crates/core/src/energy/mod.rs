//! Learned slice energy `phi(u) = 1/2 ||u - psi(u)||^2`, its score, the 4D
//! energy summed over two slicing directions, and denoising score-matching
//! training.
//!
//! Complex slices enter the network as two real channels (real, imaginary).
//! Scores use the crate-wide gradient convention, so for a complex pixel the
//! score is `dphi/dre + i dphi/dim`.

mod checkpoint;
pub(crate) mod nn;
mod train;

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::forward::SpatialFactor;

pub use checkpoint::{load_checkpoint, save_checkpoint, ARCH_FORMAT_VERSION};
pub use nn::{Activation, ConvSpec, NetworkArch};
pub use train::{
    train_score_matching, training_loss_and_grad, EpochLog, TrainConfig, TrainOutcome, Weighting,
};

use nn::Network;

/// Architecture plus flat weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModelParams {
    pub arch: NetworkArch,
    pub weights: Vec<f64>,
    pub seed: u64,
}

impl EnergyModelParams {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.weights.len() != self.arch.n_params() {
            return Err(Error::domain(format!(
                "architecture needs {} weights, got {}",
                self.arch.n_params(),
                self.weights.len()
            )));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::domain("model weights contain non-finite values"));
        }
        Ok(())
    }

    /// All-zero weights: the identity map with a residual architecture and
    /// the zero map without.
    pub fn zeros(arch: NetworkArch) -> Result<Self> {
        arch.validate()?;
        Ok(EnergyModelParams {
            weights: vec![0.0; arch.n_params()],
            arch,
            seed: 0,
        })
    }

    pub(crate) fn network(&self) -> Network<'_> {
        Network::new(&self.arch, &self.weights)
    }
}

/// Seeded init: zero biases, variance-preserving hidden layers. A residual
/// network gets a small output layer so it starts close to the identity.
pub fn init_network(arch: &NetworkArch, seed: u64) -> Result<EnergyModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; arch.n_params()];
    let n_layers = arch.layers.len();
    for (l, (spec, (w0, b0))) in arch.layers.iter().zip(arch.offsets()).enumerate() {
        let fan_in = (spec.in_channels * spec.kernel_size * spec.kernel_size) as f64;
        let gain = if l + 1 == n_layers && arch.residual {
            0.1
        } else {
            1.0
        };
        let normal = Normal::new(0.0, gain / fan_in.sqrt()).expect("positive std");
        for w in &mut weights[w0..b0] {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(EnergyModelParams {
        arch: arch.clone(),
        weights,
        seed,
    })
}

pub(crate) fn to_channels(slice: ArrayView2<Complex64>) -> Result<Array2<f64>> {
    let (h, w) = slice.dim();
    if h == 0 || w == 0 {
        return Err(Error::domain("slice must be non-empty"));
    }
    let mut out = Array2::zeros((2, h * w));
    for (i, v) in slice.iter().enumerate() {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::domain("slice contains non-finite values"));
        }
        out[[0, i]] = v.re;
        out[[1, i]] = v.im;
    }
    Ok(out)
}

pub(crate) fn from_channels(c: &Array2<f64>, h: usize, w: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        let i = y * w + x;
        Complex64::new(c[[0, i]], c[[1, i]])
    })
}

/// `psi(u)` on a complex slice.
pub fn psi_apply(
    params: &EnergyModelParams,
    slice: ArrayView2<Complex64>,
) -> Result<Array2<Complex64>> {
    params.validate()?;
    let (h, w) = slice.dim();
    let x = to_channels(slice)?;
    let mut out = params.network().forward(&x, h, w).output;
    if params.arch.residual {
        out += &x;
    }
    Ok(from_channels(&out, h, w))
}

/// Energy and score of one slice in channel layout; one forward and one
/// backward pass.
fn energy_and_score_channels(
    net: &Network,
    x: &Array2<f64>,
    h: usize,
    w: usize,
) -> (f64, Array2<f64>) {
    let tape = net.forward(x, h, w);
    // e = u - psi(u)
    let e = if net.arch.residual {
        tape.output.mapv(|v| -v)
    } else {
        x - &tape.output
    };
    let energy = 0.5 * e.iter().map(|v| v * v).sum::<f64>();
    // grad = (I - J_psi)^T e
    let jte = net.vjp_input(&tape, &e);
    let score = if net.arch.residual { -jte } else { &e - &jte };
    (energy, score)
}

pub fn energy_2d(params: &EnergyModelParams, slice: ArrayView2<Complex64>) -> Result<f64> {
    let psi = psi_apply(params, slice)?;
    Ok(0.5
        * psi
            .iter()
            .zip(slice.iter())
            .map(|(a, b)| (b - a).norm_sqr())
            .sum::<f64>())
}

pub fn energy_and_score_2d(
    params: &EnergyModelParams,
    slice: ArrayView2<Complex64>,
) -> Result<(f64, Array2<Complex64>)> {
    params.validate()?;
    let (h, w) = slice.dim();
    let x = to_channels(slice)?;
    let (e, g) = energy_and_score_channels(&params.network(), &x, h, w);
    Ok((e, from_channels(&g, h, w)))
}

pub fn score_2d(
    params: &EnergyModelParams,
    slice: ArrayView2<Complex64>,
) -> Result<Array2<Complex64>> {
    Ok(energy_and_score_2d(params, slice)?.1)
}

/// Slicing direction of a 3D basis volume. `X` yields y-z slices (one per
/// x index), `Y` yields x-z slices, `Z` yields x-y slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::X, SliceAxis::Y, SliceAxis::Z];

    fn index(self) -> usize {
        match self {
            SliceAxis::X => 0,
            SliceAxis::Y => 1,
            SliceAxis::Z => 2,
        }
    }
}

pub(crate) fn slice_of(
    u: &SpatialFactor,
    axis: SliceAxis,
    i: usize,
    r: usize,
) -> ArrayView2<'_, Complex64> {
    match axis {
        SliceAxis::X => u.0.slice(s![i, .., .., r]),
        SliceAxis::Y => u.0.slice(s![.., i, .., r]),
        SliceAxis::Z => u.0.slice(s![.., .., i, r]),
    }
}

fn slice_of_mut(
    u: &mut SpatialFactor,
    axis: SliceAxis,
    i: usize,
    r: usize,
) -> ArrayViewMut2<'_, Complex64> {
    match axis {
        SliceAxis::X => u.0.slice_mut(s![i, .., .., r]),
        SliceAxis::Y => u.0.slice_mut(s![.., i, .., r]),
        SliceAxis::Z => u.0.slice_mut(s![.., .., i, r]),
    }
}

/// Sum of slice energies along one direction and the matching gradient.
pub fn axis_energy_and_score(
    params: &EnergyModelParams,
    u: &SpatialFactor,
    axis: SliceAxis,
) -> Result<(f64, SpatialFactor)> {
    params.validate()?;
    if !u.is_finite() {
        return Err(Error::domain("spatial factor contains non-finite values"));
    }
    let net = params.network();
    let mut total = 0.0;
    let mut grad = SpatialFactor::zeros(u.shape(), u.rank());
    let n = u.shape()[axis.index()];
    for r in 0..u.rank() {
        for i in 0..n {
            let sl = slice_of(u, axis, i, r);
            let (h, w) = sl.dim();
            let x = to_channels(sl)?;
            let (e, g) = energy_and_score_channels(&net, &x, h, w);
            total += e;
            slice_of_mut(&mut grad, axis, i, r).assign(&from_channels(&g, h, w));
        }
    }
    Ok((total, grad))
}

pub fn axis_energy(params: &EnergyModelParams, u: &SpatialFactor, axis: SliceAxis) -> Result<f64> {
    let n = u.shape()[axis.index()];
    let mut total = 0.0;
    for r in 0..u.rank() {
        for i in 0..n {
            total += energy_2d(params, slice_of(u, axis, i, r))?;
        }
    }
    Ok(total)
}

pub fn axis_score(
    params: &EnergyModelParams,
    u: &SpatialFactor,
    axis: SliceAxis,
) -> Result<SpatialFactor> {
    Ok(axis_energy_and_score(params, u, axis)?.1)
}

/// `1/2 (I_x + I_y)` over y-z and x-z slices of every basis volume.
pub fn energy_4d(params: &EnergyModelParams, u: &SpatialFactor) -> Result<f64> {
    Ok(0.5 * (axis_energy(params, u, SliceAxis::X)? + axis_energy(params, u, SliceAxis::Y)?))
}

pub fn energy_and_score_4d(
    params: &EnergyModelParams,
    u: &SpatialFactor,
) -> Result<(f64, SpatialFactor)> {
    let (ex, mut gx) = axis_energy_and_score(params, u, SliceAxis::X)?;
    let (ey, gy) = axis_energy_and_score(params, u, SliceAxis::Y)?;
    gx.axpy(Complex64::new(1.0, 0.0), &gy);
    Ok((0.5 * (ex + ey), gx.scaled(0.5)))
}

pub fn score_4d(params: &EnergyModelParams, u: &SpatialFactor) -> Result<SpatialFactor> {
    Ok(energy_and_score_4d(params, u)?.1)
}
